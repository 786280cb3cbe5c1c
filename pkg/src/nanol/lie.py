"""Matrix Lie group primitives for SO(3) and SE_m(3).

Group elements are plain ``numpy`` arrays: a 3x3 rotation matrix for SO(3)
and a ``(3+m) x (3+m)`` matrix for SE_m(3)::

    X = [[R, p_1, ..., p_m],
         [0,   1, ...,   0],
         ...
         [0,   0, ...,   1]]

Tangent vectors of SE_m(3) have dimension ``d = 3 + 3m`` and are ordered
``[phi; rho_1; ...; rho_m]``. The uncertainty convention is right
multiplicative, ``X = X_bar @ Exp(xi)``.

Most maps accept a leading batch dimension, so ``so3_exp`` of an ``(N, 3)``
array returns an ``(N, 3, 3)`` stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial

import numpy as np

from .exceptions import AngleNearPi, NotPSD

SMALL_ANGLE = 1e-7
_TRACE_CUT = -1.0 + 1e-6
_SERIES_TOL = 1e-14
_SERIES_CAP = 30
_INV_FACTORIALS = np.array([1.0 / factorial(k + 1) for k in range(_SERIES_CAP)])


# ---------------------------------------------------------------------------
# SO(3)


def so3_hat(phi: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix with ``so3_hat(a) @ b == cross(a, b)``."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        x, y, z = phi
        return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    out = np.zeros(phi.shape[:-1] + (3, 3))
    x, y, z = phi[..., 0], phi[..., 1], phi[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def so3_vee(Phi: np.ndarray) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=float)
    return np.stack([Phi[..., 2, 1], Phi[..., 0, 2], Phi[..., 1, 0]], axis=-1)


def _angle(phi):
    return np.sqrt(np.sum(phi * phi, axis=-1))


def _exp_coeffs(theta):
    """Return sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with small-angle series."""
    if np.ndim(theta) == 0:
        t = float(theta)
        t2 = t * t
        if t < SMALL_ANGLE:
            a, b, c = 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
        else:
            s = math.sin(t)
            a, b, c = s / t, 2.0 * math.sin(0.5 * t) ** 2 / t2, (t - s) / (t2 * t)
        return np.float64(a), np.float64(b), np.float64(c)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    # 2 sin^2(t/2) avoids the cancellation in 1 - cos(t)
    b = np.where(small, 0.5 - t2 / 24.0, 2.0 * np.sin(0.5 * t) ** 2 / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, vectorized over leading dimensions."""
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    a, b, _ = _exp_coeffs(theta)
    K = so3_hat(phi)
    K2 = K @ K
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` with angle in ``[0, pi)``.

    Raises
    ------
    AngleNearPi
        If ``trace(R) <= -1 + 1e-6`` for any matrix in the batch; the axis is
        ill-conditioned on the cut locus and callers should avoid it.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    if np.any(tr <= _TRACE_CUT):
        raise AngleNearPi(f"rotation angle too close to pi (trace={np.min(tr):.12g})")
    w = 0.5 * so3_vee(R - np.swapaxes(R, -1, -2))
    s = _angle(w)
    c = 0.5 * (tr - 1.0)
    theta = np.arctan2(s, c)
    small = theta < SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_s)
    return scale[..., None] * w


def so3_angle(R: np.ndarray) -> np.ndarray:
    """Rotation angle ``||Log(R)||`` in ``[0, pi]``; valid on the whole group."""
    R = np.asarray(R, dtype=float)
    w = 0.5 * so3_vee(R - np.swapaxes(R, -1, -2))
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(_angle(w), c)


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    _, b, c = _exp_coeffs(theta)
    K = so3_hat(phi)
    return np.eye(3) + b[..., None, None] * K + c[..., None, None] * (K @ K)


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    return so3_left_jacobian(-np.asarray(phi, dtype=float))


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = _angle(phi)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    half = 0.5 * t
    d = np.where(
        small,
        1.0 / 12.0 + theta * theta / 720.0,
        (1.0 - half * np.cos(half) / np.sin(half)) / (t * t),
    )
    K = so3_hat(phi)
    return np.eye(3) - 0.5 * K + d[..., None, None] * (K @ K)


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(phi, dtype=float))


def project_rotation(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (polar decomposition)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# SE_m(3)


def sem_m(X_or_xi: np.ndarray, tangent: bool = False) -> int:
    """Number of translational columns of a group matrix or tangent vector."""
    n = np.shape(X_or_xi)[-1]
    if tangent:
        m, rem = divmod(n - 3, 3)
    else:
        m, rem = n - 3, 0
    if m < 0 or rem:
        raise ValueError(f"invalid SE_m(3) dimension {n}")
    return m


def sem_identity(m: int) -> np.ndarray:
    return np.eye(3 + m)


def sem_from_parts(R: np.ndarray, *cols: np.ndarray) -> np.ndarray:
    X = np.eye(3 + len(cols))
    X[:3, :3] = R
    for i, p in enumerate(cols):
        X[:3, 3 + i] = p
    return X


def sem_hat(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    m = sem_m(xi, tangent=True)
    out = np.zeros(xi.shape[:-1] + (3 + m, 3 + m))
    out[..., :3, :3] = so3_hat(xi[..., :3])
    out[..., :3, 3:] = np.swapaxes(xi[..., 3:].reshape(xi.shape[:-1] + (m, 3)), -1, -2)
    return out


def sem_vee(Xi: np.ndarray) -> np.ndarray:
    Xi = np.asarray(Xi, dtype=float)
    m = Xi.shape[-1] - 3
    rho = np.swapaxes(Xi[..., :3, 3:], -1, -2).reshape(Xi.shape[:-2] + (3 * m,))
    return np.concatenate([so3_vee(Xi[..., :3, :3]), rho], axis=-1)


def sem_exp(xi: np.ndarray) -> np.ndarray:
    """Closed-form exponential: ``R = Exp(phi)``, ``p_i = J_l(phi) rho_i``."""
    xi = np.asarray(xi, dtype=float)
    m = sem_m(xi, tangent=True)
    phi = xi[..., :3]
    theta = _angle(phi)
    a, b, c = _exp_coeffs(theta)
    K = so3_hat(phi)
    K2 = K @ K
    eye = np.eye(3)
    out = np.zeros(xi.shape[:-1] + (3 + m, 3 + m))
    out[..., :, :] = np.eye(3 + m)
    out[..., :3, :3] = eye + a[..., None, None] * K + b[..., None, None] * K2
    Jl = eye + b[..., None, None] * K + c[..., None, None] * K2
    rho = np.swapaxes(xi[..., 3:].reshape(xi.shape[:-1] + (m, 3)), -1, -2)
    out[..., :3, 3:] = Jl @ rho
    return out


def sem_log(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    m = X.shape[-1] - 3
    phi = so3_log(X[..., :3, :3])
    rho = so3_left_jacobian_inv(phi) @ X[..., :3, 3:]
    rho = np.swapaxes(rho, -1, -2).reshape(X.shape[:-2] + (3 * m,))
    return np.concatenate([phi, rho], axis=-1)


def sem_inverse(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.array(X, copy=True)
    Rt = np.swapaxes(X[..., :3, :3], -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3:] = -Rt @ X[..., :3, 3:]
    return out


def sem_adjoint(X: np.ndarray) -> np.ndarray:
    """Adjoint with ``R`` on the diagonal and ``p_i^ R`` in the first block column."""
    X = np.asarray(X, dtype=float)
    m = X.shape[-1] - 3
    R = X[:3, :3]
    Ad = np.zeros((3 + 3 * m, 3 + 3 * m))
    for i in range(m + 1):
        Ad[3 * i:3 * i + 3, 3 * i:3 * i + 3] = R
    for i in range(m):
        Ad[3 + 3 * i:6 + 3 * i, :3] = so3_hat(X[:3, 3 + i]) @ R
    return Ad


def sem_ad(xi: np.ndarray) -> np.ndarray:
    """Little adjoint, ``sem_ad(a) @ b == vee(hat(a) hat(b) - hat(b) hat(a))``."""
    xi = np.asarray(xi, dtype=float)
    m = sem_m(xi, tangent=True)
    d = 3 + 3 * m
    ad = np.zeros((d, d))
    P = so3_hat(xi[:3])
    for i in range(m + 1):
        ad[3 * i:3 * i + 3, 3 * i:3 * i + 3] = P
    for i in range(m):
        ad[3 + 3 * i:6 + 3 * i, :3] = so3_hat(xi[3 + 3 * i:6 + 3 * i])
    return ad


def _ad_series(xi, sign):
    ad = sign * sem_ad(xi)
    d = ad.shape[0]
    out = np.eye(d)
    term = np.eye(d)
    for k in range(1, _SERIES_CAP):
        term = term @ ad
        step = term * _INV_FACTORIALS[k]
        out += step
        if math.sqrt(np.vdot(step, step)) < _SERIES_TOL:
            break
    return out


def sem_right_jacobian(xi: np.ndarray) -> np.ndarray:
    """Right Jacobian by the series ``sum_k (-1)^k ad^k / (k+1)!``.

    Terms are accumulated until one has Frobenius norm below 1e-14, with a
    cap of 30 terms.
    """
    return _ad_series(xi, -1.0)


def sem_left_jacobian(xi: np.ndarray) -> np.ndarray:
    return _ad_series(xi, 1.0)


def bch_first_order(x1: np.ndarray, x2: np.ndarray, which_small: str = "x2") -> np.ndarray:
    """First-order BCH combination ``Exp(x1) Exp(x2) ~ Exp(result)``.

    ``which_small`` names the argument assumed small (``"x1"`` or ``"x2"``).
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if which_small == "x1":
        return np.linalg.solve(sem_left_jacobian(x2), x1) + x2
    if which_small == "x2":
        return x1 + np.linalg.solve(sem_right_jacobian(x1), x2)
    raise ValueError(f"which_small must be 'x1' or 'x2', got {which_small!r}")


# ---------------------------------------------------------------------------
# Concentrated Gaussians


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular square root with a single jitter retry.

    An all-zero covariance maps to a zero factor.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    d = cov.shape[0]
    jitter = 1e-12 * np.trace(cov) / d
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NotPSD("covariance is not positive semi-definite") from exc


@dataclass(frozen=True)
class ConcentratedGaussian:
    """``X = mean @ Exp(xi)`` with ``xi ~ N(0, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        d = 3 + 3 * (mean.shape[-1] - 3)
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match d={d}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("covariance is not symmetric")
        tr = np.trace(cov)
        if np.min(np.linalg.eigvalsh(cov)) < -1e-10 * max(tr, 0.0):
            raise NotPSD("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def sample_concentrated(g: ConcentratedGaussian, rng_seed, size: int | None = None) -> np.ndarray:
    """Draw ``mean @ Exp(L eps)`` with ``L`` the lower Cholesky factor.

    ``rng_seed`` is an integer seed or a ``numpy.random.Generator``. With
    ``size`` given the result is a stack of shape ``(size, n, n)``.
    """
    rng = np.random.default_rng(rng_seed)
    L = psd_sqrt(g.cov)
    d = L.shape[0]
    eps = rng.standard_normal(d if size is None else (size, d))
    return g.mean @ sem_exp(eps @ L.T)
