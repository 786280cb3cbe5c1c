"""NANO-L filter, a generic natural-gradient update, and an InEKF baseline.

Both filters share the same prediction. The stored covariance describes the
increment ``xi`` in ``X = X_hat Exp(xi)``, which is what the updates work
on. Group-affine IMU dynamics propagate with a state-independent ``F`` in
terms of the world-frame error ``zeta`` in ``X = Exp(zeta) X_hat``, so the
prediction passes through ``zeta = Ad_{X_hat} xi`` and back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import NotPSD
from .lie import (
    _angle, _exp_coeffs, project_rotation, psd_sqrt, sem_adjoint, sem_exp,
    sem_right_jacobian, so3_hat,
)
from .models import (
    ImuSample, InvariantMeasurement, StateLayout, assemble_process_noise, imu_mean_propagate,
    measurement_map, star_operator,
)

RENORMALIZE_EVERY = 1000


@dataclass(frozen=True)
class NanoConfig:
    """Stopping threshold, iteration cap and cubature spread.

    ``cubature_scale`` multiplies the ``sqrt(d)`` radius of the cubature
    points; 1.0 is the third-degree spherical rule.
    """

    gamma: float = 1e-4
    max_iters: int = 1
    cubature_scale: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be an integer >= 1")
        if not self.cubature_scale > 0:
            raise ValueError("cubature_scale must be positive")


@dataclass(frozen=True)
class IncrementBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


@dataclass
class FilterState:
    """Mean on the group and covariance of the body-frame increment."""

    mean: np.ndarray
    cov: np.ndarray
    layout: StateLayout


@dataclass
class UpdateInfo:
    iterations: int = 0
    kl: list = field(default_factory=list)


def _sym(P):
    return 0.5 * (P + P.T)


def build_F(layout: StateLayout) -> np.ndarray:
    """Error-dynamics matrix: ``g^`` at (velocity, rotation), ``I`` at (position, velocity)."""
    return _transition(layout, 1.0) - np.eye(layout.dim)


@lru_cache(maxsize=64)
def _transition(layout: StateLayout, dt: float) -> np.ndarray:
    A = np.eye(layout.dim)
    A[layout.block(layout.vel), :3] = so3_hat(layout.g) * dt
    A[layout.block(layout.pos), layout.block(layout.vel)] = np.eye(3) * dt
    A.setflags(write=False)
    return A


def predict(fs: FilterState, u: ImuSample, dt: float, Q: np.ndarray) -> FilterState:
    """Propagate the mean by one Euler step and the covariance linearly.

    In the world frame ``P <- A P A^T + B (Q dt) B^T`` with ``A = I + F dt``
    and ``B = A Ad_X``; both sides are mapped to increment coordinates.
    """
    X = imu_mean_propagate(fs.mean, u, dt, fs.layout)
    A = _transition(fs.layout, float(dt))
    Ai = sem_adjoint(_inv(X))
    N = Ai @ A @ sem_adjoint(X)
    M = Ai @ A @ sem_adjoint(fs.mean)
    P = _sym(M @ fs.cov @ M.T + N @ (Q * dt) @ N.T)
    if not np.all(np.isfinite(P)):
        raise NotPSD("non-finite covariance after prediction")
    return FilterState(X, P, fs.layout)


# ---------------------------------------------------------------------------
# Frame changes between world-frame error and increment covariance


def increment_covariance(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Body-frame increment covariance for a world-frame error covariance at ``X``."""
    Ai = sem_adjoint(_inv(X))
    return _sym(Ai @ P @ Ai.T)


def world_covariance(X: np.ndarray, P_inc: np.ndarray) -> np.ndarray:
    """Inverse of :func:`increment_covariance`."""
    Ad = sem_adjoint(X)
    return _sym(Ad @ P_inc @ Ad.T)


def _inv(X):
    out = X.copy()
    Rt = X[:3, :3].T
    out[:3, :3] = Rt
    out[:3, 3:] = -Rt @ X[:3, 3:]
    return out


# ---------------------------------------------------------------------------
# Cubature and the reduced measurement map


def cubature_points(mean, cov, scale: float = 1.0) -> np.ndarray:
    """``2d`` points ``mean +/- scale*sqrt(d)*L[:, j]``, each with weight ``1/(2d)``."""
    mean = np.asarray(mean, dtype=float)
    L = psd_sqrt(cov)
    d = mean.shape[0]
    offs = scale * np.sqrt(d) * L.T
    return np.concatenate([mean + offs, mean - offs], axis=0)


def cubature_expectation(fn, mean, cov, scale: float = 1.0):
    """Equal-weight cubature estimate of ``E[fn(xi)]``; ``fn`` maps ``(N, d)`` batches."""
    pts = cubature_points(mean, cov, scale)
    return np.mean(fn(pts), axis=0)


def increment_measurement(X: np.ndarray, b: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``(Exp(-xi) X^{-1} b)[:3]`` for a batch of increments ``xi``."""
    xi = np.atleast_2d(xi)
    r = measurement_map(X, b)
    c = b[3:]
    phi = -xi[:, :3]
    w = -np.einsum("nij,i->nj", xi[:, 3:].reshape(len(xi), -1, 3), c)
    theta = _angle(phi)
    a, bb, cc = _exp_coeffs(theta)
    K = so3_hat(phi)
    Kr = K @ r
    KKr = np.einsum("nij,nj->ni", K, Kr)
    Kw = np.einsum("nij,nj->ni", K, w)
    KKw = np.einsum("nij,nj->ni", K, Kw)
    # R r + J_l w with shared Rodrigues coefficients
    return (r + a[:, None] * Kr + bb[:, None] * KKr
            + w + bb[:, None] * Kw + cc[:, None] * KKw)


def expectation_of_h(belief: IncrementBelief, X: np.ndarray, meas: InvariantMeasurement,
                     scale: float = 1.0) -> np.ndarray:
    """Cubature expectation of the reduced map under ``N(belief.mean, belief.cov)``."""
    b = meas.b if isinstance(meas, InvariantMeasurement) else np.asarray(meas)
    return cubature_expectation(lambda pts: increment_measurement(X, b, pts),
                                belief.mean, belief.cov, scale)


# ---------------------------------------------------------------------------
# Divergence and cost


def kl_gaussian(a: IncrementBelief, b: IncrementBelief) -> float:
    """``KL(N_a || N_b)`` for positive definite covariances."""
    try:
        La = np.linalg.cholesky(a.cov)
        Lb = np.linalg.cholesky(b.cov)
    except np.linalg.LinAlgError as exc:
        raise NotPSD("KL divergence needs positive definite covariances") from exc
    d = a.mean.shape[0]
    M = np.linalg.solve(Lb, La)
    diff = np.linalg.solve(Lb, b.mean - a.mean)
    logdet = 2.0 * (np.sum(np.log(np.diag(Lb))) - np.sum(np.log(np.diag(La))))
    return 0.5 * float(np.sum(M * M) + diff @ diff - d + logdet)


def variational_cost(belief: IncrementBelief, prior: IncrementBelief, nll, scale: float = 1.0) -> float:
    """Expected negative log-likelihood plus the KL penalty to the prior.

    ``nll`` maps an ``(N, d)`` batch of increments to ``N`` values; its
    expectation uses the cubature rule.
    """
    d = belief.mean.shape[0]
    L0 = np.linalg.cholesky(prior.cov)
    diff = np.linalg.solve(L0, prior.mean - belief.mean)
    M = np.linalg.solve(L0, psd_sqrt(belief.cov))
    sign, logdet = np.linalg.slogdet(belief.cov)
    if sign <= 0:
        raise NotPSD("belief covariance must be positive definite")
    logdet0 = 2.0 * np.sum(np.log(np.diag(L0)))
    expected = float(cubature_expectation(nll, belief.mean, belief.cov, scale))
    return expected + 0.5 * float(diff @ diff) + 0.5 * float(np.sum(M * M)) \
        - 0.5 * (logdet - logdet0) - 0.5 * d


def measurement_nll(X: np.ndarray, meas: InvariantMeasurement):
    """Vectorized ``0.5 * ||y - h(xi)||^2_{Gamma^{-1}}`` for the invariant model."""
    Gi = np.linalg.inv(meas.gamma_reduced)

    def nll(xi):
        e = meas.y_reduced - increment_measurement(X, meas.b, xi)
        return 0.5 * np.einsum("ni,ij,nj->n", e, Gi, e)

    return nll


def invariant_nll_derivatives(X: np.ndarray, meas: InvariantMeasurement, linearized: bool = False):
    """Gradient and Hessian evaluators of the invariant negative log-likelihood.

    The gradient is ``star Gamma^{-1} (y - h(xi))`` and the Hessian the
    constant ``star Gamma^{-1} star^T``. With ``linearized=True`` the
    gradient uses the first-order map ``h(xi) = h(0) - star^T xi``, for
    which that Hessian is exact.
    """
    H = star_operator(X, meas.b)
    Gi = np.linalg.inv(meas.gamma_reduced)
    HG = H @ Gi
    hess_c = HG @ H.T
    r = measurement_map(X, meas.b)

    def grad(xi):
        xi = np.atleast_2d(xi)
        h = r - xi @ H if linearized else increment_measurement(X, meas.b, xi)
        return (meas.y_reduced - h) @ HG.T

    def hess(xi):
        return np.broadcast_to(hess_c, (len(np.atleast_2d(xi)),) + hess_c.shape)

    return grad, hess


def cost_J(belief: IncrementBelief, prior: IncrementBelief, X: np.ndarray,
           meas: InvariantMeasurement, scale: float = 1.0) -> float:
    return variational_cost(belief, prior, measurement_nll(X, meas), scale)


# ---------------------------------------------------------------------------
# Natural-gradient updates


def _fd_grad(nll, xi, h=1e-5):
    d = xi.shape[-1]
    E = np.eye(d) * h
    pts = np.concatenate([xi[:, None, :] + E, xi[:, None, :] - E], axis=1)
    vals = nll(pts.reshape(-1, d)).reshape(len(xi), 2, d)
    return (vals[:, 0] - vals[:, 1]) / (2 * h)


def _fd_hess(nll, xi, h=1e-3):
    """Four-point second differences; exact up to rounding for quadratics."""
    d = xi.shape[-1]
    n = len(xi)
    E = np.eye(d) * h
    out = np.empty((n, d, d))
    f0 = nll(xi)
    fp = nll((xi[:, None, :] + E).reshape(-1, d)).reshape(n, d)
    fm = nll((xi[:, None, :] - E).reshape(-1, d)).reshape(n, d)
    for j in range(d):
        out[:, j, j] = (fp[:, j] - 2 * f0 + fm[:, j]) / h ** 2
        for k in range(j + 1, d):
            s = E[j] + E[k]
            t = E[j] - E[k]
            v = (nll(xi + s) - nll(xi + t) - nll(xi - t) + nll(xi - s)) / (4 * h ** 2)
            out[:, j, k] = out[:, k, j] = v
    return out


def ngd_update_generic(belief: IncrementBelief, prior: IncrementBelief, nll=None,
                       grad=None, hess=None, cfg: NanoConfig = NanoConfig()) -> IncrementBelief:
    """One natural-gradient step with cubature expectations of gradient and Hessian.

    ``grad`` and ``hess`` map ``(N, d)`` increments to ``(N, d)`` and
    ``(N, d, d)``. Either may be omitted, in which case it is obtained from
    ``nll`` by central differences.
    """
    if grad is None or hess is None:
        if nll is None:
            raise ValueError("nll is required when grad or hess is omitted")
    grad = grad or (lambda xi: _fd_grad(nll, xi))
    hess = hess or (lambda xi: _fd_hess(nll, xi))
    pts = cubature_points(belief.mean, belief.cov, cfg.cubature_scale)
    Eg = np.mean(grad(pts), axis=0)
    EH = np.mean(hess(pts), axis=0)
    P0i = np.linalg.inv(prior.cov)
    P = _sym(np.linalg.inv(P0i + EH))
    mean = belief.mean - P @ Eg - P @ P0i @ (belief.mean - prior.mean)
    return IncrementBelief(mean, P)


def nano_increment_posterior(prior: IncrementBelief, X: np.ndarray, meas: InvariantMeasurement,
                             cfg: NanoConfig = NanoConfig()):
    """Optimize the increment belief for one invariant measurement.

    The covariance has the closed form ``(P0^{-1} + H Gamma^{-1} H^T)^{-1}``,
    computed once; only the mean is iterated, with expectations taken under
    the updated covariance. Iteration stops when the KL divergence between
    successive beliefs drops below ``cfg.gamma`` or after ``cfg.max_iters``
    steps. Returns ``(belief, UpdateInfo)``.
    """
    H = star_operator(X, meas.b)
    P0 = prior.cov
    PH = P0 @ H
    S = H.T @ PH + meas.gamma_reduced
    K = np.linalg.solve(S, PH.T).T          # P0 H S^{-1} = P H Gamma^{-1}
    P = _sym(P0 - K @ PH.T)
    HT = H.T

    info = UpdateInfo()
    xi = prior.mean.copy()
    prev_cov = P0
    scale = cfg.cubature_scale
    L = psd_sqrt(P)
    offs = scale * np.sqrt(P.shape[0]) * L.T
    for i in range(int(cfg.max_iters)):
        pts = np.concatenate([xi + offs, xi - offs], axis=0)
        Eh = np.mean(increment_measurement(X, meas.b, pts), axis=0)
        dx = xi - prior.mean
        # P P0^{-1} dx = dx - K H^T dx and P H Gamma^{-1} = K
        new = xi - (dx - K @ (HT @ dx)) - K @ (meas.y_reduced - Eh)
        info.iterations = i + 1
        if i + 1 == cfg.max_iters:
            xi = new
            break
        kl = kl_gaussian(IncrementBelief(xi, prev_cov), IncrementBelief(new, P))
        info.kl.append(kl)
        xi, prev_cov = new, P
        if kl < cfg.gamma:
            break
    return IncrementBelief(xi, P), info


def _lift(X, belief):
    Jr = sem_right_jacobian(belief.mean)
    return X @ sem_exp(belief.mean), _sym(Jr @ belief.cov @ Jr.T)


def nano_update_invariant(fs: FilterState, meas: InvariantMeasurement,
                          cfg: NanoConfig = NanoConfig()) -> FilterState:
    """NANO-L measurement update followed by the manifold lift and reset."""
    prior = IncrementBelief(np.zeros(fs.layout.dim), fs.cov)
    post, _ = nano_increment_posterior(prior, fs.mean, meas, cfg)
    X, P = _lift(fs.mean, post)
    return FilterState(X, P, fs.layout)


def inekf_update(fs: FilterState, meas: InvariantMeasurement) -> FilterState:
    """Kalman update in the increment coordinates with Jacobian ``-H^T``."""
    X = fs.mean
    P0 = fs.cov
    H = star_operator(X, meas.b)
    PH = P0 @ H
    S = H.T @ PH + meas.gamma_reduced
    K = -np.linalg.solve(S, PH.T).T
    xi = K @ (meas.y_reduced - measurement_map(X, meas.b))
    P = _sym(P0 + K @ PH.T)
    return FilterState(X @ sem_exp(xi), P, fs.layout)


# ---------------------------------------------------------------------------
# Stateful filters


class InvariantFilter:
    """Common prediction and contact bookkeeping for the two filters.

    A filter owns its state and is mutated in place; use one instance per
    trial.
    """

    name = "base"

    def __init__(self, X0: np.ndarray, P0_increment: np.ndarray, layout: StateLayout, noise):
        X0 = np.asarray(X0, dtype=float)
        self.state = FilterState(X0, np.asarray(P0_increment, dtype=float), layout)
        self.noise = noise
        self._compositions = 0

    @property
    def mean(self):
        return self.state.mean

    def world_cov(self):
        return world_covariance(self.state.mean, self.state.cov)

    def predict(self, u: ImuSample, dt: float, contact_mask=None):
        Q = assemble_process_noise(self.noise, self.state.layout, contact_mask)
        self.state = predict(self.state, u, dt, Q)
        self._tick()

    def update(self, meas: InvariantMeasurement):
        raise NotImplementedError

    def reinit_contact(self, col: int, r_body: np.ndarray, gamma_body: np.ndarray):
        """Place contact column ``col`` at ``p + R r_body`` and reset its covariance.

        To first order the new increment block is ``rho_p - r^ phi + n`` with
        ``n ~ N(0, gamma_body)``, so its rows are copied from the position
        and rotation blocks.
        """
        X = self.state.mean.copy()
        layout = self.state.layout
        r_body = np.asarray(r_body, dtype=float)
        X[:3, 3 + col] = X[:3, 3 + layout.pos] + X[:3, :3] @ r_body
        s, p = layout.block(col), layout.block(layout.pos)
        T = np.eye(layout.dim)
        T[s, s] = 0.0
        T[s, p] = np.eye(3)
        T[s, :3] = -so3_hat(r_body)
        P = T @ self.state.cov @ T.T
        P[s, s] += gamma_body
        self.state = FilterState(X, _sym(P), layout)

    def _tick(self):
        self._compositions += 1
        if self._compositions % RENORMALIZE_EVERY == 0:
            X = self.state.mean.copy()
            X[:3, :3] = project_rotation(X[:3, :3])
            self.state = FilterState(X, self.state.cov, self.state.layout)


class NanoLFilter(InvariantFilter):
    name = "nano"

    def __init__(self, X0, P0_increment, layout, noise, cfg: NanoConfig = NanoConfig()):
        super().__init__(X0, P0_increment, layout, noise)
        self.cfg = cfg

    def update(self, meas):
        self.state = nano_update_invariant(self.state, meas, self.cfg)
        self._tick()


class InEKF(InvariantFilter):
    name = "inekf"

    def update(self, meas):
        self.state = inekf_update(self.state, meas)
        self._tick()
