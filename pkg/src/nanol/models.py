"""IMU-driven dynamics on SE_m(3) and invariant observation models.

The state matrix stacks orientation with a list of translational columns
whose roles (velocity, position, contact points) are described by a
:class:`StateLayout`. Observations take the invariant form ``y = X^{-1} b``;
only the first three components carry information, so every measurement is
stored in reduced form with a 3x3 noise covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import SingularGamma
from .lie import so3_exp, so3_hat

GRAVITY = (0.0, 0.0, -9.81)


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))


@dataclass(frozen=True)
class NoiseConfig:
    """Per-axis isotropic noise magnitudes (defaults from the GO2 tuning)."""

    sigma_accel: float = 0.2568   # m/s^2
    sigma_gyro: float = 0.00139   # rad/s
    sigma_encoder: float = 0.3    # rad
    sigma_slip: float = 0.001     # m/s

    def __post_init__(self):
        for name in ("sigma_accel", "sigma_gyro", "sigma_encoder", "sigma_slip"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class LegGeometry:
    """Hip/thigh/calf lengths and hip offset of one leg, in the body frame.

    ``side`` is +1 for left legs and -1 for right legs; it flips the sign of
    the hip link. ``o_y`` is already signed.
    """

    l_h: float = 0.0955
    l_t: float = 0.213
    l_c: float = 0.213
    o_x: float = 0.1934
    o_y: float = 0.0465
    side: int = 1

    def __post_init__(self):
        if min(self.l_h, self.l_t, self.l_c) <= 0:
            raise ValueError("link lengths must be strictly positive")
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")


LEG_NAMES = ("FL", "FR", "RL", "RR")


def quadruped_legs(base: LegGeometry = LegGeometry()) -> dict[str, LegGeometry]:
    """Four legs mirrored from one geometry, keyed FL/FR/RL/RR."""
    legs = {}
    for name in LEG_NAMES:
        sx = 1.0 if name[0] == "F" else -1.0
        side = 1 if name[1] == "L" else -1
        legs[name] = LegGeometry(base.l_h, base.l_t, base.l_c,
                                 sx * abs(base.o_x), side * abs(base.o_y), side)
    return legs


@dataclass(frozen=True)
class StateLayout:
    """Roles of the translational columns of an SE_m(3) state.

    Roles are ``"velocity"``, ``"position"`` or ``"contact:<name>"``.
    """

    roles: tuple = ("velocity", "position")
    gravity: tuple = GRAVITY
    g: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        roles = tuple(self.roles)
        object.__setattr__(self, "roles", roles)
        if roles.count("velocity") != 1 or roles.count("position") != 1:
            raise ValueError("layout needs exactly one velocity and one position column")
        for r in roles:
            if r not in ("velocity", "position") and not r.startswith("contact:"):
                raise ValueError(f"unknown column role {r!r}")
        object.__setattr__(self, "g", np.asarray(self.gravity, dtype=float))

    @property
    def m(self) -> int:
        return len(self.roles)

    @property
    def dim(self) -> int:
        return 3 + 3 * self.m

    @property
    def vel(self) -> int:
        return self.roles.index("velocity")

    @property
    def pos(self) -> int:
        return self.roles.index("position")

    @property
    def contacts(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r.startswith("contact:")]

    def contact_column(self, name: str) -> int:
        return self.roles.index(f"contact:{name}")

    def block(self, col: int) -> slice:
        """Tangent-space slice of translational column ``col``."""
        return slice(3 + 3 * col, 6 + 3 * col)


def landmark_layout() -> StateLayout:
    """SE_2(3) state ``[R | v p]`` of the landmark navigation system."""
    return StateLayout(("velocity", "position"))


def legged_layout(leg_names=("FL",)) -> StateLayout:
    """SE_{2+L}(3) state with one contact column per leg."""
    return StateLayout(("velocity", "position") + tuple(f"contact:{n}" for n in leg_names))


# ---------------------------------------------------------------------------
# Propagation


def dynamics(X: np.ndarray, u: ImuSample, layout: StateLayout) -> np.ndarray:
    """Noise-free vector field ``f_u(X)`` as a matrix of the same shape as X."""
    out = np.zeros_like(X, dtype=float)
    R = X[:3, :3]
    out[:3, :3] = R @ so3_hat(u.omega)
    out[:3, 3 + layout.vel] = R @ u.accel + layout.g
    out[:3, 3 + layout.pos] = X[:3, 3 + layout.vel]
    return out


def imu_mean_propagate(X: np.ndarray, u: ImuSample, dt: float, layout: StateLayout) -> np.ndarray:
    """One forward-Euler step of the noise-free dynamics.

    The position advances with the pre-update velocity and contact columns
    are left untouched.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    iv, ip = 3 + layout.vel, 3 + layout.pos
    R = X[:3, :3]
    v = X[:3, iv]
    out = X.copy()
    out[:3, :3] = R @ so3_exp(u.omega * dt)
    out[:3, iv] = v + (R @ u.accel + layout.g) * dt
    out[:3, ip] = X[:3, ip] + v * dt
    return out


def assemble_process_noise(cfg: NoiseConfig, layout: StateLayout, contact_mask=None) -> np.ndarray:
    """Diagonal continuous-time noise ``diag(S_w, S_a, 0, S_s...)`` in tangent order.

    ``contact_mask`` lists, per contact column in layout order, whether the
    foot is in stance; swing legs get a zero block. Defaults to all stance.
    """
    contacts = layout.contacts
    if contact_mask is None:
        contact_mask = [True] * len(contacts)
    if len(contact_mask) != len(contacts):
        raise ValueError("contact mask length does not match layout")
    diag = np.zeros(layout.dim)
    diag[:3] = cfg.sigma_gyro ** 2
    diag[layout.block(layout.vel)] = cfg.sigma_accel ** 2
    for col, on in zip(contacts, contact_mask):
        if on:
            diag[layout.block(col)] = cfg.sigma_slip ** 2
    return np.diag(diag)


def group_affine_residual(X1, X2, u: ImuSample, layout: StateLayout, f=None) -> float:
    """Frobenius norm of ``f(X1 X2) - f(X1) X2 - X1 f(X2) + X1 f(I) X2``."""
    f = f or dynamics
    eye = np.eye(X1.shape[0])
    r = f(X1 @ X2, u, layout) - f(X1, u, layout) @ X2 - X1 @ f(X2, u, layout) \
        + X1 @ f(eye, u, layout) @ X2
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# Leg kinematics


def forward_kinematics(phi, geom: LegGeometry) -> np.ndarray:
    """Foot position in the body frame for hip/thigh/knee angles ``phi``."""
    p1, p2, p3 = np.asarray(phi, dtype=float)
    s1, c1 = np.sin(p1), np.cos(p1)
    s2, c2 = np.sin(p2), np.cos(p2)
    s23, c23 = np.sin(p2 + p3), np.cos(p2 + p3)
    lh = geom.side * geom.l_h
    lt, lc = geom.l_t, geom.l_c
    return np.array([
        geom.o_x - lt * s2 - lc * s23,
        geom.o_y + lh * c1 + lt * c2 * s1 + lc * s1 * c23,
        lh * s1 - lt * c1 * c2 - lc * c1 * c23,
    ])


def fk_jacobian(phi, geom: LegGeometry) -> np.ndarray:
    p1, p2, p3 = np.asarray(phi, dtype=float)
    s1, c1 = np.sin(p1), np.cos(p1)
    s2, c2 = np.sin(p2), np.cos(p2)
    s23, c23 = np.sin(p2 + p3), np.cos(p2 + p3)
    lh = geom.side * geom.l_h
    lt, lc = geom.l_t, geom.l_c
    return np.array([
        [0.0, -lc * c23 - lt * c2, -lc * c23],
        [lt * c1 * c2 - lh * s1 + lc * c1 * c23, -s1 * (lc * s23 + lt * s2), -lc * s23 * s1],
        [lt * c2 * s1 + lh * c1 + lc * s1 * c23, c1 * (lc * s23 + lt * s2), lc * s23 * c1],
    ])


# ---------------------------------------------------------------------------
# Invariant observations


@dataclass(frozen=True)
class InvariantMeasurement:
    """Reduced invariant observation ``y[:3] = (X^{-1} b)[:3] + noise``."""

    y_reduced: np.ndarray
    b: np.ndarray
    gamma_reduced: np.ndarray
    contact_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "y_reduced", np.asarray(self.y_reduced, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "gamma_reduced", np.asarray(self.gamma_reduced, dtype=float))


def leg_b(layout: StateLayout, contact_index: int) -> np.ndarray:
    if layout.roles[contact_index].startswith("contact:") is False:
        raise ValueError(f"column {contact_index} is not a contact column")
    b = np.zeros(3 + layout.m)
    b[3 + layout.pos] = 1.0
    b[3 + contact_index] = -1.0
    return b


def make_leg_measurement(phi, cfg: NoiseConfig, geom: LegGeometry, contact_index: int,
                         layout: StateLayout | None = None) -> InvariantMeasurement:
    """Leg-odometry observation of the contact point in column ``contact_index``."""
    layout = layout or legged_layout()
    J = fk_jacobian(phi, geom)
    gamma = cfg.sigma_encoder ** 2 * (J @ J.T)
    if np.linalg.cond(gamma) > 1e12:
        raise SingularGamma("leg measurement covariance is singular (kinematic singularity)")
    return InvariantMeasurement(forward_kinematics(phi, geom), leg_b(layout, contact_index),
                                gamma, contact_index)


def make_landmark_measurement(obs, landmark, sigma_cam: float,
                              layout: StateLayout | None = None) -> InvariantMeasurement:
    """Body-frame observation ``R^T (m - p)`` of a known landmark ``m``."""
    layout = layout or landmark_layout()
    b = np.zeros(3 + layout.m)
    b[:3] = landmark
    b[3 + layout.pos] = 1.0
    return InvariantMeasurement(np.asarray(obs, dtype=float), b,
                                sigma_cam ** 2 * np.eye(3))


def measurement_map(X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """First three components of ``X^{-1} b``."""
    R = X[:3, :3]
    return R.T @ (b[:3] - X[:3, 3:] @ b[3:])


def star_operator(X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reduced ``(X^{-1} b)^odot`` as a ``d x 3`` matrix.

    Its transpose is the derivative of ``(Exp(dxi) X^{-1} b)[:3]`` at zero:
    ``(R^T(p - s))^`` in the rotation block for the leg model (``(R^T(p - m))^``
    for landmarks), ``b_i I`` in translational block ``i``.
    """
    if isinstance(b, InvariantMeasurement):
        b = b.b
    r = measurement_map(X, b)
    m = X.shape[0] - 3
    Ht = np.zeros((3, 3 + 3 * m))
    Ht[:, :3] = -so3_hat(r)
    for i, c in enumerate(b[3:]):
        if c:
            Ht[:, 3 + 3 * i:6 + 3 * i] = c * np.eye(3)
    return Ht.T
