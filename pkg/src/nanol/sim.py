"""Ground-truth generation, synthetic sensors and the Monte-Carlo driver."""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root

from .exceptions import FilterFailure, WindowTooLong
from .filters import InEKF, NanoConfig, NanoLFilter
from .metrics import CHANNELS, ate, error_series, relative_error, rmse_over_trials
from .models import (
    ImuSample, LegGeometry, NoiseConfig, StateLayout, fk_jacobian, forward_kinematics,
    imu_mean_propagate, landmark_layout, legged_layout, make_landmark_measurement,
    make_leg_measurement, quadruped_legs,
)

LANDMARKS = np.array([[0.0, 2.0, 2.0], [-2.0, -2.0, -2.0], [2.0, -2.0, -2.0]])
SIGMA_CAM = 0.1
NOMINAL_JOINTS = np.array([0.0, 0.8, -1.5])


@dataclass(frozen=True)
class TrajectoryProfile:
    """Sinusoidal body rates and world-frame accelerations.

    Angular rate on axis ``i`` is ``gyro_amp[i] * sin(2 pi gyro_freq[i] t + phase)``;
    kinematic acceleration is ``accel_amp[i] * cos(2 pi accel_freq[i] t + phase)``
    with the initial velocity chosen so that velocity has zero mean. Phases
    are zero for ``seed=None`` and uniform otherwise.
    """

    duration: float = 30.0
    rate: float = 100.0
    gyro_amp: tuple = (0.5, 0.5, 0.5)
    gyro_freq: tuple = (0.2, 0.3, 0.1)
    accel_amp: tuple = (0.5, 0.5, 0.5)
    accel_freq: tuple = (0.15, 0.25, 0.2)
    substeps: int = 10
    seed: int | None = None

    def __post_init__(self):
        if not (self.duration > 0 and self.rate > 0):
            raise ValueError("duration and rate must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        for name in ("gyro_amp", "gyro_freq", "accel_amp", "accel_freq"):
            if len(getattr(self, name)) != 3:
                raise ValueError(f"{name} needs one value per axis")
        if min(self.gyro_freq) <= 0 or min(self.accel_freq) <= 0:
            raise ValueError("frequencies must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate)) + 1


LEGGED_PROFILE = TrajectoryProfile(gyro_amp=(0.1, 0.1, 0.2), accel_amp=(0.2, 0.2, 0.05))


@dataclass
class GroundTruth:
    t: np.ndarray        # (N,)
    X: np.ndarray        # (N, 5, 5) SE_2(3) states [R | v p]
    omega: np.ndarray    # (N, 3) true body rate held over [t_k, t_k+1)
    accel: np.ndarray    # (N, 3) true specific force held over [t_k, t_k+1)
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    @property
    def R(self):
        return self.X[:, :3, :3]

    @property
    def v(self):
        return self.X[:, :3, 3]

    @property
    def p(self):
        return self.X[:, :3, 4]


def integrate_inputs(X0, omega, accel, dt, substeps, layout=None):
    """Integrate zero-order-held inputs with ``substeps`` Euler steps per sample."""
    layout = layout or landmark_layout()
    X = np.empty((len(omega),) + X0.shape)
    X[0] = X0
    h = dt / substeps
    for k in range(len(omega) - 1):
        u = ImuSample(0.0, omega[k], accel[k])
        Xk = X[k]
        for _ in range(substeps):
            Xk = imu_mean_propagate(Xk, u, h, layout)
        X[k + 1] = Xk
    return X


def generate_ground_truth(profile: TrajectoryProfile = TrajectoryProfile(), g=(0.0, 0.0, -9.81)) -> GroundTruth:
    n = profile.n_samples
    dt = 1.0 / profile.rate
    t = np.arange(n) * dt
    g = np.asarray(g, dtype=float)
    if profile.seed is None:
        ph_w = np.zeros(3)
        ph_a = np.zeros(3)
    else:
        rng = np.random.default_rng(profile.seed)
        ph_w, ph_a = rng.uniform(0, 2 * np.pi, (2, 3))
    wa, wf = np.asarray(profile.gyro_amp), np.asarray(profile.gyro_freq)
    aa, af = np.asarray(profile.accel_amp), np.asarray(profile.accel_freq)
    omega = wa * np.sin(2 * np.pi * wf * t[:, None] + ph_w)
    a_world = aa * np.cos(2 * np.pi * af * t[:, None] + ph_a)
    v0 = aa / (2 * np.pi * af) * np.sin(ph_a)

    layout = landmark_layout()
    X = np.empty((n, 5, 5))
    X[0] = np.eye(5)
    X[0, :3, 3] = v0
    accel = np.empty((n, 3))
    h = dt / profile.substeps
    for k in range(n):
        Xk = X[k]
        accel[k] = Xk[:3, :3].T @ (a_world[k] - g)
        if k == n - 1:
            break
        u = ImuSample(t[k], omega[k], accel[k])
        for _ in range(profile.substeps):
            Xk = imu_mean_propagate(Xk, u, h, layout)
        X[k + 1] = Xk
    return GroundTruth(t, X, omega, accel, g)


@dataclass
class SensorLog:
    """Time-stamped IMU samples plus either landmark or leg observations.

    Landmark mode fills ``landmarks`` (L, 3) and ``obs`` (N, L, 3). Legged
    mode fills ``joints`` (N, legs, 3) and boolean ``contacts`` (N, legs).
    """

    t: np.ndarray
    omega: np.ndarray
    accel: np.ndarray
    landmarks: np.ndarray | None = None
    obs: np.ndarray | None = None
    sigma_cam: float = SIGMA_CAM
    joints: np.ndarray | None = None
    contacts: np.ndarray | None = None
    leg_names: tuple = ()
    ik_failures: int = 0

    @property
    def mode(self) -> str:
        return "legged" if self.joints is not None else "landmark"

    def __len__(self):
        return len(self.t)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.t, self.omega, self.accel, self.obs, self.joints, self.contacts):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _noise_rngs(seed):
    # fixed sub-stream offsets: 0 IMU, 1 camera / encoders
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


def _noisy_imu(gt, noise, rng):
    n = len(gt.t)
    omega, accel = gt.omega.copy(), gt.accel.copy()
    if noise is not None:
        omega += noise.sigma_gyro * rng.standard_normal((n, 3))
        accel += noise.sigma_accel * rng.standard_normal((n, 3))
    return omega, accel


def synthesize_sensors(gt: GroundTruth, landmarks=LANDMARKS, noise: NoiseConfig | None = NoiseConfig(),
                       sigma_cam: float = SIGMA_CAM, seed: int = 0) -> SensorLog:
    """IMU and landmark observations at every sample; ``noise=None`` is noiseless.

    ``sigma_cam`` is the filter-side camera noise recorded in the log; the
    observations are perturbed with it only when ``noise`` is given.
    """
    if len(gt.t) == 0:
        raise ValueError("empty ground truth")
    landmarks = np.asarray(landmarks, dtype=float)
    rng_imu, rng_cam = _noise_rngs(seed)
    omega, accel = _noisy_imu(gt, noise, rng_imu)
    rel = landmarks[None, :, :] - gt.p[:, None, :]
    obs = np.einsum("nji,nlj->nli", gt.R, rel)
    if noise is not None:
        obs = obs + sigma_cam * rng_cam.standard_normal(obs.shape)
    return SensorLog(gt.t.copy(), omega, accel, landmarks=landmarks, obs=obs, sigma_cam=sigma_cam)


def solve_joint_angles(r, geom: LegGeometry, guess=NOMINAL_JOINTS, tol=1e-9):
    """Joint angles with ``forward_kinematics(phi) == r``; returns ``(phi, ok)``."""
    r = np.asarray(r, dtype=float)
    sol = root(lambda q: forward_kinematics(q, geom) - r, np.asarray(guess, float),
               jac=lambda q: fk_jacobian(q, geom), method="hybr", options={"xtol": 1e-14})
    phi = sol.x
    ok = bool(np.linalg.norm(forward_kinematics(phi, geom) - r) < tol and phi[2] < 0)
    return phi, ok


def contact_schedule(t, gait_period, leg_names=("FL", "FR", "RL", "RR")):
    """Trot schedule: FL/RR in stance for the first half period, FR/RL for the second."""
    half = gait_period / 2.0
    phase = np.floor(np.asarray(t) / half + 1e-9).astype(int) % 2
    cols = []
    for name in leg_names:
        group = 0 if name in ("FL", "RR") else 1
        cols.append(phase == group)
    return np.stack(cols, axis=1)


def synthesize_legged(gt: GroundTruth, legs: dict | None = None, gait_period: float = 0.5,
                      noise: NoiseConfig | None = NoiseConfig(), seed: int = 0) -> SensorLog:
    """Joint angles from stance feet fixed in the world, recovered by inverse kinematics.

    On each touchdown the foot is placed at the nominal stance pose. Steps
    whose inversion fails are reported as swing for that leg and counted in
    ``ik_failures``.
    """
    if not gait_period > 0:
        raise ValueError("gait_period must be positive")
    legs = legs or quadruped_legs()
    names = tuple(legs)
    rng_imu, rng_enc = _noise_rngs(seed)
    omega, accel = _noisy_imu(gt, noise, rng_imu)
    n = len(gt.t)
    sched = contact_schedule(gt.t, gait_period, names)
    joints = np.tile(NOMINAL_JOINTS, (n, len(names), 1))
    contacts = np.zeros((n, len(names)), dtype=bool)
    failures = 0
    for j, name in enumerate(names):
        geom = legs[name]
        foot = None
        guess = NOMINAL_JOINTS
        for k in range(n):
            if not sched[k, j]:
                foot = None
                continue
            R, p = gt.R[k], gt.p[k]
            if foot is None:
                foot = p + R @ forward_kinematics(NOMINAL_JOINTS, geom)
                guess = NOMINAL_JOINTS
            phi, ok = solve_joint_angles(R.T @ (foot - p), geom, guess)
            if not ok:
                failures += 1
                continue
            guess = phi
            joints[k, j] = phi
            contacts[k, j] = True
    if noise is not None:
        joints = joints + noise.sigma_encoder * rng_enc.standard_normal(joints.shape)
    return SensorLog(gt.t.copy(), omega, accel, joints=joints, contacts=contacts,
                     leg_names=names, ik_failures=failures)


# ---------------------------------------------------------------------------
# Trials


DEFAULT_P0 = {"rotation": 1e-4, "other": 1e-2}


def initial_covariance(layout: StateLayout, rot=1e-4, other=1e-2) -> np.ndarray:
    diag = np.full(layout.dim, other)
    diag[:3] = rot
    return np.diag(diag)


def make_filter(name: str, X0, layout, noise, nano_cfg: NanoConfig = NanoConfig(), P0=None):
    P0 = initial_covariance(layout) if P0 is None else P0
    if name == "nano":
        return NanoLFilter(X0, P0, layout, noise, nano_cfg)
    if name == "inekf":
        return InEKF(X0, P0, layout, noise)
    raise ValueError(f"unknown filter {name!r}")


@dataclass
class EstimateSeries:
    t: np.ndarray
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray


@dataclass
class TrialResult:
    estimates: dict            # name -> EstimateSeries
    step_times: dict           # name -> array of update wall-clock times (s)
    inputs_checksum: dict      # name -> checksum of the inputs fed to that filter
    update_counts: dict


def _layout_for(log: SensorLog) -> StateLayout:
    if log.mode == "legged":
        return legged_layout(log.leg_names)
    return landmark_layout()


def truth_state(gt_R, gt_v, gt_p, layout: StateLayout) -> np.ndarray:
    X = np.eye(3 + layout.m)
    X[:3, :3] = gt_R
    X[:3, 3 + layout.vel] = gt_v
    X[:3, 3 + layout.pos] = gt_p
    for col in layout.contacts:
        X[:3, 3 + col] = gt_p
    return X


def run_trial(log: SensorLog, filters: dict, noise: NoiseConfig = NoiseConfig(),
              legs: dict | None = None) -> TrialResult:
    """Feed the same log to every filter in ``filters`` (name -> filter instance).

    The filters must already be initialized. Estimates are recorded at every
    log time. Errors raised by a filter are wrapped in ``FilterFailure``.
    """
    n = len(log)
    legs = legs or quadruped_legs()
    out, times, sums, counts = {}, {}, {}, {}
    for name, flt in filters.items():
        layout = flt.state.layout
        R = np.empty((n, 3, 3))
        v = np.empty((n, 3))
        p = np.empty((n, 3))
        h = hashlib.sha256()
        tlist = []

        def record(k):
            X = flt.state.mean
            R[k] = X[:3, :3]
            v[k] = X[:3, 3 + layout.vel]
            p[k] = X[:3, 3 + layout.pos]

        k = 0
        try:
            if log.mode == "legged":
                _legged_observe(flt, log, 0, legs, noise, layout, None, tlist, h)
            record(0)
            for k in range(1, n):
                dt = log.t[k] - log.t[k - 1]
                u = ImuSample(log.t[k - 1], log.omega[k - 1], log.accel[k - 1])
                h.update(log.omega[k - 1].tobytes() + log.accel[k - 1].tobytes())
                if log.mode == "legged":
                    flt.predict(u, dt, log.contacts[k - 1])
                    _legged_observe(flt, log, k, legs, noise, layout, log.contacts[k - 1], tlist, h)
                else:
                    flt.predict(u, dt)
                    for i, m in enumerate(log.landmarks):
                        h.update(log.obs[k, i].tobytes())
                        meas = make_landmark_measurement(log.obs[k, i], m, log.sigma_cam, layout)
                        t0 = time.perf_counter()
                        flt.update(meas)
                        tlist.append(time.perf_counter() - t0)
                record(k)
        except Exception as exc:  # noqa: BLE001 - rewrapped with context
            raise FilterFailure(name, k, exc) from exc
        out[name] = EstimateSeries(log.t.copy(), R, v, p)
        times[name] = np.asarray(tlist)
        sums[name] = h.hexdigest()
        counts[name] = len(tlist)
    return TrialResult(out, times, sums, counts)


def _legged_observe(flt, log, k, legs, noise, layout, prev_contacts, tlist, h):
    for j, name in enumerate(log.leg_names):
        if not log.contacts[k, j]:
            continue
        col = layout.contact_column(name)
        phi = log.joints[k, j]
        h.update(phi.tobytes())
        meas = make_leg_measurement(phi, noise, legs[name], col, layout)
        if prev_contacts is None or not prev_contacts[j]:
            flt.reinit_contact(col, meas.y_reduced, meas.gamma_reduced)
            continue
        t0 = time.perf_counter()
        flt.update(meas)
        tlist.append(time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class McSummary:
    """Per-trial error series and aggregate curves, keyed by filter name.

    ``errors[name][channel]`` is an ``(n_ok, N)`` array for channels
    ``pos``/``vel``/``ori``; ``rmse_curve`` aggregates over trials and
    ``trial_rmse`` holds each trial's RMSE over time. ``reports[name]`` lists
    per-trial ATE and RE dictionaries. Wall-clock data lives in
    ``step_times`` and is kept out of the deterministic serialization.
    """

    t: np.ndarray
    trials: list
    failed: list
    errors: dict
    rmse_curve: dict
    trial_rmse: dict
    reports: dict = field(default_factory=dict)
    step_times: dict = field(default_factory=dict)
    first_estimates: dict = field(default_factory=dict)

    def mean_rmse(self, name: str, channel: str) -> float:
        return float(np.mean(self.trial_rmse[name][channel]))


@dataclass(frozen=True)
class CampaignSpec:
    """Everything a trial needs besides its seed.

    ``noise=None`` simulates noiseless sensors; the filters always use
    ``filter_noise`` and ``sigma_cam``. In legged mode ``legs`` is a tuple of
    ``(name, LegGeometry)`` pairs and ``landmarks`` is ignored.
    """

    profile: TrajectoryProfile = TrajectoryProfile()
    mode: str = "landmark"
    landmarks: tuple = tuple(tuple(float(x) for x in m) for m in LANDMARKS)
    legs: tuple = tuple(quadruped_legs().items())
    gait_period: float = 0.5
    noise: NoiseConfig | None = NoiseConfig()
    filter_noise: NoiseConfig = NoiseConfig()
    sigma_cam: float = SIGMA_CAM
    filters: tuple = ("nano", "inekf")
    nano: NanoConfig = NanoConfig()
    p0_rot: float = 1e-4
    p0_other: float = 1e-2
    re_window: float = 3.0

    def __post_init__(self):
        if self.mode not in ("landmark", "legged"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.filters:
            raise ValueError("at least one filter is required")


_GT_CACHE: dict = {}


def _ground_truth(profile):
    if profile not in _GT_CACHE:
        _GT_CACHE.clear()
        _GT_CACHE[profile] = generate_ground_truth(profile)
    return _GT_CACHE[profile]


def simulate_log(spec: CampaignSpec, gt: GroundTruth, seed: int) -> SensorLog:
    if spec.mode == "legged":
        return synthesize_legged(gt, dict(spec.legs), spec.gait_period, spec.noise, seed)
    return synthesize_sensors(gt, np.asarray(spec.landmarks), spec.noise, spec.sigma_cam, seed)


def run_log(spec: CampaignSpec, log: SensorLog, X0_parts) -> TrialResult:
    """Initialize every filter in ``spec`` at ``X0_parts = (R, v, p)`` and run ``log``."""
    layout = _layout_for(log)
    X0 = truth_state(*X0_parts, layout)
    P0 = initial_covariance(layout, spec.p0_rot, spec.p0_other)
    flts = {name: make_filter(name, X0, layout, spec.filter_noise, spec.nano, P0)
            for name in spec.filters}
    return run_trial(log, flts, spec.filter_noise, dict(spec.legs))


def trial_report(est, gt, window: float = 3.0) -> dict:
    """ATE and, when the trajectory is long enough, RE for one estimate."""
    out = {"ate": ate(est, gt)}
    try:
        out["re"] = relative_error(est, gt, window)
    except WindowTooLong:
        out["re"] = None
    return out


def _run_one(args):
    spec, seed, index = args
    gt = _ground_truth(spec.profile)
    log = simulate_log(spec, gt, seed)
    try:
        res = run_log(spec, log, (gt.R[0], gt.v[0], gt.p[0]))
    except FilterFailure as exc:
        exc.trial = index
        return index, None, str(exc)
    errs = {name: error_series(est, gt) for name, est in res.estimates.items()}
    reports = {name: trial_report(est, gt, spec.re_window) for name, est in res.estimates.items()}
    return index, (errs, res.step_times, reports, res.estimates), None


def run_monte_carlo(n_trials: int = 100, spec: CampaignSpec = CampaignSpec(), base_seed: int = 0,
                    threads: int = 1) -> McSummary:
    """Independent trials with seeds ``base_seed + i``; failures are recorded, not raised.

    All trials share the ground-truth trajectory of ``spec.profile``. With
    ``threads > 1`` trials run in worker processes; results are collected by
    trial index so the summary does not depend on scheduling.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    jobs = [(spec, base_seed + i, i) for i in range(n_trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    gt = _ground_truth(spec.profile)
    ok = [r for r in results if r[1] is not None]
    failed = [{"trial": r[0], "error": r[2]} for r in results if r[1] is None]
    errors, curves, trial_rmse, reports, step_times = {}, {}, {}, {}, {}
    n = len(gt.t)
    for name in spec.filters:
        errors[name] = {}
        curves[name] = {}
        trial_rmse[name] = {}
        for ch in CHANNELS:
            arr = np.array([getattr(r[1][0][name], ch) for r in ok]).reshape(len(ok), n)
            errors[name][ch] = arr
            curves[name][ch] = rmse_over_trials(arr) if ok else np.zeros(0)
            trial_rmse[name][ch] = np.sqrt(np.mean(arr ** 2, axis=1))
        reports[name] = [r[1][2][name] for r in ok]
        step_times[name] = np.concatenate([r[1][1][name] for r in ok]) if ok else np.zeros(0)
    first = ok[0][1][3] if ok else {}
    return McSummary(gt.t.copy(), [r[0] for r in ok], failed, errors, curves, trial_rmse,
                     reports, step_times, first)
