"""File formats, run configuration and result persistence.

Numbers are written with 17 significant digits so that a write/parse
roundtrip reproduces every double exactly. Every file is written to a
temporary sibling and renamed into place.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .exceptions import ConfigError, NonMonotonicTime, ParseError
from .filters import NanoConfig
from .models import LEG_NAMES, LegGeometry, NoiseConfig, quadruped_legs
from .sim import LANDMARKS, SIGMA_CAM, EstimateSeries, GroundTruth, SensorLog, TrajectoryProfile

SCHEMA_VERSION = 1

IMU_COLUMNS = ["t", "wx", "wy", "wz", "ax", "ay", "az"]
JOINT_COLUMNS = [f"q{i}" for i in range(12)]
CONTACT_COLUMNS = ["c_fl", "c_fr", "c_rl", "c_rr"]
SENSOR_COLUMNS = IMU_COLUMNS + JOINT_COLUMNS + CONTACT_COLUMNS
STATE_COLUMNS = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz"]


def landmark_columns(n_landmarks: int) -> list[str]:
    cols = list(IMU_COLUMNS)
    for i in range(n_landmarks):
        cols += [f"m{i + 1}x", f"m{i + 1}y", f"m{i + 1}z"]
    return cols


def fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Atomic writes


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_rows(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(x) for x in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# CSV parsing


def _read_table(path, columns: list[str]) -> np.ndarray:
    """Parse a CSV whose header must equal ``columns``; returns an ``(N, len(columns))`` array."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, "", "missing header") from None
        if header != columns:
            for i, name in enumerate(columns):
                if i >= len(header) or header[i] != name:
                    raise ParseError(1, name, f"expected column {name!r} at position {i}")
            raise ParseError(1, header[len(columns)], "unexpected extra column")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(columns):
                raise ParseError(line, columns[len(row)], "missing value")
            if len(row) > len(columns):
                raise ParseError(line, "", f"expected {len(columns)} values, got {len(row)}")
            vals = []
            for name, cell in zip(columns, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(line, name, f"not a number: {cell.strip()!r}") from None
                if not np.isfinite(v):
                    raise ParseError(line, name, "non-finite value")
                vals.append(v)
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    if len(arr) > 1 and np.any(np.diff(arr[:, 0]) <= 0):
        k = int(np.nonzero(np.diff(arr[:, 0]) <= 0)[0][0])
        raise NonMonotonicTime(f"{path}: time does not increase after data row {k + 1}")
    return arr


def parse_sensor_log(path, sigma_cam: float = SIGMA_CAM) -> SensorLog:
    """Read a legged or landmark sensor log, detected from the header."""
    with Path(path).open(newline="") as fh:
        first = fh.readline()
    header = [h.strip() for h in first.strip().split(",")] if first else []
    if header[:len(IMU_COLUMNS)] == IMU_COLUMNS and len(header) > 7 and header[7].startswith("m"):
        n_land = (len(header) - 7) // 3
        arr = _read_table(path, landmark_columns(n_land))
        obs = arr[:, 7:].reshape(len(arr), n_land, 3)
        return SensorLog(arr[:, 0], arr[:, 1:4], arr[:, 4:7], landmarks=np.zeros((n_land, 3)),
                         obs=obs, sigma_cam=sigma_cam)
    arr = _read_table(path, SENSOR_COLUMNS)
    joints = arr[:, 7:19].reshape(len(arr), 4, 3)
    flags = arr[:, 19:23]
    bad = ~np.isin(flags, (0.0, 1.0))
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise ParseError(int(r) + 2, CONTACT_COLUMNS[c], "contact flag must be 0 or 1")
    return SensorLog(arr[:, 0], arr[:, 1:4], arr[:, 4:7], joints=joints,
                     contacts=flags.astype(bool), leg_names=LEG_NAMES)


def write_sensor_log(path, log: SensorLog) -> None:
    n = len(log)
    base = np.column_stack([log.t, log.omega, log.accel])
    if log.mode == "landmark":
        rows = np.column_stack([base, log.obs.reshape(n, -1)])
        _write_rows(path, landmark_columns(log.obs.shape[1]), rows)
        return
    joints = np.zeros((n, 4, 3))
    flags = np.zeros((n, 4))
    for j, name in enumerate(log.leg_names):
        k = LEG_NAMES.index(name)
        joints[:, k] = log.joints[:, j]
        flags[:, k] = log.contacts[:, j]
    _write_rows(path, SENSOR_COLUMNS, np.column_stack([base, joints.reshape(n, 12), flags]))


def select_legs(log: SensorLog, names) -> SensorLog:
    """Restrict a legged log to the legs in ``names``, in that order."""
    idx = [log.leg_names.index(n) for n in names]
    return dataclasses.replace(log, joints=log.joints[:, idx], contacts=log.contacts[:, idx],
                               leg_names=tuple(names))


def _quat_wxyz(R) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()      # x, y, z, w
    q = np.column_stack([q[:, 3], q[:, :3]])
    return np.where(q[:, :1] < 0, -q, q)


def write_state_csv(path, t, R, v, p) -> None:
    """Trajectory CSV with orientation as a unit quaternion (w first)."""
    _write_rows(path, STATE_COLUMNS, np.column_stack([t, _quat_wxyz(np.asarray(R)), v, p]))


def parse_state_csv(path) -> EstimateSeries:
    arr = _read_table(path, STATE_COLUMNS)
    q = arr[:, 1:5]
    norms = np.linalg.norm(q, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        k = int(np.nonzero(np.abs(norms - 1.0) > 1e-6)[0][0])
        raise ParseError(k + 2, "qw", "quaternion is not unit norm")
    R = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix() if len(arr) else np.zeros((0, 3, 3))
    return EstimateSeries(arr[:, 0], R, arr[:, 5:8], arr[:, 8:11])


def write_ground_truth(path, gt: GroundTruth) -> None:
    write_state_csv(path, gt.t, gt.R, gt.v, gt.p)


def interpolate_states(series: EstimateSeries, t) -> EstimateSeries:
    """Resample a trajectory at times ``t``: slerp for rotation, linear otherwise.

    Times must lie inside the source span. Identical time grids are passed
    through untouched.
    """
    t = np.asarray(t, dtype=float)
    if len(t) == len(series.t) and np.array_equal(t, series.t):
        return series
    if len(series.t) < 2 or t[0] < series.t[0] or t[-1] > series.t[-1]:
        raise ValueError("requested times fall outside the trajectory")
    R = Slerp(series.t, Rotation.from_matrix(series.R))(t).as_matrix()
    v = np.column_stack([np.interp(t, series.t, series.v[:, i]) for i in range(3)])
    p = np.column_stack([np.interp(t, series.t, series.p[:, i]) for i in range(3)])
    return EstimateSeries(t, R, v, p)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class InitialCovariance:
    rotation: float = 1e-4
    other: float = 1e-2

    def __post_init__(self):
        if not (self.rotation > 0 and self.other > 0):
            raise ValueError("initial variances must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Run settings; every field has a default so ``{}`` is a valid config."""

    noise: NoiseConfig = NoiseConfig()
    nano: NanoConfig = NanoConfig()
    mode: str = "landmark"
    landmarks: tuple = tuple(tuple(float(x) for x in m) for m in LANDMARKS)
    sigma_cam: float = SIGMA_CAM
    legs: tuple = LEG_NAMES
    leg_geometry: LegGeometry = LegGeometry()
    gait_period: float = 0.5
    trajectory: TrajectoryProfile = TrajectoryProfile()
    noiseless: bool = False
    initial_cov: InitialCovariance = InitialCovariance()
    filters: tuple = ("nano", "inekf")
    trials: int = 100
    seed: int = 0
    threads: int = 1
    re_window: float = 3.0
    out: str = "results"
    run_id: str | None = None
    sensor_log: str | None = None
    ground_truth: str | None = None

    def __post_init__(self):
        if self.mode not in ("landmark", "legged"):
            raise ValueError("must be 'landmark' or 'legged'")
        if not self.sigma_cam > 0:
            raise ValueError("sigma_cam must be positive")
        if not self.gait_period > 0:
            raise ValueError("gait_period must be positive")
        if not self.re_window > 0:
            raise ValueError("re_window must be positive")
        if self.trials < 1 or self.threads < 1:
            raise ValueError("trials and threads must be >= 1")
        if not self.filters or any(f not in ("nano", "inekf") for f in self.filters):
            raise ValueError("filters must be a non-empty subset of nano, inekf")
        if any(n not in LEG_NAMES for n in self.legs) or not self.legs:
            raise ValueError(f"legs must be a non-empty subset of {LEG_NAMES}")

    def leg_geometries(self) -> dict:
        return {name: quadruped_legs(self.leg_geometry)[name] for name in self.legs}

    def to_dict(self) -> dict:
        return _to_plain(self)


_NESTED = {"noise": NoiseConfig, "nano": NanoConfig, "leg_geometry": LegGeometry,
           "trajectory": TrajectoryProfile, "initial_cov": InitialCovariance}


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(x) for x in obj]
    return obj


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"$.{key}", "duplicate key")
        out[key] = value
    return out


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _check_type(path, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise ConfigError(path, f"wrong type {type(value).__name__}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}"
        if key not in fields:
            raise ConfigError(sub, "unknown field")
        if cls is RunConfig and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, sub)
            continue
        default = fields[key].default
        if value is None and default is None:
            kwargs[key] = None
            continue
        if default is not None:
            _check_type(sub, value, default)
        kwargs[key] = _tupleize(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(text: str, base_dir=None) -> RunConfig:
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    if isinstance(data, dict):
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("$.schema_version", f"unsupported version {version!r}")
    cfg = _build(RunConfig, data, "$")
    if cfg.mode == "landmark":
        lm = np.asarray(cfg.landmarks, dtype=float) if cfg.landmarks else np.zeros((0,))
        if lm.ndim != 2 or lm.shape[1] != 3 or len(lm) == 0:
            raise ConfigError("$.landmarks", "expected a non-empty list of 3-vectors")
    for key in ("sensor_log", "ground_truth"):
        value = getattr(cfg, key)
        if value is not None:
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            if not p.exists():
                raise ConfigError(f"$.{key}", f"file not found: {value}")
            cfg = dataclasses.replace(cfg, **{key: str(p)})
    return cfg


def load_config(path) -> RunConfig:
    """Load a JSON run configuration; missing fields take their defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


def config_json(cfg: RunConfig) -> dict:
    out = cfg.to_dict()
    out["schema_version"] = SCHEMA_VERSION
    return out


