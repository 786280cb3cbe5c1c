"""Trajectory error metrics: per-step errors, RMSE across trials, ATE and RE.

Trajectories are any objects exposing ``R`` (N, 3, 3), ``v`` (N, 3),
``p`` (N, 3) and, for the relative error, ``t`` (N,). No alignment is
applied since all filters start from the true state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import LengthMismatch, WindowTooLong
from .lie import so3_angle

CHANNELS = ("pos", "vel", "ori")


@dataclass
class ErrorSeries:
    pos: np.ndarray
    vel: np.ndarray
    ori: np.ndarray

    def __len__(self):
        return len(self.pos)


def _check_lengths(est, gt):
    n = len(est.p)
    if len(gt.p) != n or len(est.R) != n or len(gt.R) != n:
        raise LengthMismatch(f"estimate has {n} samples, ground truth {len(gt.p)}")


def error_series(est, gt) -> ErrorSeries:
    _check_lengths(est, gt)
    dR = np.einsum("nji,njk->nik", np.asarray(gt.R), np.asarray(est.R))
    return ErrorSeries(
        pos=np.linalg.norm(np.asarray(est.p) - np.asarray(gt.p), axis=1),
        vel=np.linalg.norm(np.asarray(est.v) - np.asarray(gt.v), axis=1),
        ori=so3_angle(dR),
    )


def rmse_over_trials(errors) -> np.ndarray:
    """Per-step root mean square of an ``(n_trials, N)`` stack of errors."""
    try:
        arr = np.asarray(errors, dtype=float)
    except ValueError as exc:
        raise LengthMismatch("trials have different lengths") from exc
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise LengthMismatch("trials have different lengths")
    return np.sqrt(np.mean(arr ** 2, axis=0))


def _rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0


def ate(est, gt) -> dict:
    """Root mean square of each error channel over the whole trajectory."""
    e = error_series(est, gt)
    return {ch: _rms(getattr(e, ch)) for ch in CHANNELS}


def _se23(R, v, p):
    X = np.zeros(R.shape[:-2] + (5, 5))
    X[..., :3, :3] = R
    X[..., :3, 3] = v
    X[..., :3, 4] = p
    X[..., 3, 3] = 1.0
    X[..., 4, 4] = 1.0
    return X


def _inv(X):
    Xi = np.zeros_like(X)
    Rt = np.swapaxes(X[..., :3, :3], -1, -2)
    Xi[..., :3, :3] = Rt
    Xi[..., :3, 3:] = -Rt @ X[..., :3, 3:]
    Xi[..., 3, 3] = 1.0
    Xi[..., 4, 4] = 1.0
    return Xi


def window_pairs(t, window: float):
    """Index pairs ``(i, j)`` with ``t[j] - t[i]`` equal to ``window``, stride one sample."""
    t = np.asarray(t, dtype=float)
    if not window > 0:
        raise ValueError("window must be positive")
    if len(t) < 2 or t[-1] - t[0] < window - 1e-9:
        raise WindowTooLong(f"window {window} s exceeds trajectory duration")
    tol = 1e-9 * max(1.0, abs(t[-1]))
    j = np.searchsorted(t, t + window - tol)
    i = np.nonzero(j < len(t))[0]
    return i, j[i]


def relative_error(est, gt, window: float = 3.0) -> dict:
    """RMS over window starts of the drift ``(G_i^-1 G_j)^-1 (E_i^-1 E_j)``.

    Both trajectories are lifted to SE_2(3) so the drift carries rotation,
    velocity and position parts; their magnitudes form the three channels.
    """
    _check_lengths(est, gt)
    i, j = window_pairs(gt.t, window)
    G = _se23(np.asarray(gt.R), np.asarray(gt.v), np.asarray(gt.p))
    E = _se23(np.asarray(est.R), np.asarray(est.v), np.asarray(est.p))
    rel_g = _inv(G[i]) @ G[j]
    rel_e = _inv(E[i]) @ E[j]
    D = _inv(rel_g) @ rel_e
    return {
        "pos": _rms(np.linalg.norm(D[:, :3, 4], axis=1)),
        "vel": _rms(np.linalg.norm(D[:, :3, 3], axis=1)),
        "ori": _rms(so3_angle(D[:, :3, :3])),
    }


def metric_report(estimates, truths, window: float = 3.0) -> dict:
    """ATE and RE per channel, averaged over datasets with their standard deviation."""
    if len(estimates) != len(truths) or not estimates:
        raise LengthMismatch("need one ground truth per estimate")
    rows = [(ate(e, g), relative_error(e, g, window)) for e, g in zip(estimates, truths)]
    out = {}
    for k, label in enumerate(("ate", "re")):
        for ch in CHANNELS:
            vals = np.array([r[k][ch] for r in rows])
            out[f"{label}_{ch}"] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
