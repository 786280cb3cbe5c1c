"""SVG figures rendered from a saved ``summary.json``."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write_text  # noqa: E402

_LABELS = {"pos": "position RMSE (m)", "vel": "velocity RMSE (m/s)", "ori": "orientation RMSE (rad)"}
_NAMES = {"nano": "NANO-L", "inekf": "InEKF"}


def _save(fig, path: Path) -> None:
    # fixed hash salt and no date keep the SVG text reproducible
    from io import StringIO

    buf = StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "nanol", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def render_summary(summary: dict, out_dir) -> list[Path]:
    """Write RMSE-vs-time curves and per-trial RMSE boxplots; returns the paths."""
    out_dir = Path(out_dir)
    t = summary["t"]
    filters = summary["filters"]
    paths = []
    for ch, label in _LABELS.items():
        fig, ax = plt.subplots(figsize=(6, 3.2))
        for name in filters:
            ax.plot(t, summary["rmse_curve"][name][ch], label=_NAMES.get(name, name), lw=1.0)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(label)
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"rmse_{ch}.svg"
        _save(fig, path)
        paths.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(6, 3.2))
    for ax, ch in zip(axes, ("pos", "ori")):
        ax.boxplot([summary["trial_rmse"][n][ch] for n in filters])
        ax.set_xticks(range(1, len(filters) + 1), [_NAMES.get(n, n) for n in filters])
        ax.set_ylabel(_LABELS[ch])
    fig.tight_layout()
    path = out_dir / "box_rmse.svg"
    _save(fig, path)
    paths.append(path)
    return paths


def render_run(run_dir) -> list[Path]:
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    return render_summary(summary, run_dir / "plots")
