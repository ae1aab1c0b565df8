"""Plotting over the tracker's CSV interfaces.

Inputs are the documented CSV schemas: trajectories (`frame,est_x,est_y`),
ground truth (`frame,x,y`), and the benchmark table.  Outputs are PNG
figures plus a metadata dictionary carrying every annotation value, so
callers can verify the printed numbers against the raw CSV.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, Mapping, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

BENCH_COLUMNS = [
    "mode", "K", "workers", "repeat", "total_ms", "t_propagate",
    "t_likelihood", "t_max", "t_weight", "t_normalize", "t_resample",
    "rmse", "mean_err_fp64", "widen", "narrow", "half_arith",
    "wide_arith", "special_fn",
]

STAGE_COLUMNS = [
    "t_propagate", "t_likelihood", "t_max", "t_weight", "t_normalize",
    "t_resample",
]

TRAJECTORY_COLUMNS = ["frame", "est_x", "est_y"]
TRUTH_COLUMNS = ["frame", "x", "y"]


def _read_csv(path, expected_columns) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input CSV not found: {path}")
    df = pd.read_csv(path)
    if list(df.columns) != expected_columns:
        raise ValueError(
            f"{path}: unexpected columns {list(df.columns)}, "
            f"expected {expected_columns}"
        )
    if df.empty:
        raise ValueError(f"{path}: CSV has no data rows")
    return df


def load_bench(path) -> pd.DataFrame:
    return _read_csv(path, BENCH_COLUMNS)


def load_trajectory(path) -> pd.DataFrame:
    return _read_csv(path, TRAJECTORY_COLUMNS)


def load_truth(path) -> pd.DataFrame:
    return _read_csv(path, TRUTH_COLUMNS)


def plot_trajectory(
    trajectories: Mapping[str, os.PathLike],
    truth_path: os.PathLike,
    out_path: os.PathLike,
) -> dict:
    """Overlay per-mode estimates on the ground-truth path.

    Returns {"path", "max_gap": per-label max Euclidean distance to truth}.
    """
    truth = load_truth(truth_path)
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(truth["x"], truth["y"], "k--", linewidth=2, label="ground truth")
    max_gap: Dict[str, float] = {}
    for label, path in trajectories.items():
        traj = load_trajectory(path)
        if len(traj) != len(truth) or not np.array_equal(
            traj["frame"].to_numpy(), truth["frame"].to_numpy()
        ):
            raise ValueError(f"{path}: frame column does not align with truth")
        ax.plot(traj["est_x"], traj["est_y"], label=label, alpha=0.8)
        max_gap[label] = float(
            np.hypot(
                traj["est_x"] - truth["x"], traj["est_y"] - truth["y"]
            ).max()
        )
    ax.set_xlabel("x (pixels)")
    ax.set_ylabel("y (pixels)")
    ax.invert_yaxis()  # image coordinates
    ax.legend()
    ax.set_title("Estimated trajectory vs ground truth")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {"path": Path(out_path), "max_gap": max_gap}


def _mode_order(df: pd.DataFrame) -> list:
    seen = []
    for mode in df["mode"]:
        if mode not in seen:
            seen.append(mode)
    return seen


def _config_means(df: pd.DataFrame) -> pd.DataFrame:
    ok = df[np.isfinite(df["total_ms"])]
    if ok.empty:
        raise ValueError("benchmark CSV has no rows with finite timings")
    return ok.groupby(["mode", "K", "workers"], sort=False, as_index=False).mean(
        numeric_only=True
    )


def plot_bench(bench_path, out_dir) -> dict:
    """Emit the three benchmark figures.

    Returns figure paths plus the annotation values:
    * speedups[(mode, K)]: mean FP64 total_ms / mean mode total_ms at the
      same K and workers=min, formatted on the precision bars.
    * worker_speedups[(mode, K, workers)]: worst mean total_ms across all
      configurations divided by this configuration's mean.
    """
    df = load_bench(bench_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    means = _config_means(df)
    modes = _mode_order(means)
    Ks = sorted(means["K"].unique())
    base_workers = int(means["workers"].min())

    # -- precision bars with speedup-over-FP64 annotations -------------------
    at_base = means[means["workers"] == base_workers]
    speedups: Dict[tuple, Optional[float]] = {}
    fig, ax = plt.subplots(figsize=(8, 5))
    width = 0.8 / len(modes)
    for mi, mode in enumerate(modes):
        heights, labels = [], []
        for K in Ks:
            sel = at_base[(at_base["mode"] == mode) & (at_base["K"] == K)]
            mean_ms = float(sel["total_ms"].iloc[0]) if len(sel) else np.nan
            ref = at_base[(at_base["mode"] == "fp64") & (at_base["K"] == K)]
            if len(sel) and len(ref):
                speedups[(mode, K)] = float(ref["total_ms"].iloc[0]) / mean_ms
            else:
                speedups[(mode, K)] = None
            heights.append(mean_ms)
            s = speedups[(mode, K)]
            labels.append("" if s is None else f"{s:.2f}x")
        xs = np.arange(len(Ks)) + (mi - (len(modes) - 1) / 2) * width
        bars = ax.bar(xs, heights, width, label=mode)
        ax.bar_label(bars, labels=labels, fontsize=8)
    ax.set_xticks(np.arange(len(Ks)), [str(K) for K in Ks])
    ax.set_xlabel("particles")
    ax.set_ylabel("mean total time (ms)")
    ax.set_title(f"Runtime by precision (workers={base_workers}, speedup vs fp64)")
    ax.legend()
    fig.tight_layout()
    precision_path = out_dir / "bench_precision.png"
    fig.savefig(precision_path)
    plt.close(fig)

    # -- per-stage breakdown --------------------------------------------------
    fig, ax = plt.subplots(figsize=(8, 5))
    groups = at_base.groupby("mode", sort=False)[STAGE_COLUMNS].mean()
    bottom = np.zeros(len(groups))
    for stage in STAGE_COLUMNS:
        vals = groups[stage].to_numpy()
        ax.bar(groups.index, vals, bottom=bottom, label=stage.removeprefix("t_"))
        bottom += vals
    ax.set_ylabel("mean stage time (ms)")
    ax.set_title("Per-stage runtime breakdown")
    ax.legend()
    fig.tight_layout()
    stage_path = out_dir / "bench_stages.png"
    fig.savefig(stage_path)
    plt.close(fig)

    # -- worker sweep, normalized to the worst configuration ------------------
    worst = float(means["total_ms"].max())
    worker_speedups: Dict[tuple, float] = {}
    fig, ax = plt.subplots(figsize=(8, 5))
    for mode in modes:
        for K in Ks:
            sel = means[(means["mode"] == mode) & (means["K"] == K)]
            if sel.empty:
                continue
            sel = sel.sort_values("workers")
            speed = worst / sel["total_ms"].to_numpy()
            for w, s in zip(sel["workers"], speed):
                worker_speedups[(mode, int(K), int(w))] = float(s)
            ax.plot(sel["workers"], speed, marker="o", label=f"{mode} K={K}")
    ax.set_xlabel("workers")
    ax.set_ylabel("speedup over worst configuration")
    ax.set_title("Worker sweep")
    ax.legend(fontsize=8)
    fig.tight_layout()
    worker_path = out_dir / "bench_workers.png"
    fig.savefig(worker_path)
    plt.close(fig)

    return {
        "precision_bars": precision_path,
        "stage_breakdown": stage_path,
        "worker_sweep": worker_path,
        "speedups": speedups,
        "speedup_annotations": {
            key: (None if s is None else f"{s:.2f}x") for key, s in speedups.items()
        },
        "worker_speedups": worker_speedups,
    }
