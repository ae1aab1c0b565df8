"""Figure generation from particle-filter trajectory and benchmark CSVs."""

from .plotting import (
    BENCH_COLUMNS,
    load_bench,
    load_trajectory,
    load_truth,
    plot_bench,
    plot_trajectory,
)

__all__ = [
    "BENCH_COLUMNS",
    "load_bench",
    "load_trajectory",
    "load_truth",
    "plot_bench",
    "plot_trajectory",
]
