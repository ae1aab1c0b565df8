"""Command-line figure generation.

Usage: pfreport [--bench bench.csv] [--traj label=path ...] [--truth truth.csv]
                --out outdir
Exit codes: 0 success, 1 bad input (missing file, schema mismatch), 2 bad flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import plotting


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfreport",
        description="Render figures from tracker trajectory and benchmark CSVs",
    )
    parser.add_argument("--bench", help="benchmark CSV to plot")
    parser.add_argument(
        "--traj", action="append", default=[], metavar="LABEL=PATH",
        help="trajectory CSV with a curve label (repeatable)",
    )
    parser.add_argument("--truth", help="ground-truth CSV (required with --traj)")
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def parse_traj_specs(specs) -> dict:
    out = {}
    for spec in specs:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise ValueError(f"--traj expects LABEL=PATH, got {spec!r}")
        out[label] = path
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.bench and not args.traj:
        parser.error("nothing to do: pass --bench and/or --traj")
    if args.traj and not args.truth:
        parser.error("--traj requires --truth")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        trajectories = parse_traj_specs(args.traj)
        if trajectories:
            meta = plotting.plot_trajectory(
                trajectories, args.truth, out_dir / "trajectory.png"
            )
            print(f"wrote {meta['path']}", file=sys.stderr)
        if args.bench:
            meta = plotting.plot_bench(args.bench, out_dir)
            for key in ("precision_bars", "stage_breakdown", "worker_sweep"):
                print(f"wrote {meta[key]}", file=sys.stderr)
    except (FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
