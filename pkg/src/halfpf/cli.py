"""Command-line interface: generate videos, track objects, run benchmarks.

Exit codes: 0 success, 2 bad flags, 3 I/O or parse failure, 4 numerical
degeneracy.  Seeds are always echoed to stderr for reproducibility.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench, model
from .filter import DegeneracyError, PrecisionMode, run
from .model import ModelParams, Video, disk_template

EXIT_OK = 0
EXIT_BAD_FLAGS = 2
EXIT_IO = 3
EXIT_DEGENERACY = 4

_PRECISIONS = [mode.value for mode in PrecisionMode]


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--drift-x", type=float, default=1.0)
    parser.add_argument("--drift-y", type=float, default=2.0)
    parser.add_argument("--std-x", type=float, default=5.0)
    parser.add_argument("--std-y", type=float, default=2.0)
    parser.add_argument("--bg-mean", type=float, default=100.0)
    parser.add_argument("--fg-mean", type=float, default=228.0)
    parser.add_argument("--likelihood-scale", type=float, default=50.0)
    parser.add_argument("--radius", type=int, default=5, help="object disk radius, pixels")
    parser.add_argument("--noise-std", type=float, default=5.0)


def _params_from(args: argparse.Namespace) -> ModelParams:
    return ModelParams(
        drift_x=args.drift_x,
        drift_y=args.drift_y,
        std_x=args.std_x,
        std_y=args.std_y,
        bg_mean=args.bg_mean,
        fg_mean=args.fg_mean,
        likelihood_scale=args.likelihood_scale,
        disk_radius=args.radius,
        noise_std=args.noise_std,
    )


def _default_workers() -> int:
    env = os.environ.get("PF_WORKERS")
    return int(env) if env else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="halfpf",
        description="Multi-precision particle filter for 2-D object tracking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="render a synthetic video plus ground truth")
    gen.add_argument("--out", default="video.pfvd", help="output PFVD container path")
    gen.add_argument("--truth", default="truth.csv", help="output ground-truth CSV path")
    gen.add_argument("--frames", type=int, default=100)
    gen.add_argument("--width", type=int, default=512)
    gen.add_argument("--height", type=int, default=512)
    gen.add_argument("--start-x", type=float, default=None, help="default: width/2")
    gen.add_argument("--start-y", type=float, default=None, help="default: height/2")
    gen.add_argument("--seed", type=int, default=42)
    _add_model_flags(gen)

    track = sub.add_parser("track", help="run the particle filter over a video")
    track.add_argument("--video", required=True, help="input PFVD container")
    track.add_argument("--out", default="trajectory.csv", help="output trajectory CSV")
    track.add_argument("--precision", choices=_PRECISIONS, default="fp64")
    track.add_argument("--particles", type=int, default=128)
    track.add_argument("--seed", type=int, default=42)
    track.add_argument("--workers", type=int, default=None, help="default: PF_WORKERS or 1")
    track.add_argument("--start-x", type=float, default=None, help="default: width/2")
    track.add_argument("--start-y", type=float, default=None, help="default: height/2")
    track.add_argument("--template-radius", type=int, default=None,
                       help="likelihood template disk radius; default: --radius")
    _add_model_flags(track)

    bn = sub.add_parser("bench", help="sweep precision x particles x workers")
    bn.add_argument("--video", required=True, help="input PFVD container")
    bn.add_argument("--out", default="bench.csv", help="output benchmark CSV")
    bn.add_argument("--particles", default="32768,65536", help="comma-separated counts")
    bn.add_argument("--precisions", default=",".join(_PRECISIONS))
    bn.add_argument("--workers", default="1,2,4,8", help="comma-separated worker counts")
    bn.add_argument("--repeats", type=int, default=100)
    bn.add_argument("--seed", type=int, default=42)
    bn.add_argument("--start-x", type=float, default=None)
    bn.add_argument("--start-y", type=float, default=None)
    bn.add_argument("--template-radius", type=int, default=None)
    bn.add_argument("--concurrent", action="store_true",
                    help="run configurations concurrently (timings become NaN)")
    _add_model_flags(bn)

    return parser


def _load_video(path) -> Video:
    frames = model.read_video(path)
    # Tracking does not need the truth; attach a placeholder trajectory.
    placeholder = np.zeros((len(frames), 2), dtype=np.float64)
    return Video(frames=frames, truth=placeholder)


def _start_hint(args, width: int, height: int):
    x = args.start_x if args.start_x is not None else width / 2.0
    y = args.start_y if args.start_y is not None else height / 2.0
    return (x, y)


def cmd_generate(args) -> int:
    print(f"seed: {args.seed}", file=sys.stderr)
    params = _params_from(args)
    start = _start_hint(args, args.width, args.height)
    video = model.generate_video(
        params, args.frames, args.width, args.height, start, args.seed
    )
    model.write_video(args.out, video)
    model.write_truth_csv(args.truth, video.truth)
    print(f"wrote {args.out} and {args.truth}", file=sys.stderr)
    return EXIT_OK


def write_trajectory_csv(path, trajectory) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("frame,est_x,est_y\n")
        for t, (x, y) in enumerate(trajectory):
            fh.write(f"{t},{float(x)!r},{float(y)!r}\n")


def read_trajectory_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "frame,est_x,est_y":
            raise ValueError(f"{path}: unexpected trajectory CSV header {header!r}")
        for line in fh:
            _, x, y = line.strip().split(",")
            rows.append((float(x), float(y)))
    return np.array(rows, dtype=np.float64)


def cmd_track(args) -> int:
    print(f"seed: {args.seed}", file=sys.stderr)
    video = _load_video(args.video)
    params = _params_from(args)
    template_radius = args.template_radius or args.radius
    workers = args.workers if args.workers is not None else _default_workers()
    result = run(
        video,
        args.particles,
        PrecisionMode.from_name(args.precision),
        args.seed,
        workers=workers,
        params=params,
        template=disk_template(template_radius),
        start_hint=_start_hint(args, video.width, video.height),
    )
    write_trajectory_csv(args.out, result.trajectory)
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    print(f"seed: {args.seed}", file=sys.stderr)
    video = _load_video(args.video)
    params = _params_from(args)
    template_radius = args.template_radius or args.radius
    Ks = [int(v) for v in args.particles.split(",") if v]
    modes = [PrecisionMode.from_name(v) for v in args.precisions.split(",") if v]
    workers_list = [int(v) for v in args.workers.split(",") if v]
    records = bench.run_sweep(
        video,
        Ks,
        modes,
        workers_list,
        args.repeats,
        args.seed,
        params=params,
        template=disk_template(template_radius),
        start_hint=_start_hint(args, video.width, video.height),
        concurrent_configs=args.concurrent,
    )
    bench.write_csv(records, args.out)
    print(f"wrote {args.out} ({len(records)} rows)", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "track":
            return cmd_track(args)
        if args.command == "bench":
            return cmd_bench(args)
        parser.error(f"unknown command {args.command!r}")
    except DegeneracyError as err:
        print(f"degeneracy at frame {err.frame}: {err}", file=sys.stderr)
        return EXIT_DEGENERACY
    except (OSError,) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        message = str(err)
        print(f"error: {message}", file=sys.stderr)
        if "magic" in message or "offset" in message or "header" in message:
            return EXIT_IO
        return EXIT_BAD_FLAGS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
