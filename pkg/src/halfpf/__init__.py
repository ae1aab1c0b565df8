"""Multi-precision bootstrap particle filter for 2-D object tracking."""

from .halfnum import Binary16, OpCounters, PackedPair
from .model import ModelParams, PixelTemplate, Video, disk_template, generate_video
from .filter import (
    DegeneracyError,
    ParticleSet,
    PrecisionMode,
    RngStream,
    RunResult,
    run,
)
from .bench import BenchRecord, accuracy_metrics, run_sweep

__all__ = [
    "Binary16",
    "OpCounters",
    "PackedPair",
    "ModelParams",
    "PixelTemplate",
    "Video",
    "disk_template",
    "generate_video",
    "DegeneracyError",
    "ParticleSet",
    "PrecisionMode",
    "RngStream",
    "RunResult",
    "run",
    "BenchRecord",
    "accuracy_metrics",
    "run_sweep",
]
