"""State-space model and synthetic video generation for 2-D tracking.

The tracked object is a bright disk on a darker background.  Ground truth
moves by a fixed drift per frame and reflects specularly off all four
borders; each frame is rendered, corrupted with Gaussian noise, and
clamped to 8-bit intensities.

Log-likelihoods compare pixel intensities around a candidate position
against the background/foreground means.  Two algebraically equal forms
are provided: the direct form accumulates squared differences and divides
once at the end, while the stabilized form folds the normalization into
the squares so every intermediate stays small enough for binary16.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import halfnum
from .halfnum import Binary16, OpCounters


@dataclass(frozen=True)
class ModelParams:
    """Transition and observation model constants (pixels / intensities)."""

    drift_x: float = 1.0
    std_x: float = 5.0
    drift_y: float = 2.0
    std_y: float = 2.0
    bg_mean: float = 100.0
    fg_mean: float = 228.0
    likelihood_scale: float = 50.0
    disk_radius: int = 5
    noise_std: float = 5.0

    def __post_init__(self):
        if self.std_x <= 0 or self.std_y <= 0:
            raise ValueError("transition standard deviations must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.bg_mean == self.fg_mean:
            raise ValueError("background and foreground means must differ")
        if self.disk_radius < 1:
            raise ValueError("disk_radius must be at least 1")


@dataclass(frozen=True)
class PixelTemplate:
    """Integer (dx, dy) offsets evaluated around a particle position."""

    offsets: np.ndarray  # shape (N, 2), int64

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=np.int64)
        if offs.ndim != 2 or offs.shape[1] != 2:
            raise ValueError("offsets must have shape (N, 2)")
        object.__setattr__(self, "offsets", offs)

    @property
    def count(self) -> int:
        return len(self.offsets)


def disk_template(radius: int) -> PixelTemplate:
    """Filled disk of the given radius, centered on (0, 0)."""
    r = int(radius)
    offs = [
        (dx, dy)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dx * dx + dy * dy <= r * r
    ]
    return PixelTemplate(np.array(offs, dtype=np.int64))


@dataclass
class Video:
    """Frame stack plus the per-frame ground-truth object center."""

    frames: np.ndarray  # (F, H, W) uint8
    truth: np.ndarray  # (F, 2) float64, columns (x, y)

    def __post_init__(self):
        if len(self.frames) != len(self.truth):
            raise ValueError("truth length must match frame count")

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def _reflect(v: float, d: float, hi: float) -> Tuple[float, float]:
    """Advance one step with specular bouncing off the [0, hi] walls.

    The position is mirrored about the wall and the drift reverses, so the
    object travels back instead of sticking; loops in case a step overshoots
    past both walls (cannot happen with the default drifts).
    """
    v += d
    while v < 0.0 or v > hi:
        if v < 0.0:
            v = -v
            d = -d
        if v > hi:
            v = 2.0 * hi - v
            d = -d
    return v, d


def generate_video(
    params: ModelParams,
    frames: int,
    width: int,
    height: int,
    start: Tuple[float, float],
    seed: int,
) -> Video:
    """Render a synthetic monochrome video with known trajectory."""
    if frames < 1:
        raise ValueError("frames must be at least 1")
    x, y = float(start[0]), float(start[1])
    if not (0.0 <= x <= width - 1 and 0.0 <= y <= height - 1):
        raise ValueError(f"start {start} outside frame bounds {width}x{height}")

    rng = np.random.Generator(np.random.PCG64(seed))
    dx, dy = params.drift_x, params.drift_y
    template = disk_template(params.disk_radius)
    truth = np.empty((frames, 2), dtype=np.float64)
    stack = np.empty((frames, height, width), dtype=np.uint8)

    for t in range(frames):
        truth[t] = (x, y)
        img = np.full((height, width), params.bg_mean, dtype=np.float64)
        cx, cy = int(round(x)), int(round(y))
        cols = np.clip(template.offsets[:, 0] + cx, 0, width - 1)
        rows = np.clip(template.offsets[:, 1] + cy, 0, height - 1)
        img[rows, cols] = params.fg_mean
        if params.noise_std > 0:
            img += rng.normal(0.0, params.noise_std, size=img.shape)
        stack[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        x, dx = _reflect(x, dx, width - 1.0)
        y, dy = _reflect(y, dy, height - 1.0)

    return Video(frames=stack, truth=truth)


def template_pixels(
    frame: np.ndarray, pos: Tuple[float, float], template: PixelTemplate
) -> np.ndarray:
    """Gather the template's pixel intensities around pos (border-clamped)."""
    h, w = frame.shape
    cx, cy = int(round(float(pos[0]))), int(round(float(pos[1])))
    cols = np.clip(template.offsets[:, 0] + cx, 0, w - 1)
    rows = np.clip(template.offsets[:, 1] + cy, 0, h - 1)
    return frame[rows, cols]


def log_likelihood(
    frame: np.ndarray,
    pos: Tuple[float, float],
    template: PixelTemplate,
    params: ModelParams,
) -> float:
    """Direct form: accumulate the squared-difference numerator, divide once."""
    pix = template_pixels(frame, pos, template).astype(np.float64)
    num = np.sum((pix - params.bg_mean) ** 2 - (pix - params.fg_mean) ** 2)
    return float(num / (params.likelihood_scale * template.count))


def stabilized_log_likelihood(
    frame: np.ndarray,
    pos: Tuple[float, float],
    template: PixelTemplate,
    params: ModelParams,
) -> float:
    """Stabilized form: the normalization moves inside the squares."""
    pix = template_pixels(frame, pos, template).astype(np.float64)
    s = 1.0 / np.sqrt(params.likelihood_scale * template.count)
    return float(np.sum(((pix - params.bg_mean) * s) ** 2 - ((pix - params.fg_mean) * s) ** 2))


def half_term_stabilized(
    intensity: Binary16,
    bg: Binary16,
    fg: Binary16,
    scale: Binary16,
    counters: Optional[OpCounters] = None,
) -> Binary16:
    """One pixel's stabilized contribution, in binary16 (7 arithmetic ops)."""
    a = halfnum.sub16(intensity, bg, counters)
    a = halfnum.mul16(a, scale, counters)
    a2 = halfnum.mul16(a, a, counters)
    b = halfnum.sub16(intensity, fg, counters)
    b = halfnum.mul16(b, scale, counters)
    b2 = halfnum.mul16(b, b, counters)
    return halfnum.sub16(a2, b2, counters)


def log_likelihood_fp16(
    frame: np.ndarray,
    pos: Tuple[float, float],
    template: PixelTemplate,
    params: ModelParams,
    counters: Optional[OpCounters] = None,
) -> Binary16:
    """Direct form in binary16; the numerator sum can overflow to +inf."""
    pix = template_pixels(frame, pos, template)
    bg = halfnum.from_f64(params.bg_mean, counters)
    fg = halfnum.from_f64(params.fg_mean, counters)
    acc = halfnum.POS_ZERO
    for raw in pix:
        i16 = halfnum.from_f64(float(raw), counters)
        a = halfnum.sub16(i16, bg, counters)
        b = halfnum.sub16(i16, fg, counters)
        term = halfnum.sub16(
            halfnum.mul16(a, a, counters), halfnum.mul16(b, b, counters), counters
        )
        acc = halfnum.add16(acc, term, counters)
    denom = halfnum.from_f64(params.likelihood_scale * template.count, counters)
    return halfnum.div16(acc, denom, counters)


def stabilized_log_likelihood_fp16(
    frame: np.ndarray,
    pos: Tuple[float, float],
    template: PixelTemplate,
    params: ModelParams,
    counters: Optional[OpCounters] = None,
) -> Binary16:
    """Stabilized form in binary16; finite for any 8-bit frame, N <= 4096."""
    pix = template_pixels(frame, pos, template)
    bg = halfnum.from_f64(params.bg_mean, counters)
    fg = halfnum.from_f64(params.fg_mean, counters)
    scale = halfnum.from_f64(
        1.0 / np.sqrt(params.likelihood_scale * template.count), counters
    )
    acc = halfnum.POS_ZERO
    for raw in pix:
        i16 = halfnum.from_f64(float(raw), counters)
        acc = halfnum.add16(
            acc, half_term_stabilized(i16, bg, fg, scale, counters), counters
        )
    return acc


def propagate_one(
    pos: Tuple[float, float], noise: Tuple[float, float], params: ModelParams
) -> Tuple[float, float]:
    """Transition model: drift plus scaled standard-normal noise."""
    x = pos[0] + params.drift_x + params.std_x * noise[0]
    y = pos[1] + params.drift_y + params.std_y * noise[1]
    return x, y


# --- video container ------------------------------------------------------

_MAGIC = b"PFVD"


def write_video(path, video: Video) -> None:
    """Write the PFVD container: magic, u32 {frames, width, height}, pixels."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", video.frame_count, video.width, video.height))
        fh.write(video.frames.tobytes())


def read_video(path) -> np.ndarray:
    """Read a PFVD container back into a (F, H, W) uint8 array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad container magic at offset 0")
        header = fh.read(12)
        if len(header) != 12:
            raise ValueError(f"{path}: truncated header at offset 4")
        frames, width, height = struct.unpack("<III", header)
        payload = fh.read()
    expected = frames * width * height
    if len(payload) != expected:
        raise ValueError(
            f"{path}: expected {expected} pixel bytes at offset 16, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(frames, height, width).copy()


def write_truth_csv(path, truth: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("frame,x,y\n")
        for t, (x, y) in enumerate(truth):
            fh.write(f"{t},{float(x)!r},{float(y)!r}\n")


def read_truth_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "frame,x,y":
            raise ValueError(f"{path}: unexpected truth CSV header {header!r}")
        for line in fh:
            _, x, y = line.strip().split(",")
            rows.append((float(x), float(y)))
    return np.array(rows, dtype=np.float64)
