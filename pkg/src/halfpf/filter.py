"""Precision-generic bootstrap particle filter for 2-D tracking.

Each frame runs six stages in order: propagation, likelihood, max-finding,
weighting, normalization with inclusive prefix-sum, and systematic
resampling.  Four precision modes are supported:

* FP64 / FP32: numpy arrays in the native dtype.
* FP16_SCALAR: emulated binary16, one scalar operation per lane.  This is
  the naive port: per-particle index arithmetic re-converts shared
  constants (the resampling uniform, 1/K, the weight-sum reciprocal) and
  widens operands for every comparison.
* FP16_PACKED: the optimized path.  The same lane-wise algorithm, but two
  particles travel per packed operation (one arithmetic increment instead
  of two) and shared constants are converted once and reused.

Both binary16 modes execute bit-identical lane arithmetic, so their
particle sets match exactly; only the operation accounting differs.
Random draws are always taken in float64 from a counter-based generator,
so the draw sequence is independent of precision mode and worker count.
"""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import halfnum
from .halfnum import OpCounters, _TO_F64
from .model import (
    ModelParams,
    PixelTemplate,
    Video,
    disk_template,
    half_term_stabilized,
    template_pixels,
)

MAX_PARTICLES = 65536

STAGES = ("propagate", "likelihood", "max", "weight", "normalize", "resample")


class PrecisionMode(enum.Enum):
    FP64 = "fp64"
    FP32 = "fp32"
    FP16_SCALAR = "fp16"
    FP16_PACKED = "fp16-packed"

    @classmethod
    def from_name(cls, name: str) -> "PrecisionMode":
        for mode in cls:
            if mode.value == name:
                return mode
        raise ValueError(f"unknown precision {name!r}")


class DegeneracyError(RuntimeError):
    """All particle weights collapsed to zero (or went non-finite)."""

    def __init__(self, message: str, frame: Optional[int] = None):
        super().__init__(message)
        self.frame = frame


class RngStream:
    """Counter-based float64 random stream, identical across modes/workers."""

    def __init__(self, seed: int):
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(seed))

    def normals(self, n: int) -> np.ndarray:
        return self._gen.standard_normal((n, 2))

    def uniform(self) -> float:
        return float(self._gen.random())


@dataclass
class ParticleSet:
    """Structure-of-arrays particle state.

    Wide modes store numpy arrays in the mode dtype; binary16 modes store
    lists of 16-bit patterns.
    """

    mode: PrecisionMode
    count: int
    xs: object
    ys: object
    loglik: object
    weights: object
    cdf: object
    ancestors: np.ndarray

    def _readback(self, arr) -> np.ndarray:
        if isinstance(arr, np.ndarray):
            return arr.astype(np.float64)
        return np.array([_TO_F64[b] for b in arr], dtype=np.float64)

    def xs_f64(self) -> np.ndarray:
        return self._readback(self.xs)

    def ys_f64(self) -> np.ndarray:
        return self._readback(self.ys)

    def loglik_f64(self) -> np.ndarray:
        return self._readback(self.loglik)

    def weights_f64(self) -> np.ndarray:
        return self._readback(self.weights)

    def cdf_f64(self) -> np.ndarray:
        return self._readback(self.cdf)

    def snapshot(self) -> dict:
        """Copy of the raw per-particle contents, for cross-mode comparison."""
        def raw(a):
            return a.copy() if isinstance(a, np.ndarray) else list(a)

        return {
            "xs": raw(self.xs),
            "ys": raw(self.ys),
            "loglik": raw(self.loglik),
            "weights": raw(self.weights),
            "cdf": raw(self.cdf),
            "ancestors": self.ancestors.copy(),
        }


def _validate_k(K: int, mode: PrecisionMode) -> None:
    if K < 2:
        raise ValueError("particle count must be at least 2")
    if K > MAX_PARTICLES:
        raise ValueError(f"particle count {K} exceeds the {MAX_PARTICLES} bound")
    if mode is PrecisionMode.FP16_PACKED and K % 2:
        raise ValueError("packed binary16 mode requires an even particle count")


@dataclass
class RunResult:
    trajectory: np.ndarray  # (F, 2) float64
    counters: OpCounters
    stage_ms: Dict[str, float]
    total_ms: float


def make_engine(
    mode: PrecisionMode,
    params: Optional[ModelParams] = None,
    template: Optional[PixelTemplate] = None,
    counters: Optional[OpCounters] = None,
    workers: int = 1,
):
    params = params or ModelParams()
    template = template if template is not None else disk_template(params.disk_radius)
    counters = counters if counters is not None else OpCounters()
    if mode in (PrecisionMode.FP64, PrecisionMode.FP32):
        return _WideEngine(mode, params, template, counters, workers)
    return _HalfEngine(mode, params, template, counters, workers)


# --- wide (float64 / float32) engine ---------------------------------------


class _WideEngine:
    def __init__(self, mode, params, template, counters, workers):
        self.mode = mode
        self.params = params
        self.template = template
        self.counters = counters
        self.workers = max(1, int(workers))
        self.dtype = np.float64 if mode is PrecisionMode.FP64 else np.float32

    def init(self, K: int, start_hint: Tuple[float, float]) -> ParticleSet:
        _validate_k(K, self.mode)
        d = self.dtype
        return ParticleSet(
            mode=self.mode,
            count=K,
            xs=np.full(K, d(start_hint[0]), dtype=d),
            ys=np.full(K, d(start_hint[1]), dtype=d),
            loglik=np.zeros(K, dtype=d),
            weights=np.full(K, d(1.0) / d(K), dtype=d),
            cdf=np.zeros(K, dtype=d),
            ancestors=np.arange(K, dtype=np.int64),
        )

    def propagate(self, ps: ParticleSet, noise: np.ndarray) -> None:
        d = self.dtype
        p = self.params
        xa = ps.xs[ps.ancestors]
        ya = ps.ys[ps.ancestors]
        ps.xs = (xa + d(p.drift_x)) + d(p.std_x) * noise[:, 0].astype(d)
        ps.ys = (ya + d(p.drift_y)) + d(p.std_y) * noise[:, 1].astype(d)
        self.counters.wide_arith_count += 6 * ps.count

    def likelihoods(self, ps: ParticleSet, frame: np.ndarray) -> None:
        d = self.dtype
        p = self.params
        h, w = frame.shape
        offs = self.template.offsets
        n = self.template.count
        ix = np.rint(ps.xs.astype(np.float64)).astype(np.int64)
        iy = np.rint(ps.ys.astype(np.float64)).astype(np.int64)
        cols = np.clip(ix[:, None] + offs[None, :, 0], 0, w - 1)
        rows = np.clip(iy[:, None] + offs[None, :, 1], 0, h - 1)
        pix = frame[rows, cols].astype(d)
        num = (pix - d(p.bg_mean)) ** 2 - (pix - d(p.fg_mean)) ** 2
        ps.loglik = num.sum(axis=1, dtype=d) / d(p.likelihood_scale * n)
        self.counters.wide_arith_count += (5 * n + 1) * ps.count

    def max_loglik(self, ps: ParticleSet):
        return ps.loglik.max()

    def weight_update(self, ps: ParticleSet, m) -> float:
        d = self.dtype
        factors = np.exp(ps.loglik - d(m))
        ps.weights = ps.weights * factors
        self.counters.special_fn_count += ps.count
        self.counters.wide_arith_count += 3 * ps.count
        total = ps.weights.sum(dtype=d)
        if not np.isfinite(total) or total <= 0:
            raise DegeneracyError(f"weight sum degenerated to {total}")
        return total

    def normalize_and_scan(self, ps: ParticleSet, total) -> None:
        d = self.dtype
        inv = d(1.0) / d(total)
        self.counters.special_fn_count += 1
        ps.weights = ps.weights * inv
        ps.cdf = np.cumsum(ps.weights, dtype=d)
        self.counters.wide_arith_count += 2 * ps.count

    def estimate(self, ps: ParticleSet) -> Tuple[float, float]:
        w = ps.weights.astype(np.float64)
        ex = float(np.sum(w * ps.xs.astype(np.float64)))
        ey = float(np.sum(w * ps.ys.astype(np.float64)))
        self.counters.wide_arith_count += 4 * ps.count
        return ex, ey

    def resample(self, ps: ParticleSet, u: float) -> None:
        d = self.dtype
        K = ps.count
        points = (np.arange(K, dtype=d) + d(u)) / d(K)
        anc = np.searchsorted(ps.cdf, points, side="left")
        ps.ancestors = np.minimum(anc, K - 1).astype(np.int64)
        ps.weights = np.full(K, d(1.0) / d(K), dtype=d)
        self.counters.wide_arith_count += 2 * K


# --- emulated binary16 engine -----------------------------------------------


class _HalfEngine:
    """Lane-wise binary16 pipeline (naive scalar or optimized packed)."""

    def __init__(self, mode, params, template, counters, workers):
        self.mode = mode
        self.packed = mode is PrecisionMode.FP16_PACKED
        self.params = params
        self.template = template
        self.counters = counters
        self.workers = max(1, int(workers))
        c = counters
        # Model constants, converted once per run in either mode.
        self.bg = halfnum.from_f64(params.bg_mean, c)
        self.fg = halfnum.from_f64(params.fg_mean, c)
        n = template.count
        self.scale = halfnum.from_f64(
            1.0 / math.sqrt(params.likelihood_scale * n), c
        )
        self.drift_x = halfnum.from_f64(params.drift_x, c)
        self.drift_y = halfnum.from_f64(params.drift_y, c)
        self.std_x = halfnum.from_f64(params.std_x, c)
        self.std_y = halfnum.from_f64(params.std_y, c)
        # Per-intensity stabilized likelihood term, memoized uncounted; the
        # per-pixel operation counts are added in bulk where pixels are read.
        u8 = [halfnum._bits_from_f64(float(v)) for v in range(256)]
        self.term_table = [
            half_term_stabilized(b, self.bg, self.fg, self.scale) for b in u8
        ]
        self.invK: Optional[int] = None
        self.k16: Optional[List[int]] = None

    # -- lane helpers --------------------------------------------------------

    def _lane(self, fn, a0, a1, b0, b1, c) -> Tuple[int, int]:
        # One packed instruction covers both lanes; scalar mode issues two.
        c.half_arith_count += 1 if self.packed else 2
        return fn(a0, b0), fn(a1, b1)

    def _single(self, fn, a, b, c) -> int:
        c.half_arith_count += 1
        return fn(a, b)

    def _pairs(self, K: int):
        return range(0, K - 1, 2)

    def _fan_pairs(self, K: int, body) -> None:
        """Run body(pair_start, pair_stop, counters) over disjoint chunks."""
        npairs = (K + 1) // 2
        if self.workers <= 1 or npairs < 2:
            body(0, npairs, self.counters)
            return
        chunk = -(-npairs // self.workers)
        spans = [(s, min(s + chunk, npairs)) for s in range(0, npairs, chunk)]
        locals_ = [OpCounters() for _ in spans]
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            futures = [
                pool.submit(body, lo, hi, ctr)
                for (lo, hi), ctr in zip(spans, locals_)
            ]
            for f in futures:
                f.result()
        for ctr in locals_:
            self.counters.merge(ctr)

    # -- stages ---------------------------------------------------------------

    def init(self, K: int, start_hint: Tuple[float, float]) -> ParticleSet:
        _validate_k(K, self.mode)
        c = self.counters
        x0 = halfnum.from_f64(float(start_hint[0]), c)
        y0 = halfnum.from_f64(float(start_hint[1]), c)
        k16_count = halfnum.from_f64(float(K), c)
        self.invK = halfnum.recip16(k16_count, c)
        self.k16 = [halfnum.from_f64(float(k), c) for k in range(K)]
        return ParticleSet(
            mode=self.mode,
            count=K,
            xs=[x0] * K,
            ys=[y0] * K,
            loglik=[halfnum.POS_ZERO] * K,
            weights=[self.invK] * K,
            cdf=[halfnum.POS_ZERO] * K,
            ancestors=np.arange(K, dtype=np.int64),
        )

    def propagate(self, ps: ParticleSet, noise: np.ndarray) -> None:
        K = ps.count
        anc = ps.ancestors
        xs_old, ys_old = ps.xs, ps.ys
        xs = [0] * K
        ys = [0] * K
        add, mul = halfnum._add, halfnum._mul

        def body(plo, phi, c):
            for i in range(plo, phi):
                k0 = 2 * i
                k1 = min(k0 + 1, K - 1)
                tail = k1 == k0
                ax0, ax1 = xs_old[anc[k0]], xs_old[anc[k1]]
                ay0, ay1 = ys_old[anc[k0]], ys_old[anc[k1]]
                # Normals are drawn in float64 and narrowed per particle.
                nx0 = halfnum.from_f64(noise[k0, 0], c)
                ny0 = halfnum.from_f64(noise[k0, 1], c)
                if tail:
                    sx = self._single(mul, self.std_x, nx0, c)
                    bx = self._single(add, ax0, self.drift_x, c)
                    xs[k0] = self._single(add, bx, sx, c)
                    sy = self._single(mul, self.std_y, ny0, c)
                    by = self._single(add, ay0, self.drift_y, c)
                    ys[k0] = self._single(add, by, sy, c)
                    continue
                nx1 = halfnum.from_f64(noise[k1, 0], c)
                ny1 = halfnum.from_f64(noise[k1, 1], c)
                sx = self._lane(mul, self.std_x, self.std_x, nx0, nx1, c)
                bx = self._lane(add, ax0, ax1, self.drift_x, self.drift_x, c)
                xs[k0], xs[k1] = self._lane(add, bx[0], bx[1], sx[0], sx[1], c)
                sy = self._lane(mul, self.std_y, self.std_y, ny0, ny1, c)
                by = self._lane(add, ay0, ay1, self.drift_y, self.drift_y, c)
                ys[k0], ys[k1] = self._lane(add, by[0], by[1], sy[0], sy[1], c)

        self._fan_pairs(K, body)
        ps.xs, ps.ys = xs, ys

    def likelihoods(self, ps: ParticleSet, frame: np.ndarray) -> None:
        K = ps.count
        n = self.template.count
        table = self.term_table
        loglik = [0] * K
        add = halfnum._add
        lane_cost = 8 * n if self.packed else 16 * n
        xs, ys = ps.xs, ps.ys

        def body(plo, phi, c):
            for i in range(plo, phi):
                k0 = 2 * i
                k1 = min(k0 + 1, K - 1)
                # Particle position is widened once to index the frame.
                c.widen_count += 2
                pix0 = template_pixels(
                    frame, (_TO_F64[xs[k0]], _TO_F64[ys[k0]]), self.template
                )
                if k1 == k0:
                    c.narrow_count += n
                    c.half_arith_count += 8 * n
                    acc = halfnum.POS_ZERO
                    for v in pix0:
                        acc = add(acc, table[v])
                    loglik[k0] = acc
                    continue
                c.widen_count += 2
                pix1 = template_pixels(
                    frame, (_TO_F64[xs[k1]], _TO_F64[ys[k1]]), self.template
                )
                c.narrow_count += 2 * n
                c.half_arith_count += lane_cost
                acc0 = acc1 = halfnum.POS_ZERO
                for v0, v1 in zip(pix0, pix1):
                    acc0 = add(acc0, table[v0])
                    acc1 = add(acc1, table[v1])
                loglik[k0], loglik[k1] = acc0, acc1

        self._fan_pairs(K, body)
        ps.loglik = loglik

    def max_loglik(self, ps: ParticleSet) -> int:
        # Fixed-order scan; first index wins ties.
        best = ps.loglik[0]
        bv = _TO_F64[best]
        for b in ps.loglik[1:]:
            v = _TO_F64[b]
            if v > bv:
                best, bv = b, v
        return best

    def weight_update(self, ps: ParticleSet, m: int) -> float:
        K = ps.count
        weights = [0] * K
        ll, wprev = ps.loglik, ps.weights
        sub, mul, add = halfnum._sub, halfnum._mul, halfnum._add

        def body(plo, phi, c):
            for i in range(plo, phi):
                k0 = 2 * i
                k1 = min(k0 + 1, K - 1)
                if k1 == k0:
                    d = self._single(sub, ll[k0], m, c)
                    f = halfnum.exp16(d, c)
                    weights[k0] = self._single(mul, wprev[k0], f, c)
                    continue
                d0, d1 = self._lane(sub, ll[k0], ll[k1], m, m, c)
                f0 = halfnum.exp16(d0, c)
                f1 = halfnum.exp16(d1, c)
                weights[k0], weights[k1] = self._lane(
                    mul, wprev[k0], wprev[k1], f0, f1, c
                )

        self._fan_pairs(K, body)
        ps.weights = weights

        # Fixed-order lane accumulation, then one wide cross-lane combine.
        c = self.counters
        acc0 = acc1 = halfnum.POS_ZERO
        for k0 in self._pairs(K):
            acc0, acc1 = self._lane(add, acc0, acc1, weights[k0], weights[k0 + 1], c)
        if K % 2:
            acc0 = self._single(add, acc0, weights[K - 1], c)
        total = halfnum.to_f64(acc0, c) + halfnum.to_f64(acc1, c)
        c.wide_arith_count += 1
        if not math.isfinite(total) or total <= 0.0:
            raise DegeneracyError(f"weight sum degenerated to {total}")
        return total

    def normalize_and_scan(self, ps: ParticleSet, total: float) -> None:
        K = ps.count
        c = self.counters
        # Optimized path narrows the sum and takes its reciprocal once; the
        # naive path redoes both conversions for every particle below.
        inv = halfnum.recip16(halfnum.from_f64(total, c), c)
        w = ps.weights
        wn = [0] * K
        mul, add = halfnum._mul, halfnum._add

        def body(plo, phi, c_):
            for i in range(plo, phi):
                k0 = 2 * i
                k1 = min(k0 + 1, K - 1)
                if not self.packed:
                    for _ in range(1 if k1 == k0 else 2):
                        halfnum.recip16(halfnum.from_f64(total, c_), c_)
                if k1 == k0:
                    wn[k0] = self._single(mul, w[k0], inv, c_)
                    continue
                wn[k0], wn[k1] = self._lane(mul, w[k0], w[k1], inv, inv, c_)

        self._fan_pairs(K, body)

        # Inclusive prefix-sum in pair-local-then-carry form: both lanes of a
        # pair are finished by one shifted add and one carry broadcast.
        cdf = [0] * K
        carry = halfnum.POS_ZERO
        for k0 in self._pairs(K):
            t0, t1 = self._lane(add, wn[k0], wn[k0 + 1], halfnum.POS_ZERO, wn[k0], c)
            cdf[k0], cdf[k0 + 1] = self._lane(add, t0, t1, carry, carry, c)
            carry = cdf[k0 + 1]
        if K % 2:
            cdf[K - 1] = self._single(add, carry, wn[K - 1], c)
        ps.weights = wn
        ps.cdf = cdf

    def estimate(self, ps: ParticleSet) -> Tuple[float, float]:
        c = self.counters
        ex = ey = 0.0
        for k in range(ps.count):
            w = _TO_F64[ps.weights[k]]
            ex += w * _TO_F64[ps.xs[k]]
            ey += w * _TO_F64[ps.ys[k]]
        c.widen_count += 3 * ps.count
        c.wide_arith_count += 4 * ps.count
        return ex, ey

    def resample(self, ps: ParticleSet, u: float) -> None:
        K = ps.count
        c = self.counters
        assert self.invK is not None and self.k16 is not None
        u16 = halfnum.from_f64(u, c)
        invK = self.invK
        k16 = self.k16
        add, mul = halfnum._add, halfnum._mul
        points = [0] * K

        def body(plo, phi, c_):
            for i in range(plo, phi):
                k0 = 2 * i
                k1 = min(k0 + 1, K - 1)
                if not self.packed:
                    # Naive index arithmetic re-derives every shared constant
                    # per particle: the uniform, the count, and 1/count.
                    for _ in range(1 if k1 == k0 else 2):
                        halfnum.from_f64(u, c_)
                        halfnum.recip16(halfnum.from_f64(float(K), c_), c_)
                if k1 == k0:
                    s = self._single(add, k16[k0], u16, c_)
                    points[k0] = self._single(mul, s, invK, c_)
                    continue
                s0, s1 = self._lane(add, k16[k0], k16[k1], u16, u16, c_)
                points[k0], points[k1] = self._lane(mul, s0, s1, invK, invK, c_)

        self._fan_pairs(K, body)

        cdf_vals = [_TO_F64[b] for b in ps.cdf]
        anc = np.empty(K, dtype=np.int64)
        j = 0
        naive = not self.packed
        for k in range(K):
            pv = _TO_F64[points[k]]
            while j < K - 1 and cdf_vals[j] < pv:
                if naive:
                    c.widen_count += 2
                j += 1
            if naive:
                c.widen_count += 2
            anc[k] = j
        ps.ancestors = anc
        if naive:
            for _ in range(K):
                halfnum.recip16(halfnum.from_f64(float(K), c), c)
        ps.weights = [invK] * K


# --- public stage wrappers ---------------------------------------------------


def init_particles(
    K: int,
    start_hint: Tuple[float, float],
    mode: PrecisionMode,
    params: Optional[ModelParams] = None,
    counters: Optional[OpCounters] = None,
) -> ParticleSet:
    return make_engine(mode, params, counters=counters).init(K, start_hint)


def systematic_ancestors(cdf: np.ndarray, u: float) -> np.ndarray:
    """Reference float64 systematic resampling on an explicit CDF."""
    K = len(cdf)
    points = (np.arange(K, dtype=np.float64) + u) / K
    anc = np.searchsorted(cdf, points, side="left")
    return np.minimum(anc, K - 1).astype(np.int64)


def run(
    video: Video,
    K: int,
    mode: PrecisionMode,
    seed: int,
    workers: int = 1,
    params: Optional[ModelParams] = None,
    template: Optional[PixelTemplate] = None,
    start_hint: Optional[Tuple[float, float]] = None,
    stage_hook: Optional[Callable[[int, str, ParticleSet], None]] = None,
) -> RunResult:
    """Track through a whole video; deterministic for fixed inputs."""
    params = params or ModelParams()
    template = template if template is not None else disk_template(params.disk_radius)
    _validate_k(K, mode)
    if start_hint is None:
        start_hint = (video.width / 2.0, video.height / 2.0)

    counters = OpCounters()
    engine = make_engine(mode, params, template, counters, workers)
    rng = RngStream(seed)
    ps = engine.init(K, start_hint)
    trajectory = np.empty((video.frame_count, 2), dtype=np.float64)
    stage_ms = {name: 0.0 for name in STAGES}
    t_start = time.perf_counter()

    for t in range(video.frame_count):
        frame = video.frames[t]
        try:
            t0 = time.perf_counter()
            engine.propagate(ps, rng.normals(K))
            t1 = time.perf_counter()
            if stage_hook:
                stage_hook(t, "propagate", ps)
            engine.likelihoods(ps, frame)
            t2 = time.perf_counter()
            if stage_hook:
                stage_hook(t, "likelihood", ps)
            m = engine.max_loglik(ps)
            t3 = time.perf_counter()
            if stage_hook:
                stage_hook(t, "max", ps)
            total = engine.weight_update(ps, m)
            t4 = time.perf_counter()
            if stage_hook:
                stage_hook(t, "weight", ps)
            engine.normalize_and_scan(ps, total)
            trajectory[t] = engine.estimate(ps)
            t5 = time.perf_counter()
            if stage_hook:
                stage_hook(t, "normalize", ps)
            engine.resample(ps, rng.uniform())
            t6 = time.perf_counter()
            if stage_hook:
                stage_hook(t, "resample", ps)
        except DegeneracyError as err:
            err.frame = t
            raise
        stage_ms["propagate"] += (t1 - t0) * 1e3
        stage_ms["likelihood"] += (t2 - t1) * 1e3
        stage_ms["max"] += (t3 - t2) * 1e3
        stage_ms["weight"] += (t4 - t3) * 1e3
        stage_ms["normalize"] += (t5 - t4) * 1e3
        stage_ms["resample"] += (t6 - t5) * 1e3

    total_ms = (time.perf_counter() - t_start) * 1e3
    return RunResult(
        trajectory=trajectory,
        counters=counters,
        stage_ms=stage_ms,
        total_ms=total_ms,
    )
