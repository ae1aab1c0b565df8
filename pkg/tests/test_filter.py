"""Particle-filter stage and pipeline tests across precision modes."""

import math

import numpy as np
import pytest

from halfpf import halfnum
from halfpf.filter import (
    DegeneracyError,
    PrecisionMode,
    RngStream,
    init_particles,
    make_engine,
    run,
    systematic_ancestors,
)
from halfpf.halfnum import _TO_F64
from halfpf.model import ModelParams, disk_template, generate_video

ALL_MODES = list(PrecisionMode)
HALF_MODES = [PrecisionMode.FP16_SCALAR, PrecisionMode.FP16_PACKED]

SMALL_TEMPLATE = disk_template(2)


def small_video(frames=10, size=64, seed=5, noise=5.0):
    return generate_video(
        ModelParams(noise_std=noise), frames, size, size, (20.0, 20.0), seed
    )


class TestRng:
    def test_stream_repeatable(self):
        a, b = RngStream(9), RngStream(9)
        assert np.array_equal(a.normals(8), b.normals(8))
        assert a.uniform() == b.uniform()

    def test_uniform_in_range(self):
        r = RngStream(1)
        us = [r.uniform() for _ in range(100)]
        assert all(0.0 <= u < 1.0 for u in us)


class TestInit:
    @pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
    def test_uniform_weights(self, mode):
        ps = init_particles(4, (8.0, 8.0), mode)
        assert np.allclose(ps.weights_f64(), 0.25)
        assert np.array_equal(ps.ancestors, np.arange(4))

    def test_packed_parity(self):
        with pytest.raises(ValueError, match="even"):
            init_particles(3, (8.0, 8.0), PrecisionMode.FP16_PACKED)

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            init_particles(1, (8.0, 8.0), PrecisionMode.FP64)
        with pytest.raises(ValueError):
            init_particles(65538, (8.0, 8.0), PrecisionMode.FP64)

    @pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
    def test_exact_start_positions(self, mode):
        # Small integers are exact in binary16, so every mode reads back equal.
        ps = init_particles(2, (20.0, 24.0), mode)
        assert list(ps.xs_f64()) == [20.0, 20.0]
        assert list(ps.ys_f64()) == [24.0, 24.0]


class TestPropagate:
    @pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
    def test_zero_noise_moves_by_drift(self, mode):
        engine = make_engine(mode, template=SMALL_TEMPLATE)
        ps = engine.init(4, (10.0, 10.0))
        engine.propagate(ps, np.zeros((4, 2)))
        assert np.allclose(ps.xs_f64(), 11.0)
        assert np.allclose(ps.ys_f64(), 12.0)

    def test_half_modes_bit_identical(self):
        noise = RngStream(3).normals(16)
        sets = []
        for mode in HALF_MODES:
            engine = make_engine(mode, template=SMALL_TEMPLATE)
            ps = engine.init(16, (10.0, 10.0))
            engine.propagate(ps, noise)
            sets.append(ps)
        assert sets[0].xs == sets[1].xs
        assert sets[0].ys == sets[1].ys

    def test_ancestor_permutation_commutes(self):
        # Zero noise: gathering ancestors then drifting equals drifting then
        # gathering, because the drift is position-independent.
        rng = np.random.default_rng(17)
        for _ in range(8):
            perm = rng.permutation(8)
            engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
            ps = engine.init(8, (0.0, 0.0))
            ps.xs = rng.uniform(0, 30, 8)
            ps.ys = rng.uniform(0, 30, 8)
            expect_x = ps.xs[perm] + 1.0
            ps.ancestors = perm.astype(np.int64)
            engine.propagate(ps, np.zeros((8, 2)))
            assert np.allclose(ps.xs, expect_x)


class TestLikelihoodStage:
    @pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
    def test_sign_on_and_off_object(self, mode):
        video = small_video(frames=1, noise=0.0)
        engine = make_engine(mode, template=SMALL_TEMPLATE)
        ps = engine.init(2, (20.0, 20.0))
        if isinstance(ps.xs, list):
            ps.xs = [halfnum.from_f64(20.0), halfnum.from_f64(50.0)]
            ps.ys = [halfnum.from_f64(20.0), halfnum.from_f64(50.0)]
        else:
            ps.xs = np.array([20.0, 50.0], dtype=ps.xs.dtype)
            ps.ys = np.array([20.0, 50.0], dtype=ps.ys.dtype)
        engine.likelihoods(ps, video.frames[0])
        ll = ps.loglik_f64()
        assert ll[0] > 0 > ll[1]

    def test_fp32_close_to_fp64(self):
        video = small_video(frames=1)
        lls = []
        for mode in (PrecisionMode.FP64, PrecisionMode.FP32):
            engine = make_engine(mode, template=disk_template(5))
            ps = engine.init(64, (20.0, 20.0))
            engine.propagate(ps, RngStream(2).normals(64))
            engine.likelihoods(ps, video.frames[0])
            lls.append(ps.loglik_f64())
        assert np.max(np.abs(lls[0] - lls[1])) < 1e-3

    def test_half_finite_on_stress_frame(self):
        frame = np.full((64, 64), 255, dtype=np.uint8)
        engine = make_engine(PrecisionMode.FP16_SCALAR, template=disk_template(5))
        ps = engine.init(8, (32.0, 32.0))
        engine.likelihoods(ps, frame)
        assert all(halfnum.is_finite(b) for b in ps.loglik)


class TestMax:
    def test_examples(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(3, (0.0, 0.0))
        ps.loglik = np.array([3.0, -1.0, 7.0])
        assert engine.max_loglik(ps) == 7.0
        ps.loglik = np.array([2.5, 2.5, 2.5])
        assert engine.max_loglik(ps) == 2.5

    def test_half_matches_scan_oracle(self):
        rng = np.random.default_rng(23)
        engine = make_engine(PrecisionMode.FP16_SCALAR, template=SMALL_TEMPLATE)
        ps = engine.init(1000, (0.0, 0.0))
        ps.loglik = [halfnum.from_f64(float(v)) for v in rng.uniform(-50, 50, 1000)]
        got = engine.max_loglik(ps)
        assert _TO_F64[got] == max(_TO_F64[b] for b in ps.loglik)


class TestWeightUpdate:
    def test_all_equal_logliks_keep_weights(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        ps.loglik = np.full(4, 3.0)
        total = engine.weight_update(ps, 3.0)
        assert np.allclose(ps.weights, 0.25)
        assert total == pytest.approx(1.0)

    def test_hand_example(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        ps.weights = np.ones(4)
        ps.loglik = np.array([0.0, math.log(2.0), 0.0, 0.0])
        total = engine.weight_update(ps, math.log(2.0))
        assert np.allclose(ps.weights, [0.5, 1.0, 0.5, 0.5])
        assert total == pytest.approx(2.5)

    @pytest.mark.parametrize("mode", HALF_MODES, ids=lambda m: m.value)
    def test_no_overflow_with_wide_spread(self, mode):
        engine = make_engine(mode, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        vals = [0.0, -30.0, -10.0, -30.0]
        ps.loglik = [halfnum.from_f64(v) for v in vals]
        engine.weight_update(ps, halfnum.from_f64(0.0))
        assert all(halfnum.is_finite(b) for b in ps.weights)

    def test_degeneracy_raises(self):
        engine = make_engine(PrecisionMode.FP16_SCALAR, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        # Tiny weights times tiny factors underflow to zero in binary16.
        ps.weights = [halfnum.from_f64(2.0**-24)] * 4
        ps.loglik = [halfnum.from_f64(-60.0)] * 4
        with pytest.raises(DegeneracyError):
            engine.weight_update(ps, halfnum.from_f64(0.0))


class TestNormalizeAndScan:
    def test_uniform_cdf(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        ps.weights = np.full(4, 0.25)
        engine.normalize_and_scan(ps, 1.0)
        assert np.allclose(ps.cdf, [0.25, 0.5, 0.75, 1.0])

    def test_random_cdf_non_decreasing(self):
        rng = np.random.default_rng(29)
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        for _ in range(1000):
            K = int(rng.integers(2, 32))
            ps = engine.init(K, (0.0, 0.0))
            w = rng.uniform(0, 1, K)
            ps.weights = w
            engine.normalize_and_scan(ps, float(w.sum()))
            assert np.all(np.diff(ps.cdf) >= 0)
            assert ps.cdf[-1] == pytest.approx(1.0, abs=1e-12 * K)

    def test_half_modes_cdf_bit_identical_k1024(self):
        rng = np.random.default_rng(31)
        w64 = rng.uniform(0, 1, 1024)
        w16 = [halfnum.from_f64(float(v)) for v in w64]
        total = math.fsum(_TO_F64[b] for b in w16)
        cdfs = []
        for mode in HALF_MODES:
            engine = make_engine(mode, template=SMALL_TEMPLATE)
            ps = engine.init(1024, (0.0, 0.0))
            ps.weights = list(w16)
            engine.normalize_and_scan(ps, total)
            cdfs.append((list(ps.weights), list(ps.cdf)))
        assert cdfs[0] == cdfs[1]

    def test_half_sum_within_tolerance(self):
        rng = np.random.default_rng(37)
        K = 256
        engine = make_engine(PrecisionMode.FP16_SCALAR, template=SMALL_TEMPLATE)
        ps = engine.init(K, (0.0, 0.0))
        w16 = [halfnum.from_f64(float(v)) for v in rng.uniform(0.1, 1, K)]
        ps.weights = w16
        total = math.fsum(_TO_F64[b] for b in w16)
        engine.normalize_and_scan(ps, total)
        assert abs(ps.weights_f64().sum() - 1.0) <= 2.0**-10 * K


class TestEstimate:
    def test_one_hot(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(3, (0.0, 0.0))
        ps.xs = np.array([1.0, 5.0, 9.0])
        ps.ys = np.array([2.0, 6.0, 10.0])
        ps.weights = np.array([0.0, 1.0, 0.0])
        assert engine.estimate(ps) == (5.0, 6.0)

    def test_affine_combination(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(2, (0.0, 0.0))
        ps.xs = np.array([0.0, 4.0])
        ps.ys = np.array([0.0, 0.0])
        ps.weights = np.array([0.25, 0.75])
        assert engine.estimate(ps)[0] == 3.0

    def test_symmetric_cloud(self):
        engine = make_engine(PrecisionMode.FP64, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        ps.xs = np.array([9.0, 11.0, 10.0, 10.0])
        ps.ys = np.array([5.0, 5.0, 4.0, 6.0])
        ps.weights = np.full(4, 0.25)
        assert engine.estimate(ps) == (10.0, 5.0)


def brute_force_ancestors(cdf, u):
    K = len(cdf)
    anc = []
    for k in range(K):
        p = (k + u) / K
        j = 0
        while j < K - 1 and cdf[j] < p:
            j += 1
        anc.append(j)
    return np.array(anc, dtype=np.int64)


class TestResample:
    def test_spec_example(self):
        cdf = np.array([0.5, 1.0, 1.0, 1.0])
        assert list(systematic_ancestors(cdf, 0.1)) == [0, 0, 1, 1]

    def test_uniform_weights_identity(self):
        K = 8
        cdf = np.cumsum(np.full(K, 1.0 / K))
        # u strictly inside (0, 1); u = 0 hits exact cdf boundaries.
        for u in (0.25, 0.3, 0.999):
            assert list(systematic_ancestors(cdf, u)) == list(range(K))

    def test_one_hot(self):
        cdf = np.array([0.0, 0.0, 1.0, 1.0])
        assert list(systematic_ancestors(cdf, 0.5)) == [2, 2, 2, 2]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            K = int(rng.integers(2, 9))
            w = rng.uniform(0, 1, K)
            w /= w.sum()
            cdf = np.cumsum(w)
            u = float(rng.random())
            got = systematic_ancestors(cdf, u)
            assert np.array_equal(got, brute_force_ancestors(cdf, u))
            assert np.all(np.diff(got) >= 0)

    @pytest.mark.parametrize("mode", HALF_MODES, ids=lambda m: m.value)
    def test_engine_matches_reference_on_half_cdf(self, mode):
        # The engine compares half-precision sample points against the
        # half-precision cdf; the reference gets the same widened values.
        rng = np.random.default_rng(43)
        K = 16
        engine = make_engine(mode, template=SMALL_TEMPLATE)
        ps = engine.init(K, (0.0, 0.0))
        w = rng.uniform(0, 1, K)
        w16 = [halfnum.from_f64(float(v)) for v in w]
        ps.weights = w16
        engine.normalize_and_scan(ps, math.fsum(_TO_F64[b] for b in w16))
        cdf64 = ps.cdf_f64()
        u = 0.37
        u16 = halfnum.from_f64(u)
        invK = halfnum.recip16(halfnum.from_f64(float(K)))
        points = [
            _TO_F64[halfnum.mul16(halfnum.add16(halfnum.from_f64(float(k)), u16), invK)]
            for k in range(K)
        ]
        expect = []
        j = 0
        for p in points:
            while j < K - 1 and cdf64[j] < p:
                j += 1
            expect.append(j)
        engine.resample(ps, u)
        assert list(ps.ancestors) == expect

    @pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
    def test_weights_reset(self, mode):
        engine = make_engine(mode, template=SMALL_TEMPLATE)
        ps = engine.init(4, (0.0, 0.0))
        if isinstance(ps.cdf, list):
            ps.cdf = [halfnum.from_f64(v) for v in (0.25, 0.5, 0.75, 1.0)]
        else:
            ps.cdf = np.array([0.25, 0.5, 0.75, 1.0], dtype=ps.xs.dtype)
        engine.resample(ps, 0.5)
        assert np.allclose(ps.weights_f64(), 0.25)
        assert np.all(ps.ancestors >= 0) and np.all(ps.ancestors < 4)


class TestRun:
    def test_fp64_tracks(self):
        video = small_video(frames=15)
        result = run(video, 64, PrecisionMode.FP64, seed=1,
                     template=SMALL_TEMPLATE, start_hint=(20.0, 20.0))
        err = np.hypot(*(result.trajectory - video.truth).T)
        assert err.mean() < 5.0

    def test_deterministic(self):
        video = small_video(frames=6)
        a = run(video, 32, PrecisionMode.FP32, seed=2, template=SMALL_TEMPLATE)
        b = run(video, 32, PrecisionMode.FP32, seed=2, template=SMALL_TEMPLATE)
        assert np.array_equal(a.trajectory, b.trajectory)

    @pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
    def test_worker_independence(self, mode):
        video = small_video(frames=5, size=48)
        base = run(video, 16, mode, seed=3, workers=1, template=SMALL_TEMPLATE)
        for workers in (2, 4, 8):
            other = run(video, 16, mode, seed=3, workers=workers,
                        template=SMALL_TEMPLATE)
            assert np.array_equal(base.trajectory, other.trajectory)
            assert base.counters == other.counters

    def test_stage_timings_cover_total(self):
        video = small_video(frames=4)
        result = run(video, 16, PrecisionMode.FP64, seed=4, template=SMALL_TEMPLATE)
        assert sum(result.stage_ms.values()) <= result.total_ms * 1.01

    def test_wide_modes_count_no_half_ops(self):
        video = small_video(frames=3)
        for mode in (PrecisionMode.FP64, PrecisionMode.FP32):
            result = run(video, 16, mode, seed=5, template=SMALL_TEMPLATE)
            assert result.counters.half_arith_count == 0
            assert result.counters.wide_arith_count > 0

    def test_degeneracy_carries_frame(self):
        # Zero out the weights right before the weight stage of frame 1;
        # the resulting zero sum must surface with that frame index.
        video = small_video(frames=3)

        def sabotage(t, name, ps):
            if t == 1 and name == "max":
                ps.weights = np.zeros_like(ps.weights)

        with pytest.raises(DegeneracyError) as info:
            run(video, 8, PrecisionMode.FP64, seed=6,
                template=SMALL_TEMPLATE, stage_hook=sabotage)
        assert info.value.frame == 1

    def test_stage_hook_order(self):
        video = small_video(frames=2)
        seen = []
        run(video, 8, PrecisionMode.FP64, seed=7, template=SMALL_TEMPLATE,
            stage_hook=lambda t, name, ps: seen.append((t, name)))
        stages = ["propagate", "likelihood", "max", "weight", "normalize", "resample"]
        assert seen == [(t, s) for t in range(2) for s in stages]
