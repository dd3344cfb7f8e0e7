"""Simulation engine, generators and Monte Carlo bookkeeping."""

import math
from dataclasses import replace

import numpy as np
import pytest

from knncpd.core import KnnCpdError, Observation
from knncpd.detect import Detector, DetectorConfig
from knncpd.simlab import engine
from knncpd.simlab.experiments import (
    NotApplicable,
    calibrate_mc,
    first_alarm,
    hotelling_scan,
    null_maxima,
    quantile_threshold,
    rep_trace,
    run_experiment,
)
from knncpd.simlab.generators import SimSpec, generate, mean_path, rng_for
from knncpd.simlab.presets import rows_to_tsv, run_preset


def detector_trace(Y, cfg, start):
    det = Detector(cfg).warmup([Observation(i, y) for i, y in enumerate(Y[:start])])
    z, t = [], []
    for i in range(start, len(Y)):
        det.step(Observation(i, Y[i]))
        z.append(det.last.zmax)
        t.append(det.last.t_hat)
    return np.array(z), np.array(t)


def pooled_hotelling(W, x):
    a, b = W[:x], W[x:]
    S = ((a - a.mean(0)).T @ (a - a.mean(0)) + (b - b.mean(0)).T @ (b - b.mean(0))) / (len(W) - 2)
    diff = a.mean(0) - b.mean(0)
    return x * (len(W) - x) / len(W) * diff @ np.linalg.solve(S, diff)


class TestEngineMatchesDetector:
    @pytest.mark.parametrize("ties", [False, True])
    @pytest.mark.parametrize("k", [1, 3])
    def test_sliding(self, k, ties):
        rng = np.random.default_rng(k + 10 * ties)
        Y = rng.integers(0, 3, (90, 2)).astype(float) if ties else rng.standard_normal((90, 4))
        L, start = 30, 40
        cfg = DetectorConfig(k=k, L=L, threshold=1e9, functional_refresh=False)
        z_ref, t_ref = detector_trace(Y, cfg, start)
        z, t = engine.t3_trace(engine.band_sqdist(Y, L), L, k, start, 3, L - 3, math.inf)
        np.testing.assert_allclose(z, z_ref, atol=1e-9)
        np.testing.assert_array_equal(t, t_ref)

    @pytest.mark.parametrize("rule,n1", [("T1", None), ("T2", 20)])
    def test_growing(self, rule, n1):
        Y = np.random.default_rng(1).integers(0, 3, (70, 2)).astype(float)
        cfg = DetectorConfig(rule=rule, k=2, n0=3, n1=n1, threshold=1e9)
        z_ref, t_ref = detector_trace(Y, cfg, 30)
        z, t = engine.growing_trace(engine.full_sqdist(Y), 2, 30, 3, -1 if n1 is None else n1, math.inf)
        np.testing.assert_allclose(z, z_ref, atol=1e-9)
        np.testing.assert_array_equal(t, t_ref)

    def test_band_matches_full(self):
        Y = np.random.default_rng(2).standard_normal((600, 5))
        B = engine.band_sqdist(Y, 40, block=64)
        D = engine.full_sqdist(Y)
        for i in (1, 39, 40, 300, 599):
            m = min(i, 39)
            np.testing.assert_allclose(B[i, :m], D[i, i - 1 - np.arange(m)], atol=1e-9)

    def test_early_stop(self):
        Y = np.random.default_rng(3).standard_normal((120, 3))
        z, t = engine.t3_trace(engine.band_sqdist(Y, 30), 30, 1, 40, 3, 27, -1e9)
        assert np.isfinite(z[0]) and np.isnan(z[1:]).all()


class TestHotelling:
    def test_window_against_pooled_formula(self):
        Y = np.random.default_rng(4).standard_normal((60, 3))
        L, start = 25, 40
        z, t = engine.hotelling_trace(Y, L, start, 3, L - 3, math.inf)
        for i in (start, 50, 59):
            W = Y[i - L + 1:i + 1]
            vals = [pooled_hotelling(W, x) for x in range(3, L - 2)]
            assert z[i - start] == pytest.approx(max(vals), rel=1e-9)
            assert t[i - start] == i - L + 1 + 3 + int(np.argmax(vals)) - 1

    def test_growing_against_pooled_formula(self):
        Y = np.random.default_rng(5).standard_normal((80, 4))
        z, t = engine.hotelling_growing_trace(Y, 30, 3, math.inf, 16)
        for i in (30, 47, 79):
            W = Y[: i + 1]
            vals = [pooled_hotelling(W, x) for x in range(3, i + 1 - 3 + 1)]
            assert z[i - 30] == pytest.approx(max(vals), rel=1e-8)
            assert t[i - 30] == 3 + int(np.argmax(vals)) - 1

    def test_not_applicable_high_dimension(self):
        spec = SimSpec(d=1000, delta=2.7, reps=10, method="hotelling")
        with pytest.raises(NotApplicable):
            hotelling_scan(spec, 0.01, 10)
        with pytest.raises(NotApplicable):
            rep_trace(replace(spec, hotelling_scope="window"), 0)


class TestGenerators:
    def test_reproducible(self):
        spec = SimSpec(d=5, delta=1.0, reps=3)
        np.testing.assert_array_equal(generate(spec, 2), generate(spec, 2))
        assert not np.array_equal(generate(spec, 1), generate(spec, 2))
        assert not np.array_equal(generate(spec, 1, stream=0), generate(spec, 1, stream=1))

    def test_zero_shift_is_stationary(self):
        spec = SimSpec(d=5, delta=0.0)
        np.testing.assert_array_equal(generate(spec, 0), rng_for(0, 0, 0).standard_normal((500, 5)))

    def test_shift_size(self):
        spec = SimSpec(d=4, delta=2.0)
        diff = generate(spec, 0) - generate(replace(spec, delta=0.0), 0)
        assert np.allclose(diff[:400], 0)
        np.testing.assert_allclose(np.linalg.norm(diff[400:], axis=1), 2.0)

    def test_gradual_path(self):
        path = mean_path(SimSpec(generator="gradual-shift", gradual_length=10))
        assert path[399] == 0 and path[400] == pytest.approx(0.1) and path[409] == 1.0

    def test_lognormal_positive(self):
        assert (generate(SimSpec(generator="lognormal-shift", d=3, delta=1.5), 0) > 0).all()

    @pytest.mark.parametrize("kw", [{"generator": "cauchy"}, {"tau": 100}, {"delta": -1}, {"method": "svm"}])
    def test_invalid(self, kw):
        with pytest.raises(KnnCpdError):
            SimSpec(**kw)


class TestCalibration:
    def test_quantile_threshold(self):
        m = np.arange(1000, dtype=float)
        b, (lo, hi) = quantile_threshold(m, 0.05)
        assert (m > b).mean() == pytest.approx(0.05, abs=0.001)
        assert lo <= b <= hi

    def test_higher_alpha_lower_b(self):
        m = np.random.default_rng(0).standard_normal(2000)
        assert quantile_threshold(m, 0.1)[0] < quantile_threshold(m, 0.05)[0]

    def test_needs_500_reps(self):
        with pytest.raises(KnnCpdError):
            calibrate_mc(SimSpec(reps=100), 0.05)

    def test_reuses_maxima(self):
        m = np.linspace(0, 1, 501)
        cal = calibrate_mc(SimSpec(reps=10), 0.05, maxima=m)
        assert cal.reps == 501
        assert cal.exceedance() == pytest.approx(0.05, abs=0.003)
        lo, hi = cal.binomial_bounds()
        assert lo < 0.05 < hi

    def test_parallel_matches_serial(self):
        spec = SimSpec(d=3, reps=6, horizon=260, detector=DetectorConfig(k=1, L=50, threshold=4.0))
        np.testing.assert_array_equal(null_maxima(spec, 1), null_maxima(spec, 2))


class TestExperiment:
    def test_outcomes_partition(self):
        spec = SimSpec(d=5, delta=3.0, reps=20, detector=DetectorConfig(k=1, L=50, threshold=4.0))
        res = run_experiment(spec)
        assert res.power + res.failure_I + res.failure_II == pytest.approx(1.0)
        assert {r["outcome"] for r in res.records} <= {"early", "success", "miss"}
        assert res.power > 0.8

    def test_first_alarm(self):
        assert first_alarm(np.array([1.0, np.nan, 5.0, 6.0]), 4.0, 200) == 202
        assert first_alarm(np.array([1.0, 2.0]), 4.0, 200) is None

    def test_needs_threshold(self):
        spec = SimSpec(reps=2, detector=DetectorConfig(k=1))
        with pytest.raises(KnnCpdError):
            run_experiment(spec)


class TestPresets:
    def test_unknown(self):
        with pytest.raises(ValueError):
            run_preset("table9")
        with pytest.raises(ValueError):
            run_preset("table1", scale="huge")

    def test_tsv(self):
        text = rows_to_tsv([{"a": 1, "b": 0.5, "band": [1, 2]}, {"a": 2, "c": None}])
        assert text == "a\tb\tc\n1\t0.5\tNA\n2\tNA\tNA\n"
