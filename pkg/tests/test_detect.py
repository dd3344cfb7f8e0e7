"""Online detector, threshold resolution and event post-processing."""

import numpy as np
import pytest

from knncpd.core import KnnCpdError, Observation, StreamOrderError
from knncpd.detect import DetectionEvent, Detector, DetectorConfig, postprocess, valid_events
from knncpd.nngraph import WindowGraph
from knncpd.scan import ScanConfig, zmax


def ev(n):
    return DetectionEvent(n, n - 10, 5.0, 4.0, "T3", "raw")


def stream(n=260, d=3, shift_at=None, delta=2.0, seed=0):
    X = np.random.default_rng(seed).standard_normal((n, d))
    if shift_at is not None:
        X[shift_at:] += delta
    return X


def obs(X, start=0):
    return [Observation(start + i, x) for i, x in enumerate(X)]


class TestConfig:
    def test_default_target_arl(self):
        cfg = DetectorConfig()
        assert cfg.threshold is None
        assert cfg.target_arl == 10_000

    def test_n1_must_exceed_n0(self):
        with pytest.raises(KnnCpdError, match="n1"):
            DetectorConfig(n0=10, n1=5)

    @pytest.mark.parametrize("rule", ["T1", "T2"])
    def test_growing_rules_need_threshold(self, rule):
        with pytest.raises(KnnCpdError):
            DetectorConfig(rule=rule)
        assert DetectorConfig(rule=rule.lower(), threshold=3.0).rule == rule

    def test_threshold_and_target_exclusive(self):
        with pytest.raises(KnnCpdError):
            DetectorConfig(threshold=4.0, target_arl=1000)

    def test_default_spacing(self):
        assert DetectorConfig(L=100, n0=3).spacing_eff == 47

    def test_unknown_rule(self):
        with pytest.raises(KnnCpdError):
            DetectorConfig(rule="T4")


class TestPostprocess:
    def test_run_of_seven(self):
        out = postprocess([ev(n) for n in range(300, 307)], lookback=5, spacing=47)
        assert [e.status for e in out].count("valid") == 1
        assert out[0].status == "valid"
        assert all(e.status == "raw" for e in out[1:])

    def test_spacing_boundary(self):
        cfg = DetectorConfig(L=100, n0=3)
        # 47 apart: dropped; 48 apart: kept
        assert [e.n for e in valid_events([ev(300), ev(347)], cfg)] == [300]
        assert [e.n for e in valid_events([ev(300), ev(348)], cfg)] == [300, 348]

    def test_spacing_measured_from_previous_candidate(self):
        cfg = DetectorConfig(L=100, n0=3)
        out = postprocess([ev(300), ev(340), ev(380)], cfg)
        assert [e.status for e in out] == ["valid", "candidate", "candidate"]

    def test_gap_resets_suppression(self):
        out = postprocess([ev(300), ev(306)], lookback=5, spacing=0)
        assert [e.status for e in out] == ["valid", "valid"]

    def test_empty(self):
        assert postprocess([], lookback=5, spacing=10) == []

    def test_order_enforced(self):
        with pytest.raises(KnnCpdError):
            postprocess([ev(5), ev(5)])


class TestDetector:
    def test_step_before_warmup(self):
        with pytest.raises(KnnCpdError):
            Detector(DetectorConfig(threshold=4.0)).step(Observation(0, [0.0]))

    def test_short_history(self):
        with pytest.raises(KnnCpdError):
            Detector(DetectorConfig(L=50, threshold=4.0)).warmup(stream(20))

    def test_history_length_uses_tail(self):
        X = stream(120)
        a = Detector(DetectorConfig(L=50, k=1, history_length=60)).warmup(obs(X))
        b = Detector(DetectorConfig(L=50, k=1)).warmup(obs(X[60:], 60))
        assert a.b == b.b
        assert a.estimates() == b.estimates()

    def test_warmup_resolves_threshold(self):
        det = Detector(DetectorConfig(L=60, k=1)).warmup(stream(80, 10))
        assert 3.5 < det.b < 5.0

    def test_warmup_twice_identical(self):
        X = stream(80)
        a = Detector(DetectorConfig(L=60, k=2)).warmup(X)
        b = Detector(DetectorConfig(L=60, k=2)).warmup(X)
        assert a.b == b.b and a.estimates() == b.estimates()

    def test_scan_matches_zmax(self):
        X = stream(120, shift_at=90)
        det = Detector(DetectorConfig(L=60, k=2, threshold=100.0)).warmup(obs(X[:60]))
        for o in obs(X[60:], 60):
            det.step(o)
        g = WindowGraph(60, 2)
        for o in obs(X[60:], 60):
            g.push(o)
        z, t, _ = zmax(g, 119, ScanConfig(2, 60))
        assert det.last.zmax == pytest.approx(z)
        assert det.last.t_hat == t

    def test_detects_shift(self):
        X = stream(400, 5, shift_at=300, delta=2.5)
        det = Detector(DetectorConfig(L=100, k=3, target_arl=5000)).warmup(obs(X[:200]))
        events = [e for _, e in det.run(obs(X[200:], 200)) if e is not None]
        valid = [e for e in events if e.status == "valid"]
        assert len(valid) >= 1
        assert 300 <= valid[0].n < 360
        assert abs(valid[0].t_hat - 299) <= 10

    def test_online_status_matches_postprocess(self):
        X = stream(500, 4, shift_at=300, delta=2.0, seed=3)
        cfg = DetectorConfig(L=80, k=2, threshold=3.0, functional_refresh=False)
        det = Detector(cfg).warmup(obs(X[:100]))
        events = [e for _, e in det.run(obs(X[100:], 100)) if e is not None]
        assert len(events) > 3
        assert [e.status for e in postprocess(events, cfg)] == [e.status for e in events]

    def test_deterministic_events(self):
        X = stream(300, 3, shift_at=200, seed=5)

        def run():
            det = Detector(DetectorConfig(L=60, k=2)).warmup(obs(X[:100]))
            return [(r, e) for r, e in det.run(obs(X[100:], 100))]

        assert run() == run()

    def test_refresh_changes_only_on_quiet_steps(self):
        X = stream(200, 3)
        det = Detector(DetectorConfig(L=60, k=1)).warmup(obs(X[:100]))
        n_before = det.functionals.count
        b_before = det.b
        for o in obs(X[100:110], 100):
            det.step(o)
        assert det.functionals.count == n_before + 10
        assert det.b != b_before

    def test_no_refresh_keeps_threshold(self):
        X = stream(200, 3)
        det = Detector(DetectorConfig(L=60, k=1, functional_refresh=False)).warmup(obs(X[:100]))
        b = det.b
        for o in obs(X[100:110], 100):
            det.step(o)
        assert det.b == b

    def test_stream_order(self):
        X = stream(100)
        det = Detector(DetectorConfig(L=60, k=1, threshold=4.0)).warmup(obs(X[:60]))
        with pytest.raises(StreamOrderError):
            det.step(Observation(61, X[61]))

    @pytest.mark.parametrize("rule", ["T1", "T2"])
    def test_growing_rules_run(self, rule):
        X = stream(150, 3, shift_at=100, delta=3.0)
        cfg = DetectorConfig(rule=rule, k=2, n0=3, n1=40 if rule == "T2" else None, threshold=5.0)
        det = Detector(cfg).warmup(obs(X[:60]))
        events = [e for _, e in det.run(obs(X[60:], 60)) if e is not None]
        assert any(e.n >= 100 and abs(e.t_hat - 99) <= 5 for e in events)
        assert events[0].rule == rule
