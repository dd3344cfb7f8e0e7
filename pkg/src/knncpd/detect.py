"""Streaming detector for the three stopping rules and event post-processing.

``T1`` scans every split of all observations seen so far, ``T2`` only the
splits within ``n1`` of the newest point, and ``T3`` the splits of the
sliding window of the ``L`` most recent observations.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .arl import FunctionalEstimates, RunningFunctionals, solve_threshold
from .core import DegenerateVarianceError, DistanceSpec, KnnCpdError, Observation
from .nngraph import GrowingGraph, WindowGraph
from .scan import ScanConfig, scan_positions

log = logging.getLogger(__name__)

RULES = ("T1", "T2", "T3")
STATUSES = ("raw", "candidate", "valid")


@dataclass
class DetectorConfig:
    rule: str = "T3"
    k: int = 3
    L: int = 200
    n0: int = 3
    n1: int | None = None
    threshold: float | None = None
    target_arl: float | None = None
    history_length: int | None = None
    functional_refresh: bool = True
    skewness_corrected: bool = True
    lookback: int = 5
    spacing: float | None = None
    distance: DistanceSpec = field(default_factory=DistanceSpec)

    def __post_init__(self):
        self.rule = self.rule.upper()
        if self.rule not in RULES:
            raise KnnCpdError(f"rule must be one of {RULES}, got {self.rule!r}")
        if self.k < 1:
            raise KnnCpdError("k must be positive")
        if self.n0 < 1:
            raise KnnCpdError("n0 must be positive")
        if self.rule == "T3":
            ScanConfig(self.k, self.L, self.n0, self.n1)
        if self.n1 is not None and self.n1 <= self.n0:
            raise KnnCpdError("n1 must exceed n0")
        if self.threshold is not None and self.target_arl is not None:
            raise KnnCpdError("give either a threshold or a target ARL, not both")
        if self.threshold is None and self.target_arl is None:
            self.target_arl = 10_000.0
        if self.threshold is None and self.rule != "T3":
            raise KnnCpdError(f"rule {self.rule} needs an explicit threshold (the analytic ARL covers T3 only)")
        if self.threshold is not None and self.threshold <= 0:
            raise KnnCpdError("threshold must be positive")
        if self.lookback < 0:
            raise KnnCpdError("lookback must be nonnegative")

    @property
    def n1_eff(self) -> int:
        if self.n1 is not None:
            return int(self.n1)
        return self.L - self.n0

    @property
    def spacing_eff(self) -> float:
        if self.spacing is not None:
            return float(self.spacing)
        return self.L / 2 - self.n0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["distance"] = self.distance.describe()
        d["n1"] = self.n1_eff if self.rule != "T1" else self.n1
        d["spacing"] = self.spacing_eff
        return d


@dataclass(frozen=True)
class DetectionEvent:
    n: int
    t_hat: int
    zmax: float
    b: float
    rule: str
    status: str = "raw"

    def as_dict(self) -> dict:
        return {"n": self.n, "t_hat": self.t_hat, "zmax": self.zmax, "b": self.b, "rule": self.rule.lower(), "status": self.status}


@dataclass(frozen=True)
class StepRecord:
    """One monitored time step: the scan maximum and the threshold in force."""

    n: int
    zmax: float
    t_hat: int
    b: float


class Detector:
    """Online detector; call :meth:`warmup` with change-free history, then :meth:`step`.

    Steps return a :class:`DetectionEvent` whenever the scan maximum exceeds
    the threshold.  Its status is resolved online: ``raw`` when an exceedance
    occurred within the previous ``lookback`` steps, ``candidate`` when it is
    within the spacing of the previous candidate, otherwise ``valid``.
    """

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.graph = None
        self.functionals: RunningFunctionals | None = None
        self.b: float | None = cfg.threshold
        self.n_seen = 0
        self._recent = deque(maxlen=max(cfg.lookback, 1))
        self._last_candidate: int | None = None
        self.last: StepRecord | None = None

    # -- setup --------------------------------------------------------------
    def warmup(self, history) -> "Detector":
        cfg = self.cfg
        obs = [h if isinstance(h, Observation) else Observation(i, h) for i, h in enumerate(history)]
        N0 = len(obs) if cfg.history_length is None else int(cfg.history_length)
        if len(obs) < N0:
            raise KnnCpdError(f"history has {len(obs)} observations, config asks for {N0}")
        obs = obs[len(obs) - N0:]
        if cfg.rule == "T3":
            if N0 < cfg.L:
                raise KnnCpdError(f"T3 needs at least L={cfg.L} history observations, got {N0}")
            self.graph = WindowGraph(cfg.L, cfg.k, cfg.distance)
            self.functionals = RunningFunctionals(cfg.k, cfg.L)
            for o in obs:
                self.graph.push(o)
                if self.graph.full:
                    self.functionals.add(self.graph.functionals())
        else:
            if N0 <= max(2 * cfg.n0, cfg.k + 1, 3):
                raise KnnCpdError(f"{cfg.rule} needs more than {max(2 * cfg.n0, cfg.k + 1, 3)} history observations")
            self.graph = GrowingGraph(cfg.k, cfg.distance, capacity=max(256, 2 * N0))
            for o in obs:
                self.graph.push(o)
        self.n_seen = N0
        self._resolve_threshold()
        self._recent.clear()
        self._last_candidate = None
        return self

    def estimates(self) -> FunctionalEstimates | None:
        return self.functionals.estimates() if self.functionals is not None else None

    def _resolve_threshold(self) -> None:
        cfg = self.cfg
        if cfg.threshold is not None:
            self.b = float(cfg.threshold)
            return
        f = self.functionals.estimates()
        self.b = solve_threshold(cfg.target_arl, cfg.L, cfg.n0, cfg.n1_eff, f, cfg.skewness_corrected)

    # -- monitoring ---------------------------------------------------------
    def _x_range(self) -> tuple[int, int]:
        cfg = self.cfg
        if cfg.rule == "T3":
            return cfg.L - cfg.n1_eff, cfg.L - cfg.n0
        N = self.graph.n
        if cfg.rule == "T1":
            return cfg.n0, N - cfg.n0
        lo = cfg.n0 if cfg.n1 is None else max(cfg.n0, N - cfg.n1)
        return lo, N - cfg.n0

    def scan(self) -> StepRecord:
        """Scan maximum at the current time, without side effects."""
        g = self.graph
        nbr = g.neighbor_positions()
        lo_idx = g.oldest if isinstance(g, WindowGraph) else g.first_index
        xlo, xhi = self._x_range()
        _, _, _, Z = scan_positions(nbr, self.cfg.k, xlo, xhi)
        if np.all(np.isnan(Z)):
            return StepRecord(lo_idx + nbr.shape[0] - 1, float("nan"), -1, self.b)
        best = int(np.nanargmax(Z))
        return StepRecord(lo_idx + nbr.shape[0] - 1, float(Z[best]), lo_idx + xlo + best - 1, self.b)

    def step(self, obs: Observation) -> DetectionEvent | None:
        if self.graph is None:
            raise KnnCpdError("call warmup before step")
        self.graph.push(obs)
        self.n_seen += 1
        rec = self.scan()
        self.last = rec
        fired = not math.isnan(rec.zmax) and rec.zmax > rec.b
        event = None
        if fired:
            status = "raw"
            if not any(self._recent):
                status = "candidate"
                if self._last_candidate is None or rec.n - self._last_candidate > self.cfg.spacing_eff:
                    status = "valid"
                self._last_candidate = rec.n
            event = DetectionEvent(rec.n, rec.t_hat, rec.zmax, rec.b, self.cfg.rule, status)
        elif self.cfg.functional_refresh and self.functionals is not None:
            self.functionals.add(self.graph.functionals())
            if self.cfg.threshold is None:
                self._resolve_threshold()
        if self.cfg.lookback:
            self._recent.append(fired)
        return event

    def run(self, stream):
        """Yield ``(StepRecord, event-or-None)`` for each observation of ``stream``."""
        for obs in stream:
            ev = self.step(obs)
            yield self.last, ev


def postprocess(events, cfg: DetectorConfig | None = None, lookback: int | None = None, spacing: float | None = None):
    """Label a time-ordered list of exceedances as raw, candidate or valid.

    An exceedance at ``n`` is kept as a candidate only if no exceedance
    occurred at ``n - lookback .. n - 1``.  A candidate is valid when it lies
    more than ``spacing`` steps after the previous candidate.  Returns every
    event with its status set; filter on ``status == "valid"`` for the
    survivors.
    """
    if cfg is not None:
        lookback = cfg.lookback if lookback is None else lookback
        spacing = cfg.spacing_eff if spacing is None else spacing
    lookback = 5 if lookback is None else lookback
    spacing = 0.0 if spacing is None else spacing
    out = []
    times = []
    last_cand = None
    for ev in events:
        if times and ev.n <= times[-1]:
            raise KnnCpdError("events must be strictly time-ordered")
        suppressed = any(ev.n - lookback <= t < ev.n for t in times[-lookback:]) if lookback else False
        times.append(ev.n)
        if suppressed:
            out.append(replace(ev, status="raw"))
            continue
        status = "valid" if last_cand is None or ev.n - last_cand > spacing else "candidate"
        last_cand = ev.n
        out.append(replace(ev, status=status))
    return out


def valid_events(events, cfg: DetectorConfig | None = None, **kw):
    return [e for e in postprocess(events, cfg, **kw) if e.status == "valid"]
