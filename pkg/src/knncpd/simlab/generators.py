"""Synthetic streams with a change in mean, seeded per replicate."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import KnnCpdError
from ..detect import DetectorConfig

GENERATORS = ("gaussian-shift", "lognormal-shift", "gradual-shift")
METHODS = ("knn", "hotelling")
SHIFT_DIRECTION = "equal-spread: mu2 - mu1 = (delta / sqrt(d)) * ones(d)"


@dataclass
class SimSpec:
    """One simulated scenario.

    Indices are 0-based: ``history`` change-free points (0..history-1) are
    used for warmup, monitoring starts at index ``history`` and the first
    post-change observation has index ``tau``.  A run succeeds when the
    first alarm ``T`` satisfies ``tau <= T < tau + success_window``.
    """

    generator: str = "gaussian-shift"
    d: int = 10
    delta: float = 0.0
    tau: int = 400
    horizon: int = 500
    reps: int = 1000
    seed: int = 0
    detector: DetectorConfig = field(default_factory=lambda: DetectorConfig(threshold=4.0))
    success_window: int = 100
    history: int = 200
    gradual_length: int = 1
    method: str = "knn"
    hotelling_scope: str = "all"

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise KnnCpdError(f"generator must be one of {GENERATORS}")
        if self.method not in METHODS:
            raise KnnCpdError(f"method must be one of {METHODS}")
        if self.hotelling_scope not in ("all", "window"):
            raise KnnCpdError("hotelling_scope must be 'all' or 'window'")
        if self.delta < 0:
            raise KnnCpdError("delta must be nonnegative")
        if self.reps < 1:
            raise KnnCpdError("reps must be positive")
        if self.tau <= self.history:
            raise KnnCpdError("the change must come after the history")
        if self.horizon <= self.history:
            raise KnnCpdError("horizon must exceed the history length")
        if self.gradual_length < 1:
            raise KnnCpdError("gradual_length must be at least 1")
        if self.detector.rule == "T3" and self.history < self.detector.L:
            raise KnnCpdError("T3 needs history >= L")

    @property
    def steps(self) -> int:
        return self.horizon - self.history

    def as_dict(self) -> dict:
        d = asdict(self)
        d["detector"] = self.detector.as_dict()
        d["shift_direction"] = SHIFT_DIRECTION
        d["lognormal_covariance"] = "independent coordinates, exp of N(mu, I_d)"
        return d


def rng_for(seed: int, stream: int, rep: int) -> np.random.Generator:
    """Counter-based generator for replicate ``rep`` of substream ``stream``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(rep)))
    return np.random.Generator(np.random.Philox(ss))


def mean_path(spec: SimSpec) -> np.ndarray:
    """Fraction of the full shift applied at each index (0 before tau)."""
    i = np.arange(spec.horizon)
    G = spec.gradual_length if spec.generator == "gradual-shift" else 1
    return np.clip((i - spec.tau + 1) / G, 0.0, 1.0)


def generate(spec: SimSpec, rep: int, stream: int = 0) -> np.ndarray:
    """Observations ``0..horizon-1`` of replicate ``rep`` as an array (horizon, d)."""
    rng = rng_for(spec.seed, stream, rep)
    Y = rng.standard_normal((spec.horizon, spec.d))
    if spec.delta > 0:
        Y += (mean_path(spec) * (spec.delta / np.sqrt(spec.d)))[:, None]
    if spec.generator == "lognormal-shift":
        np.exp(Y, out=Y)
    return Y
