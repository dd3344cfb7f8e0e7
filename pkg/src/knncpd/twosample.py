"""Two-sample k-NN test: cross-edge count, exact permutation moments, Z score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DegenerateVarianceError, DistanceSpec, KnnCpdError, pairwise
from .nngraph import knn_from_distances
from .scan import VAR_EPS, conditional_var


@dataclass(frozen=True)
class LabeledSample:
    """A k-NN graph (neighbour positions, shape (n, k)) with binary labels.

    Label 0 marks the first sample and label 1 the second.
    """

    nbr: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        nbr = np.asarray(self.nbr, dtype=np.int64)
        lab = np.asarray(self.labels).astype(np.int64)
        if nbr.ndim != 2 or nbr.shape[0] != lab.shape[0]:
            raise KnnCpdError(f"label count {lab.shape[0]} does not match graph size {nbr.shape[0]}")
        if not np.isin(lab, (0, 1)).all():
            raise KnnCpdError("labels must be 0 or 1")
        n1 = int((lab == 0).sum())
        if n1 == 0 or n1 == lab.size:
            raise KnnCpdError("both samples must be non-empty")
        object.__setattr__(self, "nbr", nbr)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_samples(cls, first, second, k: int, spec: DistanceSpec | None = None) -> "LabeledSample":
        if isinstance(first, np.ndarray) and isinstance(second, np.ndarray):
            payloads = np.vstack([first, second]).astype(float)
        else:
            payloads = list(first) + list(second)
        D = pairwise(payloads, spec)
        labels = np.r_[np.zeros(len(first), dtype=np.int64), np.ones(len(second), dtype=np.int64)]
        return cls(knn_from_distances(D, k), labels)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def k(self) -> int:
        return self.nbr.shape[1]

    @property
    def sizes(self) -> tuple[int, int]:
        n1 = int((self.labels == 0).sum())
        return n1, self.n - n1

    def graph_sums(self) -> tuple[int, int]:
        """(ordered reciprocal-edge count, sum of squared in-degrees)."""
        n, k = self.nbr.shape
        A = np.zeros((n, n), dtype=np.int64)
        A[np.repeat(np.arange(n), k), self.nbr.ravel()] = 1
        indeg = A.sum(axis=0)
        return int((A * A.T).sum()), int((indeg**2).sum())


def cross_count(s: LabeledSample, labels: np.ndarray | None = None) -> int:
    """Twice the number of directed k-NN edges joining the two samples."""
    lab = s.labels if labels is None else np.asarray(labels)
    return int(2 * (lab[:, None] != lab[s.nbr]).sum())


def moments(s: LabeledSample) -> tuple[float, float]:
    """Exact permutation mean and variance of :func:`cross_count` given the graph."""
    n = s.n
    if n < 4:
        raise KnnCpdError("moments need at least 4 points")
    n1, n2 = s.sizes
    mutual, sq = s.graph_sums()
    E = 4.0 * s.k * n1 * n2 / (n - 1)
    V = float(max(conditional_var(s.k, n, n1, mutual, sq), 0.0))
    return E, V


@dataclass(frozen=True)
class TwoSampleResult:
    X: int
    E: float
    var: float
    z: float
    p_value: float | None = None
    resamples: int = 0

    def as_dict(self) -> dict:
        return {
            "X": self.X,
            "E": self.E,
            "var": self.var,
            "z": self.z,
            "p_value": self.p_value,
            "resamples": self.resamples,
        }


def z_score(s: LabeledSample) -> float:
    """Z = -(X - E)/sqrt(Var); large values mean the samples differ."""
    E, V = moments(s)
    if V <= VAR_EPS:
        raise DegenerateVarianceError("permutation variance is zero")
    return -(cross_count(s) - E) / np.sqrt(V)


def evaluate(s: LabeledSample, resamples: int = 0, seed: int = 0) -> TwoSampleResult:
    """Full test record; with ``resamples`` > 0 a Monte Carlo permutation p-value is added.

    The p-value is ``(1 + #{X_perm <= X}) / (1 + resamples)``, since small
    cross counts are the evidence against the null.
    """
    X = cross_count(s)
    E, V = moments(s)
    z = -(X - E) / np.sqrt(V) if V > VAR_EPS else float("nan")
    p = None
    if resamples > 0:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(resamples):
            if cross_count(s, rng.permutation(s.labels)) <= X:
                hits += 1
        p = (1 + hits) / (1 + resamples)
    return TwoSampleResult(X=X, E=E, var=V, z=float(z), p_value=p, resamples=int(resamples))
