"""Observations, distance providers and the errors shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

METRICS = (
    "euclidean",
    "normalized-count-l2",
    "adjacency-frobenius",
    "adjacency-frobenius-normalized",
    "precomputed",
)


class KnnCpdError(ValueError):
    """Base class for errors raised by this package."""


class DistanceError(KnnCpdError):
    pass


class StreamOrderError(KnnCpdError):
    pass


class DegenerateVarianceError(KnnCpdError, ArithmeticError):
    """Raised when a permutation variance is zero and Z is undefined."""


Payload = Union[np.ndarray, str]


@dataclass(frozen=True)
class Observation:
    """One time-indexed observation.

    ``payload`` is either a dense real vector or an opaque string key that a
    ``precomputed`` distance table can resolve.
    """

    index: int
    payload: Payload

    def __post_init__(self):
        if int(self.index) < 0:
            raise KnnCpdError(f"observation index must be nonnegative, got {self.index}")
        if not isinstance(self.payload, str):
            v = np.asarray(self.payload, dtype=float)
            if v.ndim != 1 or v.size == 0:
                raise DistanceError("vector payload must be a non-empty 1-d array")
            object.__setattr__(self, "payload", v)

    @property
    def is_key(self) -> bool:
        return isinstance(self.payload, str)


@dataclass
class DistanceSpec:
    metric: str = "euclidean"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise DistanceError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.metric == "precomputed":
            table = self.params.get("table")
            if not isinstance(table, Mapping):
                raise DistanceError("precomputed metric needs params['table'] mapping (key_i, key_j) -> distance")
        side = self.params.get("side")
        if side is not None and int(side) < 1:
            raise DistanceError("adjacency side length must be positive")

    def describe(self) -> dict:
        """JSON-safe summary (the precomputed table is summarised by its size)."""
        params = {k: v for k, v in self.params.items() if k != "table"}
        if "table" in self.params:
            params["table_pairs"] = len(self.params["table"])
        return {"metric": self.metric, "params": params}


def _check_side(v: np.ndarray, spec: DistanceSpec) -> None:
    side = spec.params.get("side")
    if side is not None and v.shape[-1] != int(side) ** 2:
        raise DistanceError(f"adjacency payload has {v.shape[-1]} entries, expected {int(side) ** 2}")


def _lookup(table: Mapping, a: str, b: str) -> float:
    if a == b:
        return 0.0
    if (a, b) in table:
        return float(table[(a, b)])
    if (b, a) in table:
        return float(table[(b, a)])
    raise DistanceError(f"no precomputed distance for keys {a!r}, {b!r}")


def distance_row(payload: Payload, others: Sequence[Payload] | np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """Distances from ``payload`` to each entry of ``others`` under ``spec``.

    Vector metrics are evaluated in one vectorized pass; ``others`` may be a
    2-d array with one payload per row.
    """
    if spec.metric == "precomputed":
        if not isinstance(payload, str):
            raise DistanceError("precomputed metric needs key payloads")
        table = spec.params["table"]
        return np.array([_lookup(table, payload, o) for o in others], dtype=float)

    if isinstance(payload, str):
        raise DistanceError(f"metric {spec.metric!r} needs vector payloads, got key {payload!r}")
    v = np.asarray(payload, dtype=float)
    if len(others) == 0:
        return np.empty(0)
    W = np.asarray(others, dtype=float)
    if W.ndim != 2 or W.shape[1] != v.shape[0]:
        raise DistanceError(f"dimension mismatch: {v.shape[0]} vs {W.shape[1:] or 'scalar'}")

    if spec.metric == "euclidean":
        return np.sqrt(((W - v) ** 2).sum(axis=1))
    if spec.metric == "normalized-count-l2":
        sv = v.sum()
        sw = W.sum(axis=1)
        if sv <= 0 or np.any(sw <= 0):
            raise DistanceError("normalized-count-l2 needs count vectors with positive sum")
        return np.sqrt(((W / sw[:, None] - v / sv) ** 2).sum(axis=1))

    _check_side(v, spec)
    sq = ((W - v) ** 2).sum(axis=1)
    if spec.metric == "adjacency-frobenius":
        return sq
    nv = np.sqrt((v**2).sum())
    nw = np.sqrt((W**2).sum(axis=1))
    if nv == 0 or np.any(nw == 0):
        raise DistanceError("adjacency-frobenius-normalized is undefined for an all-zero matrix")
    return sq / (nv * nw)


def distance(a: Observation | Payload, b: Observation | Payload, spec: DistanceSpec | None = None) -> float:
    """Distance between two observations (or bare payloads)."""
    spec = spec or DistanceSpec()
    pa = a.payload if isinstance(a, Observation) else a
    pb = b.payload if isinstance(b, Observation) else b
    if spec.metric == "precomputed":
        if not (isinstance(pa, str) and isinstance(pb, str)):
            raise DistanceError("precomputed metric needs key payloads")
        return _lookup(spec.params["table"], pa, pb)
    if isinstance(pb, str):
        raise DistanceError(f"metric {spec.metric!r} needs vector payloads")
    return float(distance_row(pa, np.asarray(pb, dtype=float)[None, :], spec)[0])


def pairwise(payloads: Sequence[Payload] | np.ndarray, spec: DistanceSpec | None = None) -> np.ndarray:
    """Full symmetric distance matrix, row by row through :func:`distance_row`."""
    spec = spec or DistanceSpec()
    n = len(payloads)
    D = np.zeros((n, n))
    for i in range(1, n):
        D[i, :i] = distance_row(payloads[i], payloads[:i], spec)
        D[:i, i] = D[i, :i]
    return D
