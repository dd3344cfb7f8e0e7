"""Windowed k-NN scan statistic and its permutation moments.

A split at offset ``x`` puts the ``x`` oldest window members in one group
and the remaining ``L - x`` in the other; for a window ending at time ``n``
the split index is ``t = n - L + x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DegenerateVarianceError, KnnCpdError
from .nngraph import GraphFunctionals, GrowingGraph, WindowGraph

VAR_EPS = 1e-9


@dataclass(frozen=True)
class ScanConfig:
    k: int
    L: int
    n0: int = 3
    n1: int | None = None

    def __post_init__(self):
        n1 = self.L - self.n0 if self.n1 is None else self.n1
        object.__setattr__(self, "n1", int(n1))
        if not 0 < self.n0 < self.n1 < self.L:
            raise KnnCpdError(f"need 0 < n0 < n1 < L, got n0={self.n0}, n1={self.n1}, L={self.L}")
        if self.n1 > self.L - self.n0:
            raise KnnCpdError("n1 may not exceed L - n0")
        if not 0 < self.k < self.L:
            raise KnnCpdError("need 0 < k < L")

    @property
    def x_range(self) -> tuple[int, int]:
        return self.L - self.n1, self.L - self.n0


@dataclass(frozen=True)
class ScanValue:
    t: int
    n: int
    R: int
    expR: float
    varR: float
    z: float
    degenerate: bool = False


# --------------------------------------------------------------------------
# closed forms


def e_r(k: int, L: int, x) -> float:
    """Permutation mean of the windowed cross count, 4k x (L-x)/(L-1)."""
    x = np.asarray(x)
    if np.any((x < 1) | (x > L - 1)):
        raise KnnCpdError(f"split offset must lie in 1..L-1, got {x}")
    out = 4.0 * k * x * (L - x) / (L - 1)
    return float(out) if out.ndim == 0 else out


def h_factor(n1, n2):
    n = n1 + n2
    return 4.0 * (n1 - 1) * (n2 - 1) / ((n - 2) * (n - 3))


def conditional_var(k: int, n: int, n1, mutual: float, sq_indeg: float):
    """Permutation variance given the graph.

    ``mutual`` is the ordered count of reciprocal edges and ``sq_indeg`` the
    sum of squared in-degrees.
    """
    n1 = np.asarray(n1, dtype=float)
    n2 = n - n1
    h = h_factor(n1, n2)
    return 4.0 * n1 * n2 / (n - 1) * (
        h * (mutual / n + k - 2.0 * k * k / (n - 1)) + (1 - h) * (sq_indeg / n - k * k)
    )


def unconditional_var(k: int, L: int, x, p: float, q: float):
    x = np.asarray(x, dtype=float)
    c = 4.0 * (x - 1) * (L - x - 1) / ((L - 2) * (L - 3))
    return 4.0 * x * (L - x) / (L - 1) * (c * (p - q + (L - 3) * k * k / (L - 1)) + q + k - k * k)


def var_r(f: GraphFunctionals, L: int, x, mode: str = "conditional", p: float | None = None, q: float | None = None):
    """Variance of the windowed cross count at split offset ``x``.

    ``conditional`` uses the observed counts of ``f``; ``unconditional``
    plugs in ``p`` and ``q`` (defaulting to the observed per-node values).
    """
    xa = np.asarray(x)
    if L < 4 or np.any((xa < 2) | (xa > L - 2)):
        raise KnnCpdError(f"need L >= 4 and 2 <= x <= L-2, got L={L}, x={x}")
    if mode == "conditional":
        out = conditional_var(f.k, L, xa, f.mutual, f.shared + f.k * L)
    elif mode == "unconditional":
        out = unconditional_var(f.k, L, xa, f.p if p is None else p, f.q if q is None else q)
    else:
        raise KnnCpdError(f"unknown variance mode {mode!r}")
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# sweep


@njit(cache=True)
def _scan_kernel(nbr, k, xlo, xhi):
    """Cross counts, means, conditional variances and Z for x in [xlo, xhi].

    ``nbr`` holds neighbour positions (0 = oldest).  One difference-array
    pass gives every split's cross count.
    """
    n = nbr.shape[0]
    diff = np.zeros(n + 2, dtype=np.int64)
    indeg = np.zeros(n, dtype=np.int64)
    mutual = 0
    for i in range(n):
        for r in range(k):
            j = nbr[i, r]
            indeg[j] += 1
            lo = min(i, j)
            hi = max(i, j)
            diff[lo + 1] += 1
            diff[hi + 1] -= 1
            for s in range(k):
                if nbr[j, s] == i:
                    mutual += 1
    sq = 0
    for i in range(n):
        sq += indeg[i] * indeg[i]
    m = xhi - xlo + 1
    R = np.empty(m, dtype=np.int64)
    E = np.empty(m)
    V = np.empty(m)
    Z = np.empty(m)
    c = 0
    for x in range(1, xhi + 1):
        c += diff[x]
        if x >= xlo:
            idx = x - xlo
            R[idx] = 2 * c
            n1 = float(x)
            n2 = float(n - x)
            h = 4.0 * (n1 - 1) * (n2 - 1) / ((n - 2) * (n - 3))
            E[idx] = 4.0 * k * n1 * n2 / (n - 1)
            V[idx] = 4.0 * n1 * n2 / (n - 1) * (
                h * (mutual / n + k - 2.0 * k * k / (n - 1)) + (1 - h) * (sq / n - k * k)
            )
            if V[idx] > 1e-9:
                Z[idx] = -(R[idx] - E[idx]) / np.sqrt(V[idx])
            else:
                Z[idx] = np.nan
    return R, E, V, Z


@njit(cache=True)
def _nanargmax(Z):
    best = -1
    for i in range(Z.shape[0]):
        if not np.isnan(Z[i]) and (best < 0 or Z[i] > Z[best]):
            best = i
    return best


def scan_positions(nbr: np.ndarray, k: int, xlo: int, xhi: int):
    """Run the sweep on a neighbour-position array; returns (R, E, V, Z)."""
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    n = nbr.shape[0]
    if n < 4 or not 1 <= xlo <= xhi <= n - 1:
        raise KnnCpdError(f"invalid split range [{xlo}, {xhi}] for {n} points")
    return _scan_kernel(nbr, int(k), int(xlo), int(xhi))


def _graph_positions(g):
    if isinstance(g, WindowGraph):
        if not g.full:
            raise KnnCpdError("scan needs a full window")
        return g.neighbor_positions(), g.oldest, g.newest
    if isinstance(g, GrowingGraph):
        return g.neighbor_positions(), g.first_index, g.first_index + g.n - 1
    raise KnnCpdError(f"unsupported graph type {type(g).__name__}")


def r_stat(g, t: int, n: int | None = None) -> int:
    """Twice the number of directed edges crossing the split after index ``t``."""
    nbr, lo, hi = _graph_positions(g)
    if n is not None and n != hi:
        raise KnnCpdError(f"graph ends at {hi}, not {n}")
    x = t - lo + 1
    if not 1 <= x <= nbr.shape[0] - 1:
        raise KnnCpdError(f"split {t} leaves an empty group")
    R, _, _, _ = _scan_kernel(nbr, nbr.shape[1], x, x)
    return int(R[0])


def zmax(g, n: int | None = None, cfg: ScanConfig | None = None, x_range: tuple[int, int] | None = None):
    """Maximum standardized scan over the admissible splits.

    Returns ``(maxZ, argmax_t, values)``; ties go to the smallest ``t`` and
    splits with zero variance are skipped.
    """
    nbr, lo, hi = _graph_positions(g)
    if n is not None and n != hi:
        raise KnnCpdError(f"graph ends at {hi}, not {n}")
    if x_range is None:
        if cfg is None:
            raise KnnCpdError("zmax needs a ScanConfig or an explicit split range")
        x_range = cfg.x_range
    xlo, xhi = x_range
    R, E, V, Z = scan_positions(nbr, nbr.shape[1], xlo, xhi)
    best = _nanargmax(Z)
    if best < 0:
        raise DegenerateVarianceError("every admissible split has zero variance")
    values = [
        ScanValue(
            t=lo + xlo + i - 1,
            n=hi,
            R=int(R[i]),
            expR=float(E[i]),
            varR=float(V[i]),
            z=float(Z[i]) if not np.isnan(Z[i]) else float("nan"),
            degenerate=bool(np.isnan(Z[i])),
        )
        for i in range(len(R))
    ]
    return float(Z[best]), lo + xlo + best - 1, values
