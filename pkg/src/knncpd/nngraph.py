"""Sliding-window and growing k-nearest-neighbour graphs.

Neighbour order is ascending distance, ties broken by the smaller
observation index.  The window graph keeps the *full* ordering of every
resident so that evicting a neighbour simply promotes the next one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DistanceSpec, KnnCpdError, Observation, StreamOrderError, distance_row


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _push_kernel(dist, order, index, size, slot, new_index, drow):
    """Write observation ``new_index`` into ``slot`` and repair every order row.

    ``drow[j]`` is the distance from the new observation to the resident in
    slot ``j``.  When the window is full, ``slot`` holds the oldest resident,
    which is evicted.
    """
    L = index.shape[0]
    full = size == L
    for j in range(L):
        if j != slot and index[j] >= 0:
            dist[slot, j] = drow[j]
            dist[j, slot] = drow[j]
    dist[slot, slot] = np.inf
    index[slot] = new_index

    for i in range(L):
        if i == slot or index[i] < 0:
            continue
        row = order[i]
        if full:
            m = L - 1
            p = 0
            while row[p] != slot:
                p += 1
            for q in range(p, m - 1):
                row[q] = row[q + 1]
            m -= 1
        else:
            m = size - 1
        d = drow[i]
        # the newcomer has the largest index, so equal distances stay ahead of it
        p = m
        while p > 0 and dist[i, row[p - 1]] > d:
            row[p] = row[p - 1]
            p -= 1
        row[p] = slot

    new_size = L if full else size + 1
    others = np.empty(new_size - 1, dtype=np.int64)
    c = 0
    for j in range(L):
        if j != slot and index[j] >= 0:
            others[c] = j
            c += 1
    byidx = others[np.argsort(index[others])]
    ds = np.empty(new_size - 1)
    for q in range(new_size - 1):
        ds[q] = dist[slot, byidx[q]]
    perm = np.argsort(ds, kind="mergesort")
    for q in range(new_size - 1):
        order[slot, q] = byidx[perm[q]]
    return new_size


@njit(cache=True)
def _positions(order, index, size, k):
    """k-NN lists re-expressed in time positions 0..size-1 (oldest first)."""
    L = index.shape[0]
    lo = index[0]
    for j in range(L):
        if index[j] >= 0 and index[j] < lo:
            lo = index[j]
    nbr = np.empty((size, k), dtype=np.int64)
    for s in range(L):
        if index[s] < 0:
            continue
        ps = index[s] - lo
        for r in range(k):
            nbr[ps, r] = index[order[s, r]] - lo
    return nbr


@njit(cache=True)
def _growing_insert(knn, knnd, n, drow, k):
    """Append point ``n`` (positions 0..n-1 already present) to a growing k-NN graph."""
    for i in range(n):
        d = drow[i]
        m = min(k, n - 1)  # neighbours point i currently holds
        if m == k and not d < knnd[i, k - 1]:
            continue
        p = m if m < k else k - 1
        while p > 0 and knnd[i, p - 1] > d:
            knn[i, p] = knn[i, p - 1]
            knnd[i, p] = knnd[i, p - 1]
            p -= 1
        knn[i, p] = n
        knnd[i, p] = d
    m = min(k, n)
    if m > 0:
        perm = np.argsort(drow[:n], kind="mergesort")
        for r in range(m):
            knn[n, r] = perm[r]
            knnd[n, r] = drow[perm[r]]


@njit(cache=True)
def _functionals_kernel(nbr, k):
    """Motif counts of a k-NN graph given as an (n, k) neighbour array.

    Returns (mutual, shared, mutual_rank[k], shared_rank[k], motifs[5]).
    The five three-way sums run over all index tuples; ``A_ii = 0`` already
    removes self pairs.
    """
    n = nbr.shape[0]
    indeg = np.zeros(n, dtype=np.int64)
    rank_in = np.zeros((n, k), dtype=np.int64)  # rank_in[i, r]: # j with i as j's (r+1)-th NN
    for i in range(n):
        for r in range(k):
            j = nbr[i, r]
            indeg[j] += 1
            rank_in[j, r] += 1

    mut = np.zeros(n, dtype=np.int64)
    mutual_rank = np.zeros(k, dtype=np.int64)
    m3 = 0  # sum_{i->j} D_i D_j
    m4 = 0  # directed 3-cycles
    m5 = 0  # sum_{i->j} |out(i) & out(j)|
    for i in range(n):
        for r in range(k):
            j = nbr[i, r]
            m3 += indeg[i] * indeg[j]
            for s in range(k):
                if nbr[j, s] == i:
                    mut[i] += 1
                    if r == k - 1:
                        mutual_rank[s] += 1
                l = nbr[j, s]
                for t in range(k):
                    if nbr[l, t] == i:
                        m4 += 1
                    if nbr[i, t] == l:
                        m5 += 1

    mutual = 0
    shared = 0
    m1 = 0
    m2 = 0
    shared_rank = np.zeros(k, dtype=np.int64)
    for i in range(n):
        mutual += mut[i]
        shared += indeg[i] * (indeg[i] - 1)
        m1 += indeg[i] ** 3
        m2 += mut[i] * indeg[i]
        for r in range(k):
            shared_rank[r] += rank_in[i, k - 1] * rank_in[i, r]
        shared_rank[k - 1] -= rank_in[i, k - 1]
    motifs = np.array([m1, m2, m3, m4, m5], dtype=np.int64)
    return mutual, shared, mutual_rank, shared_rank, motifs


# --------------------------------------------------------------------------
# public types


@dataclass(frozen=True)
class GraphFunctionals:
    """Motif counts of one k-NN graph on ``L`` nodes.

    ``motifs`` holds, in order: sum_i D_i^3, sum_i mut_i D_i,
    sum_{i->j} D_i D_j, directed 3-cycles and sum_{i->j} |out(i) & out(j)|,
    where D is in-degree and mut_i the number of mutual neighbours of i.
    """

    L: int
    k: int
    mutual: int
    shared: int
    mutual_rank: tuple
    shared_rank: tuple
    motifs: tuple

    @property
    def p(self) -> float:
        return self.mutual / self.L

    @property
    def q(self) -> float:
        return self.shared / self.L

    @property
    def p_k(self) -> float:
        return sum(self.mutual_rank) / self.L

    @property
    def q_k(self) -> float:
        return sum(self.shared_rank) / self.L


def functionals_from_neighbors(nbr: np.ndarray) -> GraphFunctionals:
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    n, k = nbr.shape
    mutual, shared, mr, sr, motifs = _functionals_kernel(nbr, k)
    return GraphFunctionals(
        L=n,
        k=k,
        mutual=int(mutual),
        shared=int(shared),
        mutual_rank=tuple(int(v) for v in mr),
        shared_rank=tuple(int(v) for v in sr),
        motifs=tuple(int(v) for v in motifs),
    )


def knn_from_distances(D: np.ndarray, k: int) -> np.ndarray:
    """From-scratch k-NN lists (positions) from a full distance matrix.

    Row order is the tie-break order, so positions must follow observation
    index.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if not 0 < k < n:
        raise KnnCpdError(f"need 0 < k < n, got k={k}, n={n}")
    nbr = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        nbr[i] = others[np.argsort(D[i, others], kind="stable")[:k]]
    return nbr


def adjacency(nbr: np.ndarray, n: int | None = None) -> np.ndarray:
    n = nbr.shape[0] if n is None else n
    A = np.zeros((n, n), dtype=np.int64)
    for r in range(nbr.shape[1]):
        A[np.arange(nbr.shape[0]), nbr[:, r]] = 1
    return A


class WindowGraph:
    """k-NN graph over the ``L`` most recent observations of a stream.

    >>> g = WindowGraph(3, 1)
    >>> for i, x in enumerate([0.0, 1.0, 3.0]):
    ...     _ = g.push(Observation(i, np.array([x])))
    >>> g.indicator(2, 1)
    (1, 1)
    """

    def __init__(self, L: int, k: int, spec: DistanceSpec | None = None):
        if L < 2 or not 0 < k < L:
            raise KnnCpdError(f"need L >= 2 and 0 < k < L, got L={L}, k={k}")
        self.L = int(L)
        self.k = int(k)
        self.spec = spec or DistanceSpec()
        self.dist = np.full((self.L, self.L), np.inf)
        self.order = np.full((self.L, self.L - 1), -1, dtype=np.int64)
        self.index = np.full(self.L, -1, dtype=np.int64)
        self.size = 0
        self.head = 0
        self._payloads: list = [None] * self.L
        self._matrix: np.ndarray | None = None

    # -- state ------------------------------------------------------------
    @property
    def full(self) -> bool:
        return self.size == self.L

    @property
    def newest(self) -> int | None:
        return int(self.index.max()) if self.size else None

    @property
    def oldest(self) -> int | None:
        return int(self.index[self.index >= 0].min()) if self.size else None

    def residents(self) -> list[int]:
        return sorted(int(i) for i in self.index if i >= 0)

    def _slot(self, obs_index: int) -> int:
        hit = np.flatnonzero(self.index == obs_index)
        if obs_index < 0 or hit.size == 0:
            raise KnnCpdError(f"observation {obs_index} is not resident")
        return int(hit[0])

    # -- updates ----------------------------------------------------------
    def push(self, obs: Observation) -> Observation | None:
        """Add ``obs``; return the evicted observation once the window is full."""
        self._check_order(obs.index)
        slot = self.head if self.full else self.size
        evicted = None
        if self.full:
            evicted = Observation(int(self.index[slot]), self._payloads[slot])

        drow = np.full(self.L, np.inf)
        live = [j for j in range(self.L) if j != slot and self.index[j] >= 0]
        if live:
            if obs.is_key:
                others = [self._payloads[j] for j in live]
            else:
                if self._matrix is None:
                    self._matrix = np.zeros((self.L, obs.payload.shape[0]))
                others = self._matrix[live]
            drow[live] = distance_row(obs.payload, others, self.spec)
        if not obs.is_key:
            if self._matrix is None:
                self._matrix = np.zeros((self.L, obs.payload.shape[0]))
            elif self._matrix.shape[1] != obs.payload.shape[0]:
                raise KnnCpdError("all vector payloads in a stream must share one dimension")
            self._matrix[slot] = obs.payload
        self._payloads[slot] = obs.payload
        self._write(slot, obs.index, drow)
        return evicted

    def push_distances(self, obs_index: int, drow_by_index: dict | np.ndarray) -> int | None:
        """Low-level push with distances to residents supplied by the caller.

        ``drow_by_index`` maps resident observation index -> distance (or is
        an array aligned with the internal slots).
        """
        self._check_order(obs_index)
        slot = self.head if self.full else self.size
        evicted = int(self.index[slot]) if self.full else None
        if isinstance(drow_by_index, dict):
            drow = np.full(self.L, np.inf)
            for j in range(self.L):
                if j != slot and self.index[j] >= 0:
                    drow[j] = drow_by_index[int(self.index[j])]
        else:
            drow = np.asarray(drow_by_index, dtype=float)
        self._write(slot, obs_index, drow)
        return evicted

    def _check_order(self, obs_index: int) -> None:
        newest = self.newest
        if newest is not None and obs_index != newest + 1:
            raise StreamOrderError(f"expected observation index {newest + 1}, got {obs_index}")

    def _write(self, slot: int, obs_index: int, drow: np.ndarray) -> None:
        was_full = self.full
        self.size = int(_push_kernel(self.dist, self.order, self.index, self.size, slot, int(obs_index), drow))
        if was_full:
            self.head = (self.head + 1) % self.L

    # -- queries ----------------------------------------------------------
    def neighbors(self, obs_index: int, count: int | None = None) -> list[int]:
        """Ordered neighbours of ``obs_index`` (observation indices)."""
        s = self._slot(obs_index)
        m = self.size - 1 if count is None else min(count, self.size - 1)
        return [int(self.index[j]) for j in self.order[s, :m]]

    def indicator(self, i: int, j: int) -> tuple[int, int | None]:
        """(1, rank) when ``j`` is among the first k neighbours of ``i``, else (0, None)."""
        if i == j:
            raise KnnCpdError("self-loops are excluded from the k-NN graph")
        si, sj = self._slot(i), self._slot(j)
        row = self.order[si, : min(self.k, self.size - 1)]
        hit = np.flatnonzero(row == sj)
        return (1, int(hit[0]) + 1) if hit.size else (0, None)

    def neighbor_positions(self) -> np.ndarray:
        """(size, k) array of neighbour time positions (0 = oldest resident)."""
        if self.size <= self.k:
            raise KnnCpdError("window holds too few observations for a k-NN graph")
        return _positions(self.order, self.index, self.size, self.k)

    def functionals(self) -> GraphFunctionals:
        if not self.full:
            raise KnnCpdError("functionals need a full window")
        return functionals_from_neighbors(self.neighbor_positions())

    def dump(self) -> str:
        """Edge list ``i j rank`` sorted by source index then rank."""
        lines = []
        for i in self.residents():
            for r, j in enumerate(self.neighbors(i, self.k), start=1):
                lines.append(f"{i} {j} {r}")
        return "\n".join(lines) + ("\n" if lines else "")


class GrowingGraph:
    """k-NN graph over every observation seen so far (no eviction)."""

    def __init__(self, k: int, spec: DistanceSpec | None = None, capacity: int = 256):
        if k < 1:
            raise KnnCpdError("k must be positive")
        self.k = int(k)
        self.spec = spec or DistanceSpec()
        self.n = 0
        self.first_index: int | None = None
        self._knn = np.zeros((capacity, self.k), dtype=np.int64)
        self._knnd = np.full((capacity, self.k), np.inf)
        self._payloads: list = []
        self._matrix: np.ndarray | None = None

    def push(self, obs: Observation) -> None:
        if self.n and obs.index != self.first_index + self.n:
            raise StreamOrderError(f"expected observation index {self.first_index + self.n}, got {obs.index}")
        if self.n == 0:
            self.first_index = int(obs.index)
        if obs.is_key:
            drow = distance_row(obs.payload, self._payloads, self.spec) if self.n else np.empty(0)
        else:
            if self._matrix is None:
                self._matrix = np.zeros((max(self._knn.shape[0], 1), obs.payload.shape[0]))
            drow = distance_row(obs.payload, self._matrix[: self.n], self.spec) if self.n else np.empty(0)
        self.push_distances(drow)
        if obs.is_key:
            self._payloads.append(obs.payload)
        else:
            if self._matrix.shape[0] < self.n:
                self._matrix = np.vstack([self._matrix, np.zeros_like(self._matrix)])
            self._matrix[self.n - 1] = obs.payload

    def push_distances(self, drow: np.ndarray) -> None:
        """Append one point given its distances to all previous points."""
        if self.n >= self._knn.shape[0]:
            cap = 2 * self._knn.shape[0]
            self._knn = np.vstack([self._knn, np.zeros_like(self._knn)])[:cap]
            self._knnd = np.vstack([self._knnd, np.full_like(self._knnd, np.inf)])[:cap]
        if self.first_index is None:
            self.first_index = 0
        _growing_insert(self._knn, self._knnd, self.n, np.asarray(drow, dtype=float), self.k)
        self.n += 1

    def neighbor_positions(self) -> np.ndarray:
        if self.n <= self.k:
            raise KnnCpdError("graph holds too few observations for a k-NN graph")
        return self._knn[: self.n].copy()

    def functionals(self) -> GraphFunctionals:
        return functionals_from_neighbors(self.neighbor_positions())
