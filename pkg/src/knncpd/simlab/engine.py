"""Fast scan traces for simulation.

The sliding engine keeps only the top-k lists of each window member and
re-selects a node's list when one of its neighbours is evicted, which is
cheaper than the full rank order kept by :class:`~knncpd.nngraph.WindowGraph`.
Distances are squared Euclidean from a banded Gram product; the k-NN order
is the same as for Euclidean distance.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..nngraph import _growing_insert
from ..scan import _nanargmax, _scan_kernel


def band_sqdist(Y: np.ndarray, L: int, block: int = 256) -> np.ndarray:
    """``B[i, m]`` = squared distance from row ``i`` to row ``i - 1 - m`` (m < L - 1)."""
    N = Y.shape[0]
    sq = np.einsum("ij,ij->i", Y, Y)
    B = np.full((N, max(L - 1, 1)), np.inf)
    for a in range(0, N, block):
        e = min(a + block, N)
        c = max(0, a - L + 1)
        G = Y[a:e] @ Y[c:e].T
        for i in range(a, e):
            m = min(i, L - 1)
            if m == 0:
                continue
            cols = np.arange(i - 1, i - 1 - m, -1) - c
            B[i, :m] = sq[i] + sq[c + cols] - 2.0 * G[i - a, cols]
    np.maximum(B, 0.0, out=B)
    return B


def full_sqdist(Y: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", Y, Y)
    D = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    np.maximum(D, 0.0, out=D)
    return D


@njit(cache=True)
def _select(D, idx, knn, knnd, j, base, size, L, k):
    """Top-k of slot ``j`` over residents, scanned oldest first so ties keep the smaller index."""
    m = 0
    for p in range(size):
        s = (base + p) % L
        if s == j:
            continue
        d = D[j, s]
        if m == k and not d < knnd[j, k - 1]:
            continue
        q = m if m < k else k - 1
        while q > 0 and knnd[j, q - 1] > d:
            knn[j, q] = knn[j, q - 1]
            knnd[j, q] = knnd[j, q - 1]
            q -= 1
        knn[j, q] = s
        knnd[j, q] = d
        if m < k:
            m += 1


@njit(cache=True)
def t3_trace(band, L, k, start, xlo, xhi, stop_above):
    """Sliding-window scan maxima at indices ``start..N-1``.

    Returns ``(zmax, t_hat)`` arrays; once a maximum exceeds ``stop_above``
    the remaining entries are left as NaN / -1.
    """
    N = band.shape[0]
    D = np.full((L, L), np.inf)
    idx = np.full(L, -1, dtype=np.int64)
    knn = np.zeros((L, k), dtype=np.int64)
    knnd = np.full((L, k), np.inf)
    redo = np.zeros(L, dtype=np.bool_)
    nbr = np.empty((L, k), dtype=np.int64)
    steps = N - start
    zout = np.full(steps, np.nan)
    tout = np.full(steps, -1, dtype=np.int64)
    for i in range(N):
        s = i % L
        size_before = min(i, L)
        if i >= L:
            for j in range(L):
                if j == s:
                    continue
                for r in range(k):
                    if knn[j, r] == s:
                        redo[j] = True
                        break
            size_before = L - 1
        m = min(i, L - 1)
        for q in range(m):
            t = (i - 1 - q) % L
            D[s, t] = band[i, q]
            D[t, s] = band[i, q]
        D[s, s] = np.inf
        idx[s] = i
        base = max(0, i - L + 1)
        size = min(i + 1, L)
        for p in range(size - 1):
            j = (base + p) % L
            if redo[j]:
                redo[j] = False
                _select(D, idx, knn, knnd, j, base, size, L, k)
                continue
            d = D[j, s]
            cnt = min(k, size_before - 1)
            if cnt == k and not d < knnd[j, k - 1]:
                continue
            q = cnt if cnt < k else k - 1
            while q > 0 and knnd[j, q - 1] > d:
                knn[j, q] = knn[j, q - 1]
                knnd[j, q] = knnd[j, q - 1]
                q -= 1
            knn[j, q] = s
            knnd[j, q] = d
        if size > 1:
            _select(D, idx, knn, knnd, s, base, size, L, k)
        if i >= start:
            for p in range(L):
                sl = (base + p) % L
                for r in range(k):
                    nbr[p, r] = idx[knn[sl, r]] - base
            R, E, V, Z = _scan_kernel(nbr, k, xlo, xhi)
            best = _nanargmax(Z)
            if best >= 0:
                zout[i - start] = Z[best]
                tout[i - start] = base + xlo + best - 1
                if Z[best] > stop_above:
                    break
    return zout, tout


@njit(cache=True)
def growing_trace(D, k, start, n0, n1, stop_above):
    """Scan maxima for the growing-graph rules (``n1 <= 0`` means all splits)."""
    N = D.shape[0]
    knn = np.zeros((N, k), dtype=np.int64)
    knnd = np.full((N, k), np.inf)
    steps = N - start
    zout = np.full(steps, np.nan)
    tout = np.full(steps, -1, dtype=np.int64)
    for i in range(N):
        _growing_insert(knn, knnd, i, D[i], k)
        if i >= start:
            n = i + 1
            xlo = n0 if n1 <= 0 else max(n0, n - n1)
            xhi = n - n0
            R, E, V, Z = _scan_kernel(knn[:n], k, xlo, xhi)
            best = _nanargmax(Z)
            if best >= 0:
                zout[i - start] = Z[best]
                tout[i - start] = xlo + best - 1
                if Z[best] > stop_above:
                    break
    return zout, tout


@njit(cache=True)
def hotelling_trace(Y, L, start, xlo, xhi, stop_above):
    """Maximum over splits of the pooled two-sample Hotelling T^2 in each window.

    With total scatter ``Tot`` and ``a = delta' Tot^-1 delta``,
    ``T^2 = (L-2) c a / (1 - c a)`` where ``c = x (L-x) / L``.
    """
    N, d = Y.shape
    steps = N - start
    zout = np.full(steps, np.nan)
    tout = np.full(steps, -1, dtype=np.int64)
    for i in range(start, N):
        base = i - L + 1
        W = Y[base:i + 1]
        mu = np.zeros(d)
        for p in range(L):
            mu += W[p]
        mu /= L
        C = W - mu
        Tot = C.T @ C
        Lc = np.linalg.cholesky(Tot)
        Zw = np.linalg.solve(Lc, C.T)  # whitened, d x L
        S = np.zeros(d)
        best = -np.inf
        bx = -1
        for x in range(1, xhi + 1):
            S += Zw[:, x - 1]
            if x >= xlo:
                ca = (S @ S) * L / (x * (L - x))
                t2 = (L - 2) * ca / (1.0 - ca)
                if t2 > best:
                    best = t2
                    bx = x
        zout[i - start] = best
        tout[i - start] = base + bx - 1
        if best > stop_above:
            break
    return zout, tout


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for j in range(a.shape[0]):
        s += a[j] * b[j]
    return s


@njit(cache=True)
def _hotelling_reset(P, A, Q, n):
    for x in range(1, n):
        v = A @ P[x]
        Q[x] = P[x] @ v


@njit(cache=True)
def hotelling_growing_trace(Y, start, n0, stop_above, refresh=256):
    """Maximum Hotelling T^2 over splits ``n0..n-n0`` of all observations so far.

    The inverse scatter matrix follows rank-one updates
    ``Tot_{n+1} = Tot_n + n/(n+1) u u'`` with ``u = y - mean_n``; the
    quadratic forms ``P_x' A P_x`` of the prefix sums are updated in O(d)
    each and recomputed from scratch every ``refresh`` steps.
    """
    N, d = Y.shape
    P = np.zeros((N + 1, d))
    for i in range(N):
        P[i + 1] = P[i] + Y[i]
    steps = N - start
    zout = np.full(steps, np.nan)
    tout = np.full(steps, -1, dtype=np.int64)
    n = start + 1
    mu = P[n] / n
    C = Y[:n] - mu
    A = np.linalg.inv(C.T @ C)
    Q = np.zeros(N + 1)
    _hotelling_reset(P, A, Q, n)
    since = 0
    for i in range(start, N):
        n = i + 1
        if i > start:
            m = n - 1
            u = Y[i] - P[m] / m
            v = A @ u
            den = (m + 1.0) / m + u @ v
            for x in range(1, n):
                w = _dot(v, P[x])
                Q[x] -= w * w / den
            A -= np.outer(v, v) / den
            since += 1
            Q[n - 1] = P[n - 1] @ (A @ P[n - 1])
            if since >= refresh:
                A = np.linalg.inv((Y[:n] - P[n] / n).T @ (Y[:n] - P[n] / n))
                _hotelling_reset(P, A, Q, n)
                since = 0
        mu = P[n] / n
        am = A @ mu
        mam = mu @ am
        best = -np.inf
        bx = -1
        for x in range(n0, n - n0 + 1):
            qf = Q[x] - 2.0 * x * _dot(am, P[x]) + x * x * mam
            ca = qf * n / (x * (n - x))
            t2 = (n - 2) * ca / (1.0 - ca)
            if t2 > best:
                best = t2
                bx = x
        zout[i - start] = best
        tout[i - start] = bx - 1
        if best > stop_above:
            break
    return zout, tout
