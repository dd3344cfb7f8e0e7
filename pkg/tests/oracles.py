"""Brute-force reference computations shared by the test modules."""

from itertools import combinations

import numpy as np


def random_out_graph(n, k, rng):
    """Random directed graph with out-degree exactly k and no self-loops."""
    return np.array([rng.choice(np.delete(np.arange(n), i), k, replace=False) for i in range(n)])


def cross_counts_all_splits(nbr, x):
    """Cross count (twice the directed crossing edges) for every x-subset labelled as group one."""
    n = nbr.shape[0]
    out = []
    for first in combinations(range(n), x):
        lab = np.ones(n, dtype=bool)
        lab[list(first)] = False
        out.append(2 * int((lab[:, None] != lab[nbr]).sum()))
    return np.array(out, dtype=float)


def permutation_moments(nbr, x):
    """Exact mean, variance and third raw moment over all C(n, x) assignments."""
    r = cross_counts_all_splits(nbr, x)
    return r.mean(), r.var(), (r**3).mean()


def brute_scan(nbr, xlo, xhi):
    """Contiguous-split scan from first principles: returns (R, Z) for x in [xlo, xhi]."""
    R, Z = [], []
    for x in range(xlo, xhi + 1):
        lab = np.arange(nbr.shape[0]) >= x
        r = 2 * int((lab[:, None] != lab[nbr]).sum())
        mean, var, _ = permutation_moments(nbr, x)
        R.append(r)
        Z.append(-(r - mean) / np.sqrt(var) if var > 1e-9 else np.nan)
    return np.array(R), np.array(Z)
