"""Windowed scan statistic and its closed-form permutation moments."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knncpd.arl import FunctionalEstimates, third_moment_r
from knncpd.core import DegenerateVarianceError, KnnCpdError, Observation
from knncpd.nngraph import GrowingGraph, WindowGraph, functionals_from_neighbors
from knncpd.scan import ScanConfig, e_r, r_stat, scan_positions, unconditional_var, var_r, zmax
from oracles import brute_scan, permutation_moments, random_out_graph


def window(X, L, k):
    g = WindowGraph(L, k)
    for i, x in enumerate(X):
        g.push(Observation(i, x))
    return g


class TestScanConfig:
    def test_default_n1(self):
        assert ScanConfig(1, 200).n1 == 197
        assert ScanConfig(1, 200).x_range == (3, 197)

    @pytest.mark.parametrize("n0,n1", [(10, 5), (3, 3), (0, 5), (3, 199)])
    def test_invalid_ranges(self, n0, n1):
        with pytest.raises(KnnCpdError):
            ScanConfig(1, 200, n0, n1)


class TestClosedForms:
    def test_mean_at_half(self):
        assert e_r(1, 200, 100) == pytest.approx(40000 / 199)

    @pytest.mark.parametrize("x", [0, 200])
    def test_empty_group(self, x):
        with pytest.raises(KnnCpdError):
            e_r(1, 200, x)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(6, 9), st.integers(1, 2), st.integers(0, 2**31), st.data())
    def test_moments_against_enumeration(self, L, k, seed, data):
        x = data.draw(st.integers(2, L - 2))
        nbr = random_out_graph(L, k, np.random.default_rng(seed))
        f = functionals_from_neighbors(nbr)
        mean, var, m3 = permutation_moments(nbr, x)
        assert e_r(k, L, x) == pytest.approx(mean, abs=1e-9)
        assert var_r(f, L, x) == pytest.approx(var, abs=1e-9)
        assert third_moment_r(FunctionalEstimates.from_graph(f), L, x) == pytest.approx(m3, rel=1e-12, abs=1e-9)

    def test_unconditional_matches_conditional_on_regular_counts(self):
        # with p and q set to the observed per-node values the two forms agree
        nbr = random_out_graph(12, 2, np.random.default_rng(7))
        f = functionals_from_neighbors(nbr)
        for x in range(2, 11):
            assert unconditional_var(2, 12, x, f.p, f.q) == pytest.approx(var_r(f, 12, x), rel=1e-12)

    def test_var_range_checked(self):
        f = functionals_from_neighbors(random_out_graph(8, 1, np.random.default_rng(0)))
        with pytest.raises(KnnCpdError):
            var_r(f, 8, 1)
        with pytest.raises(KnnCpdError):
            var_r(f, 8, 4, mode="bogus")


class TestSweep:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(6, 9), st.integers(1, 3), st.integers(0, 2**31))
    def test_sweep_against_brute_force(self, n, k, seed):
        nbr = random_out_graph(n, min(k, n - 1), np.random.default_rng(seed))
        R, E, V, Z = scan_positions(nbr, nbr.shape[1], 2, n - 2)
        Rb, Zb = brute_scan(nbr, 2, n - 2)
        np.testing.assert_array_equal(R, Rb)
        np.testing.assert_allclose(Z, Zb, atol=1e-9)

    def test_r_stat_line(self):
        g = window(np.array([[0.0], [1.0], [3.0], [7.0]]), 4, 1)
        assert r_stat(g, 1, 3) == 2

    def test_r_stat_rejects_edge_split(self):
        g = window(np.array([[0.0], [1.0], [3.0], [7.0]]), 4, 1)
        with pytest.raises(KnnCpdError):
            r_stat(g, 3)

    def test_zmax_finds_planted_change(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((60, 5))
        X[40:] += 3.0
        z, t, values = zmax(window(X, 60, 3), 59, ScanConfig(3, 60))
        assert t == 39
        assert z > 4
        assert len(values) == 60 - 2 * 3 + 1

    def test_reversal_symmetry(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((40, 4))
        X[25:] += 1.0
        n, L = 39, 40
        z, t, _ = zmax(window(X, L, 2), n, ScanConfig(2, L))
        zr, tr, _ = zmax(window(X[::-1], L, 2), n, ScanConfig(2, L))
        assert zr == pytest.approx(z, abs=1e-12)
        assert tr == n - L + (n - t)

    def test_degenerate_window(self):
        # complete graph: every split has zero variance
        X = np.arange(6.0)[:, None]
        with pytest.raises(DegenerateVarianceError):
            zmax(window(X, 6, 5), cfg=ScanConfig(5, 6, 2))

    def test_growing_graph_scan(self):
        rng = np.random.default_rng(1)
        g = GrowingGraph(2)
        for i, x in enumerate(rng.standard_normal((30, 3))):
            g.push(Observation(i + 100, x))
        z, t, values = zmax(g, 129, x_range=(3, 27))
        assert values[0].t == 102
        assert 102 <= t <= 126

    def test_wrong_end_time(self):
        g = window(np.random.default_rng(0).standard_normal((10, 2)), 10, 1)
        with pytest.raises(KnnCpdError):
            zmax(g, 5, ScanConfig(1, 10))
