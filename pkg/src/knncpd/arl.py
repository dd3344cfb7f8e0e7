"""Analytic average run length of the windowed scan and its threshold solver.

The functionals that enter the approximation are averaged over the k-NN
graphs of change-free history windows.  ``motifs`` are per-window sums
(not divided by ``L``); ``p``, ``q``, ``p_k`` and ``q_k`` are per node.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .core import DistanceSpec, KnnCpdError, Observation
from .nngraph import GraphFunctionals, WindowGraph
from .scan import e_r, unconditional_var

SQRT_2PI = math.sqrt(2.0 * math.pi)


class SkewnessDomainError(KnnCpdError, ArithmeticError):
    """1 + 2*gamma*b <= 0: the skewness correction is undefined at this split."""


@dataclass(frozen=True)
class FunctionalEstimates:
    k: int
    L: int
    p: float
    q: float
    p_k: float
    q_k: float
    motifs: tuple
    windows: int = 1

    def __post_init__(self):
        if not 0 <= self.p <= self.k + 1e-12:
            raise KnnCpdError(f"p must lie in [0, k], got {self.p}")
        if self.q < 0 or min(self.motifs) < 0:
            raise KnnCpdError("functional averages must be nonnegative")
        if len(self.motifs) != 5:
            raise KnnCpdError("expected five motif averages")

    @classmethod
    def from_graph(cls, f: GraphFunctionals) -> "FunctionalEstimates":
        return cls(f.k, f.L, f.p, f.q, f.p_k, f.q_k, tuple(float(m) for m in f.motifs))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["motifs"] = list(self.motifs)
        return d


class RunningFunctionals:
    """Running mean of window functionals (weight 1/count per new window)."""

    def __init__(self, k: int, L: int):
        self.k, self.L = int(k), int(L)
        self.count = 0
        self._sum = np.zeros(9)

    def add(self, f: GraphFunctionals) -> None:
        if f.k != self.k or f.L != self.L:
            raise KnnCpdError("functionals come from a different (k, L)")
        self._sum += np.array([f.p, f.q, f.p_k, f.q_k, *f.motifs], dtype=float)
        self.count += 1

    def estimates(self) -> FunctionalEstimates:
        if self.count == 0:
            raise KnnCpdError("no windows seen yet")
        m = self._sum / self.count
        return FunctionalEstimates(self.k, self.L, m[0], m[1], m[2], m[3], tuple(m[4:]), self.count)


def estimate_functionals(history, L: int, k: int, spec: DistanceSpec | None = None, stride: int = 1) -> FunctionalEstimates:
    """Average functionals over every ``stride``-th full window of ``history``.

    ``history`` is a 2-d array (one observation per row) or a sequence of
    :class:`Observation`.
    """
    if len(history) < L:
        raise KnnCpdError(f"need at least L={L} history points, got {len(history)}")
    g = WindowGraph(L, k, spec)
    run = RunningFunctionals(k, L)
    for i, item in enumerate(history):
        obs = item if isinstance(item, Observation) else Observation(i, item)
        g.push(obs)
        if g.full and (i - L + 1) % stride == 0:
            run.add(g.functionals())
    return run.estimates()


# --------------------------------------------------------------------------
# local covariance shape


def sigma2(u, f: FunctionalEstimates):
    k, p, q = f.k, f.p, f.q
    a = 4 * u * (1 - u)
    # (1 - 2u)^2 = 1 - a keeps the u <-> 1 - u symmetry exact in floating point
    return a * (a * (k + p) + (1 - a) * (q - k * k + k))


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise KnnCpdError("u must lie strictly inside (0, 1)")
    return u


def g1(u, f: FunctionalEstimates):
    """Drift of the scan correlation along the split direction."""
    u = _check_u(u)
    k, p, q = f.k, f.p, f.q
    a = 4 * u * (1 - u)
    out = (4 * a * (k + p) + 2 * (1 - a) * (q - k * k + k)) / sigma2(u, f)
    return float(out) if out.ndim == 0 else out


def g2(u, f: FunctionalEstimates):
    """Drift of the scan correlation along the time direction."""
    u = _check_u(u)
    k, p, q, pk, qk = f.k, f.p, f.q, f.p_k, f.q_k
    a = u * (1 - u)
    num = 16 * a * a * (p + q + k * k + 2 * pk - 2 * qk) + 4 * a * (2 * qk - 3 * q + k * k + k) + 2 * (q - k * k + k)
    out = num / sigma2(u, f)
    return float(out) if out.ndim == 0 else out


def nu(x):
    """Overshoot correction, (2/x)(Phi(x/2)-1/2) / ((x/2)Phi(x/2) + phi(x/2))."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise KnnCpdError("nu needs x > 0")
    small = x < 1e-8
    xs = np.where(small, 1.0, x)
    hs = xs / 2
    out = (2 / xs) * (ndtr(hs) - 0.5) / (hs * ndtr(hs) + np.exp(-hs * hs / 2) / SQRT_2PI)
    out = np.where(small, 1.0, out)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# third moment and skewness


def r_coefficients(L: int, x):
    """Probabilities that random x-subsets split 2, 3 (two ways) and 4 index patterns."""
    x = np.asarray(x, dtype=float)
    y = L - x
    r1 = 2 * x * y / (L * (L - 1))
    r2 = 4 * x * (x - 1) * y * (y - 1) / (L * (L - 1) * (L - 2) * (L - 3))
    r3 = x * y * ((x - 1) * (x - 2) + (y - 1) * (y - 2)) / (L * (L - 1) * (L - 2) * (L - 3))
    r4 = 8 * x * (x - 1) * (x - 2) * y * (y - 1) * (y - 2) / (L * (L - 1) * (L - 2) * (L - 3) * (L - 4) * (L - 5))
    return r1, r2, r3, r4


def third_moment_r(f: FunctionalEstimates, L: int, x):
    """Permutation third raw moment of the windowed cross count at offset ``x``."""
    xa = np.asarray(x)
    if L < 6 or np.any((xa < 1) | (xa > L - 1)):
        raise KnnCpdError(f"need L >= 6 and 1 <= x <= L-1, got L={L}, x={x}")
    k, p, q = f.k, f.p, f.q
    m1, m2, m3, m4, m5 = f.motifs
    r1, r2, r3, r4 = r_coefficients(L, xa)
    out = (
        8 * k**3 * L**3 * r4
        + 12 * k**2 * L**2 * (r2 + 3 * k * (r2 - 2 * r4))
        + 4 * k * L * (3 * r2 - r1 + 2 * r3 - 4 * r4 + 3 * k * (3 * r1 - 2 * r2 - 4 * r3 - 4 * r4) + 8 * k**2 * (r3 - 3 * r2 + 5 * r4))
        + 24 * p * (k * L**2 * r4 + k * L * (r1 + r2 - 2 * r3 - 4 * r4) + 2 * L * (2 * r3 - r1 + 2 * r4))
        + 12 * q * (k * L**2 * (r2 - 2 * r4) + k * L * (2 * r3 - 5 * r2 + 8 * r4) + L * (r1 + r2 - 2 * r3 - 4 * r4))
        + 4 * (2 * r3 - 3 * r2 + 4 * r4) * m1
        + 24 * (r1 + r2 - 2 * r3 - 4 * r4) * m2
        + 24 * (2 * r4 - r2) * m3
        - 16 * r4 * (m4 + 3 * m5)
    )
    return float(out) if np.ndim(out) == 0 else out


def gamma(f: FunctionalEstimates, L: int, x):
    """Skewness of Z = -(R - E)/sqrt(Var) at offset ``x`` (unconditional moments)."""
    E = e_r(f.k, L, x)
    V = unconditional_var(f.k, L, x, f.p, f.q)
    if np.any(V <= 0):
        raise KnnCpdError("variance vanishes; skewness undefined")
    out = (E**3 + 3 * E * V - third_moment_r(f, L, x)) / V**1.5
    return float(out) if np.ndim(out) == 0 else out


def _log_s(b, gam):
    """log S for in-domain entries; NaN where 1 + 2 gamma b <= 0."""
    gam = np.asarray(gam, dtype=float)
    disc = 1 + 2 * gam * b
    ok = disc > 0
    root = np.sqrt(np.where(ok, disc, 1.0))
    theta = 2 * b / (1 + root)  # same as (root - 1)/gamma, stable at gamma = 0
    out = (b - theta) ** 2 / 2 + gam * theta**3 / 6 - 0.5 * np.log(root)
    return np.where(ok, out, np.nan)


def s_correction(u, b: float, gamma_u: float) -> float:
    """Skewness correction factor at one split; ``u`` is carried for reporting only."""
    v = float(_log_s(b, gamma_u))
    if math.isnan(v):
        raise SkewnessDomainError(f"1 + 2*gamma*b <= 0 at u={u} (gamma={gamma_u}, b={b})")
    return math.exp(v)


def s_grid(b: float, gam) -> np.ndarray:
    """Vectorized correction; out-of-domain splits get 0 (they are dropped)."""
    ls = _log_s(b, gam)
    return np.where(np.isnan(ls), 0.0, np.exp(np.where(np.isnan(ls), 0.0, ls)))


# --------------------------------------------------------------------------
# run length


@dataclass(frozen=True)
class ArlRequest:
    b: float
    L: int
    n0: int
    n1: int | None
    functionals: FunctionalEstimates
    skewness_corrected: bool = True

    def __post_init__(self):
        n1 = self.L - self.n0 if self.n1 is None else self.n1
        object.__setattr__(self, "n1", int(n1))
        if self.b <= 0:
            raise KnnCpdError("b must be positive")
        if not 0 < self.n0 < self.n1 <= self.L - self.n0:
            raise KnnCpdError(f"need 0 < n0 < n1 <= L - n0, got n0={self.n0}, n1={self.n1}")


class ArlCurve:
    """ARL as a function of b with the b-free grid quantities cached."""

    def __init__(self, L: int, n0: int, n1: int | None, f: FunctionalEstimates, skewness_corrected: bool = True):
        self.L, self.n0 = int(L), int(n0)
        self.n1 = self.L - self.n0 if n1 is None else int(n1)
        self.f = f
        self.skew = bool(skewness_corrected)
        m = np.arange(self.n0, self.n1 + 1)
        self.u = m / self.L
        self.g1 = g1(self.u, f)
        self.g2 = g2(self.u, f)
        self.gamma = gamma(f, self.L, self.L - m) if self.skew else np.zeros_like(self.u)

    def integrand(self, b: float) -> np.ndarray:
        L = self.L
        out = self.g1 * self.g2 * nu(np.sqrt(2 * b * b * self.g1 / L)) * nu(np.sqrt(2 * b * b * self.g2 / L))
        if self.skew:
            out = out * s_grid(b, self.gamma)
        return out

    def log_arl(self, b: float) -> float:
        total = self.integrand(b).sum() / self.L
        if total <= 0:
            raise SkewnessDomainError(f"every split is outside the skewness-correction domain at b={b}")
        return math.log(self.L * SQRT_2PI) + b * b / 2 - 3 * math.log(b) - math.log(total)

    def __call__(self, b: float) -> float:
        return math.exp(self.log_arl(b))


def arl(req: ArlRequest) -> float:
    return ArlCurve(req.L, req.n0, req.n1, req.functionals, req.skewness_corrected)(req.b)


class ThresholdError(KnnCpdError):
    pass


def solve_threshold(target_arl: float, L: int, n0: int, n1: int | None, f: FunctionalEstimates,
                    skewness_corrected: bool = True, lo: float = 1.0, hi: float = 10.0, rtol: float = 1e-6) -> float:
    """Bisect b in [lo, hi] until ARL(b) hits ``target_arl`` to relative ``rtol``.

    The ARL may jump upward where a split leaves the correction domain; the
    bisection then returns the jump location.
    """
    if target_arl < 100:
        raise ThresholdError("target ARL must be at least 100")
    curve = ArlCurve(L, n0, n1, f, skewness_corrected)
    goal = math.log(target_arl)

    def h(b):
        try:
            return curve.log_arl(b) - goal
        except SkewnessDomainError:
            return math.inf

    hl, hh = h(lo), h(hi)
    if not (hl <= 0 <= hh):
        raise ThresholdError(
            f"target ARL {target_arl} not bracketed: ARL({lo})={math.exp(min(hl + goal, 700)):.4g}, "
            f"ARL({hi})={math.exp(min(hh + goal, 700)):.4g}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        hm = h(mid)
        if abs(hm) <= rtol:
            return mid
        if hm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)
