"""Monte Carlo calibration, failure-rate and power studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binom

from ..core import KnnCpdError
from .engine import band_sqdist, full_sqdist, growing_trace, hotelling_growing_trace, hotelling_trace, t3_trace
from .generators import SimSpec, generate


class NotApplicable(KnnCpdError):
    """The method cannot run in this setting (e.g. more dimensions than window points)."""


# --------------------------------------------------------------------------
# traces


def _check_hotelling(spec: SimSpec) -> None:
    if spec.hotelling_scope == "window":
        L = spec.detector.L
        if spec.d > L - 2:
            raise NotApplicable(f"windowed Hotelling T^2 needs d <= L - 2 (d={spec.d}, L={L})")
    elif spec.d > spec.history - 1:
        raise NotApplicable(f"Hotelling T^2 needs d < history length (d={spec.d}, history={spec.history})")


def rep_trace(spec: SimSpec, rep: int, stop_above: float = math.inf, stream: int = 0):
    """Scan maxima and argmax splits at monitored indices ``history..horizon-1``."""
    cfg = spec.detector
    Y = generate(spec, rep, stream)
    start = spec.history
    if spec.method == "hotelling":
        _check_hotelling(spec)
        if spec.hotelling_scope == "all":
            return hotelling_growing_trace(Y, start, cfg.n0, stop_above)
        return hotelling_trace(Y, cfg.L, start, cfg.L - cfg.n1_eff, cfg.L - cfg.n0, stop_above)
    if cfg.rule == "T3":
        B = band_sqdist(Y, cfg.L)
        return t3_trace(B, cfg.L, cfg.k, start, cfg.L - cfg.n1_eff, cfg.L - cfg.n0, stop_above)
    D = full_sqdist(Y)
    n1 = -1 if cfg.rule == "T1" or cfg.n1 is None else cfg.n1
    return growing_trace(D, cfg.k, start, cfg.n0, n1, stop_above)


def _map(fn, items, n_jobs: int):
    if n_jobs == 1:
        return [fn(i) for i in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(i) for i in items)


def null_maxima(spec: SimSpec, n_jobs: int = 1, stream: int = 1) -> np.ndarray:
    """Per-replicate maximum of the scan over the monitored horizon (no change)."""
    null = replace(spec, delta=0.0)

    def one(r):
        z, _ = rep_trace(null, r, math.inf, stream)
        return np.nanmax(z) if np.isfinite(z).any() else -np.inf

    return np.array(_map(one, range(spec.reps), n_jobs))


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class Calibration:
    b: float
    alpha: float
    reps: int
    band: tuple
    maxima: np.ndarray = field(repr=False, compare=False)

    def exceedance(self, b: float | None = None) -> float:
        b = self.b if b is None else b
        return float((self.maxima > b).mean())

    def binomial_bounds(self, level: float = 0.95) -> tuple[float, float]:
        lo, hi = binom.interval(level, self.reps, self.alpha)
        return lo / self.reps, hi / self.reps

    def as_dict(self) -> dict:
        return {"b": self.b, "alpha": self.alpha, "reps": self.reps, "band": list(self.band)}


def quantile_threshold(maxima: np.ndarray, alpha: float, level: float = 0.95) -> tuple[float, tuple]:
    """Threshold with empirical exceedance ``alpha`` and an order-statistic confidence band."""
    m = np.sort(np.asarray(maxima, dtype=float))
    n = m.size
    b = float(np.quantile(m, 1 - alpha))
    lo, hi = binom.interval(level, n, 1 - alpha)
    lo_i = int(max(lo - 1, 0))
    hi_i = int(min(hi, n - 1))
    return b, (float(m[lo_i]), float(m[hi_i]))


def calibrate_mc(spec: SimSpec, alpha: float = 0.05, n_jobs: int = 1, maxima: np.ndarray | None = None) -> Calibration:
    """Threshold so that a fraction ``alpha`` of null runs alarm within the horizon.

    The empirical exceedance of the sorted null maxima is a step function of
    b, so its root is the (1 - alpha) sample quantile.
    """
    if spec.reps < 500 and maxima is None:
        raise KnnCpdError("Monte Carlo calibration needs at least 500 replicates")
    if not 0 < alpha < 1:
        raise KnnCpdError("alpha must lie in (0, 1)")
    if maxima is None:
        maxima = null_maxima(spec, n_jobs)
    if not np.isfinite(maxima).all():
        raise KnnCpdError("some null runs produced no finite scan value")
    b, band = quantile_threshold(maxima, alpha)
    return Calibration(b=b, alpha=alpha, reps=int(maxima.size), band=band, maxima=maxima)


# --------------------------------------------------------------------------
# detection studies


@dataclass
class ExperimentResult:
    edd: float
    failure_I: float
    failure_II: float
    power: float
    b: float
    reps: int
    records: list = field(repr=False)

    def as_dict(self, with_records: bool = False) -> dict:
        out = {
            "edd": self.edd,
            "failure_I": self.failure_I,
            "failure_II": self.failure_II,
            "power": self.power,
            "b": self.b,
            "reps": self.reps,
        }
        if with_records:
            out["records"] = self.records
        return out


def first_alarm(z: np.ndarray, b: float, start: int) -> int | None:
    hit = np.flatnonzero(z > b)
    return int(start + hit[0]) if hit.size else None


def run_experiment(spec: SimSpec, b: float | None = None, n_jobs: int = 1) -> ExperimentResult:
    """Alarm times against a fixed threshold; outcome classes partition the runs.

    Failure I: alarm before ``tau``.  Success: alarm in
    ``[tau, tau + success_window)``.  Failure II: everything else.
    """
    b = spec.detector.threshold if b is None else b
    if b is None:
        raise KnnCpdError("run_experiment needs a fixed threshold")
    horizon = max(spec.horizon, spec.tau + spec.success_window)
    sp = replace(spec, horizon=horizon)

    def one(r):
        z, _ = rep_trace(sp, r, b)
        T = first_alarm(z, b, sp.history)
        return {"rep": r, "T": T}

    records = _map(one, range(spec.reps), n_jobs)
    early = succ = 0
    lags = []
    for rec in records:
        T = rec["T"]
        if T is not None and T < spec.tau:
            rec["outcome"] = "early"
            early += 1
        elif T is not None and T < spec.tau + spec.success_window:
            rec["outcome"] = "success"
            succ += 1
            lags.append(T - spec.tau)
        else:
            rec["outcome"] = "miss"
    n = spec.reps
    return ExperimentResult(
        edd=float(np.mean(lags)) if lags else float("nan"),
        failure_I=early / n,
        failure_II=(n - early - succ) / n,
        power=succ / n,
        b=float(b),
        reps=n,
        records=records,
    )


def calibrate_early_stop(spec: SimSpec, alpha: float = 0.01, reps: int | None = None, n_jobs: int = 1) -> Calibration:
    """Threshold with null alarm probability ``alpha`` before the change index ``tau``."""
    null = replace(spec, delta=0.0, horizon=spec.tau, reps=reps or spec.reps)
    return calibrate_mc(null, alpha, n_jobs)


def hotelling_scan(spec: SimSpec, alpha: float = 0.01, calib_reps: int | None = None, n_jobs: int = 1):
    """Power of the Hotelling T^2 scan at a Monte Carlo early-stop threshold.

    By default the scan covers every split of all observations so far
    (``hotelling_scope="all"``); ``"window"`` restricts it to the last ``L``.
    Returns ``(ExperimentResult, Calibration)``; raises :class:`NotApplicable`
    when the pooled covariance would be singular.
    """
    hs = replace(spec, method="hotelling")
    _check_hotelling(hs)
    cal = calibrate_early_stop(hs, alpha, calib_reps, n_jobs)
    return run_experiment(hs, cal.b, n_jobs), cal


def power_at_early_stop(spec: SimSpec, alpha: float = 0.01, calib_reps: int | None = None, n_jobs: int = 1):
    """Calibrate on the pre-change stretch, then run the change scenario."""
    if spec.method == "hotelling":
        return hotelling_scan(spec, alpha, calib_reps, n_jobs)
    cal = calibrate_early_stop(spec, alpha, calib_reps, n_jobs)
    return run_experiment(spec, cal.b, n_jobs), cal


def k_sweep(spec: SimSpec, ks, alpha: float = 0.01, calib_reps: int | None = None, n_jobs: int = 1):
    """Power over a grid of k, each k calibrated on its own null runs."""
    rows = []
    for k in ks:
        det = replace(spec.detector, k=int(k), threshold=1.0, target_arl=None)
        res, cal = power_at_early_stop(replace(spec, detector=det), alpha, calib_reps, n_jobs)
        rows.append({"k": int(k), "b": cal.b, "power": res.power, "edd": res.edd,
                     "failure_I": res.failure_I, "failure_II": res.failure_II})
    return rows
