"""Named experiment bundles at desk or paper scale.

Each preset returns a JSON-ready dict with a ``rows`` list (one flat record
per cell) so that results can be written both as JSON and as TSV.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np

from ..arl import estimate_functionals, solve_threshold
from ..detect import DetectorConfig
from .experiments import (
    NotApplicable,
    calibrate_early_stop,
    calibrate_mc,
    k_sweep,
    power_at_early_stop,
    run_experiment,
)
from .generators import SimSpec, rng_for

log = logging.getLogger(__name__)

PRESETS = ("table1", "table2", "table3", "fig1", "fig5", "fig7")
SCALES = ("smoke", "desk", "paper")
ARL_TARGET = 10_000.0
# Poisson heuristic: P(T < m) = 1 - exp(-m / ARL)
ARL_ALPHA_1000 = 1.0 - math.exp(-1000.0 / ARL_TARGET)

_SCALE = {
    "smoke": {"reps": 50, "calib_reps": 500, "early_reps": 500, "mc_reps": 500},
    "desk": {"reps": 1000, "calib_reps": 2000, "early_reps": 4000, "mc_reps": 500},
    "paper": {"reps": 1000, "calib_reps": 10000, "early_reps": 20000, "mc_reps": 10000},
}


def _det(k, L=200, n0=3, rule="T3", n1=None):
    return DetectorConfig(rule=rule, k=k, L=L, n0=n0, n1=n1, threshold=1.0)


def table1(scale: str = "desk", seed: int = 0, n_jobs: int = 1, rules=("T1", "T2", "T3")) -> dict:
    """Failure rates and detection delays for the three stopping rules."""
    sc = _SCALE[scale]
    deltas = (1.5, 2.0, 3.0, 4.0, 5.0)
    ks = (1, 3)
    if scale == "smoke":
        rules, ks, deltas = ("T3",), (1,), (3.0,)
    rows = []
    for rule in rules:
        for k in ks:
            det = _det(k, rule=rule, n1=None)
            base = SimSpec(d=10, reps=sc["reps"], seed=seed, detector=det)
            cal = calibrate_mc(replace(base, horizon=base.history + 1000, reps=sc["calib_reps"]), 0.05, n_jobs)
            log.info("table1 %s k=%d b=%.4f", rule, k, cal.b)
            for delta in deltas:
                res = run_experiment(replace(base, delta=delta), cal.b, n_jobs)
                rows.append({"rule": rule, "k": k, "delta": delta, "b": cal.b, **res.as_dict()})
    return {"preset": "table1", "scale": scale, "calibration": "P(T < 1000) = 0.05", "rows": rows}


def fig1(scale: str = "desk", seed: int = 0, n_jobs: int = 1) -> dict:
    out = table1(scale, seed, n_jobs)
    out["preset"] = "fig1"
    return out


def table2(scale: str = "desk", seed: int = 0, n_jobs: int = 1) -> dict:
    """Analytic thresholds (with and without skewness correction) and Monte Carlo checks."""
    sc = _SCALE[scale]
    dims = (10, 100, 1000) if scale == "desk" else (10, 100, 1000, 10000)
    rows = []
    for L in (200, 50):
        for d in dims:
            hist = rng_for(seed, 7, d).standard_normal((10_000, d))
            for k in (1, 3, 5):
                f = estimate_functionals(hist, L, k)
                for n0 in (3, 10):
                    row = {"L": L, "d": d, "k": k, "n0": n0,
                           "asymptotic": solve_threshold(ARL_TARGET, L, n0, None, f, False),
                           "corrected": solve_threshold(ARL_TARGET, L, n0, None, f, True)}
                    run_mc = scale == "paper" or (d <= 100 and n0 == 3)
                    if run_mc:
                        spec = SimSpec(d=d, horizon=200 + 1000, reps=sc["mc_reps"], seed=seed, detector=_det(k, L, n0))
                        cal = calibrate_mc(spec, ARL_ALPHA_1000, n_jobs)
                        row["monte_carlo"] = cal.b
                        row["mc_band"] = list(cal.band)
                    rows.append(row)
                    log.info("table2 %s", row)
    return {"preset": "table2", "scale": scale, "target_arl": ARL_TARGET,
            "mc_alpha_1000": ARL_ALPHA_1000, "history_points": 10_000, "rows": rows}


TABLE3_CELLS = (
    ("gaussian-shift", 10, 0.7),
    ("gaussian-shift", 100, 1.8),
    ("gaussian-shift", 1000, 2.7),
    ("gaussian-shift", 10000, 5.0),
    ("lognormal-shift", 10, 1.5),
    ("lognormal-shift", 100, 2.0),
)


def table3(scale: str = "desk", seed: int = 0, n_jobs: int = 1) -> dict:
    """Power at early-stop probability 0.01 for k-NN scans and the Hotelling baseline."""
    sc = _SCALE[scale]
    cells = [c for c in TABLE3_CELLS if scale == "paper" or c[1] <= 1000]
    rows = []
    for gen, d, delta in cells:
        for method, k in (("knn", 1), ("knn", 3), ("knn", 5), ("hotelling", 1)):
            spec = SimSpec(generator=gen, d=d, delta=delta, reps=sc["reps"], seed=seed, method=method, detector=_det(k))
            row = {"generator": gen, "d": d, "delta": delta, "method": method if method == "hotelling" else f"{k}-NN"}
            try:
                res, cal = power_at_early_stop(spec, 0.01, sc["early_reps"], n_jobs)
            except NotApplicable as e:
                row.update({"power": None, "note": str(e)})
            else:
                row.update({"b": cal.b, **res.as_dict()})
            rows.append(row)
            log.info("table3 %s", row)
    return {"preset": "table3", "scale": scale, "early_stop": 0.01, "rows": rows}


def fig5(scale: str = "desk", seed: int = 0, n_jobs: int = 1) -> dict:
    """Power against k for several dimensions (L = 50)."""
    sc = _SCALE[scale]
    settings = [(10, 1.7), (100, 2.7), (1000, 4.5)] + ([(10000, 8.0)] if scale == "paper" else [])
    ks = (1, 3, 5, 10, 15, 20, 30, 40, 45)
    rows = []
    for d, delta in settings:
        spec = SimSpec(d=d, delta=delta, reps=sc["reps"], seed=seed, detector=_det(1, L=50))
        for r in k_sweep(spec, ks, 0.01, sc["early_reps"], n_jobs):
            rows.append({"d": d, "delta": delta, "L": 50, **r})
            log.info("fig5 %s", rows[-1])
    return {"preset": "fig5", "scale": scale, "rows": rows}


def fig7(scale: str = "desk", seed: int = 0, n_jobs: int = 1) -> dict:
    """Power of the 5-NN scan as the change spreads over more steps."""
    sc = _SCALE[scale]
    lengths = (1, 10, 20, 40) if scale == "desk" else (1, 5, 10, 15, 20, 30, 40, 50)
    spec = SimSpec(generator="gradual-shift", d=1000, delta=3.0, reps=sc["reps"], seed=seed, detector=_det(5))
    cal = calibrate_early_stop(spec, 0.01, sc["early_reps"], n_jobs)
    rows = []
    for G in lengths:
        res = run_experiment(replace(spec, gradual_length=G), cal.b, n_jobs)
        rows.append({"gradual_length": G, "b": cal.b, **res.as_dict()})
        log.info("fig7 %s", rows[-1])
    return {"preset": "fig7", "scale": scale, "rows": rows}


def run_preset(name: str, scale: str = "desk", seed: int = 0, n_jobs: int = 1) -> dict:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; expected one of {SCALES}")
    fn = {"table1": table1, "table2": table2, "table3": table3, "fig1": fig1, "fig5": fig5, "fig7": fig7}[name]
    out = fn(scale=scale, seed=seed, n_jobs=n_jobs)
    out["seed"] = seed
    return out


def rows_to_tsv(rows) -> str:
    """Tab-separated rendering of flat records (union of keys, first-seen order)."""
    keys: list = []
    for r in rows:
        for key in r:
            if key not in keys and not isinstance(r[key], (list, dict)):
                keys.append(key)
    lines = ["\t".join(keys)]
    for r in rows:
        lines.append("\t".join(_fmt(r.get(key)) for key in keys))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "NA" if np.isnan(v) else repr(round(v, 6))
    return str(v)
