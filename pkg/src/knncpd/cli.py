"""Command-line interface: ``knncpd detect|calibrate|twosample|simulate|functionals``.

Options come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags (later sources win).  Every output embeds the
resolved configuration and SHA-256 digests of the input files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .arl import estimate_functionals, solve_threshold
from .core import DistanceSpec, KnnCpdError, Observation, StreamOrderError
from .detect import DetectorConfig, Detector, StepRecord

log = logging.getLogger("knncpd")

SCHEMA = {
    "events": "knncpd.events/1",
    "zmax": "knncpd.zmax/1",
    "calibrate": "knncpd.calibrate/1",
    "functionals": "knncpd.functionals/1",
    "twosample": "knncpd.twosample/1",
    "simulate": "knncpd.simulate/1",
}
EXIT_OK, EXIT_ERROR, EXIT_DETECTED = 0, 1, 2

_DISTANCE_DEFAULTS = {"metric": "euclidean", "side": None, "distances": None, "min_count": None}
_SCAN_DEFAULTS = {"k": 3, "window": 200, "n0": 3, "n1": None}

DEFAULTS = {
    "detect": {
        **_SCAN_DEFAULTS, **_DISTANCE_DEFAULTS,
        "rule": "T3", "threshold": None, "target_arl": None, "history": None, "history_length": None,
        "input": None, "out": None, "emit_zmax": None, "plot": None, "refresh": True, "skew": True,
        "lookback": 5, "spacing": None, "stop_on_detect": False, "tie_break": "smaller-index",
    },
    "calibrate": {
        **_SCAN_DEFAULTS, **_DISTANCE_DEFAULTS,
        "history": None, "target_arl": [10000.0], "stride": 1, "out": None, "tie_break": "smaller-index",
    },
    "functionals": {
        **_SCAN_DEFAULTS, **_DISTANCE_DEFAULTS, "history": None, "stride": 1, "out": None,
    },
    "twosample": {
        **_DISTANCE_DEFAULTS, "k": 3, "first": None, "second": None, "resamples": 0, "seed": 0, "out": None,
    },
    "simulate": {"preset": None, "scale": "desk", "seed": 0, "jobs": 1, "out": None, "tsv": None, "plot": None},
}
REQUIRED = {
    "detect": ("history", "input"),
    "calibrate": ("history",),
    "functionals": ("history",),
    "twosample": ("first", "second"),
    "simulate": ("preset",),
}
PATH_KEYS = ("history", "input", "first", "second", "distances")


class ConfigError(KnnCpdError):
    pass


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    defaulted: tuple = ()

    def __eq__(self, other):
        return isinstance(other, RunConfig) and (self.command, self.options) == (other.command, other.options)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, **self.options}, sort_keys=True, indent=2)

    def __getattr__(self, name):
        opts = self.__dict__.get("options", {})
        if name in opts:
            return opts[name]
        raise AttributeError(name)


# --------------------------------------------------------------------------
# parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _add_scan(p):
    p.add_argument("--k", type=int, help="number of nearest neighbours (default 3)")
    p.add_argument("--window", "-L", type=int, dest="window", help="window length L (default 200)")
    p.add_argument("--n0", type=int, help="minimum offset from the window edge (default 3)")
    p.add_argument("--n1", type=int, help="maximum offset (default L - n0)")


def _add_distance(p):
    p.add_argument("--metric", choices=("euclidean", "normalized-count-l2", "adjacency-frobenius",
                                        "adjacency-frobenius-normalized", "precomputed"))
    p.add_argument("--side", type=int, help="adjacency matrix side length (validates payload size)")
    p.add_argument("--distances", help="CSV of key_i,key_j,distance triples (precomputed metric)")
    p.add_argument("--min-count", type=float, dest="min_count", help="drop rows whose entries sum below this")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="knncpd", description="Streaming k-NN scan change-point detection.",
                 argument_default=argparse.SUPPRESS)
    ap.add_argument("--version", action="version", version=f"knncpd {__version__}")
    ap.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with option values; flags override it")
        p.add_argument("--dump-config", dest="dump_config", help="write the resolved configuration as JSON")
        return p

    p = cmd("detect", "monitor a stream after warming up on change-free history")
    _add_scan(p)
    _add_distance(p)
    p.add_argument("--rule", choices=("T1", "T2", "T3", "t1", "t2", "t3"))
    p.add_argument("--threshold", type=float, help="fixed threshold b")
    p.add_argument("--target-arl", dest="target_arl", type=float, help="solve b for this ARL (default 10000)")
    p.add_argument("--history", help="change-free history file (CSV or JSONL)")
    p.add_argument("--history-length", dest="history_length", type=int, help="use only the last N0 history points")
    p.add_argument("--input", help="stream to monitor (CSV or JSONL)")
    p.add_argument("--out", help="JSONL event log")
    p.add_argument("--emit-zmax", dest="emit_zmax", help="TSV trace of n, zmax, t_hat, b")
    p.add_argument("--plot", help="PNG of the Zmax trace")
    p.add_argument("--refresh", action=argparse.BooleanOptionalAction, help="update functionals on quiet steps")
    p.add_argument("--skew", action=argparse.BooleanOptionalAction, help="skewness-corrected ARL")
    p.add_argument("--lookback", type=int, help="same-event suppression lookback (default 5)")
    p.add_argument("--spacing", type=float, help="minimum gap between valid events (default L/2 - n0)")
    p.add_argument("--stop-on-detect", dest="stop_on_detect", action="store_true",
                   help="exit with status 2 at the first valid detection")

    p = cmd("calibrate", "estimate functionals from history and solve thresholds")
    _add_scan(p)
    _add_distance(p)
    p.add_argument("--history")
    p.add_argument("--target-arl", dest="target_arl", type=float, action="append")
    p.add_argument("--stride", type=int, help="average every stride-th history window (default 1)")
    p.add_argument("--out", help="JSON result file")

    p = cmd("functionals", "print graph functional estimates for a history file")
    _add_scan(p)
    _add_distance(p)
    p.add_argument("--history")
    p.add_argument("--stride", type=int)
    p.add_argument("--out")

    p = cmd("twosample", "two-sample k-NN test between two files")
    _add_distance(p)
    p.add_argument("--k", type=int)
    p.add_argument("--first")
    p.add_argument("--second")
    p.add_argument("--resamples", type=int, help="Monte Carlo permutations for a p-value")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = cmd("simulate", "run a simulation preset")
    p.add_argument("--preset", choices=("table1", "table2", "table3", "fig1", "fig5", "fig7"))
    p.add_argument("--scale", choices=("smoke", "desk", "paper"))
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel workers (results do not depend on this)")
    p.add_argument("--out", help="JSON results")
    p.add_argument("--tsv", help="TSV rows")
    p.add_argument("--plot", help="PNG summary figure")
    return ap


def parse_config(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    ns.pop("log_level", None)
    ns.pop("dump_config", None)
    cfg_path = ns.pop("config", None)
    defaults = DEFAULTS[command]
    file_opts = {}
    if cfg_path:
        try:
            file_opts = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {cfg_path}: {e}") from e
        if not isinstance(file_opts, dict):
            raise ConfigError("config file must hold a JSON object")
        file_cmd = file_opts.pop("command", command)
        if file_cmd != command:
            raise ConfigError(f"config is for command {file_cmd!r}, not {command!r}")
        unknown = sorted(set(file_opts) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    opts = {**defaults, **file_opts, **ns}
    if command == "calibrate" and isinstance(opts.get("target_arl"), (int, float)):
        opts["target_arl"] = [float(opts["target_arl"])]
    defaulted = tuple(sorted(k for k in defaults if k not in file_opts and k not in ns))
    cfg = RunConfig(command, dict(sorted(opts.items())), defaulted)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    o = cfg.options
    for key in REQUIRED[cfg.command]:
        if not o.get(key):
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    if "n0" in o:
        if o["n0"] < 1:
            raise ConfigError("n0 must be positive")
        if o.get("n1") is not None and o["n1"] <= o["n0"]:
            raise ConfigError("n1 must exceed n0")
    if "window" in o and "k" in o and not 0 < o["k"] < o["window"]:
        raise ConfigError("need 0 < k < window")
    if cfg.command == "detect":
        if o["threshold"] is not None and o["target_arl"] is not None:
            raise ConfigError("give --threshold or --target-arl, not both")
        rule = o["rule"].upper()
        if rule != "T3" and o["threshold"] is None:
            raise ConfigError(f"rule {rule} needs --threshold")
    if o.get("metric") == "precomputed" and not o.get("distances"):
        raise ConfigError("metric 'precomputed' needs --distances")
    if o.get("distances") and o.get("metric") != "precomputed":
        raise ConfigError("--distances requires --metric precomputed")


def log_defaults(cfg: RunConfig) -> None:
    for key in cfg.defaulted:
        log.info("default %s = %r", key, cfg.options[key])


# --------------------------------------------------------------------------
# ingestion


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digests(o: dict) -> dict:
    return {k: sha256_file(o[k]) for k in PATH_KEYS if o.get(k)}


def read_distance_table(path) -> dict:
    table = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise KnnCpdError(f"{path}:{lineno}: expected key_i,key_j,distance")
            try:
                d = float(row[2])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise KnnCpdError(f"{path}:{lineno}: distance is not a number") from None
            if d < 0 or not math.isfinite(d):
                raise KnnCpdError(f"{path}:{lineno}: distance must be finite and nonnegative")
            table[(row[0].strip(), row[1].strip())] = d
    return table


def _parse_records(path):
    """Yield ``(lineno, index_or_None, payload)`` from a CSV or JSONL file."""
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise KnnCpdError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
                if not isinstance(rec, dict) or ("vector" in rec) == ("key" in rec):
                    raise KnnCpdError(f"{path}:{lineno}: record needs exactly one of 'vector' or 'key'")
                idx = rec.get("index")
                if idx is not None and (not isinstance(idx, int) or idx < 0):
                    raise KnnCpdError(f"{path}:{lineno}: index must be a nonnegative integer")
                if "key" in rec:
                    if not isinstance(rec["key"], str):
                        raise KnnCpdError(f"{path}:{lineno}: key must be a string")
                    yield lineno, idx, rec["key"]
                else:
                    try:
                        v = np.asarray(rec["vector"], dtype=float)
                    except (TypeError, ValueError):
                        raise KnnCpdError(f"{path}:{lineno}: vector must hold numbers") from None
                    if v.ndim != 1 or v.size == 0:
                        raise KnnCpdError(f"{path}:{lineno}: vector must be a non-empty list")
                    yield lineno, idx, v
    else:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    v = np.array([float(x) for x in row])
                except ValueError:
                    raise KnnCpdError(f"{path}:{lineno}: non-numeric CSV field") from None
                yield lineno, None, v


def read_observations(path, start: int = 0, min_count: float | None = None, dim: int | None = None):
    """Observations with consecutive indices from ``start``.

    Rows whose entries sum below ``min_count`` are dropped first, and the
    survivors are indexed sequentially.  Without filtering, explicit JSONL
    indices must already be consecutive.
    """
    out = []
    for lineno, idx, payload in _parse_records(path):
        if isinstance(payload, np.ndarray):
            if dim is None:
                dim = payload.size
            elif payload.size != dim:
                raise KnnCpdError(f"{path}:{lineno}: expected {dim} values, got {payload.size}")
            if min_count is not None and payload.sum() < min_count:
                continue
        n = start + len(out)
        if idx is not None and min_count is None and idx != n:
            raise StreamOrderError(f"{path}:{lineno}: expected index {n}, got {idx}")
        out.append(Observation(n, payload))
    return out, dim


def distance_spec(o: dict) -> DistanceSpec:
    params = {}
    if o.get("side") is not None:
        params["side"] = int(o["side"])
    if o.get("metric") == "precomputed":
        params["table"] = read_distance_table(o["distances"])
    return DistanceSpec(o.get("metric", "euclidean"), params)


# --------------------------------------------------------------------------
# output helpers


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _clean(v):
    """Replace non-finite floats by None so JSON stays standard."""
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _provenance(cfg: RunConfig, kind: str) -> dict:
    return {"schema": SCHEMA[kind], "config": {"command": cfg.command, **cfg.options},
            "inputs_sha256": input_digests(cfg.options)}


# --------------------------------------------------------------------------
# commands


def _detector_config(o: dict, dist: DistanceSpec) -> DetectorConfig:
    return DetectorConfig(
        rule=o["rule"], k=o["k"], L=o["window"], n0=o["n0"], n1=o["n1"], threshold=o["threshold"],
        target_arl=o["target_arl"], history_length=o["history_length"], functional_refresh=o["refresh"],
        skewness_corrected=o["skew"], lookback=o["lookback"], spacing=o["spacing"], distance=dist,
    )


def cmd_detect(cfg: RunConfig) -> int:
    o = cfg.options
    dist = distance_spec(o)
    det_cfg = _detector_config(o, dist)
    history, dim = read_observations(o["history"], 0, o["min_count"])
    stream, _ = read_observations(o["input"], len(history), o["min_count"], dim)
    det = Detector(det_cfg).warmup(history)
    log.info("warmup: %d history observations, b = %.6f", len(history), det.b)

    header = _provenance(cfg, "events")
    header["resolved"] = det_cfg.as_dict()
    header["initial_threshold"] = det.b
    ev_fh = open(o["out"], "w") if o["out"] else sys.stdout
    z_fh = open(o["emit_zmax"], "w") if o["emit_zmax"] else None
    records: list[StepRecord] = []
    events = []
    code = EXIT_OK
    try:
        ev_fh.write(json.dumps({"header": _clean(header)}, sort_keys=True, default=_jsonable) + "\n")
        if z_fh:
            z_fh.write(f"# schema: {SCHEMA['zmax']}\n")
            z_fh.write("# config: " + json.dumps(_clean(header["config"]), sort_keys=True, default=_jsonable) + "\n")
            z_fh.write("# inputs_sha256: " + json.dumps(header["inputs_sha256"], sort_keys=True) + "\n")
            z_fh.write("n\tzmax\tt_hat\tb\n")
        for rec, ev in det.run(stream):
            records.append(rec)
            if z_fh:
                z_fh.write(f"{rec.n}\t{rec.zmax!r}\t{rec.t_hat}\t{rec.b!r}\n")
            if ev is not None:
                events.append(ev)
                ev_fh.write(json.dumps(ev.as_dict(), sort_keys=True) + "\n")
                if ev.status == "valid" and o["stop_on_detect"]:
                    code = EXIT_DETECTED
                    break
    finally:
        if ev_fh is not sys.stdout:
            ev_fh.close()
        if z_fh:
            z_fh.close()
    if o["plot"]:
        from .plotting import plot_zmax

        plot_zmax(records, events, o["plot"], title=f"{det_cfg.rule} k={det_cfg.k} L={det_cfg.L}")
    n_valid = sum(e.status == "valid" for e in events)
    log.info("%d steps, %d exceedances, %d valid events", len(records), len(events), n_valid)
    return code


def _history_functionals(o: dict):
    dist = distance_spec(o)
    history, _ = read_observations(o["history"], 0, o["min_count"])
    if len(history) < o["window"]:
        raise KnnCpdError(f"history has {len(history)} observations, window needs {o['window']}")
    return estimate_functionals(history, o["window"], o["k"], dist, o["stride"]), len(history)


def cmd_functionals(cfg: RunConfig) -> int:
    f, n = _history_functionals(cfg.options)
    out = _provenance(cfg, "functionals")
    out["history_points"] = n
    out["functionals"] = f.as_dict()
    _dump_json(_clean(out), cfg.options["out"])
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    o = cfg.options
    f, n = _history_functionals(o)
    rows = []
    for target in o["target_arl"]:
        row = {"target_arl": float(target)}
        for skew, key in ((False, "b_asymptotic"), (True, "b_corrected")):
            row[key] = solve_threshold(float(target), o["window"], o["n0"], o["n1"], f, skew)
        rows.append(row)
    out = _provenance(cfg, "calibrate")
    out.update({"history_points": n, "functionals": f.as_dict(), "thresholds": rows})
    _dump_json(_clean(out), o["out"])
    if o["out"]:
        print(f"{'target ARL':>12} {'b (asymp.)':>12} {'b (skew-corr.)':>15}")
        for r in rows:
            print(f"{r['target_arl']:>12.0f} {r['b_asymptotic']:>12.4f} {r['b_corrected']:>15.4f}")
        print(f"p={f.p:.4f} q={f.q:.4f} p_k={f.p_k:.4f} q_k={f.q_k:.4f} windows={f.windows}")
    return EXIT_OK


def cmd_twosample(cfg: RunConfig) -> int:
    from .twosample import LabeledSample, evaluate

    o = cfg.options
    dist = distance_spec(o)
    first, dim = read_observations(o["first"], 0, o["min_count"])
    second, _ = read_observations(o["second"], len(first), o["min_count"], dim)
    a = [x.payload for x in first]
    b = [x.payload for x in second]
    if dim is not None:
        a, b = np.vstack(a), np.vstack(b)
    s = LabeledSample.from_samples(a, b, o["k"], dist)
    res = evaluate(s, o["resamples"], o["seed"])
    out = _provenance(cfg, "twosample")
    out.update({"n1": len(first), "n2": len(second), **res.as_dict()})
    _dump_json(_clean(out), o["out"])
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    from .simlab.presets import rows_to_tsv, run_preset

    o = cfg.options
    res = run_preset(o["preset"], o["scale"], o["seed"], o["jobs"])
    out = _provenance(cfg, "simulate")
    out["config"].pop("jobs", None)
    out["result"] = res
    _dump_json(_clean(out), o["out"])
    if o["tsv"]:
        Path(o["tsv"]).write_text(f"# schema: {SCHEMA['simulate']}\n# preset: {o['preset']} scale: {o['scale']} "
                                  f"seed: {o['seed']}\n" + rows_to_tsv(res["rows"]))
    if o["plot"]:
        from .plotting import plot_preset

        plot_preset(res, o["plot"])
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "calibrate": cmd_calibrate,
    "functionals": cmd_functionals,
    "twosample": cmd_twosample,
    "simulate": cmd_simulate,
}


def run(cfg: RunConfig) -> int:
    return COMMANDS[cfg.command](cfg)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--log-level", default="WARNING")
    known, _ = pre.parse_known_args(argv)
    logging.basicConfig(level=known.log_level.upper(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(argv)
        log_defaults(cfg)
        dump = vars(build_parser().parse_args(argv)).get("dump_config")
        if dump:
            Path(dump).write_text(cfg.to_json() + "\n")
        return run(cfg)
    except KnnCpdError as e:
        print(f"knncpd: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"knncpd: I/O error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
