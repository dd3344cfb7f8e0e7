"""Matplotlib figures for scan traces and simulation results.

Figures are written with the Agg backend and without timestamp metadata so
repeated runs produce identical files.
"""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_zmax(records, events, path, title: str | None = None) -> None:
    """Scan maximum over time, the threshold line and vertical valid-event markers.

    ``records`` are objects with ``n``, ``zmax`` and ``b``; ``events`` are
    detection events (only ``status == "valid"`` ones are drawn).
    """
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ns = [r.n for r in records]
    ax.plot(ns, [r.zmax for r in records], lw=0.8, color="k", label="Zmax")
    ax.plot(ns, [r.b for r in records], lw=1.0, color="tab:red", label="threshold")
    for ev in events:
        if ev.status == "valid":
            ax.axvline(ev.n, color="tab:blue", lw=0.8, ls="--")
    ax.set_xlabel("n")
    ax.set_ylabel("Zmax")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    _save(fig, path)


def _lines(ax, rows, x, y, group):
    series = defaultdict(list)
    for r in rows:
        if r.get(y) is not None:
            series[group(r)].append((r[x], r[y]))
    for name in sorted(series):
        pts = sorted(series[name])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3, label=name)
    ax.legend(fontsize=7)


def plot_preset(result: dict, path) -> None:
    """One summary figure per preset."""
    name, rows = result["preset"], result["rows"]
    fig, ax = plt.subplots(figsize=(6, 4))
    if name in ("table1", "fig1"):
        _lines(ax, rows, "delta", "edd", lambda r: f"{r['rule']} k={r['k']}")
        ax.set_xlabel("delta")
        ax.set_ylabel("expected detection delay")
    elif name == "table2":
        for key, mk in (("asymptotic", "s"), ("corrected", "o"), ("monte_carlo", "^")):
            pts = [(i, r[key]) for i, r in enumerate(rows) if key in r]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], mk, ms=4, label=key)
        ax.set_xlabel("cell")
        ax.set_ylabel("threshold b")
        ax.legend(fontsize=7)
    elif name == "table3":
        _lines(ax, [dict(r, cell=i // 4) for i, r in enumerate(rows)], "cell", "power", lambda r: r["method"])
        ax.set_xlabel("scenario")
        ax.set_ylabel("power")
    elif name == "fig5":
        _lines(ax, rows, "k", "power", lambda r: f"d={r['d']}")
        ax.set_xlabel("k")
        ax.set_ylabel("power")
    elif name == "fig7":
        _lines(ax, rows, "gradual_length", "power", lambda r: "5-NN")
        ax.set_xlabel("gradual change length")
        ax.set_ylabel("power")
    ax.set_title(f"{name} ({result.get('scale', '')})")
    _save(fig, path)
