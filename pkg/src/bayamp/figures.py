"""Figure rendering for the CLI report path.

Each renderer takes the rows already written to CSV and saves a PNG next
to it.  matplotlib is imported lazily with the Agg backend so the core
library never depends on a display.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    import matplotlib.pyplot as plt
    plt.close(fig)


def render_trace(rows, path, title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    t = [r["t"] for r in rows]
    drew = False
    for key, label in (("mse", "MSE"), ("delta", "update norm"), ("ser", "SER")):
        vals = np.array([r.get(key, np.nan) for r in rows], dtype=float)
        if np.isfinite(vals).sum() > 1 and np.nanmax(vals) > 0:
            ax.semilogy(t, np.maximum(vals, 1e-300), label=label)
            drew = True
    if drew:
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_title(title)
    _save(fig, path)


def render_se(rows, path, title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    t = [r["t"] for r in rows]
    block_keys = sorted(k for k in rows[0] if k.startswith("E_"))
    if block_keys:
        for k in block_keys:
            ax.semilogy(t, [max(r[k], 1e-300) for r in rows], lw=0.9)
    else:
        ax.semilogy(t, [max(r["E"], 1e-300) for r in rows], label="E")
        if "ser" in rows[-1]:
            ser = [max(r.get("ser", np.nan), 1e-300) for r in rows]
            ax.semilogy(t, ser, label="SER")
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    _save(fig, path)


def render_potential(rows, path, maxima=(), title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    E = [r["E"] for r in rows]
    phi = [r["phi"] for r in rows]
    ax.semilogx(E, phi)
    for e_star, p_star in maxima:
        ax.plot([e_star], [p_star], "o", color="crimson")
    ax.set_xlabel("MSE E")
    ax.set_ylabel("free entropy")
    ax.set_title(title)
    _save(fig, path)


def render_phase_diagram(rows, path, x_key, title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[x_key] for r in rows]
    for key, label in (("bp", "BP"), ("opt", "optimal"), ("static", "static")):
        ys = [r.get(key) for r in rows]
        if any(y is not None and np.isfinite(y) for y in ys):
            ax.plot(xs, [np.nan if y is None else y for y in ys], "o-", label=label)
    ax.set_xlabel(x_key)
    ax.set_ylabel("transition")
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def render_codes(rows, path, title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    rates = sorted({r["R"] for r in rows})
    mean_ser = [np.mean([r["ser"] for r in rows if r["R"] == R]) for R in rates]
    block_err = [np.mean([r["ser"] > 0 for r in rows if r["R"] == R]) for R in rates]
    ax.semilogy(rates, np.maximum(mean_ser, 1e-8), "o-", label="mean SER")
    ax.semilogy(rates, np.maximum(block_err, 1e-8), "s--", label="block error rate")
    ax.set_xlabel("rate R")
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def render_hist(values, path, xlabel="", title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=40)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    _save(fig, path)
