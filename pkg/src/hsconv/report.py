"""Figures for CLI result tables, rendered off-screen."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _col(table, name):
    cols = table["columns"]
    if name not in cols:
        return None
    i = cols.index(name)
    out = []
    for row in table["rows"]:
        v = row[i]
        out.append(v if isinstance(v, (int, float)) else math.nan)
    return np.array(out, dtype=float)


def render(table: dict, path: str, title: str = "") -> str:
    """Plot value against the table's abscissa and save a PNG to ``path``."""
    cols = table["columns"]
    x_name = next((c for c in ("w_norm", "scale", "tau") if c in cols), None)
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=100)
    if x_name is None or "value" not in cols:
        ax.text(0.5, 0.5, "no plottable columns", ha="center", va="center")
        ax.set_axis_off()
    else:
        x = _col(table, x_name)
        y = _col(table, "value")
        err = _col(table, "std_error")
        taus = _col(table, "tau") if x_name != "tau" else None
        groups = np.unique(taus) if taus is not None else [None]
        for g in groups:
            sel = np.ones(len(x), bool) if g is None else taus == g
            label = "value" if g is None or len(groups) == 1 else f"tau={g:g}"
            if err is not None and np.any(err[sel] > 0):
                ax.errorbar(x[sel], y[sel], yerr=err[sel], fmt="o-", ms=3, capsize=2, label=label)
            else:
                ax.plot(x[sel], y[sel], "o-", ms=3, label=label)
        for extra, style in (("closed_form", "k--"), ("upper_bound", "r:"), ("bound", "r:")):
            z = _col(table, extra)
            if z is not None and np.any(np.isfinite(z)):
                order = np.argsort(x)
                ax.plot(x[order], z[order], style, label=extra.replace("_", " "))
        pos = np.isfinite(y) & (y > 0) & (x > 0)
        if np.all(x[np.isfinite(x)] > 0):
            ax.set_xscale("log")
        if np.any(pos) and np.all(y[np.isfinite(y)] > 0):
            ax.set_yscale("log")
        ax.set_xlabel(x_name.replace("_", " "))
        ax.set_ylabel("value")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path
