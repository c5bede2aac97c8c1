"""Deterministic matplotlib line charts (SVG and PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "anisoperc", "svg.fonttype": "none", "path.simplify": False}


def line_chart(path, series: dict, *, xlabel: str = "", ylabel: str = "", title: str = "",
               logx: bool = False, logy: bool = False, hline=None) -> list:
    """Write ``path`` with suffixes ``.svg`` and ``.png``; return the written paths.

    ``series`` maps a label to ``(x, y)`` or ``(x, y, yerr)``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, data in series.items():
            x, y = data[0], data[1]
            err = data[2] if len(data) > 2 else None
            ax.errorbar(x, y, yerr=err, marker="o", ms=3, capsize=2, label=str(label))
        if hline is not None:
            ax.axhline(hline, color="grey", lw=0.8, ls="--")
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if series:
            ax.legend(fontsize=7)
        fig.tight_layout()
        out = []
        svg = path.with_suffix(".svg")
        fig.savefig(svg, format="svg", metadata={"Date": None})
        png = path.with_suffix(".png")
        fig.savefig(png, format="png", dpi=100, metadata={"Software": None})
        plt.close(fig)
        out += [svg, png]
    return out
