"""Deterministic SVG figures of a flow trace."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .flow import read_trace_csv  # noqa: E402

PLOT_COLUMNS = ("t", "lambda", "q_up", "q_down", "H_min", "H_max")


class MissingColumns(ValueError):
    def __init__(self, missing: list[str]):
        super().__init__("trace is missing column(s): " + ", ".join(missing))
        self.missing = missing


def _series(rows, name):
    t = np.array([r["t"] for r in rows if r.get(name) is not None])
    y = np.array([r[name] for r in rows if r.get(name) is not None])
    return t, y


def plot_trace(
    trace_csv: str | Path, out_svg: str | Path, truncated: str | None = None
) -> None:
    """Four panels: lambda, Q_up, Q_down and the H_min/H_max envelope against t.

    ``truncated`` (a reason string) adds a vertical marker at the last time.
    Identical inputs give byte-identical SVG.
    """
    rows, header = read_trace_csv(trace_csv)
    missing = [c for c in PLOT_COLUMNS if c not in header]
    if missing:
        raise MissingColumns(missing)

    with plt.rc_context({"svg.hashsalt": "flowspectra", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(4, 1, figsize=(6.4, 9.6), sharex=True)
        panels = [("lambda", r"$\lambda$"), ("q_up", r"$Q_{up}$"), ("q_down", r"$Q_{down}$")]
        for ax, (col, label) in zip(axes, panels):
            t, y = _series(rows, col)
            if len(t):
                ax.plot(t, y, marker=".", lw=1.0, ms=3)
            else:
                ax.text(0.5, 0.5, "not recorded", transform=ax.transAxes, ha="center", va="center")
            ax.set_ylabel(label)
        ax = axes[3]
        for col in ("H_min", "H_max"):
            t, y = _series(rows, col)
            ax.plot(t, y, lw=1.0, label=col)
        ax.set_ylabel("H")
        ax.set_xlabel("t")
        ax.legend(loc="best")
        if truncated and rows:
            t_last = rows[-1]["t"]
            for a in axes:
                a.axvline(t_last, color="red", ls="--", lw=1.0)
            axes[0].set_title(f"truncated at t={t_last:.6g}: {truncated}", fontsize=8, color="red")
        fig.tight_layout()
        fig.savefig(out_svg, format="svg", metadata={"Date": None})
        plt.close(fig)
