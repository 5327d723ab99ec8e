"""Static figures (SVG) with byte-stable output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

CLASS_COLORS = {"pos_sig": "#1f77b4", "neg_sig": "#d62728", "insig": "#333333"}
MARKER_GREY = "#8c8c8c"
WIDTH_PX, HEIGHT_PX = 1200, 800
_RC = {
    "svg.hashsalt": "goldilocks",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def spec_chart(frame: pd.DataFrame, path, title: str = "") -> Path:
    """Specification chart: coefficients with CIs above, spec marker grid below.

    ``frame`` follows the sweep chart schema (rank, beta, ci_lo, ci_hi, p,
    class, quantile_level, start_day, end_day) and is drawn in rank order.
    Bars carry ids ``bar-<rank>``, marker columns ``markers-<rank>``.
    """
    frame = frame.sort_values("rank")
    levels = list(range(5, 100, 5))
    starts = list(range(5, 16))
    ends = list(range(10, 21))
    rows = [f"q{q}" for q in levels] + [f"start {s}" for s in starts] + [f"end {e}" for e in ends]
    ypos = {r: len(rows) - 1 - i for i, r in enumerate(rows)}

    with plt.rc_context(_RC):
        fig, (top, bot) = plt.subplots(
            2, 1, figsize=(WIDTH_PX / 72, HEIGHT_PX / 72), dpi=72, sharex=True,
            gridspec_kw={"height_ratios": [1.0, 1.3], "hspace": 0.05},
        )
        x = frame["rank"].to_numpy()
        for r, b, lo, hi, cls, q, s, e in frame[
            ["rank", "beta", "ci_lo", "ci_hi", "class", "quantile_level", "start_day", "end_day"]
        ].itertuples(index=False):
            color = CLASS_COLORS.get(cls, CLASS_COLORS["insig"])
            bval = float(b) if np.isfinite(b) else 0.0
            (bar,) = top.bar([r], [bval], width=0.8, color=color)
            bar.set_gid(f"bar-{r}")
            if np.isfinite(lo) and np.isfinite(hi):
                top.vlines(r, lo, hi, colors=color, linewidth=0.6)
            pts = bot.scatter(
                [r, r, r], [ypos[f"q{q}"], ypos[f"start {s}"], ypos[f"end {e}"]],
                marker="D", s=9, color=MARKER_GREY,
            )
            pts.set_gid(f"markers-{r}")
        top.axhline(0.0, color="black", linewidth=0.6)
        top.set_ylabel("coefficient")
        if title:
            top.set_title(title)
        bot.set_yticks([ypos[r] for r in rows])
        bot.set_yticklabels(rows, fontsize=6)
        bot.set_ylim(-1, len(rows))
        for cut in (len(ends) - 0.5, len(ends) + len(starts) - 0.5):
            bot.axhline(cut, color="#cccccc", linewidth=0.5)
        bot.set_xlabel("specification (sorted by coefficient)")
        if len(x):
            bot.set_xlim(x.min() - 1, x.max() + 1)
        return _save(fig, path)


def event_study_plot(table: pd.DataFrame, path, title: str = "") -> Path:
    """Event-time coefficients with confidence intervals."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(WIDTH_PX / 72, HEIGHT_PX / 72 / 1.6), dpi=72)
        ax.axhline(0.0, color="black", linewidth=0.6)
        ax.axvline(-0.5, color="#999999", linewidth=0.6, linestyle="--")
        ax.vlines(table["j"], table["ci_lo"], table["ci_hi"], colors=CLASS_COLORS["pos_sig"])
        ax.plot(table["j"], table["coef"], "o", color=CLASS_COLORS["pos_sig"])
        ax.set_xlabel("years since seed availability")
        ax.set_ylabel("coefficient")
        ax.set_xticks(table["j"])
        if title:
            ax.set_title(title)
        return _save(fig, path)


def mc_curves(frames: dict[str, pd.DataFrame], path, alpha: float = 0.05) -> Path:
    """Share significant against perturbation level, one line per target."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(WIDTH_PX / 72, HEIGHT_PX / 72 / 1.6), dpi=72)
        for name, df in frames.items():
            ax.plot(df["level"], df["share_significant"], marker=".", label=name)
        ax.set_xlabel("perturbation level (%)")
        ax.set_ylabel(f"share with p < {alpha:g}")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        return _save(fig, path)


def mc_ridgeline(hist: pd.DataFrame, path, every: int = 2) -> Path:
    """Stacked p-value histograms per level (ridgeline)."""
    levels = sorted(hist["level"].unique())[::every]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(WIDTH_PX / 72 / 1.6, HEIGHT_PX / 72), dpi=72)
        for i, lvl in enumerate(levels):
            h = hist[hist["level"] == lvl]
            dens = h["count"].to_numpy(float)
            dens = dens / dens.max() if dens.max() > 0 else dens
            edges = np.append(h["bin_lo"].to_numpy(), h["bin_hi"].to_numpy()[-1])
            ax.stairs(i + 0.9 * dens, edges, baseline=i, fill=True, color=CLASS_COLORS["pos_sig"], alpha=0.6)
        ax.set_yticks(range(len(levels)))
        ax.set_yticklabels([f"{lvl:g}" for lvl in levels])
        ax.set_xlabel("p-value")
        ax.set_ylabel("perturbation level (%)")
        return _save(fig, path)
