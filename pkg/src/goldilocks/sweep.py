"""Specification sweeps over the flood-metric space.

Every candidate flood spec (quantile level x window) with variation in the
panel gets one regression; the rest are counted as skipped. Results are
ordered by coefficient for the specification chart.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from . import econ
from .errors import DataError, EstimationError
from .flood import FloodSpec, enumerate_specs
from .panel import Panel

CLASSES = ("neg_sig", "insig", "pos_sig")
CLASS_COLORS = {"pos_sig": "#1f77b4", "neg_sig": "#d62728", "insig": "#333333"}
CHART_COLUMNS = ["rank", "beta", "ci_lo", "ci_hi", "p", "class", "quantile_level", "start_day", "end_day"]


def classify_one(beta: float, p: float, alpha: float) -> str:
    if np.isfinite(beta) and np.isfinite(p) and p < alpha:
        if beta > 0:
            return "pos_sig"
        if beta < 0:
            return "neg_sig"
    return "insig"


def classify(betas, pvalues, alpha: float = 0.05) -> tuple[list[str], dict[str, int]]:
    """Class label per entry (strict ``p < alpha``) and counts per class."""
    labels = [classify_one(float(b), float(p), alpha) for b, p in zip(betas, pvalues)]
    counts = {c: labels.count(c) for c in CLASSES}
    return labels, counts


@dataclass(frozen=True)
class SpecEntry:
    spec: econ.RegSpec
    beta: float
    ci_lo: float
    ci_hi: float
    p: float
    cls: str
    error: str | None = None

    @property
    def flood_spec(self) -> FloodSpec:
        return self.spec.flood_spec


def _sort_key(e: SpecEntry):
    s = e.flood_spec
    b = e.beta if np.isfinite(e.beta) else np.inf
    return (b, s.quantile_level, s.window.start_day, s.window.end_day)


@dataclass
class SpecResults:
    entries: list[SpecEntry]
    alpha: float
    estimator: str
    outcome: str
    flood_form: str
    n_skipped_empty: int
    n_candidates: int = field(default=len(enumerate_specs()))

    def __post_init__(self):
        self.entries = sorted(self.entries, key=_sort_key)

    @property
    def counts(self) -> dict[str, int]:
        return classify([e.beta for e in self.entries], [e.p for e in self.entries], self.alpha)[1]

    @property
    def failures(self) -> list[SpecEntry]:
        return [e for e in self.entries if e.error is not None]

    def share(self, cls: str) -> float:
        return self.counts[cls] / len(self.entries) if self.entries else np.nan

    def to_frame(self) -> pd.DataFrame:
        """Chart table: one row per entry, ranked by ascending coefficient."""
        rows = [
            (r, e.beta, e.ci_lo, e.ci_hi, e.p, e.cls,
             e.flood_spec.quantile_level, e.flood_spec.window.start_day, e.flood_spec.window.end_day)
            for r, e in enumerate(self.entries)
        ]
        return pd.DataFrame(rows, columns=CHART_COLUMNS)

    def summary(self) -> dict:
        return {
            "estimator": self.estimator,
            "outcome": self.outcome,
            "flood_form": self.flood_form,
            "alpha": self.alpha,
            "n_candidates": self.n_candidates,
            "n_estimated": len(self.entries),
            "n_skipped_empty": self.n_skipped_empty,
            "n_failed": len(self.failures),
            **self.counts,
        }


def _fit_factory(panel: Panel, estimator: str, outcome: str, flood_form: str, cluster: str | None):
    df = panel.frame
    if outcome not in df.columns:
        raise DataError(f"panel has no outcome column {outcome!r}")
    ok = df[outcome].notna().to_numpy()
    sub = df[ok]
    unit = panel.unit
    clus = sub[cluster or unit]
    if estimator == "did":
        kern = econ.DidKernel(sub[outcome], sub["post2010"], sub[unit], sub["year"], clus)
        return lambda spec: kern.fit(panel.flood_prone_rows(spec)[ok])
    if estimator == "twfe":
        controls = ["rice_area"] if panel.unit_level == "district" and "rice_area" in df.columns else []
        kern = econ.TwfeKernel(
            sub[outcome], sub["seed_cum"],
            sub[controls].to_numpy(float) if controls else np.empty((len(sub), 0)),
            sub[unit], sub["year"], clus, control_names=controls,
        )
        return lambda spec: kern.fit(panel.flood_values(spec, flood_form)[ok])
    raise ValueError(f"unknown estimator {estimator!r}")


def sweep(
    panel: Panel,
    estimator: str,
    outcome: str,
    alpha: float = 0.05,
    flood_form: str = "days",
    threads: int | None = 1,
    cluster: str | None = None,
) -> SpecResults:
    """One regression per non-empty flood spec of ``panel``'s flood table.

    DID always uses the binary (flood-prone) form. Regression failures are
    recorded as entries with NaN coefficients rather than raised.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if estimator == "did":
        flood_form = "binary"
    specs = list(panel.flood.specs)
    varies = panel.spec_has_variation()
    todo = [s for s, v in zip(specs, varies) if v]
    fit = _fit_factory(panel, estimator, outcome, flood_form, cluster)

    def one(spec: FloodSpec) -> SpecEntry:
        rs = econ.RegSpec(estimator, outcome, spec, flood_form, panel.unit, cluster or panel.unit)
        try:
            res = fit(spec)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            return SpecEntry(rs, np.nan, np.nan, np.nan, np.nan, "insig", str(exc))
        b, se, p = res.beta, res.beta_se, res.beta_p
        c = stats.t.ppf(1 - alpha / 2, res.df)
        return SpecEntry(rs, b, b - c * se, b + c * se, p, classify_one(b, p, alpha))

    n_threads = threads or os.cpu_count() or 1
    if n_threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            entries = list(pool.map(one, todo))
    else:
        entries = [one(s) for s in todo]
    return SpecResults(
        entries=entries, alpha=alpha, estimator=estimator, outcome=outcome,
        flood_form=flood_form, n_skipped_empty=len(specs) - len(todo), n_candidates=len(specs),
    )


def emit_chart(results: SpecResults, out_dir, stem: str | None = None) -> tuple[Path, Path]:
    """Write the chart CSV and the SVG specification chart; returns both paths."""
    from .plotting import spec_chart

    if not results.entries:
        raise DataError("no sweep entries to chart")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from exc
    stem = stem or f"spec_{results.estimator}_{results.outcome}_{results.flood_form}"
    csv_path, svg_path = out / f"{stem}.csv", out / f"{stem}.svg"
    frame = results.to_frame()
    try:
        frame.to_csv(csv_path, index=False, lineterminator="\n", float_format="%.10g")
        spec_chart(frame, svg_path, title=f"{results.estimator.upper()} | {results.outcome} | {results.flood_form}")
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from exc
    return csv_path, svg_path
