"""Seasonal EVI outcome metrics over rice pixels.

Each district-year is summarised from the district-mean EVI series of its
rice pixels (aggregate first, then summarise). Timing within the season is
deliberately discarded: all four metrics are order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .flood import rice_mean_series
from .scene import Scene

METRICS = ("evi_cum", "evi_max", "evi_mean", "evi_med")


@dataclass(frozen=True)
class EviMetrics:
    cumulative: float
    max: float
    mean: float
    median: float
    coverage: float


def season_evi(series, missing=None, min_coverage: float = 0.5) -> EviMetrics | None:
    """Summarise one season; ``None`` when coverage falls below ``min_coverage``.

    Missing steps are flagged by ``missing`` (or NaN in ``series``) and
    excluded from every metric.
    """
    vals = np.asarray(series, dtype=float)
    miss = np.isnan(vals)
    if missing is not None:
        miss |= np.asarray(missing, dtype=bool)
    present = vals[~miss]
    coverage = present.size / vals.size if vals.size else 0.0
    if present.size == 0 or coverage < min_coverage:
        return None
    return EviMetrics(
        cumulative=float(present.sum()),
        max=float(present.max()),
        mean=float(present.mean()),
        median=float(np.median(present)),
        coverage=coverage,
    )


def build_evi_table(scene: Scene, min_coverage: float = 0.5) -> pd.DataFrame:
    """EVI metrics per (district, year).

    Columns: district_id, year, evi_cum, evi_max, evi_mean, evi_med,
    coverage. District-years with no rice pixels or insufficient coverage
    carry NaN metrics.
    """
    series, no_rice = rice_mean_series(scene, scene.evi)
    D, Y, S = series.shape
    present = ~np.isnan(series)
    coverage = present.sum(axis=2) / S
    ok = ~no_rice & (coverage >= min_coverage) & (coverage > 0)

    masked = np.where(present, series, 0.0)
    cum = masked.sum(axis=2)
    out = {
        "evi_cum": np.where(ok, cum, np.nan),
        "evi_max": np.full((D, Y), np.nan),
        "evi_mean": np.full((D, Y), np.nan),
        "evi_med": np.full((D, Y), np.nan),
    }
    if ok.any():
        sub = series[ok]
        out["evi_max"][ok] = np.nanmax(sub, axis=1)
        out["evi_mean"][ok] = np.nanmean(sub, axis=1)
        out["evi_med"][ok] = np.nanmedian(sub, axis=1)
    frame = pd.DataFrame(
        {
            "district_id": np.repeat(np.array(scene.district_ids, dtype=object), Y),
            "year": np.tile(scene.calendar.years, D),
            **{k: v.reshape(-1) for k, v in out.items()},
            "coverage": np.where(no_rice, 0.0, coverage).reshape(-1),
        }
    )
    return frame
