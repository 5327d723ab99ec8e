"""Flood-window metrics: quantile thresholds, consecutive runs and windows.

A *flood spec* pairs a quantile level (which inundation value counts as
flooded) with a window of days after submergence onset. For each district
and season the longest consecutive flooded run is intersected with the
window; both a dummy (``in_window``) and a day count (``days_in_window``)
are produced for every spec.

Quantiles use linear interpolation between order statistics (numpy's
default), the same convention as the EVI summaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .scene import Scene

QUANTILE_LEVELS: tuple[int, ...] = tuple(range(5, 100, 5))
WINDOW_START_RANGE = (5, 15)
WINDOW_END_RANGE = (10, 20)
WINDOW_LENGTH_RANGE = (5, 15)


@dataclass(frozen=True, order=True)
class FloodWindow:
    start_day: int
    end_day: int

    def __post_init__(self):
        s, e = self.start_day, self.end_day
        ok = (
            WINDOW_START_RANGE[0] <= s <= WINDOW_START_RANGE[1]
            and WINDOW_END_RANGE[0] <= e <= WINDOW_END_RANGE[1]
            and WINDOW_LENGTH_RANGE[0] <= e - s <= WINDOW_LENGTH_RANGE[1]
        )
        if not ok:
            raise DataError(f"invalid flood window ({s}, {e})")

    @property
    def length(self) -> int:
        return self.end_day - self.start_day


@dataclass(frozen=True, order=True)
class FloodSpec:
    quantile_level: int
    window: FloodWindow

    def __post_init__(self):
        if self.quantile_level not in QUANTILE_LEVELS:
            raise DataError(f"quantile level {self.quantile_level} not in {QUANTILE_LEVELS}")

    @property
    def label(self) -> str:
        return f"q{self.quantile_level}_s{self.window.start_day}_e{self.window.end_day}"

    @classmethod
    def of(cls, level: int, start: int, end: int) -> FloodSpec:
        return cls(int(level), FloodWindow(int(start), int(end)))


def enumerate_windows() -> list[FloodWindow]:
    """All admissible windows, ordered by start day then end day."""
    out = []
    for s in range(WINDOW_START_RANGE[0], WINDOW_START_RANGE[1] + 1):
        for e in range(WINDOW_END_RANGE[0], WINDOW_END_RANGE[1] + 1):
            if WINDOW_LENGTH_RANGE[0] <= e - s <= WINDOW_LENGTH_RANGE[1]:
                out.append(FloodWindow(s, e))
    return out


def enumerate_specs() -> list[FloodSpec]:
    """Candidate spec space: every quantile level crossed with every window."""
    windows = enumerate_windows()
    return [FloodSpec(q, w) for q in QUANTILE_LEVELS for w in windows]


def quantile_thresholds(series, levels: Sequence[int] = QUANTILE_LEVELS) -> np.ndarray:
    """Threshold below which ``level`` percent of ``series`` lies, per level.

    NaNs are ignored.
    """
    arr = np.asarray(series, dtype=float).ravel()
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        raise DataError("cannot compute flood quantiles of an empty series")
    return np.quantile(arr, np.asarray(levels, dtype=float) / 100.0)


def binarize(series, threshold) -> np.ndarray:
    """A step is flooded when its inundation is strictly above the threshold."""
    return np.asarray(series, dtype=float) > threshold


def max_consecutive_run(binary, step_days: int = 1) -> int:
    """Longest run of consecutive flooded steps, in days."""
    best = cur = 0
    for flag in np.asarray(binary, dtype=bool):
        cur = cur + 1 if flag else 0
        best = max(best, cur)
    return best * int(step_days)


def max_runs(flags: np.ndarray) -> np.ndarray:
    """Vectorised longest-run length in steps along the last axis."""
    flags = np.asarray(flags, dtype=bool)
    cur = np.zeros(flags.shape[:-1], dtype=np.int64)
    best = np.zeros_like(cur)
    for k in range(flags.shape[-1]):
        cur = (cur + 1) * flags[..., k]
        np.maximum(best, cur, out=best)
    return best


def window_metrics(run_days: int, window: FloodWindow) -> tuple[bool, int]:
    """Intersect a flood duration with a window measured from onset.

    Floods that never reach the window start contribute nothing; floods
    outlasting the window are clipped at its end.
    """
    if run_days < 0:
        raise DataError("run_days must be non-negative")
    if run_days < window.start_day:
        return False, 0
    days = min(run_days, window.end_day) - window.start_day + 1
    return days > 0, days


def window_days(run_days: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Broadcast form of :func:`window_metrics` returning days in window."""
    run_days = np.asarray(run_days)
    reached = run_days >= starts
    return np.where(reached, np.minimum(run_days, ends) - starts + 1, 0)


# --------------------------------------------------------------------------
# district aggregation


@dataclass(frozen=True, eq=False)
class DistrictFloodSeries:
    district_id: str
    year: int
    frac: np.ndarray | None

    @property
    def missing(self) -> bool:
        return self.frac is None


def rice_mean_series(scene: Scene, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step mean of ``values`` over each district's rice pixels.

    Returns ``(series, missing)`` with shapes (districts, years, steps) and
    (districts, years); NaN entries of ``values`` are skipped.
    """
    rice = scene.rice
    codes = scene.district_codes
    n_d = len(scene.districts)
    Y, S = scene.calendar.n_years, scene.calendar.steps_per_season
    weight = np.repeat(rice[:, :, None], S, axis=2) & ~np.isnan(values)
    vals = np.where(weight, values, 0.0)
    tot = np.zeros((n_d, Y, S))
    cnt = np.zeros((n_d, Y, S))
    np.add.at(tot, codes, vals)
    np.add.at(cnt, codes, weight)
    with np.errstate(invalid="ignore", divide="ignore"):
        series = tot / cnt
    n_rice = np.zeros((n_d, Y))
    np.add.at(n_rice, codes, rice)
    return series, n_rice == 0


def district_series_array(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Rice-masked district flood series, (districts, years, steps), and missing flags."""
    series, missing = rice_mean_series(scene, scene.flood)
    series[missing] = np.nan
    return series, missing


def district_flood_series(scene: Scene, year: int) -> list[DistrictFloodSeries]:
    yi = scene.calendar.year_index(year)
    series, missing = district_series_array(scene)
    return [
        DistrictFloodSeries(d, int(year), None if missing[i, yi] else series[i, yi].copy())
        for i, d in enumerate(scene.district_ids)
    ]


def flood_control_share(scene: Scene, level: int = 50) -> np.ndarray:
    """Share of a district's rice area flooded over the season.

    A pixel-step counts as flooded when it exceeds the ``level`` quantile of
    that pixel's own multi-year series; the share averages over steps and
    rice pixels. Shape (districts, years), NaN where a district-year has no
    rice pixels.
    """
    flood = scene.flood
    thr = np.quantile(flood.reshape(scene.n_pixels, -1), level / 100.0, axis=1)
    share = (flood > thr[:, None, None]).mean(axis=2)
    rice = scene.rice
    codes = scene.district_codes
    n_d = len(scene.districts)
    num = np.zeros((n_d, scene.calendar.n_years))
    den = np.zeros_like(num)
    np.add.at(num, codes, np.where(rice, share, 0.0))
    np.add.at(den, codes, rice)
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


# --------------------------------------------------------------------------
# metric table


@dataclass(frozen=True, eq=False)
class FloodMetricTable:
    """Flood metrics for every (district, year, spec).

    Arrays are indexed (district, year, spec) following ``district_ids``,
    ``years`` and ``specs``. District-years without rice pixels are flagged
    in ``missing`` and carry zeros.
    """

    district_ids: tuple[str, ...]
    years: np.ndarray
    specs: tuple[FloodSpec, ...]
    step_days: int
    thresholds: np.ndarray  # (districts, levels)
    run_days: np.ndarray  # (districts, years, levels)
    in_window: np.ndarray  # (districts, years, specs) bool
    days_in_window: np.ndarray  # (districts, years, specs) int
    missing: np.ndarray  # (districts, years) bool
    empty_spec: np.ndarray  # (specs,) bool

    @cached_property
    def _spec_pos(self) -> dict[FloodSpec, int]:
        return {s: i for i, s in enumerate(self.specs)}

    def spec_index(self, spec: FloodSpec) -> int:
        try:
            return self._spec_pos[spec]
        except KeyError:
            raise DataError(f"spec {spec.label} not in flood table") from None

    def level_index(self, level: int) -> int:
        return QUANTILE_LEVELS.index(int(level))

    @property
    def nonempty_specs(self) -> list[FloodSpec]:
        return [s for s, e in zip(self.specs, self.empty_spec) if not e]

    def to_frame(self) -> pd.DataFrame:
        """Long table, one row per (district, year, spec), in canonical order."""
        D, Y, K = self.in_window.shape
        lvl = np.array([s.quantile_level for s in self.specs])
        st = np.array([s.window.start_day for s in self.specs])
        en = np.array([s.window.end_day for s in self.specs])
        lvl_idx = np.array([QUANTILE_LEVELS.index(s.quantile_level) for s in self.specs])
        run = self.run_days[:, :, lvl_idx]
        keep = ~np.repeat(self.missing[:, :, None], K, axis=2)
        frame = pd.DataFrame(
            {
                "district_id": np.repeat(np.array(self.district_ids, dtype=object), Y * K),
                "year": np.tile(np.repeat(self.years, K), D),
                "quantile_level": np.tile(lvl, D * Y),
                "start_day": np.tile(st, D * Y),
                "end_day": np.tile(en, D * Y),
                "run_days": run.reshape(-1),
                "in_window": self.in_window.reshape(-1).astype(int),
                "days_in_window": self.days_in_window.reshape(-1),
                "empty_spec": np.tile(self.empty_spec.astype(int), D * Y),
            }
        )
        return frame[keep.reshape(-1)].reset_index(drop=True)


def build_flood_table(scene: Scene, specs: Sequence[FloodSpec] | None = None) -> FloodMetricTable:
    """Compute the full flood metric table for a scene with rice masks.

    Thresholds come from each district's own multi-year rice-masked series.
    A spec is empty when ``in_window`` takes a single value over all
    non-missing district-years.
    """
    specs = tuple(enumerate_specs() if specs is None else specs)
    step_days = scene.calendar.step_days
    series, missing = district_series_array(scene)
    D, Y, S = series.shape
    levels = np.asarray(QUANTILE_LEVELS, dtype=float)
    thresholds = np.full((D, len(levels)), np.nan)
    for d in range(D):
        vals = series[d][~missing[d]]
        if vals.size:
            thresholds[d] = np.quantile(vals.ravel(), levels / 100.0)
    with np.errstate(invalid="ignore"):
        flags = series[:, :, :, None] > thresholds[:, None, None, :]  # (D, Y, S, L)
    runs = max_runs(np.moveaxis(flags, 2, -1)) * step_days  # (D, Y, L)
    runs[missing] = 0

    lvl_idx = np.array([QUANTILE_LEVELS.index(s.quantile_level) for s in specs])
    starts = np.array([s.window.start_day for s in specs])
    ends = np.array([s.window.end_day for s in specs])
    days = window_days(runs[:, :, lvl_idx], starts, ends)
    days[missing] = 0
    inw = days > 0

    valid = inw[~missing]
    if valid.shape[0] == 0:
        empty = np.ones(len(specs), dtype=bool)
    else:
        empty = valid.all(axis=0) | ~valid.any(axis=0)

    return FloodMetricTable(
        district_ids=tuple(scene.district_ids),
        years=scene.calendar.years.copy(),
        specs=specs,
        step_days=step_days,
        thresholds=thresholds,
        run_days=runs,
        in_window=inw,
        days_in_window=days,
        missing=missing,
        empty_spec=empty,
    )


def prone_rule(days, groups) -> pd.Series:
    """Flood-prone flag per group from unit-year values of days in window.

    A group is flood-prone when the median of its values strictly exceeds
    the median over all values; ties are not flood-prone.
    """
    days = pd.Series(np.asarray(days, dtype=float))
    global_median = days.median()
    return days.groupby(np.asarray(groups), sort=False).median() > global_median


def flood_prone(table: FloodMetricTable, spec: FloodSpec) -> pd.Series:
    """Flood-prone flag per district for one spec (see :func:`prone_rule`)."""
    k = table.spec_index(spec)
    if table.empty_spec[k]:
        raise DataError(f"spec {spec.label} is empty; flood-prone status undefined")
    ok = ~table.missing
    ids = np.repeat(np.array(table.district_ids, dtype=object)[:, None], len(table.years), axis=1)
    flags = prone_rule(table.days_in_window[:, :, k][ok], ids[ok])
    flags = flags.reindex(list(table.district_ids), fill_value=False)
    flags.index.name = "district_id"
    return flags.rename("flood_prone").astype(bool)
