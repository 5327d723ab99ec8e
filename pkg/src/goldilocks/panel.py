"""Estimation panel: EVI outcomes, flood metrics, cumulative seed, event time.

Rows are unit-years (districts by default). Flood metrics stay in their
array form on the attached :class:`~goldilocks.flood.FloodMetricTable` and
are pulled per spec; the wide CSV export spells them out as
``in_window_<spec>`` / ``days_<spec>`` columns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .evi import METRICS, build_evi_table
from .flood import (
    FloodMetricTable,
    FloodSpec,
    build_flood_table,
    flood_control_share,
    prone_rule,
)
from .scene import Calendar, DistrictMeta, Scene

SEED_COLUMNS = ("district_id", "year", "variety", "tons_produced", "tons_distributed")
POLICY_YEAR = 2010
SEED_MEASURES = ("sum", "produced", "distributed")


# --------------------------------------------------------------------------
# seed


def read_seeds(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"district_id": str, "variety": str}, float_precision="round_trip")
    missing = [c for c in SEED_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return df


def cumulative_seed(
    seeds: pd.DataFrame,
    years: Sequence[int],
    district_ids: Sequence[str],
    measure: str = "sum",
) -> pd.DataFrame:
    """Running total of STRV seed per district over ``years``.

    Seed available in a year is produced + distributed tons (``measure``
    selects one of them instead). Returns district_id, year, seed_cum,
    first_seed_year (NaN when a district never has seed).
    """
    if measure not in SEED_MEASURES:
        raise ValueError(f"unknown seed measure {measure!r}")
    tons = seeds[["tons_produced", "tons_distributed"]].to_numpy(float)
    if (tons < 0).any():
        bad = seeds.iloc[np.flatnonzero((tons < 0).any(axis=1))[0]]
        raise DataError(f"negative seed tons for district {bad['district_id']} year {bad['year']}")
    amount = {
        "sum": tons.sum(axis=1),
        "produced": tons[:, 0],
        "distributed": tons[:, 1],
    }[measure]
    per = (
        pd.DataFrame({"district_id": seeds["district_id"].astype(str).to_numpy(), "year": seeds["year"].astype(int).to_numpy(), "t": amount})
        .groupby(["district_id", "year"])["t"]
        .sum()
    )
    years = np.asarray(sorted(years), dtype=int)
    rows = []
    for d in district_ids:
        recs = per.loc[d] if d in per.index.get_level_values(0) else pd.Series(dtype=float)
        cum = np.array([recs[recs.index <= y].sum() for y in years], dtype=float)
        positive = recs[recs > 0]
        first = float(positive.index.min()) if len(positive) else np.nan
        rows.append(pd.DataFrame({"district_id": d, "year": years, "seed_cum": cum, "first_seed_year": first}))
    return pd.concat(rows, ignore_index=True)


# --------------------------------------------------------------------------
# panel


@dataclass(frozen=True, eq=False)
class Panel:
    frame: pd.DataFrame
    flood: FloodMetricTable
    unit: str = "district_id"
    unit_level: str = "district"
    dropped: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def _flood_index(self) -> tuple[np.ndarray, np.ndarray]:
        d_pos = {d: i for i, d in enumerate(self.flood.district_ids)}
        di = np.array([d_pos[d] for d in self.frame[self.unit]], dtype=int)
        yi = self.frame["year"].to_numpy(int) - int(self.flood.years[0])
        return di, yi

    def flood_values(self, spec: FloodSpec, form: str = "days") -> np.ndarray:
        """Per-row flood measure for one spec: ``binary`` (in window) or ``days``."""
        k = self.flood.spec_index(spec)
        di, yi = self._flood_index()
        if form == "binary":
            return self.flood.in_window[di, yi, k].astype(float)
        if form == "days":
            return self.flood.days_in_window[di, yi, k].astype(float)
        raise ValueError(f"unknown flood form {form!r}")

    def flood_matrix(self, form: str = "days") -> np.ndarray:
        """(rows, specs) flood measures for every spec of the attached table."""
        di, yi = self._flood_index()
        src = self.flood.in_window if form == "binary" else self.flood.days_in_window
        return src[di, yi, :].astype(float)

    def flood_prone_rows(self, spec: FloodSpec) -> np.ndarray:
        """Per-row flood-prone flag computed on the rows of this panel."""
        days = self.flood_values(spec, "days")
        units = self.frame[self.unit].to_numpy()
        flags = prone_rule(days, units)
        return flags.reindex(units).to_numpy(bool)

    def spec_has_variation(self, form: str = "binary") -> np.ndarray:
        """Per-spec flag: does the in-window dummy vary over this panel's rows."""
        m = self.flood_matrix("binary")
        return (m.max(axis=0) != m.min(axis=0)) if len(m) else np.zeros(m.shape[1], bool)

    def with_frame(self, frame: pd.DataFrame, **kw) -> Panel:
        return replace(self, frame=frame.reset_index(drop=True), **kw)

    def to_frame(self) -> pd.DataFrame:
        """Wide table: base columns plus in-window and days columns per spec."""
        inw = self.flood_matrix("binary").astype(int)
        days = self.flood_matrix("days").astype(int)
        labels = [s.label for s in self.flood.specs]
        cols = {}
        for k, lab in enumerate(labels):
            cols[f"in_window_{lab}"] = inw[:, k]
            cols[f"days_{lab}"] = days[:, k]
        base = self.frame.copy()
        base["post2010"] = base["post2010"].astype(int)
        return pd.concat([base, pd.DataFrame(cols, index=base.index)], axis=1)


def assemble_panel(
    evi_table: pd.DataFrame,
    flood_table: FloodMetricTable,
    seed_cum: pd.DataFrame,
    calendar: Calendar,
    extras: pd.DataFrame | None = None,
    unit_level: str = "district",
) -> Panel:
    """Join outcomes, seed and flood metrics on (district, year).

    ``seed_cum`` is the output of :func:`cumulative_seed`; ``extras`` may add
    per district-year columns such as ``flood_control`` and ``rice_area``.
    Rows with missing EVI or without rice pixels are dropped and counted.
    """
    key = ["district_id", "year"]
    for name, df in (("evi", evi_table), ("seed", seed_cum)) + ((("extras", extras),) if extras is not None else ()):
        if df.duplicated(key).any():
            raise DataError(f"duplicate (district_id, year) keys in {name} table")
    flood_keys = pd.DataFrame(
        {
            "district_id": np.repeat(np.array(flood_table.district_ids, dtype=object), len(flood_table.years)),
            "year": np.tile(flood_table.years, len(flood_table.district_ids)),
            "_flood_missing": flood_table.missing.reshape(-1),
        }
    )
    df = evi_table.merge(seed_cum, on=key, how="inner").merge(flood_keys, on=key, how="inner")
    if extras is not None:
        df = df.merge(extras, on=key, how="left")
    n_joined = len(df)
    evi_missing = df[list(METRICS)].isna().any(axis=1)
    flood_missing = df["_flood_missing"].to_numpy(bool) & ~evi_missing
    df = df[~evi_missing & ~flood_missing].drop(columns="_flood_missing")
    df = df.sort_values(key, kind="stable").reset_index(drop=True)
    df["post2010"] = df["year"] >= POLICY_YEAR
    df["event_time"] = df["year"] - df["first_seed_year"]
    dropped = {"joined": n_joined, "missing_evi": int(evi_missing.sum()), "missing_flood": int(flood_missing.sum())}
    return Panel(frame=df, flood=flood_table, unit="district_id", unit_level=unit_level, dropped=dropped)


def panel_extras(scene: Scene, control_level: int = 50) -> pd.DataFrame:
    """flood_control and rice_area per district-year from a scene."""
    share = flood_control_share(scene, control_level)
    D, Y = share.shape
    area = np.zeros((D, Y))
    np.add.at(area, scene.district_codes, scene.rice)
    return pd.DataFrame(
        {
            "district_id": np.repeat(np.array(scene.district_ids, dtype=object), Y),
            "year": np.tile(scene.calendar.years, D),
            "flood_control": share.reshape(-1),
            "rice_area": area.reshape(-1),
        }
    )


def build_panel(
    scene: Scene,
    seeds: pd.DataFrame,
    seed_measure: str = "sum",
    control_level: int = 50,
    min_coverage: float = 0.5,
    unit_level: str = "district",
) -> Panel:
    """Scene + seed records -> estimation panel."""
    evi = build_evi_table(scene, min_coverage=min_coverage)
    flood = build_flood_table(scene)
    seed = cumulative_seed(seeds, scene.calendar.years, scene.district_ids, measure=seed_measure)
    return assemble_panel(evi, flood, seed, scene.calendar, panel_extras(scene, control_level), unit_level)


def filter_coastal(panel: Panel, districts: Sequence[DistrictMeta]) -> Panel:
    """Drop rows of coastal districts."""
    coastal = {d.district_id for d in districts if d.coastal}
    if not coastal:
        return panel
    keep = ~panel.frame["district_id"].isin(coastal)
    if not keep.any():
        warnings.warn("every district is coastal; panel is empty", RuntimeWarning, stacklevel=2)
    return panel.with_frame(panel.frame[keep])


# --------------------------------------------------------------------------
# regrouping across unit hierarchies


def _check_mapping(units, mapping: Mapping[str, str]) -> None:
    unmapped = sorted(set(map(str, units)) - set(mapping))
    if unmapped:
        raise DataError(f"unit {unmapped[0]!r} has no entry in the unit mapping")


def regroup(scene: Scene, mapping: Mapping[str, str], names: Mapping[str, str] | None = None) -> Scene:
    """Relabel each pixel's unit through ``mapping`` (child unit -> new unit).

    Flood and EVI tables built from the result are aggregated at the new
    units. A parent is coastal when any of its children is.
    """
    _check_mapping(scene.district_ids, mapping)
    coastal: dict[str, bool] = {}
    for d in scene.districts:
        parent = mapping[d.district_id]
        coastal[parent] = coastal.get(parent, False) or d.coastal
    new_ids = list(dict.fromkeys(mapping[d] for d in scene.district_ids))
    metas = tuple(DistrictMeta(u, (names or {}).get(u, u), coastal[u]) for u in new_ids)
    pixels = tuple(replace(p, district_id=mapping[p.district_id]) for p in scene.pixels)
    return Scene(pixels, scene.calendar, metas)


def regroup_series(
    table: pd.DataFrame,
    mapping: Mapping[str, str],
    value_columns: Sequence[str],
    unit: str = "district_id",
    weights: Mapping[str, float] | None = None,
    keys: Sequence[str] = ("year",),
) -> pd.DataFrame:
    """Weighted mean of unit-level values within each parent unit."""
    _check_mapping(table[unit], mapping)
    df = table.copy()
    df["_parent"] = df[unit].astype(str).map(mapping)
    df["_w"] = 1.0 if weights is None else df[unit].astype(str).map(weights).astype(float)
    for c in value_columns:
        df[c] = df[c] * df["_w"]
    g = df.groupby(["_parent", *keys], sort=True)
    out = g[list(value_columns)].sum().div(g["_w"].sum(), axis=0).reset_index()
    return out.rename(columns={"_parent": unit})


def broadcast_seed(seed_cum: pd.DataFrame, mapping: Mapping[str, str], unit: str = "district_id") -> pd.DataFrame:
    """Give each child unit its parent's seed rows (seed stays at its native unit).

    ``mapping`` maps child unit -> parent district.
    """
    parents = set(seed_cum[unit].astype(str))
    missing = sorted({p for p in mapping.values() if p not in parents})
    if missing:
        raise DataError(f"parent unit {missing[0]!r} has no seed rows")
    links = pd.DataFrame({"_child": list(mapping), unit: [mapping[c] for c in mapping]})
    out = links.merge(seed_cum, on=unit, how="left").drop(columns=unit)
    return out.rename(columns={"_child": unit}).sort_values([unit, "year"], kind="stable").reset_index(drop=True)


def build_subunit_panel(scene: Scene, seeds: pd.DataFrame, mapping: Mapping[str, str], seed_measure: str = "sum") -> Panel:
    """Panel whose rows are the scene's units (e.g. upazilas) with parent-district seed.

    ``mapping`` maps each scene unit to its seed district.
    """
    _check_mapping(scene.district_ids, mapping)
    evi = build_evi_table(scene)
    flood = build_flood_table(scene)
    parent_seed = cumulative_seed(seeds, scene.calendar.years, sorted(set(mapping.values())), measure=seed_measure)
    seed = broadcast_seed(parent_seed, {u: mapping[u] for u in scene.district_ids})
    return assemble_panel(evi, flood, seed, scene.calendar, panel_extras(scene), unit_level="subunit")
