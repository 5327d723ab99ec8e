"""Gridded time-series scene: data model, CSV/JSON ingestion and validation.

A scene is a set of pixels, each carrying one value per composite step for
every season in the calendar. Files follow a small manifest layout::

    scene.json     {"pixels": "pixels.csv", "districts": "districts.csv",
                    "calendar": {"first_year": ..., "n_years": ...,
                                 "steps_per_season": ..., "step_days": ...}}
    pixels.csv     one row per (pixel, year, step)
    districts.csv  district_id, name, coastal

Steps are numbered from 0 within each season.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError

PIXEL_COLUMNS = (
    "pixel_id",
    "district_id",
    "x",
    "y",
    "elevation",
    "slope",
    "year",
    "step",
    "flood_frac",
    "evi",
    "evi_missing",
)
OPTIONAL_PIXEL_COLUMNS = ("rice", "band1", "band2")
DISTRICT_COLUMNS = ("district_id", "name", "coastal")


@dataclass(frozen=True)
class Calendar:
    first_year: int = 2002
    n_years: int = 20
    steps_per_season: int = 16
    step_days: int = 8

    def __post_init__(self):
        if self.step_days < 1:
            raise DataError(f"step_days must be >= 1, got {self.step_days}")
        if self.n_years < 1 or self.steps_per_season < 1:
            raise DataError("calendar needs at least one year and one step")

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.first_year + self.n_years)

    @property
    def season_days(self) -> int:
        return self.steps_per_season * self.step_days

    @property
    def series_length(self) -> int:
        return self.steps_per_season * self.n_years

    def year_index(self, year: int) -> int:
        idx = int(year) - self.first_year
        if not 0 <= idx < self.n_years:
            raise DataError(f"year {year} outside calendar {self.first_year}..{self.first_year + self.n_years - 1}")
        return idx

    def to_dict(self) -> dict:
        return {
            "first_year": self.first_year,
            "n_years": self.n_years,
            "steps_per_season": self.steps_per_season,
            "step_days": self.step_days,
        }


@dataclass(frozen=True)
class DistrictMeta:
    district_id: str
    name: str = ""
    coastal: bool = False


@dataclass(frozen=True, eq=False)
class PixelSeries:
    """One pixel's static attributes and its flattened (year-major) series.

    ``flood_frac``/``evi``/``evi_missing`` have length ``n_years * steps``;
    ``rice`` has length ``n_years``; ``bands`` (optional) is ``(n_years * steps, 2)``.
    """

    pixel_id: str
    district_id: str
    x: float
    y: float
    elevation: float
    slope: float
    flood_frac: np.ndarray
    evi: np.ndarray
    evi_missing: np.ndarray
    rice: np.ndarray | None = None
    bands: np.ndarray | None = None


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    pixel_id: str | None = None
    year: int | None = None
    step: int | None = None


@dataclass
class ValidationReport:
    errors: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self) -> int:
        return len(self.errors) + len(self.warnings)

    def lines(self) -> list[str]:
        return [f"error {v.code}: {v.message}" for v in self.errors] + [
            f"warning {v.code}: {v.message}" for v in self.warnings
        ]


@dataclass(frozen=True, eq=False)
class Scene:
    pixels: tuple[PixelSeries, ...]
    calendar: Calendar
    districts: tuple[DistrictMeta, ...]

    @property
    def n_pixels(self) -> int:
        return len(self.pixels)

    @cached_property
    def district_ids(self) -> list[str]:
        return [d.district_id for d in self.districts]

    @cached_property
    def district_codes(self) -> np.ndarray:
        """Index of each pixel's district within ``districts``."""
        lookup = {d: i for i, d in enumerate(self.district_ids)}
        return np.array([lookup[p.district_id] for p in self.pixels], dtype=np.int64)

    def _stack(self, name: str) -> np.ndarray:
        cal = self.calendar
        arr = np.stack([getattr(p, name) for p in self.pixels])
        arr = arr.reshape((self.n_pixels, cal.n_years, cal.steps_per_season) + arr.shape[2:])
        arr.flags.writeable = False
        return arr

    @cached_property
    def flood(self) -> np.ndarray:
        """Fractional inundation, shape (pixels, years, steps)."""
        return self._stack("flood_frac")

    @cached_property
    def evi(self) -> np.ndarray:
        """EVI with NaN at missing steps, shape (pixels, years, steps)."""
        arr = np.where(self._stack("evi_missing"), np.nan, self._stack("evi"))
        arr.flags.writeable = False
        return arr

    @cached_property
    def evi_missing(self) -> np.ndarray:
        return self._stack("evi_missing").astype(bool)

    @property
    def has_rice(self) -> bool:
        return all(p.rice is not None for p in self.pixels)

    @cached_property
    def rice(self) -> np.ndarray:
        """Rice mask, shape (pixels, years)."""
        if not self.has_rice:
            raise DataError("scene has no rice mask; run the rice classifier or supply a mask")
        arr = np.stack([np.asarray(p.rice, dtype=bool) for p in self.pixels])
        arr.flags.writeable = False
        return arr

    @property
    def has_bands(self) -> bool:
        return all(p.bands is not None for p in self.pixels)

    @cached_property
    def bands(self) -> np.ndarray:
        """Reflectance bands, shape (pixels, years, steps, 2)."""
        if not self.has_bands:
            raise DataError("scene carries no band1/band2 reflectance columns")
        return self._stack("bands")

    @cached_property
    def static(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "pixel_id": [p.pixel_id for p in self.pixels],
                "district_id": [p.district_id for p in self.pixels],
                "x": [p.x for p in self.pixels],
                "y": [p.y for p in self.pixels],
                "elevation": [p.elevation for p in self.pixels],
                "slope": [p.slope for p in self.pixels],
            }
        )

    @cached_property
    def pixel_index(self) -> dict[str, int]:
        return {p.pixel_id: i for i, p in enumerate(self.pixels)}

    def with_rice(self, mask: np.ndarray) -> Scene:
        """Return a copy whose rice mask is ``mask`` (pixels, years)."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_pixels, self.calendar.n_years):
            raise DataError(f"rice mask shape {mask.shape} does not match scene")
        pixels = tuple(replace(p, rice=mask[i].copy()) for i, p in enumerate(self.pixels))
        return Scene(pixels, self.calendar, self.districts)


def scene_from_arrays(
    calendar: Calendar,
    districts: Sequence[DistrictMeta],
    static: pd.DataFrame,
    flood: np.ndarray,
    evi: np.ndarray,
    evi_missing: np.ndarray | None = None,
    rice: np.ndarray | None = None,
    bands: np.ndarray | None = None,
) -> Scene:
    """Build a scene from stacked (pixels, years, steps) arrays."""
    n = len(static)
    length = calendar.series_length
    flood = np.asarray(flood, dtype=float).reshape(n, length)
    evi = np.asarray(evi, dtype=float).reshape(n, length)
    if evi_missing is None:
        evi_missing = np.isnan(evi)
    evi_missing = np.asarray(evi_missing, dtype=bool).reshape(n, length)
    evi = np.where(evi_missing, np.nan, evi)
    if bands is not None:
        bands = np.asarray(bands, dtype=float).reshape(n, length, 2)
    pixels = []
    cols = static[["pixel_id", "district_id", "x", "y", "elevation", "slope"]].itertuples(index=False)
    for i, (pid, did, x, y, elev, slope) in enumerate(cols):
        pixels.append(
            PixelSeries(
                pixel_id=str(pid),
                district_id=str(did),
                x=float(x),
                y=float(y),
                elevation=float(elev),
                slope=float(slope),
                flood_frac=flood[i],
                evi=evi[i],
                evi_missing=evi_missing[i],
                rice=None if rice is None else np.asarray(rice[i], dtype=bool),
                bands=None if bands is None else bands[i],
            )
        )
    return Scene(tuple(pixels), calendar, tuple(districts))


# --------------------------------------------------------------------------
# validation


def validate_scene(scene: Scene) -> ValidationReport:
    """Check scene invariants; never raises."""
    report = ValidationReport()
    cal = scene.calendar
    length = cal.series_length
    known = set()
    for d in scene.districts:
        if d.district_id in known:
            report.errors.append(Violation("duplicate_district", f"district_id {d.district_id!r} repeated"))
        known.add(d.district_id)

    for p in scene.pixels:
        if p.district_id not in known:
            report.errors.append(
                Violation("unknown_district", f"pixel {p.pixel_id}: district_id {p.district_id!r} not in districts", p.pixel_id)
            )
        lens = {"flood_frac": len(p.flood_frac), "evi": len(p.evi), "evi_missing": len(p.evi_missing)}
        bad = {k: v for k, v in lens.items() if v != length}
        if bad:
            report.errors.append(
                Violation("series_length", f"pixel {p.pixel_id}: series lengths {bad} != {length}", p.pixel_id)
            )
            continue
        if p.rice is not None and len(p.rice) != cal.n_years:
            report.errors.append(
                Violation("rice_length", f"pixel {p.pixel_id}: rice has {len(p.rice)} years, expected {cal.n_years}", p.pixel_id)
            )
        flood = np.asarray(p.flood_frac, dtype=float)
        bad_flood = np.flatnonzero(~((flood >= 0) & (flood <= 1)))
        for k in bad_flood[:5]:
            y, s = divmod(int(k), cal.steps_per_season)
            report.errors.append(
                Violation(
                    "flood_range",
                    f"pixel {p.pixel_id} year {cal.first_year + y} step {s}: flood_frac {flood[k]!r} outside [0, 1]",
                    p.pixel_id, cal.first_year + y, s,
                )
            )
        miss = np.asarray(p.evi_missing, dtype=bool)
        evi = np.asarray(p.evi, dtype=float)
        bad_evi = np.flatnonzero(~miss & ~((evi >= -1) & (evi <= 1)))
        for k in bad_evi[:5]:
            y, s = divmod(int(k), cal.steps_per_season)
            report.errors.append(
                Violation(
                    "evi_range",
                    f"pixel {p.pixel_id} year {cal.first_year + y} step {s}: evi {evi[k]!r} outside [-1, 1]",
                    p.pixel_id, cal.first_year + y, s,
                )
            )
        seasons = miss.reshape(cal.n_years, cal.steps_per_season).all(axis=1)
        for y in np.flatnonzero(seasons):
            report.warnings.append(
                Violation(
                    "season_missing",
                    f"pixel {p.pixel_id} year {cal.first_year + int(y)}: season fully missing EVI",
                    p.pixel_id, cal.first_year + int(y),
                )
            )
    return report


# --------------------------------------------------------------------------
# file I/O


def _require(df: pd.DataFrame, columns: Iterable[str], path: Path) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")


def read_districts(path: str | Path) -> list[DistrictMeta]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"district file not found: {path}")
    df = pd.read_csv(path, dtype={"district_id": str, "name": str}, keep_default_na=False)
    _require(df, ("district_id",), path)
    names = df["name"] if "name" in df else [""] * len(df)
    coastal = df["coastal"].astype(int) if "coastal" in df else [0] * len(df)
    out = [DistrictMeta(str(d), str(n), bool(c)) for d, n, c in zip(df["district_id"], names, coastal)]
    ids = [d.district_id for d in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate district_id")
    return out


def load_scene(manifest_path: str | Path) -> Scene:
    """Read and validate a scene from its JSON manifest."""
    scene = load_scene_unchecked(manifest_path)
    report = validate_scene(scene)
    if not report.ok:
        raise DataError(report.errors[0].message)
    return scene


def load_scene_unchecked(manifest_path: str | Path) -> Scene:
    """Read a scene, raising only on structural problems (not validation errors)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("pixels", "districts", "calendar"):
        if key not in manifest:
            raise SchemaError(f"{manifest_path}: manifest lacks {key!r}")
    try:
        calendar = Calendar(**{k: int(v) for k, v in manifest["calendar"].items()})
    except TypeError as exc:
        raise SchemaError(f"{manifest_path}: bad calendar block ({exc})") from exc
    base = manifest_path.parent
    districts = read_districts(base / manifest["districts"])
    pixel_path = base / manifest["pixels"]
    if not pixel_path.exists():
        raise DataError(f"pixel file not found: {pixel_path}")
    df = pd.read_csv(pixel_path, dtype={"pixel_id": str, "district_id": str}, float_precision="round_trip")
    _require(df, PIXEL_COLUMNS, pixel_path)

    known = {d.district_id for d in districts}
    unknown = sorted(set(df["district_id"]) - known)
    if unknown:
        raise DataError(f"{pixel_path}: district_id {unknown[0]!r} not listed in districts file")

    flood = df["flood_frac"].to_numpy(dtype=float)
    bad = np.flatnonzero(~((flood >= 0) & (flood <= 1)))
    if bad.size:
        r = df.iloc[bad[0]]
        raise DataError(
            f"{pixel_path}: pixel {r['pixel_id']} year {r['year']} step {r['step']}: "
            f"flood_frac {r['flood_frac']!r} outside [0, 1]"
        )
    miss = df["evi_missing"].fillna(0).astype(int).to_numpy().astype(bool)
    evi = df["evi"].to_numpy(dtype=float)
    bad = np.flatnonzero(~miss & ~((evi >= -1) & (evi <= 1)))
    if bad.size:
        r = df.iloc[bad[0]]
        raise DataError(
            f"{pixel_path}: pixel {r['pixel_id']} year {r['year']} step {r['step']}: evi {r['evi']!r} outside [-1, 1]"
        )

    pixel_order = np.sort(pd.unique(df["pixel_id"]))
    n = len(pixel_order)
    cal = calendar
    if len(df) != n * cal.series_length:
        raise DataError(
            f"{pixel_path}: {len(df)} rows for {n} pixels; expected {cal.series_length} rows per pixel"
        )
    pix_code = pd.Categorical(df["pixel_id"], categories=pixel_order).codes.astype(np.int64)
    year_idx = df["year"].to_numpy(dtype=int) - cal.first_year
    step = df["step"].to_numpy(dtype=int)
    if year_idx.min() < 0 or year_idx.max() >= cal.n_years or step.min() < 0 or step.max() >= cal.steps_per_season:
        raise DataError(f"{pixel_path}: year/step values fall outside the calendar")
    flat = (pix_code * cal.n_years + year_idx) * cal.steps_per_season + step
    order = np.argsort(flat, kind="stable")
    if np.any(np.diff(flat[order]) != 1):
        raise DataError(f"{pixel_path}: duplicate or missing (pixel, year, step) rows")
    sdf = df.iloc[order].reset_index(drop=True)

    firsts = sdf.iloc[:: cal.series_length]
    static = firsts[["pixel_id", "district_id", "x", "y", "elevation", "slope"]].reset_index(drop=True)
    stat_cols = ["district_id", "x", "y", "elevation", "slope"]
    for col in stat_cols:
        vals = sdf[col].to_numpy().reshape(n, cal.series_length)
        if not (vals == vals[:, :1]).all():
            raise DataError(f"{pixel_path}: column {col} varies within a pixel")

    shape = (n, cal.n_years, cal.steps_per_season)
    rice = None
    if "rice" in sdf and sdf["rice"].notna().all():
        r = sdf["rice"].astype(int).to_numpy().reshape(shape)
        if not (r == r[:, :, :1]).all():
            raise DataError(f"{pixel_path}: rice flag varies within a season")
        rice = r[:, :, 0].astype(bool)
    bands = None
    if "band1" in sdf and "band2" in sdf:
        bands = np.stack([sdf["band1"].to_numpy(float), sdf["band2"].to_numpy(float)], axis=-1)

    return scene_from_arrays(
        calendar,
        districts,
        static,
        sdf["flood_frac"].to_numpy(float).reshape(shape),
        sdf["evi"].to_numpy(float).reshape(shape),
        sdf["evi_missing"].fillna(0).astype(int).to_numpy().astype(bool).reshape(shape),
        rice,
        bands,
    )


def scene_to_frame(scene: Scene) -> pd.DataFrame:
    """Long-format pixel table in canonical column order."""
    cal = scene.calendar
    n, Y, S = scene.n_pixels, cal.n_years, cal.steps_per_season
    reps = Y * S
    st = scene.static
    cols = {
        "pixel_id": np.repeat(st["pixel_id"].to_numpy(), reps),
        "district_id": np.repeat(st["district_id"].to_numpy(), reps),
        "x": np.repeat(st["x"].to_numpy(), reps),
        "y": np.repeat(st["y"].to_numpy(), reps),
        "elevation": np.repeat(st["elevation"].to_numpy(), reps),
        "slope": np.repeat(st["slope"].to_numpy(), reps),
        "year": np.tile(np.repeat(cal.years, S), n),
        "step": np.tile(np.arange(S), n * Y),
        "flood_frac": scene.flood.reshape(-1),
        "evi": scene.evi.reshape(-1),
        "evi_missing": scene.evi_missing.reshape(-1).astype(int),
    }
    if scene.has_rice:
        cols["rice"] = np.repeat(scene.rice.reshape(-1).astype(int), S)
    if scene.has_bands:
        b = scene.bands.reshape(-1, 2)
        cols["band1"] = b[:, 0]
        cols["band2"] = b[:, 1]
    return pd.DataFrame(cols)


def write_scene(
    scene: Scene,
    out_dir: str | Path,
    manifest_name: str = "scene.json",
    pixels_name: str = "pixels.csv",
    districts_name: str = "districts.csv",
) -> Path:
    """Write manifest, pixel CSV and district CSV; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_to_frame(scene).to_csv(out_dir / pixels_name, index=False, lineterminator="\n")
    pd.DataFrame(
        {
            "district_id": [d.district_id for d in scene.districts],
            "name": [d.name for d in scene.districts],
            "coastal": [int(d.coastal) for d in scene.districts],
        }
    ).to_csv(out_dir / districts_name, index=False, lineterminator="\n")
    manifest = {"pixels": pixels_name, "districts": districts_name, "calendar": scene.calendar.to_dict()}
    path = out_dir / manifest_name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
