"""Synthetic scenes with a planted Goldilocks treatment effect.

Season layout (per district-year, before pixel noise):

* a *pulse zone* at the start of the season holding one triangular flood
  pulse whose width varies from year to year;
* a *spike zone* after it with isolated single-step high-water spikes
  that sit above every pulse value (``decoy_share`` adds higher two-step
  spikes at a district-specific rate, giving high quantile levels flood
  variation unrelated to the effect);
* baseflow everywhere else.

Spikes fill the top of each district's inundation distribution but are
too short to reach any flood window; districts with fewer spikes see longer
pulse runs and come out flood-prone. Only quantile levels that cut
through the pulse give window metrics with variation. The spike count is
chosen so that, at the planted quantile level, the mean pulse run sits just
above the planted window start; the planted district-years are those whose
run at that level falls in the window after the district's rollout year.
Their rice pixels get ``treatment_effect`` added to every EVI step.

All randomness flows from ``rng_seed`` through named substreams keyed by
district or pixel index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import flood as fl
from .errors import DataError
from .rng import substream
from .scene import Calendar, DistrictMeta, Scene, scene_from_arrays


@dataclass(frozen=True)
class SynthConfig:
    n_districts: int = 64
    pixels_per_district: int = 8
    planted_quantile_level: int = 65
    planted_window: fl.FloodWindow = field(default_factory=lambda: fl.FloodWindow(15, 20))
    treatment_effect: float = 0.03
    seed_rollout_year_range: tuple[int, int] = (2010, 2019)
    noise_sd: float = 0.02
    rng_seed: int = 0
    first_year: int = 2002
    n_years: int = 20
    steps_per_season: int = 48
    step_days: int = 4
    rice_share: float = 0.7
    coastal_share: float = 19 / 64
    evi_missing_rate: float = 0.03
    pulse_width_days: float = 40.0
    pulse_width_cv: float = 0.2
    decoy_share: float = 0.0

    def __post_init__(self):
        if self.planted_quantile_level not in fl.QUANTILE_LEVELS:
            raise DataError(f"planted_quantile_level must be one of {fl.QUANTILE_LEVELS}")
        if self.treatment_effect < 0:
            raise DataError("treatment_effect must be >= 0")
        if self.n_districts < 2 or self.pixels_per_district < 1:
            raise DataError("need at least 2 districts and 1 pixel per district")
        lo, hi = self.seed_rollout_year_range
        if lo > hi:
            raise DataError("seed_rollout_year_range is reversed")
        if not 0 <= self.decoy_share <= 1:
            raise DataError("decoy_share must lie in [0, 1]")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be >= 0")

    @property
    def calendar(self) -> Calendar:
        return Calendar(self.first_year, self.n_years, self.steps_per_season, self.step_days)

    @property
    def planted_spec(self) -> fl.FloodSpec:
        return fl.FloodSpec(self.planted_quantile_level, self.planted_window)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    planted_spec: fl.FloodSpec
    rollout_year: dict[str, int]
    run_days: np.ndarray  # (districts, years), at the planted level
    boost: frozenset[tuple[str, int]]
    district_ids: tuple[str, ...]
    years: np.ndarray

    def boost_mask(self) -> np.ndarray:
        out = np.zeros((len(self.district_ids), len(self.years)), dtype=bool)
        pos = {d: i for i, d in enumerate(self.district_ids)}
        for d, y in self.boost:
            out[pos[d], int(y) - int(self.years[0])] = True
        return out


def _bell(S: int) -> np.ndarray:
    t = (np.arange(S) + 0.5) / S
    return np.exp(-0.5 * ((t - 0.55) / 0.2) ** 2)


def _pulse_zone_steps(cfg: SynthConfig) -> int:
    return int(np.ceil(cfg.pulse_width_days * (1.1 + cfg.pulse_width_cv) / cfg.step_days)) + 1


def _spike_count(cfg: SynthConfig) -> int:
    """Spikes per season putting the planted level's mean pulse run near the window start."""
    season = cfg.steps_per_season * cfg.step_days
    target_run = float(cfg.planted_window.start_day)
    frac = (100 - cfg.planted_quantile_level) / 100 - target_run / season
    n = max(0, int(round(frac * cfg.steps_per_season)))
    slots = len(range(_pulse_zone_steps(cfg) + 1, cfg.steps_per_season, 2))
    if n > slots:
        raise DataError(
            f"planted level {cfg.planted_quantile_level} needs {n} spike slots but the season "
            f"has {slots}; raise steps_per_season or the planted level"
        )
    return n


def _district_flood_shapes(cfg: SynthConfig, d: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Pulse (0..1) and spike (0 none, 1 spike, 2 decoy) profiles for one district, (years, steps)."""
    Y, S, sd = cfg.n_years, cfg.steps_per_season, cfg.step_days
    rng = substream(cfg.rng_seed, "district-flood", d)
    pulse_steps = _pulse_zone_steps(cfg)
    n_spikes = _spike_count(cfg)
    t_day = (np.arange(S) + 0.5) * sd
    pulse = np.zeros((Y, S))
    spikes = np.zeros((Y, S))
    # fewer spikes leave more of the upper tail to the pulse: longer runs, flood-prone
    n_spikes = max(0, n_spikes + int(rng.integers(-2, 3)))
    wet = rng.random(Y) < 0.5
    rel = np.where(wet, 1 + cfg.pulse_width_cv, 1 - cfg.pulse_width_cv) + 0.03 * rng.standard_normal(Y)
    widths = cfg.pulse_width_days * np.clip(rel, 0.4, 1.6)
    zone_days = pulse_steps * sd
    for y in range(Y):
        w = widths[y]
        lo, hi = w / 2, max(w / 2, zone_days - w / 2)
        centre = rng.uniform(lo, hi)
        pulse[y] = np.clip(1 - np.abs(t_day - centre) / (w / 2), 0, None)
        # isolated spikes on alternating slots after a one-step gap
        slots = np.arange(pulse_steps + 1, S, 2)
        k = min(len(slots), max(0, n_spikes + int(rng.integers(-1, 2))))
        chosen = np.sort(rng.choice(slots, size=k, replace=False)) if k else np.array([], int)
        spikes[y, chosen] = 1.0
    # decoys: two-step spikes above every ordinary spike, flood variation at high
    # levels unrelated to the effect; the per-district rate spreads around
    # decoy_share so that flood-prone status at those levels splits districts
    decoy_rng = substream(cfg.rng_seed, "decoy", d)
    rate = float(np.clip(cfg.decoy_share + decoy_rng.uniform(-0.5, 0.5), 0.0, 1.0)) if cfg.decoy_share > 0 else 0.0
    for y in np.flatnonzero(decoy_rng.random(Y) < rate):
        cand = [j for j in np.flatnonzero(spikes[y]) if j + 1 < S and not spikes[y, min(j + 2, S - 1)]]
        if cand:
            j = cand[decoy_rng.integers(len(cand))]
            spikes[y, j : j + 2] = 2.0
            # drop another spike so the count of high-water steps is unchanged
            others = np.flatnonzero(spikes[y] == 1)
            if others.size:
                spikes[y, others[decoy_rng.integers(others.size)]] = 0.0
    amplitude = rng.uniform(0.4, 0.55)
    return pulse, spikes, amplitude


def synth_scene(cfg: SynthConfig) -> tuple[Scene, GroundTruth]:
    """Generate a scene and its ground truth; a pure function of ``cfg``."""
    cal = cfg.calendar
    D, P, Y, S = cfg.n_districts, cfg.pixels_per_district, cfg.n_years, cfg.steps_per_season
    years = cal.years
    width = len(str(D))
    district_ids = [f"D{d + 1:0{width}d}" for d in range(D)]

    meta_rng = substream(cfg.rng_seed, "districts")
    coastal = meta_rng.random(D) < cfg.coastal_share
    lo, hi = cfg.seed_rollout_year_range
    rollout = meta_rng.integers(lo, hi + 1, size=D)
    districts = [DistrictMeta(district_ids[d], f"District {d + 1}", bool(coastal[d])) for d in range(D)]

    shapes = [_district_flood_shapes(cfg, d) for d in range(D)]
    year_rng = substream(cfg.rng_seed, "year-effects")
    year_effect = 0.02 * year_rng.standard_normal(Y)

    n = D * P
    pwidth = len(str(n))
    flood = np.empty((n, Y, S))
    rice = np.empty((n, Y), dtype=bool)
    evi_base = np.empty((n, Y, S))
    evi_noise = np.empty((n, Y, S))
    missing = np.empty((n, Y, S), dtype=bool)
    bands = np.empty((n, Y, S, 2))
    static = {"pixel_id": [], "district_id": [], "x": [], "y": [], "elevation": [], "slope": []}
    bell = _bell(S)
    grid = int(np.ceil(np.sqrt(P)))

    for d in range(D):
        pulse, spikes, amp = shapes[d]
        d_rng = substream(cfg.rng_seed, "district-evi", d)
        base_level = d_rng.uniform(0.3, 0.4)
        shock = cfg.noise_sd * d_rng.standard_normal(Y)
        elev0 = d_rng.uniform(2, 40)
        for k in range(P):
            i = d * P + k
            rng = substream(cfg.rng_seed, "pixel", i)
            static["pixel_id"].append(f"P{i + 1:0{pwidth}d}")
            static["district_id"].append(district_ids[d])
            static["x"].append(float((d % 8) * grid + k % grid))
            static["y"].append(float((d // 8) * grid + k // grid))
            static["elevation"].append(round(elev0 + rng.uniform(-1.5, 1.5), 3))
            static["slope"].append(round(rng.uniform(0.0, 2.5), 3))

            baseflow = rng.uniform(0.02, 0.08)
            scale = rng.uniform(0.9, 1.1)
            fl_noise = 0.02 * rng.standard_normal((Y, S))
            spike_level = rng.uniform(0.88, 0.95)
            val = baseflow + scale * amp * pulse + fl_noise
            val = np.where(spikes > 0, spike_level + 0.01 * rng.standard_normal((Y, S)), val)
            val = np.where(spikes > 1, 0.985 + 0.005 * rng.standard_normal((Y, S)), val)
            flood[i] = np.clip(val, 0.0, 1.0)

            is_rice = rng.random() < cfg.rice_share or k == 0
            flips = rng.random(Y) < 0.05
            r = np.where(flips, not is_rice, is_rice)
            if k == 0:
                r[:] = True
            rice[i] = r
            pix_noise = 0.02 * rng.standard_normal((Y, S))
            rice_evi = base_level + year_effect[:, None] + shock[:, None] + 0.3 * bell
            other_evi = 0.18 + 0.5 * year_effect[:, None] + 0.04 * bell
            evi_base[i] = np.where(r[:, None], rice_evi, other_evi)
            evi_noise[i] = pix_noise
            missing[i] = rng.random((Y, S)) < cfg.evi_missing_rate
            b1 = np.where(r[:, None], 0.06, 0.11) + 0.008 * rng.standard_normal((Y, S))
            b2 = np.where(r[:, None], 0.26 + 0.12 * bell, 0.21 + 0.02 * bell) + 0.01 * rng.standard_normal((Y, S))
            bands[i, :, :, 0] = b1
            bands[i, :, :, 1] = b2

    static_df = pd.DataFrame(static)
    pre = scene_from_arrays(cal, districts, static_df, flood, evi_base, np.zeros_like(missing), rice)

    table = fl.build_flood_table(pre, specs=[cfg.planted_spec])
    lvl = fl.QUANTILE_LEVELS.index(cfg.planted_quantile_level)
    run_days = table.run_days[:, :, lvl]
    in_window = table.in_window[:, :, 0] & ~table.missing
    treated = years[None, :] >= rollout[:, None]
    boost_mask = in_window & treated if cfg.treatment_effect > 0 else np.zeros((D, Y), bool)

    codes = np.repeat(np.arange(D), P)
    boost_px = boost_mask[codes] & rice  # (pixels, years)
    evi = evi_base + evi_noise + cfg.treatment_effect * boost_px[:, :, None]
    evi = np.clip(evi, -1.0, 1.0)
    scene = scene_from_arrays(cal, districts, static_df, flood, evi, missing, rice, bands)

    gt = GroundTruth(
        planted_spec=cfg.planted_spec,
        rollout_year={district_ids[d]: int(rollout[d]) for d in range(D)},
        run_days=run_days,
        boost=frozenset((district_ids[d], int(years[y])) for d, y in zip(*np.nonzero(boost_mask))),
        district_ids=tuple(district_ids),
        years=years,
    )
    return scene, gt


def synth_seeds(cfg: SynthConfig, gt: GroundTruth) -> pd.DataFrame:
    """Seed production/distribution records from each district's rollout year."""
    rows = []
    last = cfg.first_year + cfg.n_years - 1
    for d, did in enumerate(gt.district_ids):
        rng = substream(cfg.rng_seed, "seed", d)
        start = gt.rollout_year[did]
        for y in range(start, last + 1):
            growth = 1.0 + 0.6 * (y - start)
            for v, variety in enumerate(("sub1-a", "sub1-b")):
                if v == 1 and y < start + 2:
                    continue
                rows.append(
                    (
                        did, y, variety,
                        round(float(rng.gamma(2.0, 1.0) * growth), 3),
                        round(float(rng.gamma(2.0, 0.8) * growth), 3),
                    )
                )
    return pd.DataFrame(rows, columns=["district_id", "year", "variety", "tons_produced", "tons_distributed"])


def synth_labels(
    scene: Scene,
    cfg: SynthConfig,
    districts: list[str] | None = None,
    per_class: int = 25,
    years: list[int] | None = None,
) -> pd.DataFrame:
    """Balanced rice/non-rice labelled points drawn from the scene's rice mask."""
    districts = districts or list(scene.district_ids[:3])
    years = years or [int(y) for y in scene.calendar.years]
    rng = substream(cfg.rng_seed, "labels")
    codes = scene.district_codes
    rows = []
    for did in districts:
        idx = np.flatnonzero(codes == scene.district_ids.index(did))
        for y in years:
            yi = scene.calendar.year_index(y)
            for label, want in (("rice", True), ("nonrice", False)):
                pool = idx[scene.rice[idx, yi] == want]
                take = min(per_class, len(pool))
                for i in np.sort(rng.choice(pool, size=take, replace=False)) if take else []:
                    rows.append((scene.pixels[i].pixel_id, y, label))
    return pd.DataFrame(rows, columns=["pixel_id", "year", "label"])
