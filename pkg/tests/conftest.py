from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from goldilocks.panel import build_panel
from goldilocks.scene import Calendar, DistrictMeta, scene_from_arrays
from goldilocks.synth import SynthConfig, synth_scene, synth_seeds

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_scene(
    flood,
    evi=None,
    rice=None,
    pixel_district=None,
    step_days: int = 8,
    first_year: int = 2002,
    evi_missing=None,
    coastal=None,
    bands=None,
):
    """Scene from (pixels, years, steps) arrays; one district per pixel by default."""
    flood = np.asarray(flood, dtype=float)
    P, Y, S = flood.shape
    evi = np.full_like(flood, 0.5) if evi is None else np.asarray(evi, dtype=float)
    rice = np.ones((P, Y), dtype=bool) if rice is None else np.asarray(rice, dtype=bool)
    pixel_district = list(pixel_district) if pixel_district is not None else [f"D{i + 1}" for i in range(P)]
    ids = list(dict.fromkeys(pixel_district))
    coastal = coastal or {}
    districts = [DistrictMeta(d, d, bool(coastal.get(d, False))) for d in ids]
    static = pd.DataFrame(
        {
            "pixel_id": [f"P{i + 1}" for i in range(P)],
            "district_id": pixel_district,
            "x": np.arange(P, dtype=float),
            "y": np.zeros(P),
            "elevation": np.linspace(1, 10, P),
            "slope": np.linspace(0, 1, P),
        }
    )
    cal = Calendar(first_year, Y, S, step_days)
    return scene_from_arrays(cal, districts, static, flood, evi, evi_missing, rice, bands)


@pytest.fixture
def scene_factory():
    return make_scene


def _bundle(cfg: SynthConfig) -> SimpleNamespace:
    scene, truth = synth_scene(cfg)
    seeds = synth_seeds(cfg, truth)
    return SimpleNamespace(cfg=cfg, scene=scene, truth=truth, seeds=seeds, panel=build_panel(scene, seeds))


@pytest.fixture(scope="session")
def planted():
    return _bundle(SynthConfig(rng_seed=3))


@pytest.fixture(scope="session")
def placebo():
    return _bundle(SynthConfig(rng_seed=3, treatment_effect=0.0))


@pytest.fixture(scope="session")
def small_cfg():
    return SynthConfig(n_districts=6, pixels_per_district=3, n_years=12, rng_seed=11, seed_rollout_year_range=(2008, 2011))


@pytest.fixture(scope="session")
def small(small_cfg):
    return _bundle(small_cfg)
