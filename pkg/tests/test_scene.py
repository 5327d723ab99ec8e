import json

import numpy as np
import pandas as pd
import pytest

from goldilocks.errors import DataError, SchemaError
from goldilocks.scene import (
    Calendar,
    PixelSeries,
    Scene,
    load_scene,
    scene_to_frame,
    validate_scene,
    write_scene,
)

from conftest import make_scene


def test_calendar_properties():
    cal = Calendar(2002, 20, 16, 8)
    assert cal.season_days == 128
    assert cal.series_length == 320
    assert cal.years[0] == 2002 and cal.years[-1] == 2021
    assert cal.year_index(2010) == 8


def _write_fixture(tmp_path, rows, districts=(("D1", "North", 0), ("D2", "South", 1))):
    pd.DataFrame(districts, columns=["district_id", "name", "coastal"]).to_csv(tmp_path / "districts.csv", index=False)
    pd.DataFrame(rows).to_csv(tmp_path / "pixels.csv", index=False)
    manifest = {
        "pixels": "pixels.csv",
        "districts": "districts.csv",
        "calendar": {"first_year": 2002, "n_years": 1, "steps_per_season": 2, "step_days": 8},
    }
    (tmp_path / "scene.json").write_text(json.dumps(manifest))
    return tmp_path / "scene.json"


def _fixture_rows(flood_override=None, district_override=None):
    rows = []
    for i, d in enumerate(["D1", "D1", "D2", "D2"]):
        for step in range(2):
            rows.append(
                {
                    "pixel_id": f"P{i}", "district_id": d, "x": float(i), "y": 0.0,
                    "elevation": 5.0, "slope": 0.1, "year": 2002, "step": step,
                    "flood_frac": 0.25 * step, "evi": 0.4, "evi_missing": 0,
                }
            )
    if flood_override:
        rows[flood_override[0]]["flood_frac"] = flood_override[1]
    if district_override:
        for r in rows:
            if r["pixel_id"] == district_override[0]:
                r["district_id"] = district_override[1]
    return rows


def test_hand_fixture_loads(tmp_path):
    scene = load_scene(_write_fixture(tmp_path, _fixture_rows()))
    assert scene.n_pixels == 4
    assert scene.district_ids == ["D1", "D2"]
    assert scene.flood.shape == (4, 1, 2)
    assert [d.coastal for d in scene.districts] == [False, True]


def test_out_of_range_flood_names_pixel_and_step(tmp_path):
    path = _write_fixture(tmp_path, _fixture_rows(flood_override=(3, 1.2)))
    with pytest.raises(DataError, match=r"P1.*step 1"):
        load_scene(path)


def test_unknown_district_is_rejected(tmp_path):
    path = _write_fixture(tmp_path, _fixture_rows(district_override=("P3", "D9")))
    with pytest.raises(DataError, match="D9"):
        load_scene(path)


def test_missing_column_is_schema_error(tmp_path):
    rows = [{k: v for k, v in r.items() if k != "evi"} for r in _fixture_rows()]
    with pytest.raises(SchemaError, match="evi"):
        load_scene(_write_fixture(tmp_path, rows))


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        load_scene(tmp_path / "nope.json")


def test_roundtrip_preserves_arrays(small, tmp_path):
    path = write_scene(small.scene, tmp_path)
    back = load_scene(path)
    np.testing.assert_array_equal(back.flood, small.scene.flood)
    np.testing.assert_array_equal(back.evi_missing, small.scene.evi_missing)
    np.testing.assert_array_equal(np.nan_to_num(back.evi), np.nan_to_num(small.scene.evi))
    np.testing.assert_array_equal(back.rice, small.scene.rice)
    np.testing.assert_array_equal(back.bands, small.scene.bands)
    assert back.district_ids == small.scene.district_ids


def test_load_is_row_order_independent(small, tmp_path):
    frame = scene_to_frame(small.scene).sample(frac=1.0, random_state=0)
    write_scene(small.scene, tmp_path)
    frame.to_csv(tmp_path / "pixels.csv", index=False)
    back = load_scene(tmp_path / "scene.json")
    np.testing.assert_array_equal(back.flood, small.scene.flood)


def test_valid_scene_has_empty_report(small):
    assert len(validate_scene(small.scene)) == 0


def test_fully_missing_season_warns():
    miss = np.zeros((1, 2, 4), dtype=bool)
    miss[0, 1] = True
    scene = make_scene(np.zeros((1, 2, 4)), evi_missing=miss)
    report = validate_scene(scene)
    assert report.ok
    assert any("missing" in v.message for v in report.warnings)


def test_mismatched_series_length_is_error():
    good = make_scene(np.zeros((1, 2, 4)))
    p = good.pixels[0]
    short = PixelSeries(
        "P2", p.district_id, 0.0, 0.0, 1.0, 0.0,
        np.zeros(7), np.zeros(7), np.zeros(7, dtype=bool), rice=np.ones(2, dtype=bool),
    )
    report = validate_scene(Scene((p, short), good.calendar, good.districts))
    assert not report.ok
    assert any(v.pixel_id == "P2" for v in report.errors)


def test_with_rice_checks_shape():
    scene = make_scene(np.zeros((2, 3, 4)))
    out = scene.with_rice(np.zeros((2, 3), dtype=bool))
    assert not out.rice.any()
    with pytest.raises(DataError):
        scene.with_rice(np.zeros((3, 3), dtype=bool))
