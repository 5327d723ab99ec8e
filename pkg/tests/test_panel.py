import numpy as np
import pandas as pd
import pytest

from goldilocks.errors import DataError, SchemaError
from goldilocks.flood import FloodSpec
from goldilocks.panel import (
    POLICY_YEAR,
    broadcast_seed,
    build_panel,
    build_subunit_panel,
    cumulative_seed,
    filter_coastal,
    read_seeds,
    regroup,
    regroup_series,
)

from conftest import make_scene


def _seeds(rows):
    return pd.DataFrame(rows, columns=["district_id", "year", "variety", "tons_produced", "tons_distributed"])


def test_cumulative_seed_measures():
    seeds = _seeds([("A", 2003, "v1", 1.0, 2.0), ("A", 2005, "v2", 0.5, 0.0), ("A", 2005, "v1", 0.0, 1.5)])
    out = cumulative_seed(seeds, [2002, 2003, 2004, 2005], ["A", "B"])
    a = out[out["district_id"] == "A"]
    np.testing.assert_allclose(a["seed_cum"], [0, 3, 3, 5])
    assert (a["first_seed_year"] == 2003).all()
    b = out[out["district_id"] == "B"]
    assert (b["seed_cum"] == 0).all() and b["first_seed_year"].isna().all()
    produced = cumulative_seed(seeds, [2005], ["A"], measure="produced")
    assert produced["seed_cum"].iloc[0] == 1.5


def test_cumulative_seed_zero_rows_do_not_start_seed():
    seeds = _seeds([("A", 2003, "v1", 0.0, 0.0), ("A", 2006, "v1", 1.0, 0.0)])
    out = cumulative_seed(seeds, [2003, 2006], ["A"])
    assert out["first_seed_year"].iloc[0] == 2006


def test_negative_seed_rejected():
    with pytest.raises(DataError, match="A"):
        cumulative_seed(_seeds([("A", 2003, "v1", -1.0, 0.0)]), [2003], ["A"])
    with pytest.raises(ValueError):
        cumulative_seed(_seeds([]), [2003], ["A"], measure="bogus")


def test_read_seeds_schema(tmp_path):
    p = tmp_path / "s.csv"
    pd.DataFrame({"district_id": ["A"], "year": [2003]}).to_csv(p, index=False)
    with pytest.raises(SchemaError):
        read_seeds(p)


def test_panel_columns_and_event_time(small):
    frame = small.panel.frame
    for col in ["district_id", "year", "evi_cum", "seed_cum", "first_seed_year", "post2010", "event_time",
                "flood_control", "rice_area"]:
        assert col in frame.columns
    np.testing.assert_array_equal(frame["post2010"], frame["year"] >= POLICY_YEAR)
    np.testing.assert_allclose(frame["event_time"], frame["year"] - frame["first_seed_year"])
    assert frame.duplicated(["district_id", "year"]).sum() == 0
    assert small.panel.n_rows == 6 * 12


def test_panel_seed_matches_truth(small):
    frame = small.panel.frame
    for d, y0 in small.truth.rollout_year.items():
        rows = frame[frame["district_id"] == d]
        assert rows["first_seed_year"].iloc[0] == y0
        assert (rows.loc[rows["year"] < y0, "seed_cum"] == 0).all()
        assert (rows.loc[rows["year"] >= y0, "seed_cum"] > 0).all()


def test_flood_values_come_from_table(small):
    spec = FloodSpec.of(65, 15, 20)
    panel = small.panel
    k = panel.flood.spec_index(spec)
    days = panel.flood_values(spec)
    np.testing.assert_array_equal(days, panel.flood.days_in_window[:, :, k].reshape(-1))
    np.testing.assert_array_equal(panel.flood_values(spec, "binary"), (days > 0).astype(float))
    with pytest.raises(ValueError):
        panel.flood_values(spec, "nope")


def test_wide_export_has_two_columns_per_spec(small):
    wide = small.panel.to_frame()
    assert "days_q65_s15_e20" in wide.columns and "in_window_q5_s5_e10" in wide.columns
    assert wide.shape[1] == small.panel.frame.shape[1] + 2 * 1254


def test_missing_rice_rows_are_dropped():
    rice = np.ones((2, 3), dtype=bool)
    rice[1, 2] = False
    scene = make_scene(np.zeros((2, 3, 8)), rice=rice)
    seeds = _seeds([("D1", 2003, "v", 1.0, 0.0)])
    panel = build_panel(scene, seeds)
    assert panel.n_rows == 5
    assert panel.dropped["missing_evi"] == 1


def test_filter_coastal():
    scene = make_scene(np.zeros((3, 2, 8)), coastal={"D2": True})
    panel = build_panel(scene, _seeds([("D1", 2003, "v", 1.0, 0.0)]))
    kept = filter_coastal(panel, scene.districts)
    assert sorted(set(kept.frame["district_id"])) == ["D1", "D3"]
    all_coastal = make_scene(np.zeros((1, 2, 8)), coastal={"D1": True})
    p2 = build_panel(all_coastal, _seeds([("D1", 2003, "v", 1.0, 0.0)]))
    with pytest.warns(RuntimeWarning):
        assert filter_coastal(p2, all_coastal.districts).n_rows == 0


def test_regroup_aggregates_children():
    flood = np.zeros((4, 2, 8))
    scene = make_scene(flood, pixel_district=["U1", "U2", "U3", "U4"], coastal={"U3": True})
    parent = regroup(scene, {"U1": "A", "U2": "A", "U3": "B", "U4": "B"})
    assert parent.district_ids == ["A", "B"]
    assert [d.coastal for d in parent.districts] == [False, True]
    with pytest.raises(DataError, match="U4"):
        regroup(scene, {"U1": "A", "U2": "A", "U3": "B"})


def test_regroup_series_weighted():
    table = pd.DataFrame({"district_id": ["U1", "U2"], "year": [2002, 2002], "v": [1.0, 4.0]})
    out = regroup_series(table, {"U1": "A", "U2": "A"}, ["v"], weights={"U1": 2.0, "U2": 1.0})
    assert out["v"].iloc[0] == pytest.approx(2.0)


def test_subunit_panel_broadcasts_parent_seed():
    scene = make_scene(np.zeros((3, 3, 8)), pixel_district=["U1", "U2", "U3"])
    seeds = _seeds([("A", 2003, "v", 2.0, 0.0), ("B", 2004, "v", 1.0, 0.0)])
    mapping = {"U1": "A", "U2": "A", "U3": "B"}
    panel = build_subunit_panel(scene, seeds, mapping)
    f = panel.frame.set_index(["district_id", "year"])
    assert f.loc[("U2", 2003), "seed_cum"] == 2.0
    assert f.loc[("U3", 2003), "seed_cum"] == 0.0
    assert panel.unit_level == "subunit"
    with pytest.raises(DataError):
        broadcast_seed(cumulative_seed(seeds, [2003], ["A"]), {"U3": "B"})
