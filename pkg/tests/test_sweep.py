import re

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from goldilocks import econ
from goldilocks.errors import DataError
from goldilocks.flood import FloodSpec
from goldilocks.plotting import event_study_plot, mc_curves, mc_ridgeline, spec_chart
from goldilocks.sweep import (
    CHART_COLUMNS,
    CLASS_COLORS,
    SpecEntry,
    SpecResults,
    classify,
    classify_one,
    emit_chart,
    sweep,
)


def test_classify_rules():
    assert classify_one(1.0, 0.01, 0.05) == "pos_sig"
    assert classify_one(-1.0, 0.01, 0.05) == "neg_sig"
    assert classify_one(1.0, 0.05, 0.05) == "insig"
    assert classify_one(0.0, 0.001, 0.05) == "insig"
    assert classify_one(np.nan, np.nan, 0.05) == "insig"


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 1)), max_size=30), st.randoms(use_true_random=False))
def test_class_counts_order_invariant(pairs, rnd):
    b = [x for x, _ in pairs]
    p = [y for _, y in pairs]
    _, counts = classify(b, p, 0.05)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    _, again = classify([x for x, _ in shuffled], [y for _, y in shuffled], 0.05)
    assert counts == again
    assert sum(counts.values()) == len(pairs)


def _entry(beta, p, level=50, start=5, end=10):
    spec = econ.RegSpec("twfe", "evi_cum", FloodSpec.of(level, start, end), "days")
    return SpecEntry(spec, beta, beta - 1, beta + 1, p, classify_one(beta, p, 0.05))


def _fixture_results():
    return SpecResults(
        [_entry(0.5, 0.01, 60, 5, 10), _entry(-0.2, 0.5, 55, 10, 20), _entry(0.5, 0.2, 55, 5, 12)],
        alpha=0.05, estimator="twfe", outcome="evi_cum", flood_form="days", n_skipped_empty=1251,
    )


def test_entries_sorted_with_tie_break():
    res = _fixture_results()
    frame = res.to_frame()
    assert list(frame.columns) == CHART_COLUMNS
    assert frame["beta"].tolist() == [-0.2, 0.5, 0.5]
    assert frame["quantile_level"].tolist() == [55, 55, 60]
    assert frame["rank"].tolist() == [0, 1, 2]
    assert res.counts == {"neg_sig": 0, "insig": 2, "pos_sig": 1}


def test_emit_chart_structure(tmp_path):
    csv, svg = emit_chart(_fixture_results(), tmp_path)
    assert len(pd.read_csv(csv)) == 3
    text = svg.read_text()
    assert 'viewBox="0 0 1200 800"' in text
    assert len(re.findall(r'id="bar-\d+"', text)) == 3
    assert len(re.findall(r'id="markers-\d+"', text)) == 3
    assert CLASS_COLORS["pos_sig"] in text and CLASS_COLORS["insig"] in text
    first = (csv.read_bytes(), svg.read_bytes())
    emit_chart(_fixture_results(), tmp_path)
    assert (csv.read_bytes(), svg.read_bytes()) == first


def test_emit_chart_rejects_empty(tmp_path):
    empty = SpecResults([], 0.05, "twfe", "evi_cum", "days", 1254)
    with pytest.raises(DataError):
        emit_chart(empty, tmp_path)


def test_emit_chart_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DataError):
        emit_chart(_fixture_results(), blocker / "sub")


@pytest.mark.parametrize("estimator", ["twfe", "did"])
def test_sweep_accounting(small, estimator):
    res = sweep(small.panel, estimator, "evi_cum")
    assert len(res.entries) + res.n_skipped_empty == 1254
    assert sum(res.counts.values()) == len(res.entries)
    assert res.summary()["n_candidates"] == 1254
    if estimator == "did":
        assert res.flood_form == "binary"


def test_sweep_threads_match_sequential(small):
    a = sweep(small.panel, "twfe", "evi_max", threads=1).to_frame()
    b = sweep(small.panel, "twfe", "evi_max", threads=4).to_frame()
    pd.testing.assert_frame_equal(a, b)


def test_sweep_entry_matches_direct_fit(small):
    res = sweep(small.panel, "twfe", "evi_cum")
    e = [x for x in res.entries if x.error is None][0]
    direct = econ.run_twfe(small.panel, "evi_cum", e.flood_spec, "days")
    assert e.beta == pytest.approx(direct.beta, rel=1e-12)
    assert e.p == pytest.approx(direct.beta_p, rel=1e-9)


def test_sweep_planted_concentration(planted):
    res = sweep(planted.panel, "twfe", "evi_cum")
    pos = [e for e in res.entries if e.cls == "pos_sig"]
    assert pos
    near = [e for e in pos if abs(e.flood_spec.quantile_level - planted.cfg.planted_quantile_level) <= 5]
    assert len(near) / len(pos) >= 0.8


def test_sweep_bad_inputs(small):
    with pytest.raises(ValueError):
        sweep(small.panel, "twfe", "evi_cum", alpha=0)
    with pytest.raises(DataError):
        sweep(small.panel, "twfe", "ndvi")
    with pytest.raises(ValueError):
        sweep(small.panel, "ols", "evi_cum")


def test_other_plots_are_deterministic(tmp_path, small):
    es = econ.run_event_study(small.panel, "evi_cum")
    p1 = event_study_plot(es.table, tmp_path / "es.svg", title="evi_cum")
    first = p1.read_bytes()
    event_study_plot(es.table, tmp_path / "es.svg", title="evi_cum")
    assert p1.read_bytes() == first

    frames = {t: pd.DataFrame({"level": [0, 1, 2], "share_significant": [1.0, 0.8, 0.5], "reps": 10})
              for t in ("flood", "yield")}
    assert mc_curves(frames, tmp_path / "curves.svg", alpha=0.05).exists()
    hist = pd.DataFrame({"level": [0, 0, 1, 1], "bin_lo": [0, 0.5] * 2, "bin_hi": [0.5, 1] * 2, "count": [9, 1, 6, 4]})
    assert mc_ridgeline(hist, tmp_path / "ridge.svg").exists()
    assert "<svg" in (tmp_path / "ridge.svg").read_text()
