import numpy as np
import pandas as pd
import pytest

from goldilocks.errors import DataError, SchemaError
from goldilocks.mc import (
    McConfig,
    TrialConfig,
    base_regression,
    batch_interaction_p,
    mc_misclassify,
    mc_noise,
    read_trial,
    run_mc,
    synth_trial,
    validate_trial,
    _design,
)


@pytest.fixture(scope="module")
def trial():
    return synth_trial(TrialConfig(rng_seed=0))


def test_calibrated_moments(trial):
    big = synth_trial(TrialConfig(n=20000, rng_seed=1))
    assert big["flood_duration"].mean() == pytest.approx(6.03, abs=0.15)
    assert big["flood_duration"].std() == pytest.approx(4.99, abs=0.15)
    assert trial["adopted"].mean() == pytest.approx(0.42, abs=0.005)
    assert list(trial.columns) == ["unit_id", "adopted", "flood_duration", "yield"]


def test_base_regression_positive_interaction():
    res = base_regression(synth_trial(TrialConfig(n=800, rng_seed=3)))
    assert res.key == "adopted_x_flood"
    assert res.beta > 0 and res.beta_p < 0.05
    assert res.df == 800 - 4


def test_base_regression_size_under_null():
    cfg = TrialConfig(interaction=0.0)
    rejections = [
        base_regression(synth_trial(TrialConfig(**{**cfg.__dict__, "rng_seed": s}))).beta_p < 0.05
        for s in range(1000)
    ]
    assert 0.03 <= np.mean(rejections) <= 0.07


def test_all_adopters_rejected(trial):
    with pytest.raises(DataError):
        base_regression(trial.assign(adopted=1))


def test_trial_validation(tmp_path, trial):
    with pytest.raises(SchemaError):
        validate_trial(trial.drop(columns="yield"))
    with pytest.raises(DataError):
        validate_trial(trial.assign(flood_duration=-1.0))
    with pytest.raises(DataError):
        validate_trial(trial.assign(adopted=2))
    path = tmp_path / "t.csv"
    trial.to_csv(path, index=False)
    pd.testing.assert_frame_equal(read_trial(path), validate_trial(trial))
    with pytest.raises(DataError):
        read_trial(tmp_path / "missing.csv")


def test_batch_p_matches_single_regression(trial):
    res = base_regression(trial)
    X = _design(trial["adopted"], trial["flood_duration"])[None]
    p = batch_interaction_p(X, trial["yield"].to_numpy(float)[None])
    assert p[0] == pytest.approx(res.beta_p, rel=1e-10, abs=1e-300)


def test_full_flip_reverses_sign_and_keeps_t(trial):
    a = base_regression(trial)
    b = base_regression(trial.assign(adopted=1 - trial["adopted"]))
    assert b.beta == pytest.approx(-a.beta, rel=1e-9)
    assert abs(b.beta_t) == pytest.approx(abs(a.beta_t), rel=1e-9)
    res = mc_misclassify(trial, McConfig("adoption", grid=(0, 100), reps=3))
    np.testing.assert_allclose(res.pvalues[1], a.beta_p, rtol=1e-8)


def test_level_zero_reproduces_base(trial):
    base = base_regression(trial).beta_p
    for target in ("flood", "yield", "adoption"):
        res = run_mc(trial, McConfig(target, grid=(0, 5), reps=20))
        np.testing.assert_allclose(res.pvalues[0], base, rtol=1e-8)
        assert res.share[0] == 1.0


def test_noise_curve_declines(trial):
    res = mc_noise(trial, McConfig("flood", reps=200))
    assert res.share[0] == 1.0
    assert res.share[-1] < res.share[0]
    assert np.all(np.diff(res.share) <= 0.05)


def test_misclassification_trend(trial):
    res = mc_misclassify(trial, McConfig("adoption", grid=(5, 20), reps=300))
    assert res.share[0] >= res.share[1]


def test_deterministic_and_batch_independent(trial):
    a = mc_noise(trial, McConfig("yield", grid=(0, 3, 10), reps=60, rng_seed=7))
    b = mc_noise(trial, McConfig("yield", grid=(0, 3, 10), reps=60, rng_seed=7, batch=7))
    np.testing.assert_array_equal(a.pvalues, b.pvalues)
    c = mc_noise(trial, McConfig("yield", grid=(0, 3, 10), reps=60, rng_seed=8))
    assert not np.array_equal(a.pvalues[1:], c.pvalues[1:])


def test_target_routing(trial):
    with pytest.raises(ValueError):
        mc_noise(trial, McConfig("adoption", reps=2))
    with pytest.raises(ValueError):
        mc_misclassify(trial, McConfig("flood", reps=2))


@pytest.mark.parametrize(
    "kwargs",
    [{"target": "rain"}, {"target": "flood", "reps": 0}, {"target": "flood", "alpha": 1.5},
     {"target": "flood", "grid": (3, 1)}, {"target": "flood", "grid": (-1, 2)}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        McConfig(**kwargs)


def test_default_grids():
    assert McConfig("adoption").levels.tolist() == list(range(51))
    assert McConfig("flood").levels.tolist() == list(range(21))


def test_outputs(tmp_path, trial):
    res = mc_noise(trial, McConfig("flood", grid=(0, 10), reps=40, bins=10))
    frame = res.to_frame()
    assert list(frame.columns) == ["level", "share_significant", "reps"]
    assert frame["share_significant"].between(0, 1).all()
    hist = res.histogram()
    assert len(hist) == 2 * 10
    assert (hist.groupby("level")["count"].sum() == 40).all()
    a, b = res.write(tmp_path)
    assert a.name == "mc_flood.csv" and b.name == "mc_flood_pvalue_hist.csv"
    first = a.read_bytes()
    res.write(tmp_path)
    assert a.read_bytes() == first
