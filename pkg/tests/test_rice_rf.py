import numpy as np
import pandas as pd
import pytest

from goldilocks.errors import DataError, SchemaError
from goldilocks.rice_rf import (
    FEATURES,
    RAW_FEATURES,
    RfConfig,
    RfModel,
    add_components,
    build_features,
    confusion,
    evaluate,
    fit_classifier,
    fit_pca2,
    loocv_by_region,
    majority_vote,
    pca2,
    predict_scene,
    raw_features,
    train_rf,
)
from goldilocks.synth import synth_labels

from conftest import make_scene

FAST = RfConfig(n_trees=25, rng_seed=1)


def _band_scene(evi, bands):
    evi = np.asarray(evi, float)
    return make_scene(np.zeros_like(evi), evi=evi, bands=np.asarray(bands, float))


def _separable(n=200, seed=0, margin=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    # push the classes apart so a gap separates them
    X += np.where(y[:, None] == 1, margin, -margin)
    return X, y


def _raw_table(rng, n, districts, shift=1.5, years=(2018, 2019, 2020)):
    """Raw feature rows where rice has higher EVI and band-2 values."""
    label = rng.random(n) < 0.5
    base = rng.normal(size=(n, len(RAW_FEATURES)))
    base[:, [1, 2, 3, 4]] += shift * label[:, None]
    frame = pd.DataFrame(base, columns=RAW_FEATURES)
    frame.insert(0, "pixel_id", [f"P{i}" for i in range(n)])
    frame.insert(1, "year", rng.choice(years, size=n))
    frame.insert(2, "district_id", rng.choice(districts, size=n))
    frame["label"] = np.where(label, "rice", "nonrice")
    return frame


def build_features_from_raw(raw):
    pca = fit_pca2(raw[["band1_med", "band2_med"]].to_numpy(float))
    return add_components(raw, pca)


# ---------------------------------------------------------------- features


def test_constant_evi_quantiles():
    bands = np.ones((1, 1, 6, 2))
    raw = raw_features(_band_scene(np.full((1, 1, 6), 0.5), bands), pd.DataFrame({"pixel_id": ["P1"]}), year=2002)
    assert raw[["evi_med", "evi_q05", "evi_q95"]].iloc[0].tolist() == [0.5, 0.5, 0.5]


def test_evi_median_of_ten_steps():
    evi = np.linspace(0.1, 1.0, 10).reshape(1, 1, 10)
    raw = raw_features(_band_scene(evi, np.ones((1, 1, 10, 2))), pd.DataFrame({"pixel_id": ["P1"]}), year=2002)
    assert raw["evi_med"].iloc[0] == pytest.approx(0.55)
    assert raw["evi_q05"].iloc[0] == pytest.approx(np.quantile(evi, 0.05))


def test_missing_steps_ignored_and_all_missing_raises():
    evi = np.array([[[0.2, np.nan, 0.4, 0.6]], [[np.nan] * 4]])
    miss = np.isnan(evi)
    scene = make_scene(np.zeros_like(evi), evi=evi, evi_missing=miss, bands=np.ones((2, 1, 4, 2)))
    raw = raw_features(scene, pd.DataFrame({"pixel_id": ["P1"]}), year=2002)
    assert raw["evi_med"].iloc[0] == pytest.approx(0.4)
    with pytest.raises(DataError, match="P2"):
        raw_features(scene, pd.DataFrame({"pixel_id": ["P2"]}), year=2002)


def test_points_are_validated():
    scene = _band_scene(np.full((1, 1, 4), 0.5), np.ones((1, 1, 4, 2)))
    with pytest.raises(DataError):
        raw_features(scene, pd.DataFrame({"pixel_id": ["P9"]}), year=2002)
    with pytest.raises(DataError):
        raw_features(scene, pd.DataFrame({"pixel_id": ["P1"]}), year=1990)
    with pytest.raises(SchemaError):
        raw_features(scene, pd.DataFrame({"pixel_id": ["P1"]}))
    with pytest.raises(DataError):
        raw_features(scene, pd.DataFrame({"pixel_id": ["P1"], "label": ["maize"]}), year=2002)


def test_band1_only_variance_aligns_pc1():
    P = 5
    bands = np.zeros((P, 1, 4, 2))
    bands[:, :, :, 0] = np.arange(P, dtype=float)[:, None, None]
    bands[:, :, :, 1] = 0.3
    scene = _band_scene(np.full((P, 1, 4), 0.5), bands)
    rows = build_features(scene, 2002, pd.DataFrame({"pixel_id": [f"P{i + 1}" for i in range(P)]}))
    np.testing.assert_allclose(rows["pc2"], 0.0, atol=1e-12)
    np.testing.assert_allclose(rows["pc1"], np.arange(P) - 2.0)
    assert list(rows.columns[3:10]) == list(FEATURES)


# ---------------------------------------------------------------- PCA


def test_pca_on_diagonal_line():
    t = np.linspace(-1, 1, 9)
    comps, scores = pca2(np.column_stack([t, t]))
    np.testing.assert_allclose(comps[0], np.array([1, 1]) / np.sqrt(2))
    np.testing.assert_allclose(scores[:, 1], 0, atol=1e-12)


def test_pca_equal_eigenvalues_uses_axis_order():
    X = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    comps, _ = pca2(X)
    np.testing.assert_array_equal(comps, np.eye(2))


def test_pca_zero_covariance_warns():
    with pytest.warns(RuntimeWarning):
        comps, scores = pca2(np.ones((4, 2)))
    np.testing.assert_array_equal(comps, np.eye(2))
    np.testing.assert_array_equal(scores, 0)


def test_pca_scores_uncorrelated_and_match_eigh():
    X = np.random.default_rng(3).normal(size=(5, 2))
    comps, scores = pca2(X)
    C = np.cov(scores, rowvar=False)
    assert abs(C[0, 1]) < 1e-10
    vals, vecs = np.linalg.eigh(np.cov(X, rowvar=False))
    np.testing.assert_allclose(np.abs(comps[0]), np.abs(vecs[:, 1]), atol=1e-12)
    assert C[0, 0] >= C[1, 1]
    for k in range(2):
        assert comps[k][np.argmax(np.abs(comps[k]))] > 0


def test_pca_needs_two_rows():
    with pytest.raises(DataError):
        fit_pca2(np.ones((1, 2)))


# ---------------------------------------------------------------- forest


def test_separable_training_accuracy():
    X, y = _separable()
    model = train_rf(X, RfConfig(n_trees=50, rng_seed=0), labels=y)
    assert (model.predict(X) == y).mean() == 1.0


def test_training_is_deterministic():
    X, y = _separable()
    a = train_rf(X, FAST, labels=y)
    b = train_rf(X, FAST, labels=y)
    probe = np.random.default_rng(9).normal(size=(50, 2)) * 2
    np.testing.assert_array_equal(a.vote_share(probe), b.vote_share(probe))


def test_threads_do_not_change_forest():
    X, y = _separable()
    a = train_rf(X, FAST, labels=y)
    b = train_rf(X, RfConfig(n_trees=25, rng_seed=1, threads=3), labels=y)
    assert a.to_dict() == b.to_dict()


def test_noise_labels_oob_near_half():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 3))
    y = rng.integers(0, 2, size=500)
    model = train_rf(X, RfConfig(n_trees=100, rng_seed=2), labels=y)
    assert abs(model.oob_accuracy - 0.5) <= 0.1


def test_single_class_and_tiny_inputs_raise():
    X, _ = _separable(20)
    with pytest.raises(DataError):
        train_rf(X, FAST, labels=np.ones(20, dtype=int))
    with pytest.raises(DataError):
        train_rf(X[:6], FAST, labels=[0, 1, 0, 1, 0, 1])
    with pytest.raises(ValueError):
        RfConfig(n_trees=0)


def test_min_leaf_respected():
    X, y = _separable(120)
    model = train_rf(X, RfConfig(n_trees=5, min_leaf=10, bootstrap=False, rng_seed=0), labels=y)
    for tree in model.trees:
        counts = np.bincount(tree.leaf_of(X), minlength=len(tree.feature))
        assert counts[counts > 0].min() >= 10


def test_row_permutation_invariance():
    raw = _raw_table(np.random.default_rng(5), 150, ["A", "B"])
    rows = build_features_from_raw(raw)
    a = train_rf(rows, FAST)
    b = train_rf(rows.sample(frac=1.0, random_state=3), FAST)
    probe = build_features_from_raw(_raw_table(np.random.default_rng(6), 60, ["C"]))
    np.testing.assert_array_equal(a.vote_share(probe), b.vote_share(probe))


def test_constant_shift_invariance():
    X, y = _separable(150, seed=2)
    probe = np.random.default_rng(7).normal(size=(80, 2)) * 1.5
    a = train_rf(X, FAST, labels=y)
    shift = np.array([0.0, 8.0])
    b = train_rf(X + shift, FAST, labels=y)
    np.testing.assert_array_equal(a.predict(probe), b.predict(probe + shift))
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.feature, tb.feature)


def test_model_json_roundtrip(tmp_path):
    X, y = _separable()
    model = train_rf(X, FAST, labels=y)
    back = RfModel.load(model.save(tmp_path / "m.json"))
    probe = np.random.default_rng(1).normal(size=(40, 2))
    np.testing.assert_array_equal(back.vote_share(probe), model.vote_share(probe))
    assert back.to_dict() == model.to_dict()
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(SchemaError):
        RfModel.load(tmp_path / "bad.json")


def test_feature_schema_checked():
    X, y = _separable()
    model = train_rf(X, FAST, labels=y)
    with pytest.raises(SchemaError):
        model.predict(np.zeros((3, 5)))


# ---------------------------------------------------------------- voting


class _Fixed:
    """Stand-in model returning fixed predictions."""

    def __init__(self, pred, features=("a",)):
        self.pred = np.asarray(pred, bool)
        self.features = features

    def predict(self, rows):
        return self.pred


def test_majority_vote_rules():
    rows = np.zeros((2, 1))
    r, n = [True, True], [False, False]
    assert majority_vote([_Fixed(r), _Fixed(r), _Fixed(n)], rows).all()
    assert not majority_vote([_Fixed(r), _Fixed(n)], rows).any()
    assert majority_vote([_Fixed([True, False])], rows).tolist() == [True, False]
    assert not majority_vote([_Fixed(r), _Fixed(r), _Fixed(n), _Fixed(n)], rows).any()


def test_majority_vote_schema_and_empty():
    with pytest.raises(SchemaError):
        majority_vote([_Fixed([True]), _Fixed([True], features=("b",))], np.zeros((1, 1)))
    with pytest.raises(ValueError):
        majority_vote([], np.zeros((1, 1)))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_majority_of_copies_equals_model(k):
    X, y = _separable(80, seed=5)
    model = train_rf(X, RfConfig(n_trees=15, rng_seed=3), labels=y)
    probe = np.random.default_rng(2).normal(size=(60, 2))
    np.testing.assert_array_equal(majority_vote([model] * k, probe), model.predict(probe))


# ---------------------------------------------------------------- evaluation


def test_confusion_counts():
    c = confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert c == {"tp": 2, "fp": 1, "tn": 1, "fn": 1}


def test_loocv_separable_districts():
    raw = _raw_table(np.random.default_rng(8), 300, ["A", "B", "C"], shift=4.0)
    report = loocv_by_region(raw, FAST)
    assert len(report.folds) == 3
    assert (report.folds["accuracy"] >= 0.95).all()
    f = report.folds
    assert (f[["tp", "fp", "tn", "fn"]].sum(axis=1) == f["n"]).all()


def test_loocv_identical_districts_agree():
    raw = _raw_table(np.random.default_rng(9), 1000, ["A", "B"], shift=1.0)
    acc = loocv_by_region(raw, FAST).folds["accuracy"]
    assert abs(acc.iloc[0] - acc.iloc[1]) <= 0.1


def test_loocv_needs_two_districts():
    with pytest.raises(DataError):
        loocv_by_region(_raw_table(np.random.default_rng(1), 50, ["A"]), FAST)


def test_evaluate_report_frame():
    raw = _raw_table(np.random.default_rng(10), 240, ["A", "B"], shift=4.0)
    report = evaluate(raw, FAST)
    assert report.test_year == 2020
    frame = report.to_frame()
    assert frame["kind"].tolist() == ["district_fold", "district_fold", "test_year"]
    assert frame["accuracy"].between(0, 1).all()


def test_predict_scene_on_synthetic(small):
    labels = synth_labels(small.scene, small.cfg, per_class=6)
    raw = raw_features(small.scene, labels)
    year = int(small.scene.calendar.years[-1])
    mask = predict_scene([fit_classifier(raw, FAST)], small.scene, year)
    truth = small.scene.rice[:, -1]
    assert (mask["rice"].to_numpy().astype(bool) == truth).mean() >= 0.95
