"""Rice/non-rice random forest.

Features per labelled pixel-year: the first two principal components of the
season-median band values, EVI median/5%/95% quantiles over the season, and
static elevation and slope. Trees use Gini impurity with midpoint
thresholds and a minimum leaf size; bootstrap samples are drawn from
per-tree substreams after rows are put in canonical (pixel_id, year) order,
so training is invariant to input row order.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .rng import substream
from .scene import Scene

FEATURES = ("pc1", "pc2", "evi_med", "evi_q05", "evi_q95", "elevation", "slope")
RAW_FEATURES = ("band1_med", "band2_med", "evi_med", "evi_q05", "evi_q95", "elevation", "slope")
LABELS = ("nonrice", "rice")
MODEL_VERSION = 1


# --------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class Pca2:
    mean: np.ndarray
    components: np.ndarray  # rows are components

    def transform(self, rows) -> np.ndarray:
        return (np.asarray(rows, float) - self.mean) @ self.components.T

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Pca2:
        return cls(np.asarray(d["mean"], float), np.asarray(d["components"], float))


def fit_pca2(rows, tol: float = 1e-12) -> Pca2:
    """Two-component PCA of an n x 2 matrix.

    Components are ordered by descending eigenvalue with the largest-
    magnitude entry of each made positive. Equal eigenvalues fall back to
    the axis order; a zero covariance gives identity components (with a
    warning).
    """
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2 or X.shape[0] < 2:
        raise DataError("pca2 needs an n x 2 matrix with n >= 2")
    mean = X.mean(axis=0)
    C = np.cov(X - mean, rowvar=False)
    scale = float(np.abs(C).max())
    if scale <= tol:
        warnings.warn("zero covariance in PCA input; using identity components", RuntimeWarning, stacklevel=2)
        return Pca2(mean, np.eye(2))
    vals, vecs = np.linalg.eigh(C)
    if abs(vals[1] - vals[0]) <= tol * scale:
        return Pca2(mean, np.eye(2))
    comps = vecs[:, ::-1].T.copy()
    for k in range(2):
        j = int(np.argmax(np.abs(comps[k]) - 1e-12 * np.arange(2)))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    return Pca2(mean, comps)


def pca2(rows) -> tuple[np.ndarray, np.ndarray]:
    """(components 2x2, scores n x 2) of the column-centred data."""
    model = fit_pca2(rows)
    return model.components, model.transform(rows)


def _normalise_points(scene: Scene, points: pd.DataFrame, year: int | None) -> pd.DataFrame:
    pts = points.copy()
    if "pixel_id" not in pts.columns:
        raise SchemaError("points need a pixel_id column")
    if year is not None:
        pts["year"] = int(year)
    elif "year" not in pts.columns:
        raise SchemaError("points need a year column when no year is given")
    unknown = sorted(set(pts["pixel_id"]) - set(scene.pixel_index))
    if unknown:
        raise DataError(f"points reference unknown pixels: {unknown[:5]}")
    bad_years = sorted(set(int(y) for y in pts["year"]) - set(int(y) for y in scene.calendar.years))
    if bad_years:
        raise DataError(f"points reference years outside the calendar: {bad_years}")
    if "label" in pts.columns:
        bad = sorted(set(pts["label"]) - set(LABELS))
        if bad:
            raise DataError(f"labels must be rice/nonrice, got {bad}")
    return pts.reset_index(drop=True)


def raw_features(scene: Scene, points: pd.DataFrame, year: int | None = None) -> pd.DataFrame:
    """Per-point band medians, EVI quantiles and static terrain values.

    Quantiles use linear interpolation over the non-missing season steps.
    """
    if not scene.has_bands:
        raise DataError("scene has no band1/band2 values; cannot build rice features")
    pts = _normalise_points(scene, points, year)
    pix = pts["pixel_id"].map(scene.pixel_index).to_numpy(int)
    yi = pts["year"].astype(int).to_numpy() - int(scene.calendar.years[0])
    evi = scene.evi[pix, yi]
    empty = np.isnan(evi).all(axis=1)
    if empty.any():
        first = pts.loc[np.flatnonzero(empty)[0]]
        raise DataError(f"pixel {first['pixel_id']} has no EVI observations in {int(first['year'])}")
    q = np.nanquantile(evi, [0.5, 0.05, 0.95], axis=1)
    bands = np.median(scene.bands[pix, yi], axis=1)
    static = scene.static.set_index("pixel_id")
    out = pd.DataFrame(
        {
            "pixel_id": pts["pixel_id"].to_numpy(),
            "year": pts["year"].astype(int).to_numpy(),
            "district_id": static.loc[pts["pixel_id"], "district_id"].to_numpy(),
            "band1_med": bands[:, 0],
            "band2_med": bands[:, 1],
            "evi_med": q[0],
            "evi_q05": q[1],
            "evi_q95": q[2],
            "elevation": static.loc[pts["pixel_id"], "elevation"].to_numpy(float),
            "slope": static.loc[pts["pixel_id"], "slope"].to_numpy(float),
        }
    )
    if "label" in pts.columns:
        out["label"] = pts["label"].to_numpy()
    return out


def add_components(raw: pd.DataFrame, pca: Pca2) -> pd.DataFrame:
    out = raw.copy()
    scores = pca.transform(raw[["band1_med", "band2_med"]].to_numpy(float))
    out["pc1"], out["pc2"] = scores[:, 0], scores[:, 1]
    return out


def build_features(scene: Scene, year: int | None, points: pd.DataFrame, pca: Pca2 | None = None) -> pd.DataFrame:
    """Feature rows (``FEATURES`` plus ids and optional label) for ``points``.

    Without ``pca`` the components are fitted on these rows.
    """
    raw = raw_features(scene, points, year)
    pca = pca or fit_pca2(raw[["band1_med", "band2_med"]].to_numpy(float))
    cols = ["pixel_id", "year", "district_id", *FEATURES] + (["label"] if "label" in raw.columns else [])
    return add_components(raw, pca)[cols]


# --------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 1000
    min_leaf: int = 5
    features_per_split: int | None = None
    bootstrap: bool = True
    rng_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # share of rice among the leaf's training rows

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def vote(self, X: np.ndarray) -> np.ndarray:
        """Rice vote per row; a leaf tie votes non-rice."""
        return self.value[self.leaf_of(X)] > 0.5

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            np.asarray(d["feature"], int), np.asarray(d["threshold"], float),
            np.asarray(d["left"], int), np.asarray(d["right"], int), np.asarray(d["value"], float),
        )


def _best_split(X: np.ndarray, y: np.ndarray, feats: np.ndarray, min_leaf: int):
    """Best (feature, threshold, impurity) over ``feats``; None if no valid split."""
    n = len(y)
    best = None
    pos = np.arange(1, n)
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        left_pos = np.cumsum(ys)[:-1]
        ok = (xs[1:] > xs[:-1]) & (pos >= min_leaf) & (n - pos >= min_leaf)
        if not ok.any():
            continue
        nl, nr = pos[ok], n - pos[ok]
        pl = left_pos[ok] / nl
        pr = (ys.sum() - left_pos[ok]) / nr
        imp = (nl * 2 * pl * (1 - pl) + nr * 2 * pr * (1 - pr)) / n
        k = int(np.argmin(imp))
        if best is None or imp[k] < best[2] - 1e-15:
            i = int(pos[ok][k])
            best = (int(f), 0.5 * (xs[i - 1] + xs[i]), float(imp[k]))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, min_leaf: int, mtry: int) -> Tree:
    """Grow one Gini tree on (X, y) until leaves are pure or cannot be split."""
    p = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []
    stack = [(np.arange(len(y)), None, False)]
    while stack:
        idx, parent, is_right = stack.pop()
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        if parent is not None:
            (right if is_right else left)[parent] = node
        share = value[node]
        if share in (0.0, 1.0) or len(idx) < 2 * min_leaf:
            continue
        feats = rng.choice(p, size=mtry, replace=False)
        split = _best_split(X[idx], y[idx], feats, min_leaf)
        parent_imp = 2 * share * (1 - share)
        if split is None or split[2] >= parent_imp - 1e-12:
            continue
        f, t, _ = split
        feature[node], threshold[node] = f, t
        go_left = X[idx, f] <= t
        # right child pushed first so the left subtree gets the lower ids
        stack.append((idx[~go_left], node, True))
        stack.append((idx[go_left], node, False))
    return Tree(
        np.asarray(feature, int), np.asarray(threshold, float),
        np.asarray(left, int), np.asarray(right, int), np.asarray(value, float),
    )


@dataclass(eq=False)
class RfModel:
    trees: list[Tree]
    features: tuple[str, ...]
    config: RfConfig
    pca: Pca2 | None = None
    districts: tuple[str, ...] = ()
    years: tuple[int, ...] = ()
    oob_accuracy: float = float("nan")
    meta: dict = field(default_factory=dict)

    def _matrix(self, rows) -> np.ndarray:
        if isinstance(rows, pd.DataFrame):
            if self.pca is not None and "pc1" not in rows.columns:
                rows = add_components(rows, self.pca)
            missing = [f for f in self.features if f not in rows.columns]
            if missing:
                raise SchemaError(f"feature rows lack columns {missing}")
            return rows[list(self.features)].to_numpy(float)
        X = np.asarray(rows, float)
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise SchemaError(f"expected {len(self.features)} feature columns")
        return X

    def vote_share(self, rows) -> np.ndarray:
        X = self._matrix(rows)
        votes = np.zeros(len(X))
        for t in self.trees:
            votes += t.vote(X)
        return votes / len(self.trees)

    def predict(self, rows) -> np.ndarray:
        """Rice (True) when strictly more than half the trees vote rice."""
        return self.vote_share(rows) > 0.5

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg.pop("threads")
        return {
            "format": "goldilocks-rf",
            "version": MODEL_VERSION,
            "features": list(self.features),
            "config": cfg,
            "pca": self.pca.to_dict() if self.pca is not None else None,
            "districts": list(self.districts),
            "years": list(self.years),
            "oob_accuracy": None if math.isnan(self.oob_accuracy) else self.oob_accuracy,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RfModel:
        if d.get("format") != "goldilocks-rf" or d.get("version") != MODEL_VERSION:
            raise SchemaError("not a goldilocks random-forest model (or unsupported version)")
        features = tuple(d["features"])
        trees = [Tree.from_dict(t) for t in d["trees"]]
        for t in trees:
            if (t.feature >= len(features)).any():
                raise SchemaError("tree splits on a feature outside the schema")
        return cls(
            trees=trees, features=features, config=RfConfig(**d["config"]),
            pca=Pca2.from_dict(d["pca"]) if d.get("pca") else None,
            districts=tuple(d.get("districts", ())), years=tuple(d.get("years", ())),
            oob_accuracy=float("nan") if d.get("oob_accuracy") is None else float(d["oob_accuracy"]),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> RfModel:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"cannot read model {path}: {exc}") from exc


def _labels_to_int(labels) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.dtype == bool:
        return lab.astype(int)
    if lab.dtype.kind in "iu":
        return (lab > 0).astype(int)
    return (lab == "rice").astype(int)


def _canonical(rows: pd.DataFrame) -> pd.DataFrame:
    keys = [c for c in ("pixel_id", "year") if c in rows.columns]
    return rows.sort_values(keys + [f for f in FEATURES if f in rows.columns], kind="mergesort").reset_index(drop=True)


def train_rf(rows, cfg: RfConfig, labels=None, features: tuple[str, ...] = FEATURES, pca: Pca2 | None = None) -> RfModel:
    """Train a forest on feature rows.

    ``rows`` is a feature table (with a ``label`` column) or an n x p matrix
    with ``labels`` given separately.
    """
    if isinstance(rows, pd.DataFrame):
        rows = _canonical(rows)
        X = rows[list(features)].to_numpy(float)
        y = _labels_to_int(rows["label"] if labels is None else labels)
        districts = tuple(sorted(rows["district_id"].unique())) if "district_id" in rows else ()
        years = tuple(sorted(int(v) for v in rows["year"].unique())) if "year" in rows else ()
    else:
        X = np.asarray(rows, float)
        y = _labels_to_int(labels)
        features = tuple(f"x{i}" for i in range(X.shape[1])) if features == FEATURES and X.shape[1] != len(FEATURES) else features
        districts, years = (), ()
    if np.isnan(X).any():
        raise DataError("feature rows contain missing values")
    if len(np.unique(y)) < 2:
        raise DataError("training rows need both rice and non-rice labels")
    if len(y) < 2 * cfg.min_leaf:
        raise DataError(f"need at least {2 * cfg.min_leaf} training rows")
    n, p = X.shape
    mtry = min(p, cfg.features_per_split or math.ceil(math.sqrt(p)))

    def one(t: int) -> tuple[Tree, np.ndarray]:
        rng = substream(cfg.rng_seed, "tree", t)
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        tree = grow_tree(X[idx], y[idx], rng, cfg.min_leaf, mtry)
        inbag = np.zeros(n, dtype=bool)
        inbag[idx] = True
        return tree, inbag

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            grown = list(pool.map(one, range(cfg.n_trees)))
    else:
        grown = [one(t) for t in range(cfg.n_trees)]
    trees = [g[0] for g in grown]

    oob_votes = np.zeros(n)
    oob_count = np.zeros(n)
    if cfg.bootstrap:
        for tree, inbag in grown:
            out = ~inbag
            if out.any():
                oob_votes[out] += tree.vote(X[out])
                oob_count[out] += 1
    has = oob_count > 0
    oob = float(((oob_votes[has] / oob_count[has] > 0.5) == y[has]).mean()) if has.any() else float("nan")
    return RfModel(trees, tuple(features), cfg, pca, districts, years, oob)


def fit_classifier(raw: pd.DataFrame, cfg: RfConfig) -> RfModel:
    """Fit the band PCA on ``raw`` training rows, then the forest."""
    pca = fit_pca2(raw[["band1_med", "band2_med"]].to_numpy(float))
    return train_rf(add_components(raw, pca), cfg, pca=pca)


def majority_vote(models, features) -> np.ndarray:
    """Rice iff strictly more than half of ``models`` predict rice; ties are non-rice."""
    models = list(models)
    if not models:
        raise ValueError("majority_vote needs at least one model")
    schema = models[0].features
    for m in models[1:]:
        if m.features != schema:
            raise SchemaError("models disagree on the feature schema")
    votes = np.zeros(len(features), dtype=int)
    for m in models:
        votes += m.predict(features)
    return 2 * votes > len(models)


# --------------------------------------------------------------------------
# evaluation


def confusion(truth, pred) -> dict[str, int]:
    t, p = np.asarray(truth, bool), np.asarray(pred, bool)
    return {
        "tp": int((t & p).sum()),
        "fp": int((~t & p).sum()),
        "tn": int((~t & ~p).sum()),
        "fn": int((t & ~p).sum()),
    }


@dataclass
class AccuracyReport:
    folds: pd.DataFrame  # held_out, n, accuracy, tp, fp, tn, fn
    test_year: int | None = None
    test: dict | None = None  # n, accuracy and confusion counts on the test year

    @property
    def mean_accuracy(self) -> float:
        return float(self.folds["accuracy"].mean()) if len(self.folds) else float("nan")

    @property
    def test_accuracy(self) -> float:
        return float(self.test["accuracy"]) if self.test else float("nan")

    def to_frame(self) -> pd.DataFrame:
        rows = self.folds.assign(kind="district_fold")
        if self.test:
            rows = pd.concat(
                [rows, pd.DataFrame([{"kind": "test_year", "held_out": str(self.test_year), **self.test}])],
                ignore_index=True,
            )
        return rows[["kind", "held_out", "n", "accuracy", "tp", "fp", "tn", "fn"]]


def _score(model: RfModel, rows: pd.DataFrame) -> dict:
    truth = _labels_to_int(rows["label"]).astype(bool)
    pred = model.predict(rows)
    c = confusion(truth, pred)
    return {"n": len(rows), "accuracy": float((truth == pred).mean()), **c}


def loocv_by_region(raw: pd.DataFrame, cfg: RfConfig, group: str = "district_id") -> AccuracyReport:
    """Leave-one-district-out accuracy; PCA refitted on each fold's training rows."""
    groups = sorted(raw[group].unique()) if len(raw) else []
    if len(groups) < 2:
        raise DataError("leave-one-out needs at least two districts")
    rows = []
    for g in groups:
        test = raw[raw[group] == g]
        if test.empty:
            raise DataError(f"district {g} has no rows")
        model = fit_classifier(raw[raw[group] != g], cfg)
        rows.append({"held_out": str(g), **_score(model, test)})
    return AccuracyReport(pd.DataFrame(rows))


def holdout_year(raw: pd.DataFrame, cfg: RfConfig, test_year: int | None = None) -> tuple[RfModel, dict, int]:
    """Train on every year but ``test_year`` (default: the last) and score on it."""
    years = sorted(int(y) for y in raw["year"].unique())
    if len(years) < 2:
        raise DataError("hold-out-year testing needs at least two labelled years")
    test_year = years[-1] if test_year is None else int(test_year)
    if test_year not in years:
        raise DataError(f"no labelled rows in test year {test_year}")
    model = fit_classifier(raw[raw["year"] != test_year], cfg)
    return model, _score(model, raw[raw["year"] == test_year]), test_year


def evaluate(raw: pd.DataFrame, cfg: RfConfig, test_year: int | None = None) -> AccuracyReport:
    """District folds on the training years plus the hold-out-year score."""
    _, test, ty = holdout_year(raw, cfg, test_year)
    report = loocv_by_region(raw[raw["year"] != ty], cfg)
    report.test_year, report.test = ty, test
    return report


def fold_models(raw: pd.DataFrame, cfg: RfConfig, group: str = "district_id") -> list[RfModel]:
    """One model per district rotation (each trained without one district)."""
    groups = sorted(raw[group].unique())
    return [fit_classifier(raw[raw[group] != g], cfg) for g in groups] if len(groups) > 1 else [fit_classifier(raw, cfg)]


def predict_scene(models, scene: Scene, year: int) -> pd.DataFrame:
    """Majority-vote rice mask for every pixel in ``year``."""
    pts = pd.DataFrame({"pixel_id": [p.pixel_id for p in scene.pixels]})
    raw = raw_features(scene, pts, year)
    rice = majority_vote(models, raw)
    return pd.DataFrame({"pixel_id": raw["pixel_id"], "year": int(year), "rice": rice.astype(int)})
