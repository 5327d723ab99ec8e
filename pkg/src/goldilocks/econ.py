"""Least squares with two-way fixed effects and cluster-robust inference.

Fixed effects are removed by the within transformation (two-way
demeaning; alternating projections for unbalanced panels), after which
slopes are estimated by OLS on the demeaned data. Standard errors are
clustered, with the small-sample factor ``G/(G-1) * (N-1)/(N-K)`` where
``K`` counts the slope coefficients actually estimated, and p-values come
from a t distribution with ``G-1`` degrees of freedom.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .errors import EstimationError

if TYPE_CHECKING:
    from .flood import FloodSpec
    from .panel import Panel

COLLINEAR_TOL = 1e-9
DEMEAN_TOL = 1e-10
DEMEAN_MAX_SWEEPS = 10_000

ESTIMATORS = ("event_study", "did", "twfe")
OUTCOMES = ("evi_cum", "evi_max", "evi_mean", "evi_med", "log_yield")
FLOOD_FORMS = ("binary", "days")


# --------------------------------------------------------------------------
# OLS


@dataclass
class OLSFit:
    coef: np.ndarray  # full length, NaN where dropped
    resid: np.ndarray
    xtx_inv: np.ndarray  # kept x kept
    kept: np.ndarray  # bool mask over input columns
    names: list[str]

    @property
    def dropped(self) -> list[str]:
        return [n for n, k in zip(self.names, self.kept) if not k]


def _independent_columns(X: np.ndarray, ref_norms: np.ndarray, tol: float) -> np.ndarray:
    """Greedy left-to-right selection of linearly independent columns."""
    n, k = X.shape
    basis = np.empty((n, 0))
    keep = np.zeros(k, dtype=bool)
    for j in range(k):
        v = X[:, j].astype(float)
        ref = ref_norms[j]
        if ref == 0 or not np.isfinite(ref):
            continue
        for _ in range(2):  # re-orthogonalise once for stability
            v = v - basis @ (basis.T @ v)
        norm = np.linalg.norm(v)
        if norm < tol * ref:
            continue
        keep[j] = True
        basis = np.column_stack([basis, v / norm])
    return keep


def ols(X, y, names: Sequence[str] | None = None, ref_norms=None, tol: float = COLLINEAR_TOL) -> OLSFit:
    """Least squares through a QR decomposition of the independent columns.

    Exactly collinear columns are dropped, later columns first: a column is
    dropped when its residual norm after projection on the earlier kept
    columns is below ``tol`` times ``ref_norms`` (its own norm by default;
    pass pre-transformation norms when ``X`` has been demeaned).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if ref_norms is None:
        ref_norms = np.linalg.norm(X, axis=0)
    keep = _independent_columns(X, np.asarray(ref_norms, dtype=float), tol)
    r = int(keep.sum())
    if r == 0:
        raise EstimationError("no usable regressors (all columns zero or collinear)")
    if n < r:
        raise EstimationError(f"{n} observations for {r} coefficients")
    Xk = X[:, keep]
    Q, R = np.linalg.qr(Xk)
    b = linalg.solve_triangular(R, Q.T @ y)
    Rinv = linalg.solve_triangular(R, np.eye(r))
    coef = np.full(k, np.nan)
    coef[keep] = b
    return OLSFit(coef=coef, resid=y - Xk @ b, xtx_inv=Rinv @ Rinv.T, kept=keep, names=names)


# --------------------------------------------------------------------------
# within transformation


class TwoWayDemeaner:
    """Reusable two-way demeaning for fixed unit/time codes."""

    def __init__(self, unit, time, tol: float = DEMEAN_TOL, max_sweeps: int = DEMEAN_MAX_SWEEPS):
        self.unit_codes, self.units = pd.factorize(np.asarray(unit), sort=True)
        self.time_codes, self.times = pd.factorize(np.asarray(time), sort=True)
        if (self.unit_codes < 0).any() or (self.time_codes < 0).any():
            raise EstimationError("missing unit or time identifiers")
        self.n = len(self.unit_codes)
        self.tol = tol
        self.max_sweeps = max_sweeps
        self._U = self._onehot(self.unit_codes, len(self.units))
        self._T = self._onehot(self.time_codes, len(self.times))
        self._ucount = self._U.sum(axis=0)
        self._tcount = self._T.sum(axis=0)
        pairs = self.unit_codes * len(self.times) + self.time_codes
        self.balanced = self.n == len(self.units) * len(self.times) and len(np.unique(pairs)) == self.n

    @staticmethod
    def _onehot(codes: np.ndarray, m: int) -> np.ndarray:
        out = np.zeros((len(codes), m))
        out[np.arange(len(codes)), codes] = 1.0
        return out

    def _unit_means(self, X):
        return (self._U.T @ X) / self._ucount[:, None]

    def _time_means(self, X):
        return (self._T.T @ X) / self._tcount[:, None]

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        if vec:
            X = X[:, None]
        if self.balanced:
            out = X - self._U @ self._unit_means(X) - self._T @ self._time_means(X) + X.mean(axis=0)
        else:
            out = X - X.mean(axis=0)
            scale = max(1.0, float(np.abs(X).max()) if X.size else 1.0)
            for _ in range(self.max_sweeps):
                out = out - self._U @ self._unit_means(out)
                out = out - self._T @ self._time_means(out)
                if np.abs(self._unit_means(out)).max() <= self.tol * scale:
                    break
            else:
                warnings.warn("two-way demeaning did not converge", RuntimeWarning, stacklevel=2)
        return out[:, 0] if vec else out


def within_transform(panel, unit, time, columns=None, tol: float = DEMEAN_TOL):
    """Remove unit and time means.

    With a DataFrame, ``unit``/``time`` are column names and ``columns`` the
    columns to transform; a DataFrame is returned. With an array, ``unit``
    and ``time`` are label arrays aligned with its rows.
    """
    if isinstance(panel, pd.DataFrame):
        cols = list(columns) if columns is not None else [c for c in panel.columns if c not in (unit, time)]
        dm = TwoWayDemeaner(panel[unit].to_numpy(), panel[time].to_numpy(), tol=tol)
        vals = dm.transform(panel[cols].to_numpy(dtype=float))
        return pd.DataFrame(vals, columns=cols, index=panel.index)
    return TwoWayDemeaner(unit, time, tol=tol).transform(panel)


# --------------------------------------------------------------------------
# cluster-robust covariance


def cluster_vcov(X, resid, clusters, xtx_inv, n_params: int | None = None) -> tuple[np.ndarray, int]:
    """Cluster-robust sandwich covariance and the number of clusters.

    ``X`` holds only the columns matching ``xtx_inv``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    e = np.asarray(resid, dtype=float)
    codes, uniq = pd.factorize(np.asarray(clusters), sort=True)
    G = len(uniq)
    if G < 2:
        raise EstimationError(f"need at least 2 clusters, got {G}")
    n, k = X.shape
    k = n_params if n_params is not None else k
    if n <= k:
        raise EstimationError("no residual degrees of freedom")
    scores = np.zeros((G, X.shape[1]))
    np.add.at(scores, codes, X * e[:, None])
    meat = scores.T @ scores
    factor = G / (G - 1) * (n - 1) / (n - k)
    V = factor * xtx_inv @ meat @ xtx_inv
    return (V + V.T) / 2, G


def hc1_vcov(X, resid, xtx_inv) -> np.ndarray:
    """Heteroskedasticity-robust (HC1) covariance."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(resid, dtype=float)
    n, k = X.shape
    meat = (X * (e**2)[:, None]).T @ X
    V = n / (n - k) * xtx_inv @ meat @ xtx_inv
    return (V + V.T) / 2


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class RegSpec:
    estimator: str
    outcome: str
    flood_spec: Any = None  # FloodSpec
    flood_form: str = "binary"
    unit: str = "district_id"
    cluster: str = "district_id"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.flood_form not in FLOOD_FORMS:
            raise ValueError(f"unknown flood form {self.flood_form!r}")
        if self.estimator == "did" and self.flood_form != "binary":
            raise ValueError("did uses the binary flood-prone indicator")

    def to_dict(self) -> dict:
        d = {
            "estimator": self.estimator,
            "outcome": self.outcome,
            "flood_form": self.flood_form,
            "unit": self.unit,
            "cluster": self.cluster,
        }
        if self.flood_spec is not None:
            d.update(
                quantile_level=self.flood_spec.quantile_level,
                start_day=self.flood_spec.window.start_day,
                end_day=self.flood_spec.window.end_day,
            )
        return d


@dataclass
class RegResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    df: int
    n_obs: int
    n_clusters: int
    key: str
    spec: RegSpec | None = None
    dropped: list[str] = field(default_factory=list)
    absorbed: list[str] = field(default_factory=list)
    vcov: np.ndarray | None = None

    def _idx(self, name: str) -> int:
        return self.names.index(name)

    @property
    def beta(self) -> float:
        return float(self.coef[self._idx(self.key)])

    @property
    def beta_se(self) -> float:
        return float(self.se[self._idx(self.key)])

    @property
    def beta_t(self) -> float:
        return float(self.tstat[self._idx(self.key)])

    @property
    def beta_p(self) -> float:
        return float(self.pvalue[self._idx(self.key)])

    def ci(self, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        crit = stats.t.ppf(1 - alpha / 2, self.df)
        return self.coef - crit * self.se, self.coef + crit * self.se

    def to_frame(self, alpha: float = 0.05) -> pd.DataFrame:
        lo, hi = self.ci(alpha)
        status = ["dropped" if n in self.dropped else "estimated" for n in self.names]
        frame = pd.DataFrame(
            {
                "term": self.names,
                "coef": self.coef,
                "se": self.se,
                "t": self.tstat,
                "p": self.pvalue,
                "ci_lo": lo,
                "ci_hi": hi,
                "status": status,
                "key": [n == self.key for n in self.names],
            }
        )
        absorbed = pd.DataFrame({"term": self.absorbed, "status": "absorbed", "key": False})
        return pd.concat([frame, absorbed], ignore_index=True) if self.absorbed else frame

    def to_dict(self, alpha: float = 0.05) -> dict:
        lo, hi = self.ci(alpha)
        return {
            "spec": self.spec.to_dict() if self.spec else None,
            "key": self.key,
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "df": self.df,
            "dropped": self.dropped,
            "absorbed": self.absorbed,
            "coefficients": [
                {
                    "term": n,
                    "coef": _num(c),
                    "se": _num(s),
                    "t": _num(t),
                    "p": _num(p),
                    "ci_lo": _num(a),
                    "ci_hi": _num(b),
                }
                for n, c, s, t, p, a, b in zip(self.names, self.coef, self.se, self.tstat, self.pvalue, lo, hi)
            ],
        }


def _num(v) -> float | None:
    v = float(v)
    return None if np.isnan(v) else v


def _assemble(names, fit: OLSFit, V: np.ndarray, df: int, n: int, G: int, key: str, **kw) -> RegResult:
    k = len(names)
    se = np.full(k, np.nan)
    se[fit.kept] = np.sqrt(np.clip(np.diag(V), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = fit.coef / se
    p = np.where(np.isnan(t), np.nan, 2 * stats.t.sf(np.abs(t), df))
    full_V = np.full((k, k), np.nan)
    full_V[np.ix_(fit.kept, fit.kept)] = V
    return RegResult(
        names=list(names), coef=fit.coef, se=se, tstat=t, pvalue=p, df=df, n_obs=n,
        n_clusters=G, key=key, dropped=fit.dropped, vcov=full_V, **kw,
    )


def fe_regression(
    y, X, names: Sequence[str], unit, time, cluster, key: str, demeaner: TwoWayDemeaner | None = None, **kw
) -> RegResult:
    """Two-way FE regression of ``y`` on ``X`` with clustered inference."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    dm = demeaner or TwoWayDemeaner(unit, time)
    Z = dm.transform(np.column_stack([np.asarray(y, float), X]))
    yt, Xt = Z[:, 0], Z[:, 1:]
    ref = np.linalg.norm(X, axis=0)
    fit = ols(Xt, yt, names, ref_norms=ref)
    V, G = cluster_vcov(Xt[:, fit.kept], fit.resid, cluster, fit.xtx_inv)
    return _assemble(names, fit, V, G - 1, len(yt), G, key, **kw)


# --------------------------------------------------------------------------
# estimators


@dataclass
class EventStudyResult:
    table: pd.DataFrame  # j, coef, se, t, p, ci_lo, ci_hi
    phi: float
    phi_se: float
    regression: RegResult

    def alpha(self, j: int) -> float:
        return float(self.table.set_index("j").loc[j, "coef"])

    def post_mean(self, alpha: float = 0.05) -> tuple[float, float, float]:
        """Mean of the post-period coefficients (j >= 0) with its CI."""
        res = self.regression
        idx = [i for i, n in enumerate(res.names) if n.startswith("event_") and int(n[6:]) >= 0]
        idx = [i for i in idx if np.isfinite(res.coef[i])]
        if not idx:
            return np.nan, np.nan, np.nan
        w = np.full(len(idx), 1.0 / len(idx))
        mean = float(w @ res.coef[idx])
        se = float(np.sqrt(w @ res.vcov[np.ix_(idx, idx)] @ w))
        crit = stats.t.ppf(1 - alpha / 2, res.df)
        return mean, mean - crit * se, mean + crit * se


def event_dummies(event_time, j_lead: int, j_lag: int) -> tuple[np.ndarray, list[int]]:
    """Binned event-time indicators excluding j = -1; never-treated rows are zero."""
    et = np.asarray(event_time, dtype=float)
    js = [j for j in range(-j_lead, j_lag + 1) if j != -1]
    binned = np.clip(et, -j_lead, j_lag)
    D = np.column_stack([(binned == j) for j in js]).astype(float)
    D[np.isnan(et)] = 0.0
    return D, js


def _frame_of(panel) -> pd.DataFrame:
    return panel if isinstance(panel, pd.DataFrame) else panel.frame


def run_event_study(
    panel,
    outcome: str,
    j_lead: int = 8,
    j_lag: int = 10,
    alpha: float = 0.05,
    unit: str = "district_id",
    time: str = "year",
    cluster: str | None = None,
    control: str | None = "flood_control",
) -> EventStudyResult:
    """Event study on years since first seed availability, j = -1 omitted."""
    df = _frame_of(panel)
    df = df[df[outcome].notna()]
    et = df["event_time"].to_numpy(dtype=float)
    if np.unique(df.loc[~np.isnan(et), unit]).size < 2:
        raise EstimationError("event study needs at least two units with a defined event year")
    D, js = event_dummies(et, j_lead, j_lag)
    names = [f"event_{j}" for j in js]
    cols = [D]
    if control is not None:
        cols.append(df[control].fillna(0.0).to_numpy(float)[:, None])
        names.append(control)
    X = np.column_stack(cols)
    spec = RegSpec("event_study", outcome, unit=unit, cluster=cluster or unit)
    res = fe_regression(
        df[outcome].to_numpy(float), X, names, df[unit].to_numpy(), df[time].to_numpy(),
        df[cluster or unit].to_numpy(), key=names[js.index(0)], spec=spec,
    )
    lo, hi = res.ci(alpha)
    rows = []
    for j in range(-j_lead, j_lag + 1):
        if j == -1:
            rows.append((j, 0.0, 0.0, np.nan, np.nan, 0.0, 0.0))
            continue
        i = names.index(f"event_{j}")
        rows.append((j, res.coef[i], res.se[i], res.tstat[i], res.pvalue[i], lo[i], hi[i]))
    table = pd.DataFrame(rows, columns=["j", "coef", "se", "t", "p", "ci_lo", "ci_hi"])
    if control is not None:
        phi, phi_se = float(res.coef[-1]), float(res.se[-1])
    else:
        phi, phi_se = np.nan, np.nan
    return EventStudyResult(table=table, phi=phi, phi_se=phi_se, regression=res)


class DidKernel:
    """DID fits sharing one panel; only the flood-prone grouping changes."""

    def __init__(self, y, post, unit, time, cluster):
        self.y = np.asarray(y, float)
        self.post = np.asarray(post, float)
        self.unit = np.asarray(unit)
        self.cluster = np.asarray(cluster)
        self.dm = TwoWayDemeaner(unit, time)
        self.yt = self.dm.transform(self.y)

    def fit(self, prone) -> RegResult:
        prone = np.asarray(prone, float)
        groups = pd.Series(prone).groupby(self.unit).first()
        if groups.nunique() < 2:
            raise EstimationError("flood-prone indicator has no variation across units")
        inter = self.post * prone
        xt = self.dm.transform(inter)
        fit = ols(xt[:, None], self.yt, ["post2010_x_flood"], ref_norms=[np.linalg.norm(inter)])
        V, G = cluster_vcov(xt[:, None], fit.resid, self.cluster, fit.xtx_inv)
        return _assemble(["post2010_x_flood"], fit, V, G - 1, len(self.y), G, "post2010_x_flood",
                         absorbed=["post2010", "flood_prone"])


def run_did(panel: Panel, outcome: str, flood_spec: FloodSpec, cluster: str | None = None) -> RegResult:
    """Post-2010 x flood-prone interaction with unit and year effects."""
    df = panel.frame
    ok = df[outcome].notna().to_numpy()
    prone = panel.flood_prone_rows(flood_spec)
    sub = df[ok]
    unit = panel.unit
    k = DidKernel(sub[outcome], sub["post2010"], sub[unit], sub["year"], sub[cluster or unit])
    res = k.fit(prone[ok])
    res.spec = RegSpec("did", outcome, flood_spec, "binary", unit, cluster or unit)
    return res


class TwfeKernel:
    """TWFE fits sharing outcome, treatment and controls; the flood column varies."""

    def __init__(self, y, treatment, controls, unit, time, cluster, control_names=()):
        self.y = np.asarray(y, float)
        self.treat = np.asarray(treatment, float)
        self.controls = np.asarray(controls, float).reshape(len(self.y), -1)
        self.control_names = list(control_names)
        self.cluster = np.asarray(cluster)
        self.dm = TwoWayDemeaner(unit, time)
        base = np.column_stack([self.y, self.treat, self.controls])
        self.base_t = self.dm.transform(base)
        self.base_norm = np.linalg.norm(base[:, 1:], axis=0)
        if np.allclose(self.base_t[:, 1], 0, atol=COLLINEAR_TOL * max(1.0, self.base_norm[0])):
            raise EstimationError("treatment has no within-unit variation")
        self.names = ["treat_x_flood", "treat", "flood"] + self.control_names

    def fit(self, flood) -> RegResult:
        flood = np.asarray(flood, float)
        inter = self.treat * flood
        ft = self.dm.transform(np.column_stack([inter, flood]))
        Xt = np.column_stack([ft[:, 0], self.base_t[:, 1], ft[:, 1], self.base_t[:, 2:]])
        ref = np.concatenate([[np.linalg.norm(inter), self.base_norm[0], np.linalg.norm(flood)], self.base_norm[1:]])
        fit = ols(Xt, self.base_t[:, 0], self.names, ref_norms=ref)
        V, G = cluster_vcov(Xt[:, fit.kept], fit.resid, self.cluster, fit.xtx_inv)
        return _assemble(self.names, fit, V, G - 1, len(self.y), G, "treat_x_flood")


def run_twfe(
    panel,
    outcome: str,
    flood_spec: FloodSpec | None = None,
    flood_form: str = "days",
    *,
    treatment: str = "seed_cum",
    controls: Sequence[str] | None = None,
    unit: str | None = None,
    time: str = "year",
    cluster: str | None = None,
    flood_column: str | None = None,
) -> RegResult:
    """Treatment x flood interaction with two-way fixed effects.

    ``panel`` is either a :class:`~goldilocks.panel.Panel` (flood taken from
    ``flood_spec`` in ``flood_form``) or a plain DataFrame with the flood
    measure in ``flood_column`` (household panels).
    """
    if flood_form not in FLOOD_FORMS:
        raise ValueError(f"unknown flood form {flood_form!r}")
    if isinstance(panel, pd.DataFrame):
        if flood_column is None or unit is None:
            raise ValueError("DataFrame input needs flood_column and unit")
        df = panel
        flood = df[flood_column].to_numpy(float)
        controls = list(controls or [])
    else:
        df = panel.frame
        unit = unit or panel.unit
        flood = panel.flood_values(flood_spec, flood_form)
        if controls is None:
            controls = ["rice_area"] if panel.unit_level == "district" else []
    ok = df[outcome].notna().to_numpy()
    sub = df[ok]
    kern = TwfeKernel(
        sub[outcome], sub[treatment], sub[list(controls)].to_numpy(float) if controls else np.empty((len(sub), 0)),
        sub[unit], sub[time], sub[cluster or unit], control_names=controls,
    )
    res = kern.fit(flood[ok])
    res.names = [f"{treatment}_x_flood", treatment, "flood"] + list(controls)
    res.key = f"{treatment}_x_flood"
    res.dropped = [res.names[i] for i, k in enumerate(kern.names) if k in res.dropped]
    res.spec = RegSpec("twfe", outcome, flood_spec, flood_form, unit, cluster or unit)
    return res
