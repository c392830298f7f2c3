"""OLS with discussion-clustered sandwich standard errors, models M1-M6.

The designs here never exceed four columns, so the fit solves the normal
equations with an explicitly pivoted elimination and a rank check rather
than pulling in a decomposition library. The covariance of the estimates is
the cluster sandwich

    (X'X)^-1 ( sum_d X_d' e_d e_d' X_d ) (X'X)^-1

with one score block per discussion d and no small-sample factor by default
(CR1, G/(G-1) * (n-1)/(n-k), is available behind a flag). With singleton
clusters the middle sum collapses to sum_i x_i x_i' e_i^2, i.e. plain HC0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .dimensions import DIMENSIONS, Dimension
from .errors import EmptySample, InsufficientSample, SingularDesign
from .features import FeatureRow

log = logging.getLogger(__name__)

_PIVOT_RTOL = 1e-10


def _solve_pivoted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b by Gaussian elimination with partial pivoting.

    Raises SingularDesign when a pivot falls below _PIVOT_RTOL relative to
    the largest entry of ``a``.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    k = a.shape[0]
    if a.shape != (k, k):
        raise ValueError("matrix must be square")
    b_was_vector = b.ndim == 1
    if b_was_vector:
        b = b[:, None]
    scale = np.abs(a).max()
    if scale == 0.0:
        raise SingularDesign("all-zero normal equations")
    tol = _PIVOT_RTOL * scale
    for col in range(k):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot_row, col]) <= tol:
            raise SingularDesign(f"rank-deficient design (pivot {col})")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        for row in range(col + 1, k):
            factor = a[row, col] / a[col, col]
            a[row, col:] -= factor * a[col, col:]
            b[row] -= factor * b[col]
    x = np.zeros_like(b)
    for col in range(k - 1, -1, -1):
        x[col] = (b[col] - a[col, col + 1:] @ x[col + 1:]) / a[col, col]
    return x[:, 0] if b_was_vector else x


def ols_fit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients and residuals via the normal equations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be n x k and y length n")
    n, k = x.shape
    if n <= k:
        raise InsufficientSample(f"n={n} observations for k={k} parameters")
    beta = _solve_pivoted(x.T @ x, x.T @ y)
    residuals = y - x @ beta
    return beta, residuals


def cluster_robust_vcov(x: np.ndarray, residuals: np.ndarray,
                        cluster_ids: Sequence, small_sample: bool = False,
                        ) -> np.ndarray:
    """Sandwich covariance with one score block per cluster (CR0).

    ``small_sample=True`` applies the CR1 factor G/(G-1) * (n-1)/(n-k). A
    single cluster is permitted but logged, since the estimator is then not
    meaningful for inference.
    """
    x = np.asarray(x, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    n, k = x.shape
    if residuals.shape != (n,) or len(cluster_ids) != n:
        raise ValueError("residuals and cluster_ids must align with x rows")
    _, inverse = np.unique(np.asarray(cluster_ids), return_inverse=True)
    n_clusters = int(inverse.max()) + 1
    if n_clusters < 2:
        log.warning("cluster-robust vcov with a single cluster")

    scores = x * residuals[:, None]
    sums = np.zeros((n_clusters, k))
    np.add.at(sums, inverse, scores)
    meat = sums.T @ sums

    bread = _solve_pivoted(x.T @ x, np.eye(k))
    vcov = bread @ meat @ bread
    vcov = (vcov + vcov.T) / 2.0
    if small_sample and n_clusters > 1 and n > k:
        vcov = vcov * (n_clusters / (n_clusters - 1.0)) * ((n - 1.0) / (n - k))
    return vcov


def p_value(estimate: float, se: float, n_clusters: int,
            dist: str = "t") -> float:
    """Two-sided p under Student's t with (n_clusters - 1) df, or the normal
    limit with ``dist='normal'``. A zero SE with a non-zero estimate is a
    degenerate case reported as p = 0."""
    if se < 0:
        raise ValueError("se must be non-negative")
    if se == 0.0:
        if estimate == 0.0:
            return 1.0
        log.warning("degenerate SE = 0 with non-zero estimate; reporting p = 0")
        return 0.0
    t = estimate / se
    if dist == "normal":
        return 2.0 * (1.0 - NormalDist().cdf(abs(t)))
    if dist == "t":
        df = n_clusters - 1
        if df < 1:
            raise ValueError("need at least 2 clusters for t-based p-values")
        return float(2.0 * scipy_stats.t.sf(abs(t), df))
    raise ValueError(f"unknown reference distribution {dist!r}")


# --- significance stars -----------------------------------------------------------

STAR_SCHEMES: dict[str, tuple[tuple[float, str], ...]] = {
    # conventional mapping: *** / ** / * / dagger
    "default": ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "†")),
    # the four-star variant some journals print
    "four-star": ((0.001, "****"), (0.01, "***"), (0.05, "**"), (0.1, "+")),
}


def stars_for(p: float, scheme: str = "default") -> str:
    for threshold, symbol in STAR_SCHEMES[scheme]:
        if p < threshold:
            return symbol
    return ""


# --- model specifications -----------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """A linear model over FeatureRow fields.

    ``terms`` are non-intercept regressors in design order; "a:b" denotes
    the elementwise product of a and b. ``requires`` lists the row fields
    that must be present for the row to enter the sample (which may include
    fields the model itself does not use, e.g. M6's older-sibling filter).
    """

    id: str
    terms: tuple[str, ...]
    requires: tuple[str, ...]
    description: str

    def base_fields(self) -> set[str]:
        fields: set[str] = set(self.requires)
        for term in self.terms:
            fields.update(term.split(":"))
        return fields


MODEL_SPECS: dict[str, ModelSpec] = {
    "M1": ModelSpec("M1", ("dt_prev",), ("dt_prev",),
                    "score vs hours since the previous post in the discussion"),
    "M2": ModelSpec("M2", ("dt_parent",), ("dt_parent",),
                    "score vs hours since the parent post"),
    "M3": ModelSpec("M3", ("sib_older_mean",), ("sib_older_mean",),
                    "alignment with the mean score of older siblings"),
    "M4": ModelSpec("M4", ("parent_metric",), ("parent_metric",),
                    "alignment with the parent post's score"),
    "M5": ModelSpec("M5",
                    ("parent_metric", "sib_older_mean",
                     "parent_metric:sib_older_mean"),
                    ("parent_metric", "sib_older_mean"),
                    "parent and older-sibling alignment with interaction"),
    "M6": ModelSpec("M6",
                    ("parent_metric", "br_neg", "parent_metric:br_neg"),
                    ("parent_metric", "sib_older_mean", "br_neg"),
                    "parent alignment moderated by the branch-root sign"),
}

MODEL_IDS = tuple(MODEL_SPECS)

# M6's default response; the other models run on every dimension
M6_DEFAULT_DIMENSION = "disagree_vs_agree"


def get_model_spec(model_id: str, m6_relax_sibling_filter: bool = False) -> ModelSpec:
    spec = MODEL_SPECS[model_id]
    if model_id == "M6" and m6_relax_sibling_filter:
        spec = replace(spec, requires=("parent_metric", "br_neg"))
    return spec


def row_field(row: FeatureRow, name: str, dimension: str) -> float | None:
    if name == "dt_prev":
        return row.dt_prev
    if name == "dt_parent":
        return row.dt_parent
    if name == "metric":
        return row.metric.get(dimension)
    if name == "parent_metric":
        return row.parent_metric.get(dimension)
    if name == "sib_older_mean":
        return row.sib_older_mean.get(dimension)
    if name == "br_neg":
        value = row.br_neg.get(dimension)
        return None if value is None else float(value)
    raise ValueError(f"unknown feature field {name!r}")


def term_value(row: FeatureRow, term: str, dimension: str) -> float | None:
    product = 1.0
    for name in term.split(":"):
        value = row_field(row, name, dimension)
        if value is None:
            return None
        product *= value
    return product


def filter_rows(spec: ModelSpec, rows: Iterable[FeatureRow],
                dimension: str) -> list[FeatureRow]:
    """Rows with the response and every required field present."""
    kept = []
    for row in rows:
        if dimension not in row.metric:
            continue
        if all(row_field(row, name, dimension) is not None
               for name in spec.base_fields()):
            kept.append(row)
    return kept


# --- fitted tables -------------------------------------------------------------------

@dataclass(frozen=True)
class TermEstimate:
    term: str
    estimate: float
    std_error: float
    p_value: float
    stars: str


@dataclass(frozen=True)
class RegressionTable:
    model_id: str
    dimension: str
    terms: tuple[TermEstimate, ...]
    n_obs: int
    n_clusters: int
    r_squared: float


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    dimension: str
    x: np.ndarray
    y: np.ndarray
    beta: np.ndarray
    residuals: np.ndarray
    vcov: np.ndarray
    cluster_ids: tuple[str, ...]

    @property
    def n_clusters(self) -> int:
        return len(set(self.cluster_ids))


def fit_model(spec: ModelSpec, rows: Sequence[FeatureRow], dimension: str,
              cr_correction: bool = False) -> FitResult:
    """Filter, assemble the design (intercept first), fit and compute the
    cluster sandwich for one (model, dimension)."""
    sample = filter_rows(spec, rows, dimension)
    if not sample:
        raise EmptySample(f"{spec.id}/{dimension}: no rows pass the filter")
    n = len(sample)
    k = 1 + len(spec.terms)
    x = np.ones((n, k))
    for j, term in enumerate(spec.terms, start=1):
        x[:, j] = [term_value(row, term, dimension) for row in sample]
    y = np.array([row.metric[dimension] for row in sample])
    clusters = tuple(row.discussion_id for row in sample)

    beta, residuals = ols_fit(x, y)
    vcov = cluster_robust_vcov(x, residuals, clusters,
                               small_sample=cr_correction)
    return FitResult(spec=spec, dimension=dimension, x=x, y=y, beta=beta,
                     residuals=residuals, vcov=vcov, cluster_ids=clusters)


def table_from_fit(fit: FitResult, pvalue_dist: str = "t",
                   star_scheme: str = "default") -> RegressionTable:
    ses = np.sqrt(np.maximum(np.diag(fit.vcov), 0.0))
    n_clusters = fit.n_clusters
    names = ("intercept",) + fit.spec.terms
    terms = tuple(
        TermEstimate(
            term=name,
            estimate=float(fit.beta[j]),
            std_error=float(ses[j]),
            p_value=p_value(float(fit.beta[j]), float(ses[j]), n_clusters,
                            dist=pvalue_dist),
            stars="",
        )
        for j, name in enumerate(names)
    )
    terms = tuple(replace(t, stars=stars_for(t.p_value, star_scheme))
                  for t in terms)
    sst = float(((fit.y - fit.y.mean()) ** 2).sum())
    ssr = float((fit.residuals ** 2).sum())
    r_squared = 1.0 - ssr / sst if sst > 0 else float("nan")
    return RegressionTable(model_id=fit.spec.id, dimension=fit.dimension,
                           terms=terms, n_obs=len(fit.y),
                           n_clusters=n_clusters, r_squared=r_squared)


def run_model(spec: ModelSpec, rows: Sequence[FeatureRow], dimension: str,
              cr_correction: bool = False, pvalue_dist: str = "t",
              star_scheme: str = "default") -> RegressionTable:
    """Fit one model for one dimension with discussion-clustered SEs."""
    fit = fit_model(spec, rows, dimension, cr_correction=cr_correction)
    return table_from_fit(fit, pvalue_dist=pvalue_dist, star_scheme=star_scheme)


def run_all(rows: Sequence[FeatureRow],
            dimensions: Iterable[Dimension] = DIMENSIONS,
            cr_correction: bool = False, pvalue_dist: str = "t",
            star_scheme: str = "default",
            m6_relax_sibling_filter: bool = False,
            m6_dimension: str = M6_DEFAULT_DIMENSION,
            ) -> tuple[list[RegressionTable], dict[str, str]]:
    """The default grid: M1-M5 on every dimension plus M6 on its default
    response, ordered by (model id, dimension name). Per-model failures are
    collected, not raised."""
    grid: list[tuple[str, str]] = []
    for model_id in ("M1", "M2", "M3", "M4", "M5"):
        for dim_name in sorted(d.name for d in dimensions):
            grid.append((model_id, dim_name))
    grid.append(("M6", m6_dimension))

    tables: list[RegressionTable] = []
    errors: dict[str, str] = {}
    for model_id, dim_name in grid:
        spec = get_model_spec(model_id, m6_relax_sibling_filter)
        try:
            tables.append(run_model(spec, rows, dim_name,
                                    cr_correction=cr_correction,
                                    pvalue_dist=pvalue_dist,
                                    star_scheme=star_scheme))
        except (EmptySample, SingularDesign, InsufficientSample) as exc:
            errors[f"{model_id}/{dim_name}"] = str(exc)
    return tables, errors
