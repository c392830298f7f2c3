"""Intra-annotator reliability across replications, plus rank correlations.

All statistics operate on a complete R x N integer matrix (R replications,
N items) for one dimension. Items with any missing replication are excluded
upstream so every metric is computed on a common item set.

Krippendorff's alpha uses the interval (squared-difference) distance:
alpha = 1 - D_o/D_e, with the observed disagreement pooled over within-item
pairable values and the expected disagreement over all cross-item value
pairs. Fleiss' kappa treats each integer scale point as a nominal category.
Dispersion statistics (MAPD, exact agreement, agreement within +-1) are
pairwise proportions averaged over items; a flag switches exact/within-1 to
the all-rater unanimity variant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dimensions import DIMENSIONS, AnnotationScale
from .errors import DegenerateData


@dataclass(frozen=True)
class RatingsMatrix:
    """Scores for one dimension: values[r, i] is replication r of item i."""

    items: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D (raters x items) array")
        if self.values.shape[1] != len(self.items):
            raise ValueError("item count does not match value columns")

    @property
    def n_raters(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class ScalarResult:
    value: float
    degenerate: bool = False


def krippendorff_alpha_interval(matrix: RatingsMatrix) -> ScalarResult:
    """alpha = 1 - D_o/D_e with squared-difference distance.

    When every value in the matrix is identical the expected disagreement is
    zero; that degenerate case is reported as alpha = 1 with a flag.
    """
    values = matrix.values.astype(float)
    n_raters, n_items = values.shape
    if n_raters < 2 or n_items < 2:
        raise ValueError("need at least 2 raters and 2 items")
    n = n_raters * n_items

    col_sum = values.sum(axis=0)
    col_sumsq = (values ** 2).sum(axis=0)
    # per item, sum over ordered pairs i != j of (v_i - v_j)^2
    within = 2.0 * n_raters * col_sumsq - 2.0 * col_sum ** 2
    d_obs = within.sum() / (n_raters - 1) / n

    total = values.sum()
    total_sq = (values ** 2).sum()
    d_exp = (2.0 * n * total_sq - 2.0 * total ** 2) / (n * (n - 1))
    if d_exp == 0.0:
        return ScalarResult(1.0, degenerate=True)
    return ScalarResult(1.0 - d_obs / d_exp)


def fleiss_kappa(matrix: RatingsMatrix,
                 scale: AnnotationScale = AnnotationScale()) -> ScalarResult:
    """Fleiss' kappa over the category-count table, categories being the
    scale's integer points. A single category used everywhere gives expected
    agreement 1 and is reported as kappa = 1 with a flag."""
    values = matrix.values
    n_raters, n_items = values.shape
    if n_raters < 2:
        raise ValueError("need at least 2 raters")
    categories = np.arange(scale.min, scale.max + 1)
    counts = np.zeros((n_items, len(categories)), dtype=float)
    for ci, cat in enumerate(categories):
        counts[:, ci] = (values == cat).sum(axis=0)

    p_item = ((counts ** 2).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = p_item.mean()
    p_cat = counts.sum(axis=0) / (n_items * n_raters)
    p_exp = float((p_cat ** 2).sum())
    if p_exp >= 1.0:
        return ScalarResult(1.0, degenerate=True)
    return ScalarResult((p_bar - p_exp) / (1.0 - p_exp))


@dataclass(frozen=True)
class DispersionStats:
    mapd_mean: float
    exact_agreement: float
    pct_within_1: float
    mean_range: float
    mean_sd: float


def dispersion_stats(matrix: RatingsMatrix,
                     unanimity: bool = False) -> DispersionStats:
    """Item-mean dispersion of replication scores.

    Per item, over all rater pairs: mean absolute difference (MAPD), the
    fraction of pairs in exact agreement, the fraction within +-1, plus the
    range and the sample (R-1) standard deviation. With ``unanimity=True``
    the agreement proportions instead ask whether *all* raters coincide
    (resp. span at most 1)."""
    values = matrix.values.astype(float)
    n_raters = matrix.n_raters
    if n_raters < 2:
        raise ValueError("need at least 2 raters")
    iu, ju = np.triu_indices(n_raters, k=1)
    diffs = np.abs(values[iu, :] - values[ju, :])  # pairs x items

    mapd = diffs.mean(axis=0)
    rng = values.max(axis=0) - values.min(axis=0)
    sd = values.std(axis=0, ddof=1)
    if unanimity:
        exact = (rng == 0).astype(float)
        within1 = (rng <= 1).astype(float)
    else:
        exact = (diffs == 0).mean(axis=0)
        within1 = (diffs <= 1).mean(axis=0)
    return DispersionStats(
        mapd_mean=float(mapd.mean()),
        exact_agreement=float(exact.mean()),
        pct_within_1=float(within1.mean()),
        mean_range=float(rng.mean()),
        mean_sd=float(sd.mean()),
    )


# --- rank correlation -------------------------------------------------------------

def midranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with ties receiving the average of their rank block."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of midranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D of equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateData("rank correlation undefined for constant input")
    rx = midranks(x) - midranks(x).mean()
    ry = midranks(y) - midranks(y).mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def correlation_report(means_by_post: Mapping[str, Mapping[str, float]],
                       dimensions: Iterable = DIMENSIONS) -> np.ndarray:
    """Pairwise Spearman correlations of post-level means, over posts with
    all dimensions present. Symmetric with unit diagonal."""
    dims = [d.name for d in dimensions]
    posts = sorted(pid for pid, vals in means_by_post.items()
                   if all(name in vals for name in dims))
    series = {name: [means_by_post[pid][name] for pid in posts] for name in dims}
    k = len(dims)
    out = np.eye(k)
    for i, j in combinations(range(k), 2):
        rho = spearman_rho(series[dims[i]], series[dims[j]])
        out[i, j] = out[j, i] = rho
    return out


# --- per-dimension report -----------------------------------------------------------

@dataclass(frozen=True)
class DimensionAgreement:
    dimension: str
    n_items: int
    n_raters: int
    krippendorff_alpha: float
    fleiss_kappa: float
    mapd_mean: float
    exact_agreement: float
    pct_within_1: float
    mean_range: float
    mean_sd: float
    degenerate: bool


def ratings_from_scores(scores_by_item: Mapping[str, Sequence[int]]) -> RatingsMatrix:
    """Build a matrix from item -> replication-ordered scores (complete sets
    only; enforced by the caller)."""
    items = tuple(sorted(scores_by_item))
    values = np.array([scores_by_item[item] for item in items], dtype=int).T
    return RatingsMatrix(items=items, values=values)


def agreement_report(scores_by_dimension: Mapping[str, Mapping[str, Sequence[int]]],
                     scale: AnnotationScale = AnnotationScale(),
                     unanimity: bool = False) -> list[DimensionAgreement]:
    """Per-dimension reliability over the items common to every dimension."""
    dims = [d.name for d in DIMENSIONS if d.name in scores_by_dimension]
    common: set[str] | None = None
    for name in dims:
        ids = set(scores_by_dimension[name])
        common = ids if common is None else common & ids
    common = common or set()

    report = []
    for name in dims:
        matrix = ratings_from_scores(
            {item: scores_by_dimension[name][item] for item in common})
        alpha = krippendorff_alpha_interval(matrix)
        kappa = fleiss_kappa(matrix, scale)
        disp = dispersion_stats(matrix, unanimity=unanimity)
        report.append(DimensionAgreement(
            dimension=name,
            n_items=matrix.n_items,
            n_raters=matrix.n_raters,
            krippendorff_alpha=alpha.value,
            fleiss_kappa=kappa.value,
            mapd_mean=disp.mapd_mean,
            exact_agreement=disp.exact_agreement,
            pct_within_1=disp.pct_within_1,
            mean_range=disp.mean_range,
            mean_sd=disp.mean_sd,
            degenerate=alpha.degenerate or kappa.degenerate,
        ))
    return report


AGREEMENT_CSV_HEADER = [
    "dimension", "n_items", "n_raters", "krippendorff_alpha", "fleiss_kappa",
    "mapd_mean", "exact_agreement", "pct_within_1", "mean_range", "mean_sd",
]


def write_agreement_csv(report: list[DimensionAgreement], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGREEMENT_CSV_HEADER)
        for row in report:
            writer.writerow([
                row.dimension, row.n_items, row.n_raters,
                repr(row.krippendorff_alpha), repr(row.fleiss_kappa),
                repr(row.mapd_mean), repr(row.exact_agreement),
                repr(row.pct_within_1), repr(row.mean_range), repr(row.mean_sd),
            ])


def write_correlation_csv(matrix: np.ndarray, path: str | Path,
                          dimensions: Iterable = DIMENSIONS) -> None:
    names = [d.name for d in dimensions]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dimension"] + names)
        for i, name in enumerate(names):
            writer.writerow([name] + [repr(float(v)) for v in matrix[i]])


def render_correlations(matrix: np.ndarray,
                        dimensions: Iterable = DIMENSIONS) -> str:
    """Two-decimal text rendering of the Spearman matrix."""
    names = [d.name for d in dimensions]
    width = max(len(n) for n in names)
    lines = ["pairwise Spearman correlations of post-level means"]
    header = " " * (width + 2) + "  ".join(n.rjust(width) for n in names)
    lines.append(header)
    for i, name in enumerate(names):
        cells = "  ".join(f"{matrix[i, j]:.2f}".rjust(width)
                          for j in range(len(names)))
        lines.append(f"{name.ljust(width)}  {cells}")
    return "\n".join(lines) + "\n"
