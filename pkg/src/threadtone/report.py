"""Rendered outputs: coefficient tables, scatter figures, the pipeline.

Every rendered number is rounded to 5 significant digits in the text table,
while the CSV/JSON next to it carries the unrounded value; p-values below
1e-5 render as "< 0.00001". The pipeline writes a byte-deterministic bundle
(validation summary, features, agreement, correlations, per-model tables,
figures, manifest) so that identical inputs, seed and flags reproduce
identical bytes on any machine.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import __version__
from .agreement import (
    agreement_report,
    correlation_report,
    render_correlations,
    write_agreement_csv,
    write_correlation_csv,
)
from .annotate import (
    AnnotationCache,
    BackendConfig,
    HttpBackend,
    MockBackend,
    annotate_corpus,
)
from .corpus import validate_corpus
from .dimensions import DIMENSIONS, AnnotationScale, dimension_by_name
from .errors import AnnotationError, StatsError
from .features import FeatureRow, compute_feature_table, write_features_csv
from .regression import (
    RegressionTable,
    STAR_SCHEMES,
    fit_model,
    get_model_spec,
    run_all,
    stars_for,
)
from .svgplot import ScatterData, scatter_svg

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ANNOTATION = 3
EXIT_INFERENCE = 4

SIMPLE_MODELS = ("M1", "M2", "M3", "M4")  # one regressor: scatter-plottable

_X_LABELS = {
    "dt_prev": "hours since the previous post in the discussion",
    "dt_parent": "hours since the parent post",
    "sib_older_mean": "mean score of older siblings",
    "parent_metric": "parent post score",
}


def format_sig(x: float, digits: int = 5) -> str:
    """Fixed-point with exactly ``digits`` significant digits."""
    if math.isnan(x):
        return "nan"
    if x == 0:
        return "0." + "0" * digits
    exponent = math.floor(math.log10(abs(x)))
    decimals = digits - 1 - exponent
    if decimals <= 0:
        return f"{round(x, decimals):.0f}"
    return f"{x:.{decimals}f}"


def format_p(p: float) -> str:
    if p < 1e-5:
        return "< 0.00001"
    return format_sig(p)


def star_legend(scheme: str = "default") -> str:
    parts = [f"p < {threshold:g} '{symbol}'"
             for threshold, symbol in STAR_SCHEMES[scheme]]
    return "Sign. level: " + ", ".join(parts)


def render_table(table: RegressionTable, scheme: str = "default",
                 ) -> tuple[str, list[dict]]:
    """Aligned text plus full-precision CSV rows for one fitted model."""
    header = ["term", "estimate", "std_error", "p_value", "stars"]
    body = []
    csv_rows = []
    for term in table.terms:
        stars = stars_for(term.p_value, scheme)
        body.append([term.term, format_sig(term.estimate),
                     format_sig(term.std_error), format_p(term.p_value), stars])
        csv_rows.append({
            "term": term.term,
            "estimate": repr(term.estimate),
            "std_error": repr(term.std_error),
            "p_value": repr(term.p_value),
            "stars": stars,
        })
    widths = [max(len(header[i]), *(len(row[i]) for row in body))
              for i in range(len(header))]
    lines = [f"{table.model_id} response={table.dimension}"]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    lines.append(f"n_obs={table.n_obs} n_clusters={table.n_clusters} "
                 f"r_squared={format_sig(table.r_squared)}")
    lines.append(star_legend(scheme))
    return "\n".join(lines) + "\n", csv_rows


def write_table_files(table: RegressionTable, directory: Path,
                      scheme: str = "default") -> None:
    text, csv_rows = render_table(table, scheme)
    stem = f"{table.model_id}_{table.dimension}"
    (directory / f"{stem}.txt").write_text(text, encoding="utf-8")
    with open(directory / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["term", "estimate", "std_error",
                                                "p_value", "stars"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(csv_rows)


def emit_scatter(rows: Sequence[FeatureRow], model_id: str, dimension: str,
                 cr_correction: bool = False) -> str:
    """Fit a one-regressor model and render its scatter + fit + 95% band."""
    if model_id not in SIMPLE_MODELS:
        raise ValueError(f"{model_id} is not a single-regressor model")
    spec = get_model_spec(model_id)
    fit = fit_model(spec, rows, dimension, cr_correction=cr_correction)
    term = spec.terms[0]
    dim = dimension_by_name(dimension)
    data = ScatterData(
        x=tuple(float(v) for v in fit.x[:, 1]),
        y=tuple(float(v) for v in fit.y),
        intercept=float(fit.beta[0]),
        slope=float(fit.beta[1]),
        vcov=((float(fit.vcov[0, 0]), float(fit.vcov[0, 1])),
              (float(fit.vcov[1, 0]), float(fit.vcov[1, 1]))),
        x_label=_X_LABELS[term],
        y_label=f"{dim.negative_pole} (-) to {dim.positive_pole} (+)",
        title=f"{model_id}: {dimension} vs {term}",
    )
    return scatter_svg(data)


# --- pipeline -------------------------------------------------------------------

@dataclass
class PipelineOptions:
    scale: AnnotationScale = AnnotationScale()
    replications: int = 4
    seed: int = 0
    mock: bool = False
    backend_url: str | None = None
    api_key_env: str = "ANNOTATOR_API_KEY"
    model: str = "mock"
    concurrency: int = 1
    max_retries: int = 3
    lenient: bool = False
    cr_correction: bool = False
    pvalue_dist: str = "t"
    star_scheme: str = "default"
    prev_scope: str = "discussion"
    m6_relax_sibling_filter: bool = False
    unanimity: bool = False

    def to_manifest(self) -> dict:
        return {
            "scale_min": self.scale.min,
            "scale_max": self.scale.max,
            "replications": self.replications,
            "seed": self.seed,
            "mock": self.mock,
            "model": self.model,
            "max_retries": self.max_retries,
            "lenient": self.lenient,
            "cr_correction": self.cr_correction,
            "pvalue_dist": self.pvalue_dist,
            "star_scheme": self.star_scheme,
            "prev_scope": self.prev_scope,
            "m6_relax_sibling_filter": self.m6_relax_sibling_filter,
            "unanimity": self.unanimity,
        }


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def annotation_content_hash(records: dict[str, dict]) -> str:
    """Order-independent hash of post-level raw scores."""
    lines = []
    for post_id in sorted(records):
        for dim_name in sorted(records[post_id]):
            scores = records[post_id][dim_name].raw_scores
            lines.append(f"{post_id}|{dim_name}|{','.join(map(str, scores))}")
    h = hashlib.sha256()
    for line in sorted(lines):
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


class PipelineLock:
    """One pipeline instance per output directory."""

    def __init__(self, output_dir: Path):
        self.path = output_dir / ".threadtone.lock"

    def __enter__(self) -> "PipelineLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run ({self.path}); "
                f"remove the lock file if that run is dead") from None
        os.close(fd)
        return self

    def __exit__(self, *exc_info) -> None:
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def run_pipeline(corpus_path: str | Path, cache_path: str | Path,
                 output_dir: str | Path, options: PipelineOptions) -> int:
    """validate -> annotate (cache-first) -> features -> agreement ->
    regress -> render. Returns the exit code of the first failing stage;
    outputs of earlier stages are preserved."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    with PipelineLock(output_dir):
        return _run_stages(Path(corpus_path), Path(cache_path), output_dir,
                           options)


def _run_stages(corpus_path: Path, cache_path: Path, output_dir: Path,
                options: PipelineOptions) -> int:
    # stage 1: validate (collecting mode, so every violation is reported)
    corpus, diagnostics = validate_corpus(corpus_path, lenient=True)
    failed = bool(diagnostics) and not options.lenient
    validation = {
        "ok": not failed,
        "diagnostics": diagnostics,
        "n_discussions": len(corpus.discussions),
        "n_posts": len(corpus.posts),
    }
    _write_json(output_dir / "validation.json", validation)
    if failed:
        log.error("corpus validation failed (%d diagnostics)", len(diagnostics))
        return EXIT_VALIDATION

    # stage 2: annotate, cache-first
    if options.mock:
        backend = MockBackend(seed=options.seed, scale=options.scale,
                              model=options.model)
        cache_timestamp = 0
    else:
        if not options.backend_url:
            log.error("no backend URL configured and mock mode is off")
            return EXIT_ANNOTATION
        backend = HttpBackend(BackendConfig(
            url=options.backend_url, api_key_env=options.api_key_env,
            model=options.model, max_retries=options.max_retries,
            concurrency=options.concurrency))
        cache_timestamp = int(time.time())
    cache = AnnotationCache(cache_path)
    try:
        records = annotate_corpus(
            corpus, backend, cache, scale=options.scale,
            n_replications=options.replications,
            max_retries=options.max_retries,
            concurrency=options.concurrency,
            cache_timestamp=cache_timestamp)
    except AnnotationError as exc:
        log.error("annotation failed: %s", exc)
        return EXIT_ANNOTATION
    finally:
        cache.close()
    log.info("annotation complete: %d posts, %d backend calls",
             len(records), backend.calls)

    # stage 3: features
    means = {post_id: {name: rec.mean for name, rec in dims.items()}
             for post_id, dims in records.items()}
    rows = compute_feature_table(corpus, means, strict=False,
                                 prev_scope=options.prev_scope)
    write_features_csv(rows, output_dir / "features.csv")

    # stage 4: agreement + correlations
    scores_by_dimension = {
        dim.name: {post_id: list(records[post_id][dim.name].raw_scores)
                   for post_id in records if dim.name in records[post_id]}
        for dim in DIMENSIONS
    }
    report = agreement_report(scores_by_dimension, scale=options.scale,
                              unanimity=options.unanimity)
    write_agreement_csv(report, output_dir / "agreement.csv")
    correlations = correlation_report(means)
    write_correlation_csv(correlations, output_dir / "correlations.csv")
    (output_dir / "correlations.txt").write_text(
        render_correlations(correlations), encoding="utf-8")

    # stage 5: regress
    tables, errors = run_all(
        rows, cr_correction=options.cr_correction,
        pvalue_dist=options.pvalue_dist, star_scheme=options.star_scheme,
        m6_relax_sibling_filter=options.m6_relax_sibling_filter)
    if not tables:
        log.error("all regressions failed: %s", errors)
        return EXIT_INFERENCE
    tables_dir = output_dir / "tables"
    tables_dir.mkdir(exist_ok=True)
    summary = {}
    for table in tables:
        write_table_files(table, tables_dir, scheme=options.star_scheme)
        summary[f"{table.model_id}/{table.dimension}"] = {
            "n_obs": table.n_obs, "n_clusters": table.n_clusters,
            "r_squared": table.r_squared,
        }
    _write_json(output_dir / "regression_summary.json",
                {"models": summary, "errors": errors})

    # stage 6: figures for the single-regressor models that were fit
    figures_dir = output_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    n_figures = 0
    fitted = {(t.model_id, t.dimension) for t in tables}
    for model_id in SIMPLE_MODELS:
        for dim in DIMENSIONS:
            if (model_id, dim.name) not in fitted:
                continue
            try:
                svg = emit_scatter(rows, model_id, dim.name,
                                   cr_correction=options.cr_correction)
            except StatsError as exc:
                log.warning("figure %s/%s skipped: %s", model_id, dim.name, exc)
                continue
            (figures_dir / f"{model_id}_{dim.name}.svg").write_text(
                svg, encoding="utf-8")
            n_figures += 1

    manifest = {
        "tool": "threadtone",
        "version": __version__,
        "corpus_sha256": file_sha256(corpus_path),
        "annotations_sha256": annotation_content_hash(records),
        "options": options.to_manifest(),
        "n_annotated_posts": len(records),
        "n_feature_rows": len(rows),
        "n_tables": len(tables),
        "n_figures": n_figures,
        "regression_errors": errors,
    }
    _write_json(output_dir / "manifest.json", manifest)
    return EXIT_OK


def _write_json(path: Path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
