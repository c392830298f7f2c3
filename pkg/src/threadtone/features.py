"""Temporal and tree-structural regressors for annotated posts.

For every annotated (non-root) post this module derives: the delay since the
previous post in the discussion, the delay since the parent post, the mean
score of annotated older siblings, the parent's score, and the branch-root
negative-sign indicator. Field presence follows fixed rules: parent scores
and branch-root indicators exist only at depth >= 2 (replies to the root
have an unannotated parent), sibling means only when an annotated older
sibling exists.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .corpus import Corpus, DiscussionTree, Post
from .dimensions import DIMENSIONS
from .errors import MissingAnnotation, NegativeDelta

log = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0

# annotations are addressed as post_id -> dimension name -> mean score
MeanMap = Mapping[str, Mapping[str, float]]


@dataclass
class FeatureRow:
    post_id: str
    discussion_id: str
    depth: int
    dt_prev: float | None
    dt_parent: float | None
    metric: dict[str, float]
    parent_metric: dict[str, float | None] = field(default_factory=dict)
    sib_older_mean: dict[str, float | None] = field(default_factory=dict)
    br_neg: dict[str, int | None] = field(default_factory=dict)


def delta_t_prev(post: Post, ordered_posts: list[Post]) -> float | None:
    """Hours since the predecessor in (timestamp, post_id) order; None for
    the earliest post of the scope."""
    key = post.order_key()
    prev = None
    for other in ordered_posts:
        if other.order_key() < key:
            prev = other
        else:
            break
    if prev is None:
        return None
    return (post.timestamp - prev.timestamp) / SECONDS_PER_HOUR


def delta_t_parent(post: Post, posts_by_id: Mapping[str, Post]) -> float | None:
    """Hours since the parent post; None for the root.

    Raises NegativeDelta when the child is timestamped before its parent.
    """
    if post.parent_id is None:
        return None
    parent = posts_by_id[post.parent_id]
    delta = (post.timestamp - parent.timestamp) / SECONDS_PER_HOUR
    if delta < 0:
        raise NegativeDelta(
            f"post {post.post_id} predates its parent {parent.post_id} "
            f"by {-delta:.4g} h")
    return delta


def _older_siblings(post: Post, tree: DiscussionTree,
                    posts_by_id: Mapping[str, Post]) -> list[Post]:
    if post.parent_id is None:
        return []
    siblings = tree.children.get(post.parent_id, ())
    key = post.order_key()
    return [posts_by_id[pid] for pid in siblings
            if posts_by_id[pid].order_key() < key]


def older_sibling_mean(post: Post, dimension_name: str, tree: DiscussionTree,
                       posts_by_id: Mapping[str, Post],
                       means: MeanMap) -> float | None:
    """Mean score of annotated older siblings; None when there are none."""
    values = [means[s.post_id][dimension_name]
              for s in _older_siblings(post, tree, posts_by_id)
              if s.post_id in means and dimension_name in means[s.post_id]]
    if not values:
        return None
    return sum(values) / len(values)


def br_neg_indicator(post: Post, dimension_name: str, tree: DiscussionTree,
                     means: MeanMap) -> int | None:
    """1 iff the branch root's score is strictly negative; None at depth 1.

    A score of exactly zero yields 0 (strict inequality).
    """
    if tree.depth[post.post_id] < 2:
        return None
    branch_root = tree.branch_root_of[post.post_id]
    branch_means = means.get(branch_root)
    if branch_means is None or dimension_name not in branch_means:
        return None
    return 1 if branch_means[dimension_name] < 0 else 0


def compute_feature_table(corpus: Corpus, means: MeanMap, strict: bool = True,
                          prev_scope: str = "discussion") -> list[FeatureRow]:
    """One FeatureRow per annotated non-root post.

    ``prev_scope`` selects the predecessor pool for dt_prev: the whole
    discussion (default) or the post's own branch plus the discussion root.
    Posts timestamped before their parent are dropped from the table (and
    hence from every model sample) with a warning; in strict mode a non-root
    post without annotations raises MissingAnnotation.
    """
    if prev_scope not in ("discussion", "branch"):
        raise ValueError(f"prev_scope must be 'discussion' or 'branch', "
                         f"got {prev_scope!r}")
    rows: list[FeatureRow] = []
    for discussion_id in corpus.discussion_ids():
        tree = corpus.discussions[discussion_id]
        ordered = corpus.posts_of(discussion_id)
        posts_by_id = {p.post_id: p for p in ordered}
        for post in ordered:
            depth = tree.depth[post.post_id]
            if depth == 0:
                continue
            if post.post_id not in means:
                if strict:
                    raise MissingAnnotation(
                        f"post {post.post_id} (discussion {discussion_id}) "
                        f"has no annotation")
                log.warning("skipping unannotated post %s", post.post_id)
                continue
            try:
                dt_par = delta_t_parent(post, posts_by_id)
            except NegativeDelta as err:
                log.warning("excluding %s from model samples: %s",
                            post.post_id, err)
                continue

            if prev_scope == "branch":
                branch = tree.branch_root_of[post.post_id]
                pool = [p for p in ordered
                        if p.post_id == tree.root_id
                        or tree.branch_root_of.get(p.post_id) == branch]
            else:
                pool = ordered
            dt_prev = delta_t_prev(post, pool)

            row = FeatureRow(
                post_id=post.post_id,
                discussion_id=discussion_id,
                depth=depth,
                dt_prev=dt_prev,
                dt_parent=dt_par,
                metric=dict(means[post.post_id]),
            )
            parent_annotated = (depth >= 2 and post.parent_id in means)
            for dim in DIMENSIONS:
                row.parent_metric[dim.name] = (
                    means[post.parent_id].get(dim.name)
                    if parent_annotated else None)
                row.sib_older_mean[dim.name] = older_sibling_mean(
                    post, dim.name, tree, posts_by_id, means)
                row.br_neg[dim.name] = br_neg_indicator(
                    post, dim.name, tree, means)
            rows.append(row)
    return rows


# --- CSV interchange ----------------------------------------------------------

def _csv_header() -> list[str]:
    header = ["post_id", "discussion_id", "depth", "dt_prev", "dt_parent"]
    for dim in DIMENSIONS:
        header += [f"{dim.name}_metric", f"{dim.name}_parent_metric",
                   f"{dim.name}_sib_older_mean", f"{dim.name}_br_neg"]
    return header


def _cell(value: float | int | None) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def write_features_csv(rows: list[FeatureRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_csv_header())
        for row in rows:
            record = [row.post_id, row.discussion_id, str(row.depth),
                      _cell(row.dt_prev), _cell(row.dt_parent)]
            for dim in DIMENSIONS:
                record += [
                    _cell(row.metric.get(dim.name)),
                    _cell(row.parent_metric.get(dim.name)),
                    _cell(row.sib_older_mean.get(dim.name)),
                    _cell(row.br_neg.get(dim.name)),
                ]
            writer.writerow(record)


def read_features_csv(path: str | Path) -> list[FeatureRow]:
    rows: list[FeatureRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = _csv_header()
        if reader.fieldnames != expected:
            raise ValueError(f"unexpected feature CSV header {reader.fieldnames}")
        for record in reader:
            def opt_float(key: str) -> float | None:
                return float(record[key]) if record[key] != "" else None

            row = FeatureRow(
                post_id=record["post_id"],
                discussion_id=record["discussion_id"],
                depth=int(record["depth"]),
                dt_prev=opt_float("dt_prev"),
                dt_parent=opt_float("dt_parent"),
                metric={},
            )
            for dim in DIMENSIONS:
                metric = opt_float(f"{dim.name}_metric")
                if metric is not None:
                    row.metric[dim.name] = metric
                row.parent_metric[dim.name] = opt_float(f"{dim.name}_parent_metric")
                row.sib_older_mean[dim.name] = opt_float(f"{dim.name}_sib_older_mean")
                br = record[f"{dim.name}_br_neg"]
                row.br_neg[dim.name] = int(br) if br != "" else None
            rows.append(row)
    return rows
