"""Shared builders for corpus and annotation test data."""

from __future__ import annotations

import numpy as np
import pytest

from threadtone.corpus import Corpus, Post, build_tree
from threadtone.dimensions import DIMENSIONS


def mk_post(post_id: str, discussion_id: str = "d1", parent_id: str | None = None,
            timestamp: int = 0, author: str | None = "a",
            text: str | None = None) -> Post:
    return Post(post_id=post_id, discussion_id=discussion_id,
                parent_id=parent_id, author=author, timestamp=timestamp,
                text=text if text is not None else f"text of {post_id}")


def corpus_from_posts(posts: list[Post]) -> Corpus:
    by_discussion: dict[str, list[Post]] = {}
    for post in posts:
        by_discussion.setdefault(post.discussion_id, []).append(post)
    return Corpus(
        discussions={did: build_tree(group)
                     for did, group in by_discussion.items()},
        posts={p.post_id: p for p in posts},
    )


def random_tree_posts(rng: np.random.Generator, n: int,
                      discussion_id: str = "d1",
                      allow_ties: bool = False) -> list[Post]:
    """A random reply tree: node i >= 1 replies to a uniform earlier node;
    timestamps never precede the parent's."""
    posts = [mk_post(f"{discussion_id}-p{0:04d}", discussion_id, None, 0)]
    times = [0]
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        step = int(rng.integers(0, 5)) if allow_ties else int(rng.integers(1, 3600))
        t = times[parent] + step
        posts.append(mk_post(f"{discussion_id}-p{i:04d}", discussion_id,
                             posts[parent].post_id, t))
        times.append(t)
    return posts


def uniform_means(corpus: Corpus, rng: np.random.Generator,
                  lo: float = -5.0, hi: float = 5.0) -> dict[str, dict[str, float]]:
    """Random post-level means for every non-root post."""
    means: dict[str, dict[str, float]] = {}
    for did in corpus.discussion_ids():
        tree = corpus.discussions[did]
        for pid, depth in tree.depth.items():
            if depth == 0:
                continue
            means[pid] = {d.name: float(rng.uniform(lo, hi)) for d in DIMENSIONS}
    return means


@pytest.fixture
def four_node_corpus() -> Corpus:
    """A root; B, C reply to A; D replies to B."""
    return corpus_from_posts([
        mk_post("A", timestamp=0),
        mk_post("B", parent_id="A", timestamp=3600),
        mk_post("C", parent_id="A", timestamp=7200),
        mk_post("D", parent_id="B", timestamp=10800),
    ])
