import numpy as np
import pytest

from threadtone.corpus import Corpus
from threadtone.dimensions import DIMENSIONS
from threadtone.errors import MissingAnnotation, NegativeDelta
from threadtone.features import (
    br_neg_indicator,
    compute_feature_table,
    delta_t_parent,
    delta_t_prev,
    older_sibling_mean,
    read_features_csv,
    write_features_csv,
)

from conftest import corpus_from_posts, mk_post, random_tree_posts, uniform_means

DIM = DIMENSIONS[0].name


def flat_means(corpus: Corpus, scores: dict[str, float]) -> dict[str, dict[str, float]]:
    """Same score on every dimension, per post."""
    return {pid: {d.name: v for d in DIMENSIONS} for pid, v in scores.items()}


def test_delta_t_prev_examples():
    posts = [mk_post("A", timestamp=0),
             mk_post("B", parent_id="A", timestamp=2 * 3600),
             mk_post("C", parent_id="A", timestamp=5 * 3600)]
    ordered = sorted(posts, key=lambda p: p.order_key())
    assert delta_t_prev(posts[2], ordered) == pytest.approx(3.0)
    assert delta_t_prev(posts[0], ordered) is None
    # identical timestamps: the later-ordered post sees a zero gap
    tied = [mk_post("A", timestamp=0),
            mk_post("B", parent_id="A", timestamp=100),
            mk_post("C", parent_id="A", timestamp=100)]
    ordered = sorted(tied, key=lambda p: p.order_key())
    assert delta_t_prev(tied[2], ordered) == 0.0


def test_delta_t_parent_examples():
    parent = mk_post("P", timestamp=4 * 3600)
    child = mk_post("C", parent_id="P", timestamp=10 * 3600)
    posts_by_id = {"P": parent, "C": child}
    assert delta_t_parent(child, posts_by_id) == pytest.approx(6.0)
    assert delta_t_parent(mk_post("R"), posts_by_id) is None
    early = mk_post("E", parent_id="P", timestamp=0)
    with pytest.raises(NegativeDelta):
        delta_t_parent(early, {"P": parent, "E": early})


def test_older_sibling_mean_examples(four_node_corpus):
    corpus = corpus_from_posts([
        mk_post("A", timestamp=0),
        mk_post("s1", parent_id="A", timestamp=1),
        mk_post("s2", parent_id="A", timestamp=2),
        mk_post("s3", parent_id="A", timestamp=3),
        mk_post("s4", parent_id="A", timestamp=4),
    ])
    tree = corpus.discussions["d1"]
    by_id = corpus.posts
    means = flat_means(corpus, {"s1": -2.0, "s2": 0.0, "s3": 4.0, "s4": 0.0})
    assert older_sibling_mean(by_id["s4"], DIM, tree, by_id, means) == \
        pytest.approx(2.0 / 3.0, abs=1e-9)
    assert older_sibling_mean(by_id["s1"], DIM, tree, by_id, means) is None
    means_single = flat_means(corpus, {"s1": 3.0, "s2": 0.0})
    assert older_sibling_mean(by_id["s2"], DIM, tree, by_id, means_single) == 3.0


def test_br_neg_examples(four_node_corpus):
    tree = four_node_corpus.discussions["d1"]
    d_post = four_node_corpus.posts["D"]
    b_post = four_node_corpus.posts["B"]
    for score, expected in ((-1.25, 1), (0.0, 0), (2.5, 0)):
        means = flat_means(four_node_corpus, {"B": score, "C": 0.0, "D": 0.0})
        assert br_neg_indicator(d_post, DIM, tree, means) == expected
    means = flat_means(four_node_corpus, {"B": -1.0, "C": 0.0, "D": 0.0})
    assert br_neg_indicator(b_post, DIM, tree, means) is None


def test_feature_table_presence_walkthrough(four_node_corpus):
    means = flat_means(four_node_corpus, {"B": 1.5, "C": -2.0, "D": 0.25})
    rows = {r.post_id: r for r in compute_feature_table(four_node_corpus, means)}
    assert set(rows) == {"B", "C", "D"}

    c = rows["C"]
    assert c.sib_older_mean[DIM] == 1.5          # B is the older sibling
    assert c.parent_metric[DIM] is None          # parent is the root
    assert c.br_neg[DIM] is None

    d = rows["D"]
    assert d.parent_metric[DIM] == 1.5           # B's metric
    assert d.sib_older_mean[DIM] is None
    assert d.br_neg[DIM] == 0                    # branch root B scored +1.5

    b = rows["B"]
    assert b.parent_metric[DIM] is None
    assert b.sib_older_mean[DIM] is None
    assert b.br_neg[DIM] is None


def test_root_only_corpus_gives_empty_table():
    corpus = corpus_from_posts([mk_post("A"), mk_post("X", discussion_id="d2")])
    assert compute_feature_table(corpus, {}) == []


def test_strict_vs_lenient_missing_annotation(four_node_corpus):
    means = flat_means(four_node_corpus, {"B": 1.0, "D": 2.0})  # C missing
    with pytest.raises(MissingAnnotation):
        compute_feature_table(four_node_corpus, means, strict=True)
    rows = compute_feature_table(four_node_corpus, means, strict=False)
    assert {r.post_id for r in rows} == {"B", "D"}


def test_negative_delta_rows_are_excluded(caplog):
    corpus = corpus_from_posts([
        mk_post("A", timestamp=1000),
        mk_post("B", parent_id="A", timestamp=2000),
        mk_post("C", parent_id="B", timestamp=500),  # predates its parent
    ])
    means = flat_means(corpus, {"B": 1.0, "C": 1.0})
    rows = compute_feature_table(corpus, means, strict=False)
    assert {r.post_id for r in rows} == {"B"}


def test_presence_partition_and_dt_bounds():
    rng = np.random.default_rng(11)
    for trial in range(15):
        posts = random_tree_posts(rng, int(rng.integers(2, 80)))
        corpus = corpus_from_posts(posts)
        means = uniform_means(corpus, rng)
        rows = compute_feature_table(corpus, means)
        tree = corpus.discussions["d1"]
        root_time = corpus.posts[tree.root_id].timestamp
        for row in rows:
            assert (row.depth == 1) == (row.parent_metric[DIM] is None)
            post = corpus.posts[row.post_id]
            older = [pid for pid in tree.children[post.parent_id]
                     if corpus.posts[pid].order_key() < post.order_key()]
            assert (not older) == (row.sib_older_mean[DIM] is None)
            assert (row.depth >= 2) == (row.br_neg[DIM] is not None)
            # the predecessor is never earlier than the root
            dt_root = (post.timestamp - root_time) / 3600.0
            assert row.dt_prev is not None
            assert row.dt_prev <= dt_root + 1e-12


def test_scale_sign_invariance_of_br_neg():
    rng = np.random.default_rng(13)
    posts = random_tree_posts(rng, 60)
    corpus = corpus_from_posts(posts)
    means = uniform_means(corpus, rng)
    rows = {r.post_id: r for r in compute_feature_table(corpus, means)}
    for c in (0.1, 3.0, 250.0):
        scaled = {pid: {k: c * v for k, v in vals.items()}
                  for pid, vals in means.items()}
        scaled_rows = {r.post_id: r
                       for r in compute_feature_table(corpus, scaled)}
        for pid, row in rows.items():
            assert scaled_rows[pid].br_neg == row.br_neg


def test_adding_sibling_at_mean_keeps_mean():
    corpus = corpus_from_posts([
        mk_post("A", timestamp=0),
        mk_post("s1", parent_id="A", timestamp=1),
        mk_post("s2", parent_id="A", timestamp=2),
        mk_post("s3", parent_id="A", timestamp=3),
        mk_post("s4", parent_id="A", timestamp=4),
    ])
    tree = corpus.discussions["d1"]
    by_id = corpus.posts
    means = flat_means(corpus, {"s1": -1.0, "s2": 4.0, "s3": 0.0, "s4": 0.0})
    before = older_sibling_mean(by_id["s3"], DIM, tree, by_id, means)
    # give s3 exactly the running mean, then look from s4
    means = flat_means(corpus, {"s1": -1.0, "s2": 4.0, "s3": before, "s4": 0.0})
    after = older_sibling_mean(by_id["s4"], DIM, tree, by_id, means)
    assert after == pytest.approx(before, abs=1e-12)


def test_prev_scope_branch():
    # two branches; within-branch predecessor differs from global one
    corpus = corpus_from_posts([
        mk_post("A", timestamp=0),
        mk_post("B", parent_id="A", timestamp=1 * 3600),   # branch B
        mk_post("C", parent_id="A", timestamp=2 * 3600),   # branch C
        mk_post("D", parent_id="B", timestamp=3 * 3600),   # in branch B
    ])
    means = flat_means(corpus, {"B": 0.0, "C": 0.0, "D": 0.0})
    rows = {r.post_id: r
            for r in compute_feature_table(corpus, means, prev_scope="branch")}
    # D's predecessor within branch B is B (2 h ago), not C (1 h ago)
    assert rows["D"].dt_prev == pytest.approx(2.0)
    global_rows = {r.post_id: r for r in compute_feature_table(corpus, means)}
    assert global_rows["D"].dt_prev == pytest.approx(1.0)
    # a branch root's predecessor is the discussion root
    assert rows["C"].dt_prev == pytest.approx(2.0)


def test_feature_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    posts = random_tree_posts(rng, 40)
    corpus = corpus_from_posts(posts)
    means = uniform_means(corpus, rng)
    rows = compute_feature_table(corpus, means)
    path = tmp_path / "features.csv"
    write_features_csv(rows, path)
    loaded = read_features_csv(path)
    assert loaded == rows


def test_output_order_is_deterministic():
    rng = np.random.default_rng(17)
    posts = random_tree_posts(rng, 30, "dB") + random_tree_posts(rng, 20, "dA")
    corpus = corpus_from_posts(posts)
    means = uniform_means(corpus, rng)
    rows = compute_feature_table(corpus, means)
    keys = [(r.discussion_id, corpus.posts[r.post_id].timestamp, r.post_id)
            for r in rows]
    assert keys == sorted(keys)
