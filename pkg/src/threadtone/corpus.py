"""Threaded-discussion corpus: line-delimited JSON parsing and reply trees.

The interchange format is one JSON object per line with exactly the fields
``post_id, discussion_id, parent_id (nullable), author (nullable), timestamp,
text``. Each discussion must form a single rooted reply tree; sibling order
is (timestamp, post_id), so parsing is fully deterministic even under
timestamp ties.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import (
    CorpusError,
    CycleDetected,
    DuplicateId,
    MalformedRecord,
    MissingTimestamp,
    MultipleRoots,
    OrphanPost,
)

log = logging.getLogger(__name__)

RECORD_FIELDS = ("post_id", "discussion_id", "parent_id", "author", "timestamp", "text")


@dataclass(frozen=True)
class Post:
    post_id: str
    discussion_id: str
    parent_id: str | None
    author: str | None
    timestamp: int
    text: str

    def order_key(self) -> tuple[int, str]:
        return (self.timestamp, self.post_id)


@dataclass(frozen=True)
class DiscussionTree:
    discussion_id: str
    root_id: str
    children: dict[str, tuple[str, ...]]
    depth: dict[str, int]
    branch_root_of: dict[str, str]

    @property
    def n_nodes(self) -> int:
        return len(self.depth)

    @property
    def n_edges(self) -> int:
        return sum(len(c) for c in self.children.values())


@dataclass(frozen=True)
class Corpus:
    discussions: dict[str, DiscussionTree]
    posts: dict[str, Post]

    def posts_of(self, discussion_id: str) -> list[Post]:
        """Posts of one discussion in global (timestamp, post_id) order."""
        tree = self.discussions[discussion_id]
        return sorted((self.posts[pid] for pid in tree.depth), key=Post.order_key)

    def discussion_ids(self) -> list[str]:
        return sorted(self.discussions)

    def parent_of(self, post_id: str) -> Post | None:
        parent_id = self.posts[post_id].parent_id
        return None if parent_id is None else self.posts[parent_id]


def build_tree(posts: Iterable[Post]) -> DiscussionTree:
    """Assemble one discussion's posts into a validated reply tree.

    Raises MultipleRoots, OrphanPost or CycleDetected on structural
    violations; a post set with no root necessarily contains a cycle.
    """
    posts = list(posts)
    if not posts:
        raise CorpusError("empty discussion")
    discussion_id = posts[0].discussion_id
    by_id = {}
    for post in posts:
        if post.discussion_id != discussion_id:
            raise CorpusError(
                f"mixed discussion ids {discussion_id!r} and {post.discussion_id!r}",
                discussion_id=discussion_id, post_id=post.post_id)
        if post.post_id in by_id:
            raise DuplicateId(f"post id {post.post_id!r} repeated",
                              discussion_id=discussion_id, post_id=post.post_id)
        by_id[post.post_id] = post

    roots = [p for p in posts if p.parent_id is None]
    if len(roots) > 1:
        raise MultipleRoots(
            f"{len(roots)} roots: {', '.join(sorted(p.post_id for p in roots))}",
            discussion_id=discussion_id)
    for post in posts:
        if post.parent_id is not None and post.parent_id not in by_id:
            raise OrphanPost(f"parent {post.parent_id!r} not found",
                             discussion_id=discussion_id, post_id=post.post_id)
    if not roots:
        raise CycleDetected("no root post; parent links form a cycle",
                            discussion_id=discussion_id)
    root = roots[0]

    child_lists: dict[str, list[str]] = defaultdict(list)
    for post in sorted(posts, key=Post.order_key):
        if post.parent_id is not None:
            child_lists[post.parent_id].append(post.post_id)

    depth: dict[str, int] = {root.post_id: 0}
    branch_root_of: dict[str, str] = {}
    queue = [root.post_id]
    while queue:
        pid = queue.pop(0)
        for child in child_lists.get(pid, ()):
            depth[child] = depth[pid] + 1
            branch_root_of[child] = child if depth[child] == 1 else branch_root_of[pid]
            queue.append(child)
    if len(depth) != len(posts):
        unreachable = sorted(set(by_id) - set(depth))
        raise CycleDetected(
            f"{len(unreachable)} posts unreachable from root (cycle): "
            f"{', '.join(unreachable[:5])}",
            discussion_id=discussion_id, post_id=unreachable[0])

    return DiscussionTree(
        discussion_id=discussion_id,
        root_id=root.post_id,
        children={pid: tuple(kids) for pid, kids in child_lists.items()},
        depth=depth,
        branch_root_of=branch_root_of,
    )


def _parse_record(raw: str, line_no: int) -> Post:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON ({exc.msg})", line_no=line_no) from None
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object", line_no=line_no)

    extra = set(obj) - set(RECORD_FIELDS)
    if extra:
        raise MalformedRecord(f"unexpected fields {sorted(extra)}", line_no=line_no,
                              post_id=obj.get("post_id"))
    missing = [f for f in RECORD_FIELDS if f not in obj and f != "timestamp"]
    if missing:
        raise MalformedRecord(f"missing fields {missing}", line_no=line_no,
                              post_id=obj.get("post_id"))
    if "timestamp" not in obj or obj["timestamp"] is None:
        raise MissingTimestamp("timestamp absent", line_no=line_no,
                               post_id=obj.get("post_id"),
                               discussion_id=obj.get("discussion_id"))

    post_id, discussion_id = obj["post_id"], obj["discussion_id"]
    parent_id, author = obj["parent_id"], obj["author"]
    timestamp, text = obj["timestamp"], obj["text"]
    if not isinstance(post_id, str) or not isinstance(discussion_id, str):
        raise MalformedRecord("post_id and discussion_id must be strings",
                              line_no=line_no)
    if parent_id is not None and not isinstance(parent_id, str):
        raise MalformedRecord("parent_id must be a string or null",
                              line_no=line_no, post_id=post_id)
    if author is not None and not isinstance(author, str):
        raise MalformedRecord("author must be a string or null",
                              line_no=line_no, post_id=post_id)
    if isinstance(timestamp, bool) or not isinstance(timestamp, int):
        raise MalformedRecord("timestamp must be an integer (epoch seconds)",
                              line_no=line_no, post_id=post_id,
                              discussion_id=discussion_id)
    if timestamp < 0:
        raise MalformedRecord("timestamp must be non-negative",
                              line_no=line_no, post_id=post_id,
                              discussion_id=discussion_id)
    if not isinstance(text, str):
        raise MalformedRecord("text must be a string", line_no=line_no,
                              post_id=post_id, discussion_id=discussion_id)
    return Post(post_id=post_id, discussion_id=discussion_id, parent_id=parent_id,
                author=author, timestamp=timestamp, text=text)


def parse_corpus(source: IO[str] | IO[bytes] | Iterable[str],
                 lenient: bool = False,
                 diagnostics: list[str] | None = None) -> Corpus:
    """Parse line-delimited JSON posts into a validated Corpus.

    In strict mode (default) the first structural violation raises. In
    lenient mode, violations are logged, recorded in ``diagnostics`` (if
    given), and the offending discussion is dropped; unattributable lines
    (bad JSON) are dropped individually.
    """
    def note(err: CorpusError) -> None:
        line = err.diagnostic()
        if diagnostics is not None:
            diagnostics.append(line)
        log.warning("%s", line)

    by_discussion: dict[str, list[Post]] = defaultdict(list)
    seen_ids: dict[str, str] = {}
    dropped: set[str] = set()

    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            post = _parse_record(raw, line_no)
        except CorpusError as err:
            if not lenient:
                raise
            note(err)
            if err.discussion_id is not None:
                dropped.add(err.discussion_id)
            continue
        if post.post_id in seen_ids:
            err = DuplicateId(
                f"post id {post.post_id!r} already used in discussion "
                f"{seen_ids[post.post_id]!r}",
                discussion_id=post.discussion_id, post_id=post.post_id,
                line_no=line_no)
            if not lenient:
                raise err
            note(err)
            dropped.add(post.discussion_id)
            dropped.add(seen_ids[post.post_id])
            continue
        seen_ids[post.post_id] = post.discussion_id
        by_discussion[post.discussion_id].append(post)

    discussions: dict[str, DiscussionTree] = {}
    posts: dict[str, Post] = {}
    for discussion_id in sorted(by_discussion):
        if discussion_id in dropped:
            continue
        group = by_discussion[discussion_id]
        try:
            tree = build_tree(group)
        except CorpusError as err:
            if not lenient:
                raise
            note(err)
            continue
        discussions[discussion_id] = tree
        for post in group:
            posts[post.post_id] = post

    return Corpus(discussions=discussions, posts=posts)


def load_corpus(path: str | Path, lenient: bool = False,
                diagnostics: list[str] | None = None) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_corpus(fh, lenient=lenient, diagnostics=diagnostics)


def post_to_json(post: Post) -> str:
    record = {
        "post_id": post.post_id,
        "discussion_id": post.discussion_id,
        "parent_id": post.parent_id,
        "author": post.author,
        "timestamp": post.timestamp,
        "text": post.text,
    }
    return json.dumps(record, ensure_ascii=False)


def serialize_corpus(corpus: Corpus) -> Iterator[str]:
    """Emit interchange lines in deterministic (discussion, time, id) order."""
    for discussion_id in corpus.discussion_ids():
        for post in corpus.posts_of(discussion_id):
            yield post_to_json(post)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in serialize_corpus(corpus):
            fh.write(line + "\n")


def validate_corpus(path: str | Path, lenient: bool = False) -> tuple[Corpus | None, list[str]]:
    """Validate an interchange file; returns (corpus-or-None, diagnostics).

    Strict mode returns ``(None, [diagnostic])`` on the first violation;
    lenient mode always returns a corpus with offending discussions dropped.
    """
    diagnostics: list[str] = []
    try:
        corpus = load_corpus(path, lenient=lenient, diagnostics=diagnostics)
    except CorpusError as err:
        return None, [err.diagnostic()]
    return corpus, diagnostics
