"""Replicated, schema-constrained annotation of parent-child post pairs.

Each (parent, child) pair is scored N times by a chat-style backend; every
request is an isolated conversation carrying only the two posts, and each
response must be a single JSON object with exactly one integer per dimension.
Scores are written through to an append-only JSONL cache keyed by
(content hash of parent+child+scale, model id, dimension, replication), so
reruns fetch only what is missing and a fully-cached run issues zero
backend requests. A deterministic offline mock backend stands in for the
live service in tests and reproducible pipelines.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import requests

from .corpus import Corpus, Post
from .dimensions import DIMENSIONS, AnnotationScale, Dimension
from .errors import (
    AnnotationFailed,
    AnnotationParseError,
    BackendError,
    EmptyText,
    ExtraKey,
    MissingKey,
    NonInteger,
    NotJson,
    OutOfRange,
)

log = logging.getLogger(__name__)

MOCK_MODEL_ID = "mock"


# --- prompt construction -------------------------------------------------------

@dataclass(frozen=True)
class Prompt:
    system: str
    user: str
    parent_text: str
    child_text: str


_SYSTEM_HEADER = (
    "You are a human annotator scoring replies in an online discussion. "
    "Score the CHILD post in relation to the PARENT post it replies to, "
    "not in isolation.\n"
    "Dimensions to score:\n"
)

_SYSTEM_FOOTER = (
    "\nRespond with a single JSON object and nothing else: no explanation, "
    "no reasoning, no text before or after the object. The object must have "
    "exactly these keys, each mapped to an integer score: {keys}."
)


def default_definitions(scale: AnnotationScale,
                        dimensions: Iterable[Dimension] = DIMENSIONS) -> dict[str, str]:
    """Paraphrased per-dimension instructions (the operator may override
    them with the original codebook text via configuration)."""
    return {
        d.name: (f"negative values mean the child post is more "
                 f"{d.negative_pole} toward the parent, positive values "
                 f"mean it is more {d.positive_pole}")
        for d in dimensions
    }


def build_prompt(parent_text: str, child_text: str,
                 dimensions: Iterable[Dimension] = DIMENSIONS,
                 scale: AnnotationScale = AnnotationScale(),
                 definitions: Mapping[str, str] | None = None) -> Prompt:
    """Deterministic system+user prompt; both scale bounds appear exactly
    once per dimension and user texts never leak into the system message."""
    if not parent_text.strip() or not child_text.strip():
        raise EmptyText("parent and child texts must be non-empty")
    dimensions = tuple(dimensions)
    if definitions is None:
        definitions = default_definitions(scale, dimensions)
    lines = []
    for d in dimensions:
        lines.append(f"- {d.name} (integer from {scale.min:+d} to "
                     f"{scale.max:+d}): {definitions[d.name]}.")
    keys = ", ".join(f'"{d.name}"' for d in dimensions)
    system = _SYSTEM_HEADER + "\n".join(lines) + _SYSTEM_FOOTER.format(keys=keys)
    user = (f"PARENT POST:\n<<<\n{parent_text}\n>>>\n\n"
            f"CHILD POST (score this one):\n<<<\n{child_text}\n>>>")
    return Prompt(system=system, user=user,
                  parent_text=parent_text, child_text=child_text)


# --- strict response parsing ----------------------------------------------------

def parse_annotation_json(text: str,
                          dimensions: Iterable[Dimension] = DIMENSIONS,
                          scale: AnnotationScale = AnnotationScale()) -> dict[str, int]:
    """Parse a backend response into one integer per dimension.

    Rejects anything that is not exactly one JSON object with exactly the
    expected keys and in-range integer values.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NotJson(f"not a single JSON document: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise NotJson(f"expected a JSON object, got {type(obj).__name__}")
    expected = [d.name for d in dimensions]
    missing = [k for k in expected if k not in obj]
    if missing:
        raise MissingKey(f"missing keys {missing}")
    extra = sorted(set(obj) - set(expected))
    if extra:
        raise ExtraKey(f"unexpected keys {extra}")
    scores: dict[str, int] = {}
    for key in expected:
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise NonInteger(f"{key}: {value!r} is not an integer")
        if not scale.contains(value):
            raise OutOfRange(f"{key}: {value} outside [{scale.min}, {scale.max}]")
        scores[key] = value
    return scores


# --- cache ----------------------------------------------------------------------

def pair_content_hash(parent_text: str, child_text: str,
                      scale: AnnotationScale) -> str:
    h = hashlib.sha256()
    h.update(b"pair\x00")
    h.update(parent_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(child_text.encode("utf-8"))
    h.update(f"\x00{scale.min}:{scale.max}".encode("ascii"))
    return h.hexdigest()


@dataclass(frozen=True)
class CacheKey:
    pair_hash: str
    model: str
    dimension: str
    replication: int


class AnnotationCache:
    """Append-only JSONL score cache, safe for concurrent appends from one
    process. Records: {pair_hash, model, dimension, replication, score,
    timestamp}."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._scores: dict[CacheKey, int] = {}
        self._appender: "object | None" = None
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = CacheKey(rec["pair_hash"], rec["model"],
                                   rec["dimension"], int(rec["replication"]))
                    self._scores[key] = int(rec["score"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    log.warning("ignoring malformed cache line %d in %s",
                                line_no, self.path)

    def __len__(self) -> int:
        return len(self._scores)

    def get(self, key: CacheKey) -> int | None:
        return self._scores.get(key)

    def put(self, key: CacheKey, score: int, timestamp: int) -> None:
        with self._lock:
            if key in self._scores:
                return
            self._scores[key] = score
            record = {"pair_hash": key.pair_hash, "model": key.model,
                      "dimension": key.dimension, "replication": key.replication,
                      "score": score, "timestamp": timestamp}
            if self._appender is None:
                self._appender = open(self.path, "a", encoding="utf-8",
                                      newline="\n")
            self._appender.write(json.dumps(record) + "\n")
            self._appender.flush()

    def close(self) -> None:
        with self._lock:
            if self._appender is not None:
                self._appender.close()
                self._appender = None

    def scores_for(self, pair_hash: str, model: str | None,
                   dimension: str, n_replications: int) -> list[int] | None:
        """Raw scores in replication order, or None if any is missing.

        With ``model=None`` any model's records are accepted (used when a
        cache is consumed standalone, e.g. a synthetic cache)."""
        out = []
        for rep in range(n_replications):
            if model is None:
                found = [s for key, s in self._scores.items()
                         if key.pair_hash == pair_hash
                         and key.dimension == dimension
                         and key.replication == rep]
                if not found:
                    return None
                out.append(found[0])
            else:
                score = self._scores.get(CacheKey(pair_hash, model, dimension, rep))
                if score is None:
                    return None
                out.append(score)
        return out

    def index_by_pair(self, n_replications: int,
                      model: str | None = None) -> dict[str, dict[str, list[int]]]:
        """pair_hash -> dimension -> replication-ordered scores, keeping only
        (pair, dimension) groups with the full replication set."""
        grouped: dict[str, dict[str, dict[int, int]]] = {}
        for key, score in self._scores.items():
            if model is not None and key.model != model:
                continue
            grouped.setdefault(key.pair_hash, {}).setdefault(
                key.dimension, {})[key.replication] = score
        out: dict[str, dict[str, list[int]]] = {}
        for pair_hash, dims in grouped.items():
            for dim_name, reps in dims.items():
                if set(reps) == set(range(n_replications)):
                    out.setdefault(pair_hash, {})[dim_name] = [
                        reps[r] for r in range(n_replications)]
        return out


# --- backends --------------------------------------------------------------------

class Backend(Protocol):
    model: str
    calls: int

    def complete(self, prompt: Prompt, replication_index: int) -> str: ...


@dataclass
class BackendConfig:
    url: str
    api_key_env: str
    model: str
    effort: str = "high"
    verbosity: str = "low"
    timeout: float = 60.0
    max_retries: int = 3
    concurrency: int = 1

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


class HttpBackend:
    """Chat-style HTTP backend.

    POSTs a JSON body {model, system, input, effort, verbosity}; the response
    must be a JSON object whose "output_text" field carries the assistant
    text. The bearer token is read from the configured environment variable
    and never logged.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        self.model = config.model
        self.calls = 0
        self._session = requests.Session()

    def complete(self, prompt: Prompt, replication_index: int) -> str:
        token = os.environ.get(self.config.api_key_env)
        if token is None:
            raise BackendError(
                f"API key environment variable {self.config.api_key_env!r} "
                f"is not set")
        body = {
            "model": self.config.model,
            "system": prompt.system,
            "input": prompt.user,
            "effort": self.config.effort,
            "verbosity": self.config.verbosity,
        }
        self.calls += 1
        try:
            response = self._session.post(
                self.config.url, json=body, timeout=self.config.timeout,
                headers={"Authorization": f"Bearer {token}"})
        except requests.RequestException as exc:
            raise BackendError(f"request failed: {exc}") from None
        if response.status_code != 200:
            raise BackendError(f"backend returned HTTP {response.status_code}")
        try:
            payload = response.json()
            return payload["output_text"]
        except (ValueError, KeyError, TypeError):
            raise BackendError("response JSON lacks 'output_text'") from None


def mock_annotate(parent_text: str, child_text: str, dimension_name: str,
                  replication_index: int, seed: int,
                  scale: AnnotationScale = AnnotationScale()) -> int:
    """Deterministic stand-in score: a stable hash of the pair texts,
    dimension, replication index and seed, mapped uniformly onto the scale."""
    h = hashlib.sha256()
    h.update(f"mock\x00{seed}\x00".encode("ascii"))
    h.update(parent_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(child_text.encode("utf-8"))
    h.update(f"\x00{dimension_name}\x00{replication_index}".encode("utf-8"))
    draw = int.from_bytes(h.digest()[:8], "big")
    return scale.min + draw % scale.n_points


class MockBackend:
    """Offline deterministic backend emitting valid JSON responses."""

    def __init__(self, seed: int = 0, scale: AnnotationScale = AnnotationScale(),
                 dimensions: Iterable[Dimension] = DIMENSIONS,
                 model: str = MOCK_MODEL_ID):
        self.seed = seed
        self.scale = scale
        self.dimensions = tuple(dimensions)
        self.model = model
        self.calls = 0

    def complete(self, prompt: Prompt, replication_index: int) -> str:
        self.calls += 1
        scores = {
            d.name: mock_annotate(prompt.parent_text, prompt.child_text,
                                  d.name, replication_index, self.seed,
                                  self.scale)
            for d in self.dimensions
        }
        return json.dumps(scores)


# --- annotation driver -------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    dimension: str
    raw_scores: tuple[int, ...]
    mean: float


def _record(pair_id: str, dimension: str, scores: list[int]) -> AnnotationRecord:
    return AnnotationRecord(pair_id=pair_id, dimension=dimension,
                            raw_scores=tuple(scores),
                            mean=sum(scores) / len(scores))


def annotate_pair(parent: Post, child: Post, backend: Backend,
                  cache: AnnotationCache,
                  scale: AnnotationScale = AnnotationScale(),
                  dimensions: Iterable[Dimension] = DIMENSIONS,
                  n_replications: int = 4,
                  max_retries: int = 3,
                  cache_timestamp: int = 0) -> dict[str, AnnotationRecord]:
    """Score one parent-child pair, cache-first.

    Each missing replication is requested as an isolated conversation and
    retried up to ``max_retries`` additional times on malformed output or
    transport errors; successful replications are cached immediately, so a
    failed run resumes where it stopped.
    """
    dimensions = tuple(dimensions)
    pair_hash = pair_content_hash(parent.text, child.text, scale)
    prompt = build_prompt(parent.text, child.text, dimensions, scale)
    per_rep: list[dict[str, int]] = []
    for rep in range(n_replications):
        cached = {d.name: cache.get(CacheKey(pair_hash, backend.model, d.name, rep))
                  for d in dimensions}
        if all(v is not None for v in cached.values()):
            per_rep.append(cached)  # type: ignore[arg-type]
            continue
        last_error: Exception | None = None
        scores = None
        for _attempt in range(max_retries + 1):
            try:
                text = backend.complete(prompt, rep)
                scores = parse_annotation_json(text, dimensions, scale)
                break
            except (AnnotationParseError, BackendError) as exc:
                last_error = exc
        if scores is None:
            raise AnnotationFailed(
                f"pair {child.post_id}, replication {rep}: giving up after "
                f"{max_retries + 1} attempts ({last_error})")
        for d in dimensions:
            cache.put(CacheKey(pair_hash, backend.model, d.name, rep),
                      scores[d.name], cache_timestamp)
        per_rep.append(scores)
    return {
        d.name: _record(child.post_id, d.name,
                        [per_rep[rep][d.name] for rep in range(n_replications)])
        for d in dimensions
    }


def annotate_corpus(corpus: Corpus, backend: Backend, cache: AnnotationCache,
                    scale: AnnotationScale = AnnotationScale(),
                    dimensions: Iterable[Dimension] = DIMENSIONS,
                    n_replications: int = 4, max_retries: int = 3,
                    concurrency: int = 1,
                    cache_timestamp: int = 0) -> dict[str, dict[str, AnnotationRecord]]:
    """Annotate every non-root post against its parent.

    Returns post_id -> dimension -> AnnotationRecord. Pairs are independent,
    so up to ``concurrency`` (pair x replication-set) requests run in
    flight at once.
    """
    pairs: list[tuple[Post, Post]] = []
    for discussion_id in corpus.discussion_ids():
        for post in corpus.posts_of(discussion_id):
            if post.parent_id is not None:
                pairs.append((corpus.posts[post.parent_id], post))

    def work(pair: tuple[Post, Post]) -> tuple[str, dict[str, AnnotationRecord]]:
        parent, child = pair
        records = annotate_pair(parent, child, backend, cache, scale,
                                dimensions, n_replications, max_retries,
                                cache_timestamp)
        return child.post_id, records

    results: dict[str, dict[str, AnnotationRecord]] = {}
    if concurrency <= 1:
        for pair in pairs:
            post_id, records = work(pair)
            results[post_id] = records
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            for post_id, records in pool.map(work, pairs):
                results[post_id] = records
    return results


def load_annotation_means(corpus: Corpus, cache: AnnotationCache,
                          scale: AnnotationScale = AnnotationScale(),
                          n_replications: int = 4,
                          model: str | None = None) -> dict[str, dict[str, float]]:
    """Join cached scores back onto posts via content hashes.

    Posts lacking a complete replication set on a dimension are omitted for
    that dimension. ``model=None`` accepts records from any model id.
    """
    by_pair = cache.index_by_pair(n_replications, model=model)
    means: dict[str, dict[str, float]] = {}
    for discussion_id in corpus.discussion_ids():
        for post in corpus.posts_of(discussion_id):
            if post.parent_id is None:
                continue
            parent = corpus.posts[post.parent_id]
            pair_hash = pair_content_hash(parent.text, post.text, scale)
            dims = by_pair.get(pair_hash)
            if not dims:
                continue
            means[post.post_id] = {
                dim_name: sum(scores) / len(scores)
                for dim_name, scores in dims.items()
            }
    return means


def load_annotation_records(corpus: Corpus, cache: AnnotationCache,
                            scale: AnnotationScale = AnnotationScale(),
                            n_replications: int = 4,
                            model: str | None = None,
                            ) -> dict[str, dict[str, AnnotationRecord]]:
    """Like load_annotation_means but with full replication detail."""
    by_pair = cache.index_by_pair(n_replications, model=model)
    records: dict[str, dict[str, AnnotationRecord]] = {}
    for discussion_id in corpus.discussion_ids():
        for post in corpus.posts_of(discussion_id):
            if post.parent_id is None:
                continue
            parent = corpus.posts[post.parent_id]
            pair_hash = pair_content_hash(parent.text, post.text, scale)
            dims = by_pair.get(pair_hash)
            if not dims:
                continue
            records[post.post_id] = {
                dim_name: _record(post.post_id, dim_name, scores)
                for dim_name, scores in dims.items()
            }
    return records
