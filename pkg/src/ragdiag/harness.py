"""Desk-scale hybrid retrieval: chunking, BM25, exact dense ranking, and
alpha-weighted reciprocal rank fusion.

The fused score of a chunk ``d`` is

    (1 - alpha) * sum 1 / (rrf_k + r_sparse(d)) + alpha * sum 1 / (rrf_k + r_dense(d))

where a list that does not contain ``d`` contributes nothing. ``alpha = 0``
is pure lexical retrieval and ``alpha = 1`` pure dense retrieval.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import EvalRecord, RetrievedContext
from .embeddings import Embedder
from .normalize import NormalizationRules, normalize_text, tokenize

log = logging.getLogger(__name__)

Ranking = list[tuple[str, float]]


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 1024
    overlap: int = 100

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must satisfy 0 <= overlap < chunk_size")

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 1.0
    rrf_k: int = 60
    top_k: int = 3
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.rrf_k < 1:
            raise ValueError("rrf_k must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    start: int
    tokens: tuple[str, ...] = field(repr=False)


@dataclass(frozen=True)
class Corpus:
    """Immutable chunk store with BM25 statistics over normalized tokens."""

    chunks: tuple[Chunk, ...]
    term_freqs: tuple[Counter, ...] = field(repr=False)
    doc_freqs: Counter = field(repr=False)
    avg_length: float

    @classmethod
    def from_chunks(cls, chunks: Iterable[Chunk]) -> Corpus:
        chunks = tuple(chunks)
        ids = [c.chunk_id for c in chunks]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate chunk ids: {dupes}")
        tfs = tuple(Counter(c.tokens) for c in chunks)
        df: Counter = Counter()
        for tf in tfs:
            df.update(tf.keys())
        avg = sum(len(c.tokens) for c in chunks) / len(chunks) if chunks else 0.0
        return cls(chunks, tfs, df, avg)

    def __len__(self) -> int:
        return len(self.chunks)

    def by_id(self, chunk_id: str) -> Chunk:
        for c in self.chunks:
            if c.chunk_id == chunk_id:
                return c
        raise KeyError(chunk_id)


def index_tokens(text: str, rules: NormalizationRules | None = None) -> list[str]:
    return tokenize(normalize_text(text, rules))


def chunk_documents(
    docs: Iterable[tuple[str, str]],
    cfg: ChunkingConfig = ChunkingConfig(),
    rules: NormalizationRules | None = None,
) -> Corpus:
    """Cut each document into overlapping windows of whitespace-delimited words.

    Consecutive chunks share exactly ``cfg.overlap`` words; the last chunk of
    a document may be shorter. Chunk ids are ``"{doc_id}::{i:04d}"``.
    """
    chunks = []
    for doc_id, text in docs:
        words = text.split()
        if not words:
            log.warning("document %r is empty; no chunks produced", doc_id)
            continue
        start = 0
        i = 0
        while True:
            window = words[start:start + cfg.chunk_size]
            body = " ".join(window)
            chunks.append(Chunk(f"{doc_id}::{i:04d}", doc_id, body, start, tuple(index_tokens(body, rules))))
            if start + cfg.chunk_size >= len(words):
                break
            start += cfg.stride
            i += 1
    return Corpus.from_chunks(chunks)


def _rank(scored: Iterable[tuple[str, float]], top_n: int | None) -> Ranking:
    ranked = sorted(scored, key=lambda p: (-p[1], p[0]))
    return ranked if top_n is None else ranked[:top_n]


def bm25_rank(
    query: str,
    corpus: Corpus,
    top_n: int | None = None,
    k1: float = 1.2,
    b: float = 0.75,
    rules: NormalizationRules | None = None,
) -> Ranking:
    """Okapi BM25 with the non-negative idf ``log(1 + (N - df + 0.5) / (df + 0.5))``.

    Only chunks with a positive score are returned.
    """
    n = len(corpus)
    q_terms = index_tokens(query, rules)
    if not n or not q_terms:
        return []
    scores = []
    for chunk, tf in zip(corpus.chunks, corpus.term_freqs):
        norm = k1 * (1 - b + b * len(chunk.tokens) / corpus.avg_length) if corpus.avg_length else k1
        s = 0.0
        for term in q_terms:
            f = tf.get(term, 0)
            if not f:
                continue
            df = corpus.doc_freqs[term]
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * f * (k1 + 1) / (f + norm)
        if s > 0:
            scores.append((chunk.chunk_id, s))
    return _rank(scores, top_n)


def dense_rank(query: str, corpus: Corpus, embedder: Embedder, top_n: int | None = None) -> Ranking:
    """Exhaustive cosine ranking of every chunk against the query."""
    if not len(corpus) or not query.strip():
        return []
    vectors = embedder.embed([query, *(c.text for c in corpus.chunks)])
    mat = np.stack([v.values for v in vectors])
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding in dense ranking")
    unit = mat / norms[:, None]
    cos = np.clip(unit[1:] @ unit[0], -1.0, 1.0)
    return _rank(((c.chunk_id, float(s)) for c, s in zip(corpus.chunks, cos)), top_n)


def rrf_scores(sparse: Sequence[tuple[str, float]], dense: Sequence[tuple[str, float]],
               alpha: float, rrf_k: int = 60) -> dict[str, float]:
    fused: dict[str, float] = {}
    for weight, ranking in ((1.0 - alpha, sparse), (alpha, dense)):
        for r, (doc, _) in enumerate(ranking, start=1):
            fused[doc] = fused.get(doc, 0.0) + weight / (rrf_k + r)
    return fused


def rrf_fuse(sparse: Sequence[tuple[str, float]], dense: Sequence[tuple[str, float]],
             cfg: FusionConfig = FusionConfig()) -> Ranking:
    """Fuse two rankings; ties break on dense rank, then chunk id.

    Chunks whose fused score is zero (present only in a list weighted 0) are
    dropped, so ``alpha = 0`` returns exactly the lexical ranking.
    """
    fused = rrf_scores(sparse, dense, cfg.alpha, cfg.rrf_k)
    dense_pos: dict[str, int] = {}
    for r, (doc, _) in enumerate(dense, start=1):
        dense_pos.setdefault(doc, r)
    ordered = sorted(
        ((d, s) for d, s in fused.items() if s > 0),
        key=lambda p: (-p[1], dense_pos.get(p[0], math.inf), p[0]),
    )
    return ordered[: cfg.top_k]


def retrieve(query: str, corpus: Corpus, cfg: FusionConfig, embedder: Embedder | None,
             rules: NormalizationRules | None = None) -> list[RetrievedContext]:
    """Hybrid retrieval returning contexts ranked 1..n (n <= top_k).

    Raises:
        ValueError: if ``alpha > 0`` and no embedder is given.
    """
    sparse = bm25_rank(query, corpus, k1=cfg.bm25_k1, b=cfg.bm25_b, rules=rules) if cfg.alpha < 1 else []
    if cfg.alpha > 0:
        if embedder is None:
            raise ValueError("dense retrieval (alpha > 0) needs an embedder")
        dense = dense_rank(query, corpus, embedder)
    else:
        dense = []
    fused = rrf_fuse(sparse, dense, cfg)
    if len(fused) < cfg.top_k:
        log.warning("query %r: only %d of %d contexts retrieved", query[:60], len(fused), cfg.top_k)
    return [
        RetrievedContext(rank, corpus.by_id(doc).text, score)
        for rank, (doc, score) in enumerate(fused, start=1)
    ]


def retrieve_records(queries: Sequence[dict], corpus: Corpus, cfg: FusionConfig,
                     embedder: Embedder | None, rules: NormalizationRules | None = None) -> list[EvalRecord]:
    """Attach retrieved contexts to query dicts, leaving answers empty."""
    out = []
    for q in queries:
        out.append(EvalRecord(
            query_id=q["query_id"],
            question=q["question"],
            ground_truth=q.get("ground_truth", ""),
            contexts=tuple(retrieve(q["question"], corpus, cfg, embedder, rules)),
            task_type=q.get("task_type", "short_answer"),
        ))
    return out


def sweep(queries: Sequence[dict], corpus: Corpus, alphas: Sequence[float], base: FusionConfig,
          embedder: Embedder | None, rules: NormalizationRules | None = None) -> dict[float, list[EvalRecord]]:
    """Retrieve the same queries at several alpha values."""
    return {a: retrieve_records(queries, corpus, replace(base, alpha=a), embedder, rules) for a in alphas}


def load_documents(path: str | Path) -> list[tuple[str, str]]:
    """Read a directory of ``*.txt`` files (doc id = file name) or a JSONL file
    of ``{"doc_id", "text"}`` objects.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        ValueError: on malformed JSONL lines.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    if path.is_dir():
        return [(p.name, p.read_text(encoding="utf-8")) for p in sorted(path.glob("*.txt"))]
    docs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            docs.append((str(obj["doc_id"]), str(obj["text"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path} line {lineno}: expected {{doc_id, text}} ({exc})") from exc
    return docs


def load_queries(path: str | Path) -> list[dict]:
    """Read JSONL queries with at least ``query_id`` and ``question``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"queries file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path} line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict) or not isinstance(obj.get("query_id"), str) \
                or not isinstance(obj.get("question"), str):
            raise ValueError(f"{path} line {lineno}: needs string fields query_id and question")
        out.append(obj)
    return out
