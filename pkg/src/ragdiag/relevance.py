"""Binary context relevance: does retrieved context c contain the answer?

Realized as a short-circuit cascade over normalized text:

1. the ground truth occurs verbatim in the context (token-boundary substring)
2. ground-truth token containment ratio >= ``token_overlap_min``
3. max cosine between the ground truth and any context sentence >= ``semantic_min``

Thresholds are inclusive.
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .dataset import EvalSet
from .embeddings import Embedder, EmbeddingVector, cosine_similarity
from .normalize import NormalizationRules, contains_phrase, normalize_text, tokenize

LEVELS = ("exact_substring", "token_overlap", "semantic", "none")


class RelevanceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RelevanceThresholds:
    token_overlap_min: float = 0.80
    semantic_min: float = 0.75

    def __post_init__(self):
        for name in ("token_overlap_min", "semantic_min"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass(frozen=True)
class RelevanceVerdict:
    hit: bool
    level: str
    score: float

    def to_dict(self) -> dict:
        return {"hit": self.hit, "level": self.level, "score": self.score}


def token_overlap(ground_truth: str, context: str) -> float:
    """Fraction of the ground truth's unique tokens that occur in the context."""
    gt = set(tokenize(ground_truth))
    if not gt:
        return 0.0
    return len(gt & set(tokenize(context))) / len(gt)


_SENTENCE_END = re.compile(r"[.?!;]+(?=\s|$)")
_NO_SPLIT_AFTER = frozenset(
    "e.g i.e dr drs mr mrs ms vs etc fig figs no approx al st jr sr inc ca cf resp vol".split()
)


def split_sentences(text: str) -> list[str]:
    """Split on ``. ? ! ;`` followed by whitespace, guarding common abbreviations
    and single-letter initials."""
    out = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        if m.group(0) == ".":
            words = text[start:m.start()].split()
            prev = words[-1].lower() if words else ""
            if prev in _NO_SPLIT_AFTER or (len(prev) == 1 and prev.isalpha()):
                continue
        piece = text[start:m.end()].strip()
        if piece:
            out.append(piece)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def _lexical_verdict(context: str, ground_truth: str, thresholds: RelevanceThresholds):
    if contains_phrase(context, ground_truth):
        return RelevanceVerdict(True, "exact_substring", 1.0), 1.0
    ratio = token_overlap(ground_truth, context)
    if ratio >= thresholds.token_overlap_min:
        return RelevanceVerdict(True, "token_overlap", ratio), ratio
    return None, ratio


def relevance(
    context: str,
    ground_truth: str,
    thresholds: RelevanceThresholds = RelevanceThresholds(),
    embedder: Embedder | None = None,
    sentences: Sequence[str] | None = None,
) -> RelevanceVerdict:
    """Run the cascade on already-normalized ``context`` and ``ground_truth``.

    ``sentences`` are the normalized context sentences for the semantic stage;
    by default the context itself is split. Without an embedder the semantic
    stage is skipped and a miss reports the token-overlap ratio as its score.
    The embedder is only consulted when the lexical stages did not decide.
    """
    verdict, ratio = _lexical_verdict(context, ground_truth, thresholds)
    if verdict is not None:
        return verdict
    if embedder is None or not ground_truth:
        return RelevanceVerdict(False, "none", ratio)
    if sentences is None:
        sentences = split_sentences(context)
    sentences = [s for s in sentences if s.strip()]
    if not sentences:
        return RelevanceVerdict(False, "none", ratio)
    vectors = embedder.embed([ground_truth, *sentences])
    best = max(cosine_similarity(vectors[0], v) for v in vectors[1:])
    if best >= thresholds.semantic_min:
        return RelevanceVerdict(True, "semantic", best)
    return RelevanceVerdict(False, "none", best)


@dataclass(frozen=True)
class HitMatrix:
    """Relevance verdicts for every (query, rank). Rows may be shorter than ``k``;
    missing ranks count as non-hits."""

    query_ids: tuple[str, ...]
    rows: tuple[tuple[bool, ...], ...]
    k: int
    verdicts: tuple[tuple[RelevanceVerdict, ...], ...] = ()
    annotations: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.query_ids) != len(self.rows):
            raise ValueError("query_ids and rows differ in length")
        if any(len(r) > self.k for r in self.rows):
            raise ValueError(f"a row is longer than k={self.k}")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[bool]], k: int | None = None,
                  query_ids: Sequence[str] | None = None) -> HitMatrix:
        rows = tuple(tuple(bool(x) for x in r) for r in rows)
        if k is None:
            k = max((len(r) for r in rows), default=0)
        if query_ids is None:
            query_ids = [f"q{i + 1}" for i in range(len(rows))]
        return cls(tuple(query_ids), rows, k)

    def __len__(self) -> int:
        return len(self.rows)

    def as_array(self) -> np.ndarray:
        arr = np.zeros((len(self.rows), self.k), dtype=bool)
        for i, r in enumerate(self.rows):
            arr[i, : len(r)] = r
        return arr

    def any_hit(self) -> dict[str, bool]:
        return {q: any(r) for q, r in zip(self.query_ids, self.rows)}

    def row(self, query_id: str) -> tuple[bool, ...]:
        return self.rows[self.query_ids.index(query_id)]


class _Prefetched:
    """Serves vectors computed in one batched call; unknown texts fall through."""

    def __init__(self, inner: Embedder, texts: list[str]):
        self.inner = inner
        self.table: dict[str, EmbeddingVector] = {}
        if texts:
            self.table = dict(zip(texts, inner.embed(texts)))

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        unknown = [t for t in texts if t not in self.table]
        if unknown:
            self.table.update(zip(unknown, self.inner.embed(unknown)))
        return [self.table[t] for t in texts]


def build_hit_matrix(
    eval_set: EvalSet,
    thresholds: RelevanceThresholds = RelevanceThresholds(),
    rules: NormalizationRules | None = None,
    embedder: Embedder | None = None,
) -> HitMatrix:
    """Judge every retrieved context of every record.

    Contexts are split into sentences before normalization (punctuation
    stripping would erase sentence boundaries). All semantic-stage texts are
    embedded in a single batched call.
    """
    prepared = []
    pending: dict[str, None] = {}
    for rec in eval_set.records:
        gt = normalize_text(rec.ground_truth, rules)
        ctxs = []
        for c in rec.contexts:
            text = normalize_text(c.text, rules)
            sentences = [s for s in (normalize_text(s, rules) for s in split_sentences(c.text)) if s]
            ctxs.append((c.rank, text, sentences))
            if embedder is not None and gt and sentences and _lexical_verdict(text, gt, thresholds)[0] is None:
                pending[gt] = None
                pending.update(dict.fromkeys(sentences))
        prepared.append((rec.query_id, gt, ctxs))

    annotations = ()
    if embedder is None:
        annotations = ("semantic relevance stage disabled: no embedder configured",)
    else:
        embedder = _Prefetched(embedder, list(pending))

    rows, verdicts = [], []
    for qid, gt, ctxs in prepared:
        row_verdicts = []
        for rank, text, sentences in ctxs:
            try:
                row_verdicts.append(relevance(text, gt, thresholds, embedder, sentences))
            except ValueError as exc:
                raise RelevanceError(f"query {qid!r} rank {rank}: {exc}") from exc
        verdicts.append(tuple(row_verdicts))
        rows.append(tuple(v.hit for v in row_verdicts))
    return HitMatrix(
        query_ids=tuple(r.query_id for r in eval_set.records),
        rows=tuple(rows),
        k=eval_set.k,
        verdicts=tuple(verdicts),
        annotations=annotations,
    )
