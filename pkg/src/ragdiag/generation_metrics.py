"""Surface, structured and semantic answer-quality metrics.

Functions taking ``answer``/``ground_truth`` expect normalized text, except
:func:`list_component_f1`, which needs the raw delimiters and normalizes
each item itself.
"""

from __future__ import annotations

import re
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass

from .embeddings import Embedder, cosine_similarity
from .normalize import NormalizationRules, contains_phrase, normalize_text, tokenize


def exact_match(answer: str, ground_truth: str) -> bool:
    return answer == ground_truth


def fuzzy_match(answer: str, ground_truth: str) -> bool:
    """Either text contains the other on token boundaries."""
    if not tokenize(answer) or not tokenize(ground_truth):
        return answer == ground_truth
    return contains_phrase(answer, ground_truth) or contains_phrase(ground_truth, answer)


def _f1(overlap: float, n_pred: int, n_ref: int) -> float:
    if n_pred == 0 and n_ref == 0:
        return 1.0
    if n_pred == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p = overlap / n_pred
    r = overlap / n_ref
    return 2 * p * r / (p + r)


def token_f1(answer: str, ground_truth: str) -> float:
    pred = tokenize(answer)
    ref = tokenize(ground_truth)
    overlap = sum((Counter(pred) & Counter(ref)).values())
    return _f1(overlap, len(pred), len(ref))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(answer: str, ground_truth: str) -> float:
    """Sentence-level ROUGE-L F1 over tokens."""
    pred = tokenize(answer)
    ref = tokenize(ground_truth)
    if not pred and not ref:
        return 1.0
    lcs = lcs_length(pred, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(pred)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


_ITEM_SPLIT = re.compile(r"[,;\n•]")
_AND_SPLIT = re.compile(r"(?:^|\s)and(?:\s|$)", re.IGNORECASE)
_BULLET = re.compile(r"^\s*(?:[-*•·]|\d+[.)])\s+")


def split_items(text: str) -> list[str]:
    items = []
    for line in text.splitlines() or [text]:
        line = _BULLET.sub("", line)
        for part in _ITEM_SPLIT.split(line):
            items.extend(_AND_SPLIT.split(part))
    return [i.strip() for i in items if i.strip()]


def list_component_f1(answer: str, ground_truth: str, rules: NormalizationRules | None = None) -> float:
    """Item-level F1 between two list-style answers.

    Items match when one contains the other after normalization. Pairs are
    taken greedily, best token-F1 first, each item used at most once; ties
    break on item text so the score ignores item order.
    """
    pred = [n for n in (normalize_text(i, rules) for i in split_items(answer)) if n]
    ref = [n for n in (normalize_text(i, rules) for i in split_items(ground_truth)) if n]
    if not pred or not ref:
        return 1.0 if not pred and not ref else 0.0

    candidates = [
        (-token_f1(p, r), p, r, i, j)
        for i, p in enumerate(pred)
        for j, r in enumerate(ref)
        if fuzzy_match(p, r)
    ]
    candidates.sort(key=lambda c: c[:3])
    used_p, used_r = set(), set()
    matched = 0
    for _, _, _, i, j in candidates:
        if i in used_p or j in used_r:
            continue
        used_p.add(i)
        used_r.add(j)
        matched += 1
    return _f1(matched, len(pred), len(ref))


def semantic_similarity(answer: str, ground_truth: str, embedder: Embedder) -> float:
    """Embedding cosine of the two texts, clamped to [0, 1]."""
    if not answer.strip() or not ground_truth.strip():
        raise ValueError("empty text for embedding")
    if answer == ground_truth:
        return 1.0
    va, vg = embedder.embed([answer, ground_truth])
    return max(0.0, cosine_similarity(va, vg))


@dataclass(frozen=True)
class AccuracyThresholds:
    list_f1_min: float = 0.7
    semantic_min: float = 0.7


@dataclass
class GenerationScores:
    exact_match: bool
    fuzzy_match: bool
    token_f1: float
    rouge_l: float
    list_f1: float | None
    semantic_similarity: float | None
    accuracy: bool
    answer_relevancy: float | None = None
    context_adherence: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def composite_accuracy(scores: GenerationScores, thresholds: AccuracyThresholds = AccuracyThresholds()) -> bool:
    """Correct when any criterion holds: exact, fuzzy, list F1 or semantic
    similarity at or above its threshold. Absent scores never count."""
    return bool(
        scores.exact_match
        or scores.fuzzy_match
        or (scores.list_f1 is not None and scores.list_f1 >= thresholds.list_f1_min)
        or (scores.semantic_similarity is not None and scores.semantic_similarity >= thresholds.semantic_min)
    )


def score_answer(
    answer: str,
    ground_truth: str,
    rules: NormalizationRules | None = None,
    semantic: float | None = None,
    with_list_f1: bool = True,
    thresholds: AccuracyThresholds = AccuracyThresholds(),
) -> GenerationScores:
    """Score one raw answer; ``semantic`` is supplied by the caller since it
    needs an embedder (see :func:`score_generation`)."""
    a = normalize_text(answer, rules)
    g = normalize_text(ground_truth, rules)
    scores = GenerationScores(
        exact_match=exact_match(a, g),
        fuzzy_match=fuzzy_match(a, g),
        token_f1=token_f1(a, g),
        rouge_l=rouge_l(a, g),
        list_f1=list_component_f1(answer, ground_truth, rules) if with_list_f1 else None,
        semantic_similarity=semantic,
        accuracy=False,
    )
    scores.accuracy = composite_accuracy(scores, thresholds)
    return scores


@dataclass
class GenerationSummary:
    query_count: int
    exact_match: float
    fuzzy_match: float
    token_f1: float
    rouge_l: float
    list_f1: float | None
    semantic_similarity: float | None
    accuracy: float
    answer_relevancy: float | None = None
    context_adherence: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GenerationSummary:
        return cls(**d)


def _mean_opt(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def summarize(scores: Sequence[GenerationScores]) -> GenerationSummary:
    n = len(scores)

    def mean(attr):
        return sum(float(getattr(s, attr)) for s in scores) / n if n else 0.0

    return GenerationSummary(
        query_count=n,
        exact_match=mean("exact_match"),
        fuzzy_match=mean("fuzzy_match"),
        token_f1=mean("token_f1"),
        rouge_l=mean("rouge_l"),
        list_f1=_mean_opt([s.list_f1 for s in scores]),
        semantic_similarity=_mean_opt([s.semantic_similarity for s in scores]),
        accuracy=mean("accuracy"),
        answer_relevancy=_mean_opt([s.answer_relevancy for s in scores]),
        context_adherence=_mean_opt([s.context_adherence for s in scores]),
    )
