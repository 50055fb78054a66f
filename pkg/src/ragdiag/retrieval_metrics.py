"""Ranking metrics and fine-grained retrieval diagnostics over a HitMatrix.

All means are taken over every query; a query without any hit contributes 0
to MRR, MAP and nDCG rather than being dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import EvalSet
from .normalize import NormalizationRules, normalize_text, tokenize
from .relevance import HitMatrix


def _matrix(hits: HitMatrix) -> np.ndarray:
    return hits.as_array()


def _mean(values: np.ndarray) -> float:
    return float(values.mean()) if values.size else 0.0


def recall_at_k(hits: HitMatrix, k: int | None = None) -> float:
    """Fraction of queries with at least one hit among ranks 1..k."""
    k = hits.k if k is None else k
    if not 1 <= k <= hits.k:
        raise ValueError(f"k={k} outside 1..{hits.k}")
    return _mean(_matrix(hits)[:, :k].any(axis=1))


def mrr(hits: HitMatrix) -> float:
    m = _matrix(hits)
    if m.size == 0:
        return 0.0
    first = m.argmax(axis=1)
    rr = np.where(m.any(axis=1), 1.0 / (first + 1), 0.0)
    return _mean(rr)


def average_precision(row) -> float:
    row = np.asarray(row, dtype=bool)
    n_hits = row.sum()
    if n_hits == 0:
        return 0.0
    ranks = np.arange(1, row.size + 1)
    precision_at = np.cumsum(row) / ranks
    return float(precision_at[row].sum() / n_hits)


def mean_average_precision(hits: HitMatrix) -> float:
    m = _matrix(hits)
    return _mean(np.array([average_precision(r) for r in m]))


def ndcg(hits: HitMatrix) -> float:
    """Binary-gain nDCG with discount log2(rank + 1); the ideal ranking puts
    the query's hits at the top of the same list."""
    m = _matrix(hits)
    if m.size == 0:
        return 0.0
    discounts = 1.0 / np.log2(np.arange(2, m.shape[1] + 2))
    dcg = (m * discounts).sum(axis=1)
    ideal_cum = np.concatenate([[0.0], np.cumsum(discounts)])
    idcg = ideal_cum[m.sum(axis=1)]
    return _mean(np.divide(dcg, idcg, out=np.zeros_like(dcg), where=idcg > 0))


def context_k_hit_rate(hits: HitMatrix) -> list[float]:
    m = _matrix(hits)
    if not len(m):
        return [0.0] * hits.k
    return m.mean(axis=0).tolist()


def no_hit_rate(hits: HitMatrix) -> float:
    return _mean(~_matrix(hits).any(axis=1))


def exclusive_hit_rate(hits: HitMatrix) -> list[float]:
    """Element i: fraction of queries whose only hit is at rank i + 1."""
    m = _matrix(hits)
    if not len(m):
        return [0.0] * hits.k
    exclusive = m & (m.sum(axis=1) == 1)[:, None]
    return exclusive.mean(axis=0).tolist()


def pairwise_redundancy_matrix(hits: HitMatrix) -> list[list[float]]:
    """Co-hit frequency for every rank pair; the diagonal is the rank's own hit rate."""
    m = _matrix(hits).astype(np.float64)
    if not len(m):
        return [[0.0] * hits.k for _ in range(hits.k)]
    return ((m.T @ m) / len(m)).tolist()


def pairwise_redundancy(hits: HitMatrix, i: int, j: int) -> float:
    """Fraction of queries where ranks ``i`` and ``j`` (1-based) are both hits."""
    if i == j:
        raise ValueError("pairwise redundancy needs two distinct ranks")
    if not (1 <= i <= hits.k and 1 <= j <= hits.k):
        raise ValueError(f"ranks must be within 1..{hits.k}")
    m = _matrix(hits)
    return _mean(m[:, i - 1] & m[:, j - 1])


def text_redundancy_matrix(eval_set: EvalSet, rules: NormalizationRules | None = None) -> list[list[float]]:
    """Mean Jaccard token overlap between the texts at each rank pair.

    A text-level companion to the co-hit redundancy; averaged over the queries
    that have both ranks.
    """
    k = eval_set.k
    sums = np.zeros((k, k))
    counts = np.zeros((k, k))
    for rec in eval_set.records:
        toks = [set(tokenize(normalize_text(c.text, rules))) for c in rec.contexts]
        for a in range(len(toks)):
            for b in range(len(toks)):
                union = toks[a] | toks[b]
                sums[a, b] += len(toks[a] & toks[b]) / len(union) if union else 0.0
                counts[a, b] += 1
    return np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0).tolist()


@dataclass
class RetrievalReport:
    recall_at_k: float
    mrr: float
    map: float
    ndcg: float
    context_hit_rate: list[float]
    no_hit_rate: float
    exclusive_hit_rate: list[float]
    pairwise_redundancy: list[list[float]]
    k: int
    query_count: int
    mean_context_relevancy: float | None = None
    text_redundancy: list[list[float]] | None = None
    annotations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "query_count": self.query_count,
            "k": self.k,
            "recall_at_k": self.recall_at_k,
            "mrr": self.mrr,
            "map": self.map,
            "ndcg": self.ndcg,
            "context_hit_rate": list(self.context_hit_rate),
            "no_hit_rate": self.no_hit_rate,
            "exclusive_hit_rate": list(self.exclusive_hit_rate),
            "pairwise_redundancy": [list(r) for r in self.pairwise_redundancy],
            "mean_context_relevancy": self.mean_context_relevancy,
            "text_redundancy": self.text_redundancy,
            "annotations": list(self.annotations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RetrievalReport:
        return cls(**d)


def retrieval_report(
    hits: HitMatrix,
    mean_context_relevancy: float | None = None,
    text_redundancy: list[list[float]] | None = None,
) -> RetrievalReport:
    return RetrievalReport(
        recall_at_k=recall_at_k(hits) if hits.k else 0.0,
        mrr=mrr(hits),
        map=mean_average_precision(hits),
        ndcg=ndcg(hits),
        context_hit_rate=context_k_hit_rate(hits),
        no_hit_rate=no_hit_rate(hits),
        exclusive_hit_rate=exclusive_hit_rate(hits),
        pairwise_redundancy=pairwise_redundancy_matrix(hits),
        k=hits.k,
        query_count=len(hits),
        mean_context_relevancy=mean_context_relevancy,
        text_redundancy=text_redundancy,
        annotations=list(hits.annotations),
    )
