import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ragdiag.dataset import EvalRecord, EvalSet, RetrievedContext
from ragdiag.relevance import HitMatrix, build_hit_matrix
from ragdiag.retrieval_metrics import (
    RetrievalReport,
    average_precision,
    context_k_hit_rate,
    exclusive_hit_rate,
    mean_average_precision,
    mrr,
    ndcg,
    no_hit_rate,
    pairwise_redundancy,
    pairwise_redundancy_matrix,
    recall_at_k,
    retrieval_report,
    text_redundancy_matrix,
)

T, F = True, False


def hm(*rows, k=None):
    return HitMatrix.from_rows(rows, k=k)


def test_recall_examples():
    assert recall_at_k(hm([T, F, F], [F, F, F])) == 0.5
    assert recall_at_k(hm([F, F, F], [F, F, F])) == 0.0
    assert recall_at_k(hm([F, T, F]), 1) == 0.0
    with pytest.raises(ValueError):
        recall_at_k(hm([T]), 2)


def test_mrr_examples():
    assert mrr(hm([F, T, F])) == 0.5
    assert mrr(hm([T, F], [F, T])) == 0.75
    assert mrr(hm([F, F], [F, F])) == 0.0


def test_map_examples():
    assert average_precision([T, F, T]) == pytest.approx(5 / 6)
    assert mean_average_precision(hm([T, T, T])) == 1.0
    assert mean_average_precision(hm([T, F, F], [F, F, F])) == 0.5


def test_ndcg_examples():
    assert ndcg(hm([T, F, T])) == pytest.approx(1.5 / (1 + 1 / np.log2(3)), abs=1e-12)
    assert ndcg(hm([T, F, T])) == pytest.approx(0.9197, abs=1e-4)
    assert ndcg(hm([T, T, T])) == 1.0
    assert ndcg(hm([F, F, T])) == pytest.approx(0.5)


def test_rate_vectors():
    assert context_k_hit_rate(hm([T, F], [T, T])) == [1.0, 0.5]
    assert context_k_hit_rate(hm([F, F], [F, F])) == [0.0, 0.0]
    assert no_hit_rate(hm([T, F, F], [F, F, F])) == 0.5
    assert no_hit_rate(hm([T, F], [F, T])) == 0.0
    assert exclusive_hit_rate(hm([T, F, F])) == [1.0, 0.0, 0.0]
    assert exclusive_hit_rate(hm([T, T, F])) == [0.0, 0.0, 0.0]


def test_context_rate_on_small_fixture():
    rows = [[F, T, F]] * 4 + [[F, F, F]] * 55
    assert context_k_hit_rate(hm(*rows))[1] == pytest.approx(0.068, abs=5e-4)


def test_pairwise_examples():
    assert pairwise_redundancy(hm([T, T, F], [T, F, F]), 1, 2) == 0.5
    assert pairwise_redundancy(hm([T, F], [F, T]), 1, 2) == 0.0
    with pytest.raises(ValueError):
        pairwise_redundancy(hm([T, T]), 1, 1)
    with pytest.raises(ValueError):
        pairwise_redundancy(hm([T, T]), 1, 3)


def test_empty_matrix_is_zero():
    empty = HitMatrix((), (), 3)
    assert mrr(empty) == 0.0 and ndcg(empty) == 0.0 and mean_average_precision(empty) == 0.0
    assert context_k_hit_rate(empty) == [0.0] * 3


@st.composite
def matrices(draw):
    k = draw(st.integers(1, 5))
    rows = draw(st.lists(st.lists(st.booleans(), min_size=k, max_size=k), min_size=1, max_size=50))
    return rows, k


@settings(max_examples=200, deadline=None)
@given(matrices())
def test_oracle_equivalence(data):
    rows, k = data
    h = hm(*rows, k=k)
    for kk in range(1, k + 1):
        assert recall_at_k(h, kk) == pytest.approx(oracles.recall(rows, kk), abs=1e-9)
    assert mrr(h) == pytest.approx(oracles.mrr(rows), abs=1e-9)
    assert mean_average_precision(h) == pytest.approx(oracles.map_(rows), abs=1e-9)
    assert ndcg(h) == pytest.approx(oracles.ndcg(rows), abs=1e-9)
    assert context_k_hit_rate(h) == pytest.approx(oracles.context_rate(rows, k), abs=1e-9)
    assert no_hit_rate(h) == pytest.approx(oracles.no_hit(rows), abs=1e-9)
    assert exclusive_hit_rate(h) == pytest.approx(oracles.exclusive(rows, k), abs=1e-9)
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            if i != j:
                assert pairwise_redundancy(h, i, j) == pytest.approx(oracles.redundancy(rows, i - 1, j - 1), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(matrices())
def test_structural_invariants(data):
    rows, k = data
    h = hm(*rows, k=k)
    recalls = [recall_at_k(h, kk) for kk in range(1, k + 1)]
    assert recalls == sorted(recalls)
    assert mrr(h) <= recalls[-1] + 1e-12
    assert no_hit_rate(h) == pytest.approx(1 - recalls[-1])
    ctx, exc = context_k_hit_rate(h), exclusive_hit_rate(h)
    assert all(e <= c + 1e-12 for e, c in zip(exc, ctx))
    n = len(rows)
    multi = sum(1 for r in rows if sum(r) > 1)
    assert round(sum(exc) * n) + multi + round(no_hit_rate(h) * n) == n
    m = np.array(pairwise_redundancy_matrix(h))
    assert np.allclose(m, m.T)
    for i in range(k):
        for j in range(k):
            assert m[i, j] <= min(ctx[i], ctx[j]) + 1e-12
    prefix = all(list(r) == sorted(r, reverse=True) for r in rows)
    if prefix and all(any(r) for r in rows):
        assert ndcg(h) == pytest.approx(1.0)


def test_report_round_trip():
    rep = retrieval_report(hm([T, F, T], [F, F, F]), mean_context_relevancy=0.3)
    assert RetrievalReport.from_dict(rep.to_dict()) == rep
    assert set(rep.to_dict()) >= {"recall_at_k", "mrr", "map", "ndcg", "context_hit_rate", "no_hit_rate",
                                  "exclusive_hit_rate", "pairwise_redundancy"}


def test_text_redundancy_matrix():
    es = EvalSet((EvalRecord("q", "?", "x", "", (RetrievedContext(1, "a b"), RetrievedContext(2, "a c"))),))
    m = text_redundancy_matrix(es)
    assert m[0][0] == 1.0 and m[0][1] == pytest.approx(1 / 3)


def test_case_study_retrieval_numbers(case_study):
    h = build_hit_matrix(case_study)
    assert recall_at_k(h) == pytest.approx(34 / 59)
    assert no_hit_rate(h) == pytest.approx(25 / 59)
    assert exclusive_hit_rate(h)[1] == pytest.approx(4 / 59)
    assert pairwise_redundancy(h, 1, 2) == pytest.approx(13 / 59)
    assert mrr(h) == pytest.approx(0.45, abs=0.005)
    assert mean_average_precision(h) == pytest.approx(0.44, abs=0.005)
