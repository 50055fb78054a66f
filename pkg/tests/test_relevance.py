import pytest
from hypothesis import given, settings, strategies as st

from conftest import HashEmbedder, TableEmbedder, unit_pair
from ragdiag.dataset import EvalRecord, EvalSet, RetrievedContext
from ragdiag.embeddings import EmbeddingVector
from ragdiag.relevance import (
    HitMatrix,
    RelevanceError,
    RelevanceThresholds,
    build_hit_matrix,
    relevance,
    split_sentences,
    token_overlap,
)


def test_token_overlap_examples():
    assert token_overlap("aspirin daily", "take aspirin daily with food") == 1.0
    assert token_overlap("a b c d", "a b x y") == 0.5
    assert token_overlap("x", "") == 0.0
    assert token_overlap("", "anything") == 0.0


def test_unique_tokens_do_not_inflate():
    assert token_overlap("a a b", "a") == 0.5


def test_exact_substring_level():
    v = relevance("the answer is yes indeed", "yes")
    assert (v.hit, v.level, v.score) == (True, "exact_substring", 1.0)


def test_token_overlap_level_at_boundary():
    v = relevance("a then b then c then d", "a b c d e")
    assert (v.hit, v.level) == (True, "token_overlap")
    assert v.score == pytest.approx(0.8)


def test_semantic_level_from_mock():
    gt_vec, sent_vec = unit_pair(0.9)
    emb = TableEmbedder({"low dose aspirin": gt_vec, "take a small acetylsalicylic tablet": sent_vec},
                        default=[0.0, 1.0])
    v = relevance("unrelated words here. take a small acetylsalicylic tablet", "low dose aspirin",
                  embedder=emb, sentences=["unrelated words here", "take a small acetylsalicylic tablet"])
    assert (v.hit, v.level) == (True, "semantic")
    assert v.score == pytest.approx(0.9)


def test_semantic_boundary_inclusive_and_miss_score():
    gt_vec, sent_vec = unit_pair(0.75)
    emb = TableEmbedder({"g": gt_vec, "s": sent_vec})
    v = relevance("s", "g", RelevanceThresholds(semantic_min=0.75), emb, ["s"])
    assert v.hit and v.level == "semantic"
    v = relevance("s", "g", RelevanceThresholds(semantic_min=0.76), emb, ["s"])
    assert not v.hit and v.level == "none" and v.score == pytest.approx(0.75)


def test_embedder_not_called_when_lexical_decides():
    emb = HashEmbedder()
    relevance("yes it is", "yes", embedder=emb)
    assert emb.calls == 0


def test_no_embedder_reports_overlap_on_miss():
    v = relevance("a b x", "a b c d")
    assert (v.hit, v.level, v.score) == (False, "none", 0.5)


def test_split_sentences_guards():
    text = "Dr. Smith advised aspirin, e.g. daily. Is it safe? Yes; mostly! J. Doe agreed."
    assert split_sentences(text) == [
        "Dr. Smith advised aspirin, e.g. daily.", "Is it safe?", "Yes;", "mostly!", "J. Doe agreed.",
    ]
    assert split_sentences("dose 2.5 mg daily") == ["dose 2.5 mg daily"]


def test_thresholds_validated():
    with pytest.raises(ValueError):
        RelevanceThresholds(token_overlap_min=0.0)
    with pytest.raises(ValueError):
        RelevanceThresholds(semantic_min=1.1)


def _record(qid, gt, texts):
    return EvalRecord(qid, "q?", gt, "a", tuple(RetrievedContext(i + 1, t) for i, t in enumerate(texts)))


def test_build_hit_matrix_rows():
    es = EvalSet((
        _record("q1", "Statin therapy", ["Diet advice.", "Start statin therapy now.", "Exercise."]),
        _record("q2", "BP check", ["Blood pressure check yearly.", "A blood pressure check.", "BP check"]),
    ))
    hm = build_hit_matrix(es)
    assert hm.rows == ((False, True, False), (True, True, True))
    assert hm.any_hit() == {"q1": True, "q2": True}
    assert hm.annotations  # semantic stage disabled without an embedder
    assert hm.verdicts[0][1].level == "exact_substring"


def test_build_hit_matrix_batches_embeddings():
    es = EvalSet(tuple(_record(f"q{i}", f"target phrase {i}", ["filler one. filler two.", "more filler."])
                       for i in range(5)))
    emb = HashEmbedder()
    build_hit_matrix(es, embedder=emb)
    assert emb.calls == 1


def test_build_hit_matrix_annotates_errors():
    class Broken:
        def embed(self, texts):
            return [EmbeddingVector([0.0, 0.0]) for _ in texts]

    es = EvalSet((_record("q9", "alpha beta", ["gamma delta."]),))
    with pytest.raises(RelevanceError, match="'q9' rank 1"):
        build_hit_matrix(es, embedder=Broken())


def test_hit_matrix_short_rows_and_validation():
    hm = HitMatrix.from_rows([[True], [False, True]], k=3)
    assert hm.as_array().tolist() == [[True, False, False], [False, True, False]]
    with pytest.raises(ValueError):
        HitMatrix.from_rows([[True, True, True]], k=2)


_tok = st.sampled_from(list("abcdefgh"))
_phrase = st.lists(_tok, min_size=1, max_size=6).map(" ".join)


@settings(max_examples=300, deadline=None)
@given(_phrase, _phrase, st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_cascade_properties(ctx, gt, t1, t2):
    emb = HashEmbedder(dim=32)
    lo, hi = sorted((t1, t2))
    strict = relevance(ctx, gt, RelevanceThresholds(hi, hi), emb)
    loose = relevance(ctx, gt, RelevanceThresholds(lo, lo), emb)
    assert strict.hit <= loose.hit
    assert relevance(ctx, gt, RelevanceThresholds(hi, hi), emb) == strict
    if strict.level == "exact_substring":
        assert loose.level == "exact_substring"
    if strict.level == "token_overlap":
        assert strict.score >= hi
