import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_row, write_jsonl
from ragdiag.dataset import (
    DatasetError,
    EvalRecord,
    EvalSet,
    RetrievedContext,
    dump_eval_set,
    load_eval_set,
    record_from_dict,
    validate_eval_set,
)


def test_two_valid_lines(tmp_path):
    path = write_jsonl(tmp_path / "a.jsonl", [make_row("q1", n_ctx=2), make_row("q2", n_ctx=3)])
    es = load_eval_set(path)
    assert len(es) == 2
    assert es.k == 3
    assert es.lines == (1, 2)
    assert es.by_id()["q2"].contexts[2].rank == 3


def test_rank_gap_is_named(tmp_path):
    row = make_row("q5")
    row["contexts"] = [{"rank": 1, "text": "a"}, {"rank": 3, "text": "b"}]
    path = write_jsonl(tmp_path / "a.jsonl", [make_row("q1"), row])
    with pytest.raises(DatasetError) as err:
        load_eval_set(path)
    msg = str(err.value)
    assert "q5" in msg and "gap at rank 2" in msg and "line 2" in msg


def test_duplicate_query_id_cites_both_lines(tmp_path):
    order = ["q1", "q2", "q3", "q7", "q4", "q5", "q6", "q8", "q7"]
    rows = [make_row(q) for q in order]
    path = write_jsonl(tmp_path / "a.jsonl", rows)
    with pytest.raises(DatasetError) as err:
        load_eval_set(path)
    assert "duplicate query_id 'q7' on line 4 and line 9" in str(err.value)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text(json.dumps(make_row("q1")) + "\n{not json\n")
    with pytest.raises(DatasetError) as err:
        load_eval_set(path)
    assert "line 2: malformed JSON" in str(err.value)


def test_missing_field_and_io_error(tmp_path):
    row = make_row("q1")
    del row["ground_truth"]
    with pytest.raises(DatasetError, match="missing field 'ground_truth'"):
        load_eval_set(write_jsonl(tmp_path / "a.jsonl", [row]))
    with pytest.raises(DatasetError, match="cannot read"):
        load_eval_set(tmp_path / "nope.jsonl")


@pytest.mark.parametrize("bad", [
    {"ground_truth": "  "},
    {"query_id": ""},
    {"task_type": "essay"},
    {"contexts": [{"rank": 1, "text": ""}]},
    {"contexts": [{"rank": 1, "text": "a", "score": float("nan")}]},
    {"contexts": [{"rank": 2, "text": "a"}, {"rank": 1, "text": "b"}]},
])
def test_invariant_breaches_rejected(tmp_path, bad):
    row = make_row("q1")
    row.update(bad)
    path = tmp_path / "a.jsonl"
    path.write_text(json.dumps(row, allow_nan=True) + "\n")
    with pytest.raises(DatasetError):
        load_eval_set(path)


def test_validation_warnings():
    recs = (
        EvalRecord("q1", "?", "gt", "ans", (RetrievedContext(1, "a"), RetrievedContext(2, "b"),
                                            RetrievedContext(3, "c"))),
        EvalRecord("q2", "?", "gt", "", (RetrievedContext(1, "a"), RetrievedContext(2, "b"))),
    )
    report = validate_eval_set(EvalSet(recs))
    assert report.valid
    msgs = [w.message for w in report.warnings]
    assert "empty answer" in msgs
    assert "short context list (2 < k=3)" in msgs
    assert not validate_eval_set(EvalSet(recs[:1])).warnings


def test_empty_set_is_error():
    assert not validate_eval_set(EvalSet(())).valid


def test_task_type_defaults_to_short_answer():
    rec = record_from_dict(make_row("q1"))
    assert rec.task_type == "short_answer"
    assert rec.metadata == {}


_text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20).filter(str.strip)


@st.composite
def eval_sets(draw):
    n = draw(st.integers(1, 6))
    recs = []
    for i in range(n):
        k = draw(st.integers(0, 4))
        ctxs = tuple(
            RetrievedContext(r, draw(_text), draw(st.none() | st.floats(-1e6, 1e6)))
            for r in range(1, k + 1)
        )
        recs.append(EvalRecord(
            f"q{i}", draw(st.text(max_size=20)), draw(_text), draw(st.text(max_size=20)), ctxs,
            draw(st.sampled_from(["mcq", "short_answer", "extraction"])),
            draw(st.dictionaries(st.text(max_size=5), st.text(max_size=5), max_size=2)),
        ))
    return EvalSet(tuple(recs))


@settings(max_examples=50, deadline=None)
@given(eval_sets())
def test_round_trip(tmp_path_factory, es):
    path = tmp_path_factory.mktemp("rt") / "set.jsonl"
    dump_eval_set(es, path)
    back = load_eval_set(path)
    assert back.records == es.records
