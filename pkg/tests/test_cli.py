import json

import pytest
import yaml

from conftest import HashEmbedder, make_row, write_jsonl
from ragdiag.cli import EXIT_INPUT, EXIT_OK, EXIT_PROVIDER, build_parser, build_run_config, main
from ragdiag.harness import bm25_rank, chunk_documents, dense_rank, load_documents
from ragdiag.mock import FixtureScorer, MockProvider
from ragdiag.pipeline import RunConfig, run_evaluation
from ragdiag.report import DiagnosticReport


@pytest.fixture
def provider(case_study, case_study_scores):
    with MockProvider(FixtureScorer(case_study.records, case_study_scores)) as mock:
        yield mock


def provider_args(mock, tmp_path, judge=("all",)):
    args = ["--embed-url", mock.embed_url, "--embed-model", "hash",
            "--judge-url", mock.chat_url, "--judge-model", "mock",
            "--output-dir", str(tmp_path / "runs"), "--cache-dir", str(tmp_path / "cache")]
    for j in judge:
        args += ["--judge", j]
    return args


def test_evaluate_writes_reports(provider, case_study_path, tmp_path, capsys):
    code = main(["evaluate", str(case_study_path), *provider_args(provider, tmp_path), "--run-id", "r1"])
    assert code == EXIT_OK
    run = tmp_path / "runs" / "r1"
    assert {p.name for p in run.iterdir()} == {"report.json", "report.md", "per_query.csv"}
    report = json.loads((run / "report.json").read_text())
    assert report["cue"]["effective_use"] == pytest.approx(29 / 59)
    out = capsys.readouterr().out
    assert "Improve retriever coverage." in out and "report written to" in out


def test_evaluate_without_providers(case_study_path, tmp_path):
    code = main(["evaluate", str(case_study_path), "--output-dir", str(tmp_path), "--run-id", "x"])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "x" / "report.json").read_text())
    assert report["cue"] is None
    assert any("context utilization skipped" in a for a in report["annotations"])
    assert any("semantic" in a for a in report["annotations"])


def test_malformed_dataset_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(make_row("q1")) + "\n{broken\n")
    assert main(["evaluate", str(path), "--output-dir", str(tmp_path)]) == EXIT_INPUT
    assert "line 2" in capsys.readouterr().err


def test_offline_cold_cache_exits_2(provider, case_study_path, tmp_path, capsys):
    args = ["evaluate", str(case_study_path), *provider_args(provider, tmp_path, ("context_adherence",)),
            "--offline"]
    assert main(args) == EXIT_PROVIDER
    err = capsys.readouterr().err
    assert "uncached" in err
    assert provider.total_requests == 0
    assert len([line for line in err.splitlines() if line.startswith("  ")]) > 0


def test_provider_failure_exits_2(case_study_path, tmp_path):
    with MockProvider(fail_first=100) as mock:
        args = ["evaluate", str(case_study_path), *provider_args(mock, tmp_path, ("context_adherence",))]
        assert main(args) == EXIT_PROVIDER


def test_bad_config_exits_1(tmp_path, case_study_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"dataset": str(case_study_path), "nonsense": 1}))
    assert main(["evaluate", "--config", str(cfg)]) == EXIT_INPUT
    assert main(["evaluate", "--output-dir", str(tmp_path)]) == EXIT_INPUT
    assert main(["evaluate", str(case_study_path), "--judge", "context_adherence"]) == EXIT_INPUT


def test_config_file_and_flag_precedence(tmp_path, case_study_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({
        "dataset": str(case_study_path),
        "relevance": {"token_overlap_min": 0.9},
        "fusion": {"alpha": 0.3},
        "parallelism": 2,
    }))
    args = build_parser().parse_args(["evaluate", "--config", str(cfg), "--semantic-min", "0.8", "--parallelism", "6"])
    rc = build_run_config(args)
    assert rc.relevance.token_overlap_min == 0.9
    assert rc.relevance.semantic_min == 0.8
    assert rc.fusion.alpha == 0.3
    assert rc.parallelism == 6
    assert RunConfig.from_dict(rc.to_dict()) == rc


def test_global_flags_before_subcommand(tmp_path, case_study_path):
    args = build_parser().parse_args(["--output-dir", str(tmp_path), "--offline", "evaluate", str(case_study_path)])
    rc = build_run_config(args)
    assert rc.output_dir == str(tmp_path) and rc.offline


def test_validate_exit_codes(tmp_path, case_study_path, capsys):
    assert main(["validate", str(case_study_path)]) == EXIT_OK
    dup = write_jsonl(tmp_path / "dup.jsonl", [make_row("q1"), make_row("q1")])
    assert main(["validate", str(dup)]) == EXIT_INPUT
    assert main(["validate", str(tmp_path / "missing.jsonl")]) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


@pytest.fixture
def toy_corpus_files(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    texts = {
        "a.txt": "statins lower cholesterol in adults",
        "b.txt": "aspirin reduces clot risk",
        "c.txt": "exercise improves blood pressure and cholesterol",
        "d.txt": "screen adults for diabetes every three years",
        "e.txt": "blood pressure targets for older adults",
    }
    for name, text in texts.items():
        (corpus / name).write_text(text)
    queries = write_jsonl(tmp_path / "q.jsonl", [
        {"query_id": "q1", "question": "what lowers cholesterol in adults", "ground_truth": "statins"},
        {"query_id": "q2", "question": "blood pressure targets", "ground_truth": "below 130"},
    ])
    return corpus, queries


def test_retrieve_writes_records(toy_corpus_files, tmp_path):
    corpus, queries = toy_corpus_files
    with MockProvider() as mock:
        out = tmp_path / "out" / "records.jsonl"
        code = main(["retrieve", str(corpus), str(queries), "-o", str(out), "--alpha", "0.5",
                     "--embed-url", mock.embed_url, "--embed-model", "hash",
                     "--cache-dir", str(tmp_path / "cache")])
    assert code == EXIT_OK
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["query_id"] for r in rows] == ["q1", "q2"]
    assert all(len(r["contexts"]) == 3 for r in rows)
    assert all(r["answer"] == "" for r in rows)
    assert [c["rank"] for c in rows[0]["contexts"]] == [1, 2, 3]


def _texts(capsys):
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    return [[c["text"] for c in r["contexts"]] for r in rows]


def test_retrieve_alpha_boundaries_match_oracles(toy_corpus_files, tmp_path, capsys):
    corpus_dir, queries = toy_corpus_files
    corpus = chunk_documents(load_documents(corpus_dir))
    questions = ["what lowers cholesterol in adults", "blood pressure targets"]

    assert main(["retrieve", str(corpus_dir), str(queries), "--alpha", "0"]) == EXIT_OK
    sparse = _texts(capsys)
    assert sparse == [[corpus.by_id(d).text for d, _ in bm25_rank(q, corpus, top_n=3)] for q in questions]

    with MockProvider() as mock:
        code = main(["retrieve", str(corpus_dir), str(queries), "--alpha", "1",
                     "--embed-url", mock.embed_url, "--embed-model", "hash",
                     "--cache-dir", str(tmp_path / "cache")])
    assert code == EXIT_OK
    dense = _texts(capsys)
    assert dense == [[corpus.by_id(d).text for d, _ in dense_rank(q, corpus, HashEmbedder(), top_n=3)] for q in questions]


def test_retrieve_errors(toy_corpus_files, tmp_path):
    corpus, queries = toy_corpus_files
    assert main(["retrieve", str(tmp_path / "nope"), str(queries), "--alpha", "0"]) == EXIT_INPUT
    assert main(["retrieve", str(corpus), str(tmp_path / "nope.jsonl"), "--alpha", "0"]) == EXIT_INPUT
    assert main(["retrieve", str(corpus), str(queries), "--alpha", "0.5"]) == EXIT_INPUT
    assert main(["retrieve", str(corpus), str(queries), "--alpha", "2"]) == EXIT_INPUT


def test_run_evaluation_in_process(provider, case_study_path, tmp_path):
    from ragdiag.embeddings import EmbeddingProviderConfig
    from ragdiag.judge import JudgeConfig

    cfg = RunConfig(
        dataset=str(case_study_path),
        embedding=EmbeddingProviderConfig(provider.embed_url, "hash", cache_path=str(tmp_path / "e.sqlite")),
        judge=JudgeConfig(provider.chat_url, "mock", cache_path=str(tmp_path / "j.sqlite")),
        judged_metrics=("context_adherence", "context_relevancy"),
    )
    report = run_evaluation(cfg)
    assert isinstance(report, DiagnosticReport)
    assert report.generation.context_adherence == pytest.approx(0.84, abs=0.005)
    assert report.generation.answer_relevancy is None
    assert report.retrieval.mean_context_relevancy == pytest.approx(0.09, abs=0.005)
    assert len(report.per_query) == 59
    assert report.run_metadata["dataset_sha256"]
