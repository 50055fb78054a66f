from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from ragdiag.dataset import load_eval_set
from ragdiag.embeddings import EmbeddingVector, hashing_embedding

CASE_STUDY = resources.files("ragdiag.data") / "case_study"


class HashEmbedder:
    """Offline embedder backed by the hashing vectors; counts calls."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return [EmbeddingVector(hashing_embedding(t, self.dim)) for t in texts]


class TableEmbedder:
    """Embedder returning fixed vectors by text; unknown texts map to ``default``."""

    def __init__(self, table: dict[str, list[float]], default: list[float] | None = None):
        self.table = table
        self.default = default

    def embed(self, texts):
        out = []
        for t in texts:
            vec = self.table.get(t, self.default)
            if vec is None:
                raise KeyError(t)
            out.append(EmbeddingVector(vec))
        return out


def unit_pair(cos: float) -> tuple[list[float], list[float]]:
    """Two 2-D vectors whose cosine is ``cos``."""
    theta = float(np.arccos(cos))
    return [1.0, 0.0], [float(np.cos(theta)), float(np.sin(theta))]


@pytest.fixture
def hash_embedder():
    return HashEmbedder()


@pytest.fixture(scope="session")
def case_study_path() -> Path:
    return Path(str(CASE_STUDY / "records.jsonl"))


@pytest.fixture(scope="session")
def case_study(case_study_path):
    return load_eval_set(case_study_path)


@pytest.fixture(scope="session")
def case_study_scores() -> dict:
    return json.loads((CASE_STUDY / "judge_scores.json").read_text("utf-8"))


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def make_row(qid: str, gt: str = "statin therapy", answer: str = "statin therapy", n_ctx: int = 3, **extra):
    row = {
        "query_id": qid,
        "question": f"question {qid}?",
        "ground_truth": gt,
        "answer": answer,
        "contexts": [{"rank": r, "text": f"context {r} for {qid}"} for r in range(1, n_ctx + 1)],
    }
    row.update(extra)
    return row


def assemble_case_study(eval_set, scores, embedder=None):
    """Build the case-study report in-process from the shipped judge scores."""
    from ragdiag.cue import cue_report
    from ragdiag.generation_metrics import summarize
    from ragdiag.pipeline import score_generation
    from ragdiag.relevance import build_hit_matrix
    from ragdiag.report import build_report
    from ragdiag.retrieval_metrics import retrieval_report

    hits = build_hit_matrix(eval_set, embedder=embedder)
    gen = score_generation(eval_set, embedder=embedder)
    adherence = {q: s["context_adherence"] for q, s in scores.items()}
    for qid, s in gen.items():
        s.context_adherence = adherence[qid]
    crs = [v for s in scores.values() for v in s["context_relevancy"]]
    retrieval = retrieval_report(hits, sum(crs) / len(crs))
    generation = summarize(list(gen.values()))
    cue = cue_report(hits, gen, adherence)
    return build_report(retrieval, generation, cue, {"dataset": "case_study"})


@pytest.fixture(scope="session")
def case_study_report(case_study, case_study_scores):
    return assemble_case_study(case_study, case_study_scores)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
