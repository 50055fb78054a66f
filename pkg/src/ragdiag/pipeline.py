"""End-to-end evaluation: load, validate, normalize, judge relevance, score,
classify, and assemble the diagnostic report."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .cue import CueReport, cue_report
from .dataset import EvalSet, load_eval_set
from .embeddings import Embedder, EmbeddingClient, EmbeddingProviderConfig, cosine_similarity
from .generation_metrics import AccuracyThresholds, GenerationScores, score_answer, summarize
from .harness import ChunkingConfig, FusionConfig
from .judge import TEMPLATES, JudgeClient, JudgeConfig
from .normalize import NormalizationRules, load_rules, normalize_text
from .relevance import RelevanceThresholds, build_hit_matrix
from .report import DiagnosticReport, build_report, load_rules as load_ledger_rules
from .retrieval_metrics import retrieval_report, text_redundancy_matrix

log = logging.getLogger(__name__)

JUDGED_METRICS = TEMPLATES


@dataclass
class RunConfig:
    """Everything needed to reproduce one evaluation run."""

    dataset: str | None = None
    rules_path: str | None = None
    ledger_rules_path: str | None = None
    relevance: RelevanceThresholds = field(default_factory=RelevanceThresholds)
    accuracy: AccuracyThresholds = field(default_factory=AccuracyThresholds)
    adherence_threshold: float = 0.7
    embedding: EmbeddingProviderConfig | None = None
    judge: JudgeConfig | None = None
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    judged_metrics: tuple[str, ...] = ()
    text_redundancy: bool = False
    output_dir: str = "runs"
    run_id: str | None = None
    parallelism: int = 4
    offline: bool = False

    def __post_init__(self):
        unknown = set(self.judged_metrics) - set(JUDGED_METRICS)
        if unknown:
            raise ValueError(f"unknown judged metric(s) {sorted(unknown)}; choose from {JUDGED_METRICS}")
        self.judged_metrics = tuple(m for m in JUDGED_METRICS if m in self.judged_metrics)
        if self.judged_metrics and self.judge is None:
            raise ValueError("judged metrics requested but no judge provider is configured")
        if not 0.0 <= self.adherence_threshold <= 1.0:
            raise ValueError("adherence_threshold must be in [0, 1]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["judged_metrics"] = list(self.judged_metrics)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        nested = {
            "relevance": RelevanceThresholds,
            "accuracy": AccuracyThresholds,
            "embedding": EmbeddingProviderConfig,
            "judge": JudgeConfig,
            "chunking": ChunkingConfig,
            "fusion": FusionConfig,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in d.items():
            if key in nested and isinstance(value, Mapping):
                value = nested[key](**value)
            elif key == "judged_metrics":
                value = tuple(value or ())
            kwargs[key] = value
        return cls(**kwargs)


def score_generation(
    eval_set: EvalSet,
    rules: NormalizationRules | None = None,
    embedder: Embedder | None = None,
    thresholds: AccuracyThresholds = AccuracyThresholds(),
) -> dict[str, GenerationScores]:
    """Score every answer; semantic similarity uses one batched embedding call.

    Without an embedder the semantic criterion is absent (``None``). An empty
    answer gets similarity 0.
    """
    semantic: dict[str, float | None] = {r.query_id: None for r in eval_set.records}
    if embedder is not None:
        pairs = {}
        for r in eval_set.records:
            a, g = normalize_text(r.answer, rules), normalize_text(r.ground_truth, rules)
            if a and g:
                pairs[r.query_id] = (a, g)
            else:
                semantic[r.query_id] = 0.0
        texts = list(dict.fromkeys(t for pair in pairs.values() for t in pair))
        if texts:
            table = dict(zip(texts, embedder.embed(texts)))
            for qid, (a, g) in pairs.items():
                semantic[qid] = 1.0 if a == g else max(0.0, cosine_similarity(table[a], table[g]))
    return {
        r.query_id: score_answer(r.answer, r.ground_truth, rules, semantic[r.query_id], True, thresholds)
        for r in eval_set.records
    }


@dataclass
class JudgedScores:
    context_relevancy: dict[str, list[float]] = field(default_factory=dict)
    answer_relevancy: dict[str, float | None] = field(default_factory=dict)
    context_adherence: dict[str, float] = field(default_factory=dict)
    annotations: list[str] = field(default_factory=list)


def run_judges(eval_set: EvalSet, client: JudgeClient, metrics: tuple[str, ...],
               parallelism: int) -> JudgedScores:
    """Issue every judge call for the requested metrics through one pool.

    Queries the judge cannot score (empty answer, no contexts) get adherence 0
    and no answer relevancy; each case is annotated.
    """
    out = JudgedScores()
    jobs, slots = [], []
    for r in eval_set.records:
        answered = bool(r.answer.strip())
        if "context_relevancy" in metrics:
            out.context_relevancy[r.query_id] = [0.0] * len(r.contexts)
            for i, c in enumerate(r.contexts):
                jobs.append(lambda q=r.question, t=c.text: client.context_relevancy(q, t))
                slots.append(("context_relevancy", r.query_id, i))
        if "answer_relevancy" in metrics:
            out.answer_relevancy[r.query_id] = None
            if answered:
                jobs.append(lambda q=r.question, a=r.answer: client.answer_relevancy(q, a))
                slots.append(("answer_relevancy", r.query_id, None))
        if "context_adherence" in metrics:
            out.context_adherence[r.query_id] = 0.0
            if answered and r.contexts:
                jobs.append(lambda a=r.answer, cs=r.context_texts(): client.context_adherence(a, cs))
                slots.append(("context_adherence", r.query_id, None))
            else:
                out.annotations.append(f"{r.query_id}: adherence set to 0 (empty answer or no contexts)")

    results = client.run_many(jobs, parallelism)
    for (metric, qid, idx), score in zip(slots, results):
        if metric == "context_relevancy":
            out.context_relevancy[qid][idx] = score.value
        elif metric == "answer_relevancy":
            out.answer_relevancy[qid] = score.value
        else:
            out.context_adherence[qid] = score.value
    return out


def _file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_evaluation(cfg: RunConfig, embedder: Embedder | None = None,
                   judge: JudgeClient | None = None) -> DiagnosticReport:
    """Run the whole pipeline described by ``cfg``.

    Clients are built from the config unless given. Raises ``DatasetError``
    on invalid input and ``ProviderError`` (including ``CacheMissError``) on
    provider trouble.
    """
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    if cfg.dataset is None:
        raise ValueError("no dataset configured")
    eval_set = load_eval_set(cfg.dataset)
    rules = load_rules(cfg.rules_path)
    ledger_rules = load_ledger_rules(cfg.ledger_rules_path)

    owned = []
    if embedder is None and cfg.embedding is not None:
        embedder = EmbeddingClient(replace(cfg.embedding, offline=cfg.offline or cfg.embedding.offline))
        owned.append(embedder)
    if judge is None and cfg.judged_metrics:
        judge = JudgeClient(replace(cfg.judge, offline=cfg.offline or cfg.judge.offline))
        owned.append(judge)
    try:
        hits = build_hit_matrix(eval_set, cfg.relevance, rules, embedder)
        gen = score_generation(eval_set, rules, embedder, cfg.accuracy)
        judged = JudgedScores()
        if cfg.judged_metrics:
            judged = run_judges(eval_set, judge, cfg.judged_metrics, cfg.parallelism)
    finally:
        for client in owned:
            client.close()

    annotations = list(hits.annotations)
    if embedder is None:
        annotations.append("semantic answer similarity disabled: no embedder configured")
    for qid, s in gen.items():
        if qid in judged.answer_relevancy:
            s.answer_relevancy = judged.answer_relevancy[qid]
        if qid in judged.context_adherence:
            s.context_adherence = judged.context_adherence[qid]
    annotations.extend(judged.annotations)

    mean_cr = None
    if judged.context_relevancy:
        flat = [v for vs in judged.context_relevancy.values() for v in vs]
        mean_cr = sum(flat) / len(flat) if flat else None
    retrieval = retrieval_report(
        hits, mean_cr, text_redundancy_matrix(eval_set, rules) if cfg.text_redundancy else None
    )
    generation = summarize([gen[r.query_id] for r in eval_set.records])

    cue: CueReport | None = None
    if "context_adherence" in cfg.judged_metrics:
        cue = cue_report(hits, gen, judged.context_adherence, cfg.adherence_threshold)
    else:
        annotations.append("context utilization skipped: context_adherence was not judged")

    quadrants = {e.query_id: e.quadrant.value for e in cue.entries} if cue else {}
    per_query = []
    for r, row in zip(eval_set.records, hits.rows):
        s = gen[r.query_id]
        crs = judged.context_relevancy.get(r.query_id)
        per_query.append({
            "query_id": r.query_id,
            "task_type": r.task_type,
            "hits": list(row),
            "any_hit": any(row),
            **s.to_dict(),
            "context_relevancy": sum(crs) / len(crs) if crs else None,
            "quadrant": quadrants.get(r.query_id),
        })

    metadata = {
        "dataset": str(cfg.dataset),
        "dataset_sha256": _file_digest(cfg.dataset),
        "config": cfg.to_dict(),
        "tool_version": __version__,
        "timestamps": {"started": started, "finished": datetime.now(timezone.utc).isoformat(timespec="seconds")},
    }
    return build_report(retrieval, generation, cue, metadata, ledger_rules, per_query, annotations)
