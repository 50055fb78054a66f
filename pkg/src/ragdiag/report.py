"""Diagnostic report assembly, rule-driven ledger, and rendering.

Ledger rules are declarative records::

    {"metric": "lucky_guess", "comparator": ">", "threshold": 0.25,
     "severity": "critical", "interpretation": "...", "insight": "...",
     "requires": [{"metric": ..., "comparator": ..., "threshold": ...}]}

For each metric the first rule whose comparison (and every ``requires``
condition) holds produces the ledger row. ``"always"`` matches
unconditionally. Metrics without a value in the run are skipped.
"""

from __future__ import annotations

import csv
import io
import json
import operator
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .cue import CueReport
from .generation_metrics import GenerationSummary
from .retrieval_metrics import RetrievalReport

SEVERITIES = ("ok", "warn", "critical")
FORMATS = ("json", "markdown", "csv")
TIMESTAMP_KEY = "timestamps"

_COMPARATORS = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "always": lambda value, threshold: True,
}


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Condition:
    metric: str
    comparator: str
    threshold: float | None

    def holds(self, value: float) -> bool:
        return _COMPARATORS[self.comparator](value, self.threshold)


@dataclass(frozen=True)
class LedgerRule:
    condition: Condition
    severity: str
    interpretation: str
    insight: str
    requires: tuple[Condition, ...] = ()
    label: str | None = None
    format: str | None = None

    @property
    def metric(self) -> str:
        return self.condition.metric


def _condition(d: Mapping[str, Any], where: str) -> Condition:
    metric = d.get("metric")
    comparator = d.get("comparator")
    if not isinstance(metric, str) or not metric:
        raise RuleError(f"{where}: missing metric")
    if comparator not in _COMPARATORS:
        raise RuleError(f"{where}: comparator {comparator!r} not one of {sorted(_COMPARATORS)}")
    threshold = d.get("threshold")
    if comparator != "always" and (isinstance(threshold, bool) or not isinstance(threshold, (int, float))):
        raise RuleError(f"{where}: comparator {comparator!r} needs a numeric threshold")
    return Condition(metric, comparator, None if threshold is None else float(threshold))


def parse_rules(doc: Any) -> list[LedgerRule]:
    if not isinstance(doc, list):
        raise RuleError("rule file must hold a JSON list")
    rules = []
    for i, d in enumerate(doc, start=1):
        where = f"rule {i}"
        if not isinstance(d, dict):
            raise RuleError(f"{where}: not an object")
        if d.get("severity") not in SEVERITIES:
            raise RuleError(f"{where}: severity must be one of {SEVERITIES}")
        for key in ("interpretation", "insight"):
            if not isinstance(d.get(key), str):
                raise RuleError(f"{where}: missing {key}")
        requires = tuple(_condition(r, f"{where} requires") for r in d.get("requires", []))
        rules.append(LedgerRule(_condition(d, where), d["severity"], d["interpretation"], d["insight"],
                                requires, d.get("label"), d.get("format")))
    return rules


def load_rules(path: str | Path | None = None) -> list[LedgerRule]:
    if path is None:
        text = resources.files("ragdiag.data").joinpath("ledger_rules.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        return parse_rules(json.loads(text))
    except json.JSONDecodeError as exc:
        raise RuleError(f"rule file is not valid JSON: {exc}") from exc


@dataclass
class LedgerRow:
    metric_name: str
    label: str
    value: float
    display_value: str
    interpretation: str
    actionable_insight: str
    severity: str

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "label": self.label,
            "value": self.value,
            "display_value": self.display_value,
            "interpretation": self.interpretation,
            "actionable_insight": self.actionable_insight,
            "severity": self.severity,
        }


def _display(value: float, fmt: str | None) -> str:
    return f"{value * 100:.1f}%" if fmt == "percent" else f"{value:.2f}"


def evaluate_rules(metrics: Mapping[str, float | None], rules: Sequence[LedgerRule]) -> list[LedgerRow]:
    """One row per metric named in ``rules``, in first-appearance order."""
    order: list[str] = []
    by_metric: dict[str, list[LedgerRule]] = {}
    for rule in rules:
        if rule.metric not in by_metric:
            order.append(rule.metric)
            by_metric[rule.metric] = []
        by_metric[rule.metric].append(rule)

    rows = []
    for name in order:
        value = metrics.get(name)
        if value is None:
            continue
        label = next((r.label for r in by_metric[name] if r.label), name)
        fmt = next((r.format for r in by_metric[name] if r.format), None)
        for rule in by_metric[name]:
            if not rule.condition.holds(value):
                continue
            if not all(metrics.get(c.metric) is not None and c.holds(metrics[c.metric]) for c in rule.requires):
                continue
            rows.append(LedgerRow(name, label, value, _display(value, fmt),
                                  rule.interpretation, rule.insight, rule.severity))
            break
    return rows


def flat_metrics(retrieval: RetrievalReport, generation: GenerationSummary,
                 cue: CueReport | None) -> dict[str, float | None]:
    """Scalar view of every report section, keyed by ledger metric names."""
    m: dict[str, float | None] = {
        "recall_at_k": retrieval.recall_at_k,
        "mrr": retrieval.mrr,
        "map": retrieval.map,
        "ndcg": retrieval.ndcg,
        "no_hit_rate": retrieval.no_hit_rate,
        "context_relevancy": retrieval.mean_context_relevancy,
    }
    for r, v in enumerate(retrieval.context_hit_rate, start=1):
        m[f"context_hit_rate_{r}"] = v
    for r, v in enumerate(retrieval.exclusive_hit_rate, start=1):
        m[f"exclusive_hit_rate_{r}"] = v
    for i, row in enumerate(retrieval.pairwise_redundancy, start=1):
        for j, v in enumerate(row, start=1):
            if i < j:
                m[f"pairwise_redundancy_{i}_{j}"] = v
    for key, value in generation.to_dict().items():
        if key != "query_count":
            m[key] = value
    if cue is not None:
        m.update(
            effective_use=cue.effective_use,
            information_blindness=cue.information_blindness,
            lucky_guess=cue.lucky_guess,
            correct_rejection=cue.correct_rejection,
            residual=cue.residual,
            accuracy_fallacy_gap=cue.accuracy_fallacy_gap,
        )
    return m


@dataclass
class DiagnosticReport:
    run_metadata: dict[str, Any]
    retrieval: RetrievalReport
    generation: GenerationSummary
    cue: CueReport | None
    ledger: list[LedgerRow]
    per_query: list[dict[str, Any]] = field(default_factory=list)
    annotations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "run_metadata": self.run_metadata,
            "retrieval": self.retrieval.to_dict(),
            "generation": self.generation.to_dict(),
            "cue": None if self.cue is None else self.cue.to_dict(),
            "ledger": [r.to_dict() for r in self.ledger],
            "per_query": self.per_query,
            "annotations": list(self.annotations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> DiagnosticReport:
        return cls(
            run_metadata=d["run_metadata"],
            retrieval=RetrievalReport.from_dict(d["retrieval"]),
            generation=GenerationSummary.from_dict(d["generation"]),
            cue=None if d["cue"] is None else CueReport.from_dict(d["cue"]),
            ledger=[LedgerRow(**r) for r in d["ledger"]],
            per_query=d["per_query"],
            annotations=d["annotations"],
        )


def build_report(
    retrieval: RetrievalReport,
    generation: GenerationSummary,
    cue: CueReport | None,
    metadata: dict[str, Any],
    rules: Sequence[LedgerRule] | None = None,
    per_query: list[dict[str, Any]] | None = None,
    annotations: Sequence[str] = (),
) -> DiagnosticReport:
    rules = load_rules() if rules is None else rules
    ledger = evaluate_rules(flat_metrics(retrieval, generation, cue), rules)
    notes = list(retrieval.annotations) + [a for a in annotations if a not in retrieval.annotations]
    return DiagnosticReport(dict(metadata), retrieval, generation, cue, ledger, list(per_query or []), notes)


def _json_bytes(d: dict) -> bytes:
    return (json.dumps(d, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


def canonical_json(report: DiagnosticReport) -> bytes:
    """JSON with the run timestamps removed; identical runs give identical bytes."""
    d = report.to_dict()
    d["run_metadata"] = {k: v for k, v in d["run_metadata"].items() if k != TIMESTAMP_KEY}
    return _json_bytes(d)


def _md_cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def _markdown(report: DiagnosticReport) -> str:
    lines = [
        "# Diagnostic report",
        "",
        "| Diagnostic Metric | Value | Interpretation | Actionable Insight | Severity |",
        "|---|---|---|---|---|",
    ]
    for r in report.ledger:
        lines.append(f"| {_md_cell(r.label)} | {r.display_value} | {_md_cell(r.interpretation)} "
                     f"| {_md_cell(r.actionable_insight)} | {r.severity} |")
    ret = report.retrieval
    lines += [
        "",
        "## Summary",
        "",
        f"- queries: {ret.query_count}, k = {ret.k}",
        f"- recall@k {ret.recall_at_k:.3f}, MRR {ret.mrr:.3f}, MAP {ret.map:.3f}, nDCG {ret.ndcg:.3f}",
        f"- accuracy {report.generation.accuracy:.3f}",
    ]
    if report.cue is not None:
        lines.append(f"- context hit rate {report.cue.context_hit_rate:.3f}, "
                     f"gap {report.cue.accuracy_fallacy_gap:+.3f}")
    if report.annotations:
        lines += ["", "## Notes", ""] + [f"- {a}" for a in report.annotations]
    return "\n".join(lines) + "\n"


PER_QUERY_COLUMNS = (
    "query_id", "task_type", "hits", "any_hit", "exact_match", "fuzzy_match", "token_f1", "rouge_l",
    "list_f1", "semantic_similarity", "accuracy", "answer_relevancy", "context_adherence",
    "context_relevancy", "quadrant",
)


def _csv(report: DiagnosticReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=PER_QUERY_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in report.per_query:
        out = {}
        for col in PER_QUERY_COLUMNS:
            v = row.get(col)
            if isinstance(v, list):
                v = "".join("1" if x else "0" for x in v)
            out[col] = "" if v is None else v
        writer.writerow(out)
    return buf.getvalue()


def render(report: DiagnosticReport, format: str) -> bytes:
    if format == "json":
        return _json_bytes(report.to_dict())
    if format == "markdown":
        return _markdown(report).encode("utf-8")
    if format == "csv":
        return _csv(report).encode("utf-8")
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def write_report(report: DiagnosticReport, directory: str | Path) -> dict[str, Path]:
    """Write report.json, report.md and per_query.csv into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": directory / "report.json",
        "markdown": directory / "report.md",
        "csv": directory / "per_query.csv",
    }
    for fmt, path in paths.items():
        path.write_bytes(render(report, fmt))
    return paths
