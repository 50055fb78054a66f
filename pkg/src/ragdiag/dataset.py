"""Evaluation run records: the line-delimited JSON data model.

Each line of an eval file is one query::

    {"query_id": "q1", "question": "...", "ground_truth": "...", "answer": "...",
     "contexts": [{"rank": 1, "text": "...", "score": 0.03}, ...],
     "task_type": "short_answer", "metadata": {"source": "..."}}

``task_type`` and ``metadata`` are optional; ``score`` is optional per context.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

TASK_TYPES = ("mcq", "short_answer", "extraction")
DEFAULT_TASK_TYPE = "short_answer"


class DatasetError(ValueError):
    """Raised when an eval file cannot be loaded; ``errors`` holds every finding."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        shown = "\n  ".join(self.errors[:20])
        more = f"\n  ... and {len(self.errors) - 20} more" if len(self.errors) > 20 else ""
        super().__init__(f"{len(self.errors)} dataset error(s):\n  {shown}{more}")


@dataclass(frozen=True)
class RetrievedContext:
    rank: int
    text: str
    retriever_score: float | None = None


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    question: str
    ground_truth: str
    answer: str = ""
    contexts: tuple[RetrievedContext, ...] = ()
    task_type: str = DEFAULT_TASK_TYPE
    metadata: dict[str, str] = field(default_factory=dict)

    def context_texts(self) -> list[str]:
        return [c.text for c in self.contexts]


@dataclass(frozen=True)
class EvalSet:
    """An immutable collection of records.

    ``lines`` optionally carries the 1-based source line of each record so
    findings can point back into the file.
    """

    records: tuple[EvalRecord, ...]
    source_path: str = ""
    lines: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return max((len(r.contexts) for r in self.records), default=0)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, EvalRecord]:
        return {r.query_id: r for r in self.records}


@dataclass
class Finding:
    query_id: str
    location: str
    message: str

    def __str__(self) -> str:
        qid = f" [{self.query_id}]" if self.query_id else ""
        return f"{self.location}{qid}: {self.message}"


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors

    def format(self) -> str:
        out = [f"{len(self.errors)} error(s), {len(self.warnings)} warning(s)"]
        out += [f"ERROR   {f}" for f in self.errors]
        out += [f"WARNING {f}" for f in self.warnings]
        return "\n".join(out)


def _location(eval_set: EvalSet, idx: int) -> str:
    if idx < len(eval_set.lines):
        return f"line {eval_set.lines[idx]}"
    return f"record {idx + 1}"


def _record_errors(rec: EvalRecord) -> list[str]:
    errs = []
    if not isinstance(rec.query_id, str) or not rec.query_id.strip():
        errs.append("query_id is empty")
    if not isinstance(rec.ground_truth, str) or not rec.ground_truth.strip():
        errs.append("ground_truth is empty")
    if rec.task_type not in TASK_TYPES:
        errs.append(f"task_type {rec.task_type!r} not one of {', '.join(TASK_TYPES)}")
    ranks = [c.rank for c in rec.contexts]
    expected = list(range(1, len(ranks) + 1))
    if sorted(ranks) != expected:
        seen = set(ranks)
        dupes = sorted({r for r in ranks if ranks.count(r) > 1})
        gaps = [r for r in range(1, max(ranks, default=0) + 1) if r not in seen]
        detail = []
        if gaps:
            detail.append("gap at rank " + ", ".join(map(str, gaps)))
        if dupes:
            detail.append("duplicate rank " + ", ".join(map(str, dupes)))
        bad = [r for r in ranks if r < 1]
        if bad:
            detail.append("rank < 1")
        errs.append(f"context ranks {ranks} are not 1..{len(ranks)} ({'; '.join(detail)})")
    elif ranks != expected:
        errs.append(f"contexts are not ordered by rank: {ranks}")
    for c in rec.contexts:
        if not c.text or not c.text.strip():
            errs.append(f"context at rank {c.rank} has empty text")
        if c.retriever_score is not None and not math.isfinite(c.retriever_score):
            errs.append(f"context at rank {c.rank} has non-finite score")
    return errs


def validate_eval_set(eval_set: EvalSet, expect_answers: bool = True) -> ValidationReport:
    """Check every invariant and collect findings without raising.

    Errors are invariant breaches; warnings are tolerated oddities (an empty
    answer when answers are expected, a context list shorter than ``k``).
    """
    report = ValidationReport()
    if not eval_set.records:
        report.errors.append(Finding("", eval_set.source_path or "eval set", "no records"))
        return report

    k = eval_set.k
    first_seen: dict[str, int] = {}
    for idx, rec in enumerate(eval_set.records):
        loc = _location(eval_set, idx)
        for msg in _record_errors(rec):
            report.errors.append(Finding(rec.query_id, loc, msg))
        if rec.query_id in first_seen:
            prev = _location(eval_set, first_seen[rec.query_id])
            report.errors.append(
                Finding(rec.query_id, loc, f"duplicate query_id {rec.query_id!r} on {prev} and {loc}")
            )
        else:
            first_seen[rec.query_id] = idx
        if expect_answers and not rec.answer.strip():
            report.warnings.append(Finding(rec.query_id, loc, "empty answer"))
        if len(rec.contexts) < k:
            report.warnings.append(
                Finding(rec.query_id, loc, f"short context list ({len(rec.contexts)} < k={k})")
            )
    return report


def _as_str(value: Any, name: str, default: str | None = None) -> str:
    if value is None and default is not None:
        return default
    if not isinstance(value, str):
        raise ValueError(f"field {name!r} must be a string")
    return value


def record_from_dict(obj: Any) -> EvalRecord:
    """Build a record from one decoded JSON line; raises ValueError on shape errors."""
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for name in ("query_id", "question", "ground_truth", "contexts"):
        if name not in obj:
            raise ValueError(f"missing field {name!r}")
    raw_contexts = obj["contexts"]
    if not isinstance(raw_contexts, list):
        raise ValueError("field 'contexts' must be a list")
    contexts = []
    for i, c in enumerate(raw_contexts):
        if not isinstance(c, dict) or "rank" not in c or "text" not in c:
            raise ValueError(f"context #{i + 1} must be an object with 'rank' and 'text'")
        rank = c["rank"]
        if isinstance(rank, bool) or not isinstance(rank, int):
            raise ValueError(f"context #{i + 1} rank must be an integer")
        score = c.get("score")
        if score is not None:
            if isinstance(score, bool) or not isinstance(score, (int, float)):
                raise ValueError(f"context #{i + 1} score must be a number")
            score = float(score)
        contexts.append(RetrievedContext(rank, _as_str(c["text"], "text"), score))
    metadata = obj.get("metadata") or {}
    if not isinstance(metadata, dict):
        raise ValueError("field 'metadata' must be an object")
    return EvalRecord(
        query_id=_as_str(obj["query_id"], "query_id"),
        question=_as_str(obj["question"], "question"),
        ground_truth=_as_str(obj["ground_truth"], "ground_truth"),
        answer=_as_str(obj.get("answer"), "answer", default=""),
        contexts=tuple(contexts),
        task_type=_as_str(obj.get("task_type"), "task_type", default=DEFAULT_TASK_TYPE),
        metadata={str(key): str(val) for key, val in metadata.items()},
    )


def record_to_dict(rec: EvalRecord) -> dict[str, Any]:
    contexts = []
    for c in rec.contexts:
        d: dict[str, Any] = {"rank": c.rank, "text": c.text}
        if c.retriever_score is not None:
            d["score"] = c.retriever_score
        contexts.append(d)
    return {
        "query_id": rec.query_id,
        "question": rec.question,
        "ground_truth": rec.ground_truth,
        "answer": rec.answer,
        "contexts": contexts,
        "task_type": rec.task_type,
        "metadata": dict(rec.metadata),
    }


def load_eval_set(path: str | Path, expect_answers: bool = True) -> EvalSet:
    """Parse a line-delimited JSON file into an :class:`EvalSet`.

    Blank lines are skipped. Every parse and invariant error is collected
    and raised together as a :class:`DatasetError`; warnings are not fatal.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError([f"{path}: cannot read ({exc.strerror or exc})"]) from exc

    records: list[EvalRecord] = []
    lines: list[int] = []
    errors: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(f"line {lineno}: malformed JSON ({exc.msg} at column {exc.colno})")
            continue
        try:
            records.append(record_from_dict(obj))
            lines.append(lineno)
        except ValueError as exc:
            qid = obj.get("query_id") if isinstance(obj, dict) else None
            tag = f" [{qid}]" if isinstance(qid, str) and qid else ""
            errors.append(f"line {lineno}{tag}: {exc}")

    eval_set = EvalSet(tuple(records), str(path), tuple(lines))
    if records or not errors:
        errors.extend(str(f) for f in validate_eval_set(eval_set, expect_answers).errors)
    if errors:
        raise DatasetError(errors)
    return eval_set


def dump_eval_set(eval_set: EvalSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in eval_set.records:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")
