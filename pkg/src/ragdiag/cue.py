"""Context utilization: cross retrieval success with generator behavior.

Each query lands in one cell of the (hit, correct, adherent) cube:

======  =======  ========  =======================
hit     correct  adherent  quadrant
======  =======  ========  =======================
yes     any      yes       effective_use
yes     any      no        information_blindness
no      yes      any       lucky_guess
no      no       no        correct_rejection
no      no       yes       residual
======  =======  ========  =======================

A query is adherent when its judged adherence is at or above the threshold.
Retrieval hits split on adherence alone, i.e. on whether the generator used
the evidence it was given. A correct answer with no supporting context is a
lucky guess however adherent the judge found it. The one unnamed cell (no
hit, wrong answer, yet judged adherent) is reported as ``residual``.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass

from .generation_metrics import GenerationScores
from .judge import JudgeScore
from .relevance import HitMatrix


class CueQuadrant(str, enum.Enum):
    EFFECTIVE_USE = "effective_use"
    INFORMATION_BLINDNESS = "information_blindness"
    LUCKY_GUESS = "lucky_guess"
    CORRECT_REJECTION = "correct_rejection"
    RESIDUAL = "residual"


NAMED = (
    CueQuadrant.EFFECTIVE_USE,
    CueQuadrant.INFORMATION_BLINDNESS,
    CueQuadrant.LUCKY_GUESS,
    CueQuadrant.CORRECT_REJECTION,
)
RESIDUAL_CELL = "no_hit+incorrect+adherent"
DEFAULT_THRESHOLD = 0.7


class CueInputError(ValueError):
    pass


def classify_query(retrieval_hit: bool, answer_correct: bool, adherence: float,
                   threshold: float = DEFAULT_THRESHOLD) -> CueQuadrant:
    """Place one query in its quadrant. The threshold is inclusive.

    Raises:
        ValueError: if ``adherence`` or ``threshold`` is outside [0, 1].
    """
    if not 0.0 <= adherence <= 1.0:
        raise ValueError(f"adherence {adherence} outside [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    adherent = adherence >= threshold
    if retrieval_hit:
        return CueQuadrant.EFFECTIVE_USE if adherent else CueQuadrant.INFORMATION_BLINDNESS
    if answer_correct:
        return CueQuadrant.LUCKY_GUESS
    return CueQuadrant.RESIDUAL if adherent else CueQuadrant.CORRECT_REJECTION


@dataclass(frozen=True)
class CueEntry:
    query_id: str
    quadrant: CueQuadrant
    hit: bool
    correct: bool
    adherence: float


@dataclass
class CueReport:
    entries: list[CueEntry]
    threshold: float
    counts: dict[str, int]
    proportions: dict[str, float]
    residual_cells: dict[str, float]
    accuracy: float
    context_hit_rate: float
    accuracy_fallacy_gap: float
    hit_incorrect_rate: float

    @property
    def query_count(self) -> int:
        return len(self.entries)

    @property
    def effective_use(self) -> float:
        return self.proportions[CueQuadrant.EFFECTIVE_USE.value]

    @property
    def information_blindness(self) -> float:
        return self.proportions[CueQuadrant.INFORMATION_BLINDNESS.value]

    @property
    def lucky_guess(self) -> float:
        return self.proportions[CueQuadrant.LUCKY_GUESS.value]

    @property
    def correct_rejection(self) -> float:
        return self.proportions[CueQuadrant.CORRECT_REJECTION.value]

    @property
    def residual(self) -> float:
        return self.proportions[CueQuadrant.RESIDUAL.value]

    def quadrant_of(self, query_id: str) -> CueQuadrant:
        for e in self.entries:
            if e.query_id == query_id:
                return e.quadrant
        raise KeyError(query_id)

    def to_dict(self) -> dict:
        return {
            "effective_use": self.effective_use,
            "information_blindness": self.information_blindness,
            "lucky_guess": self.lucky_guess,
            "correct_rejection": self.correct_rejection,
            "residual_cells": dict(self.residual_cells),
            "accuracy": self.accuracy,
            "context_hit_rate": self.context_hit_rate,
            "accuracy_fallacy_gap": self.accuracy_fallacy_gap,
            "hit_incorrect_rate": self.hit_incorrect_rate,
            "adherence_threshold": self.threshold,
            "counts": dict(self.counts),
            "per_query": [
                {"query_id": e.query_id, "quadrant": e.quadrant.value, "hit": e.hit,
                 "correct": e.correct, "adherence": e.adherence}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CueReport:
        entries = [
            CueEntry(p["query_id"], CueQuadrant(p["quadrant"]), p["hit"], p["correct"], p["adherence"])
            for p in d["per_query"]
        ]
        return _assemble(entries, d["adherence_threshold"])


def _assemble(entries: list[CueEntry], threshold: float) -> CueReport:
    n = len(entries)
    counts = {q.value: 0 for q in CueQuadrant}
    for e in entries:
        counts[e.quadrant.value] += 1

    def frac(c: int) -> float:
        return c / n if n else 0.0

    accuracy = frac(sum(e.correct for e in entries))
    hit_rate = frac(sum(e.hit for e in entries))
    return CueReport(
        entries=entries,
        threshold=threshold,
        counts=counts,
        proportions={k: frac(v) for k, v in counts.items()},
        residual_cells={RESIDUAL_CELL: frac(counts[CueQuadrant.RESIDUAL.value])},
        accuracy=accuracy,
        context_hit_rate=hit_rate,
        accuracy_fallacy_gap=accuracy - hit_rate,
        hit_incorrect_rate=frac(sum(e.hit and not e.correct for e in entries)),
    )


def _as_correct(v: GenerationScores | bool) -> bool:
    return bool(v.accuracy) if isinstance(v, GenerationScores) else bool(v)


def _as_adherence(v: JudgeScore | float) -> float:
    return float(v.value) if isinstance(v, JudgeScore) else float(v)


def cue_report(
    hits: HitMatrix,
    gen: Mapping[str, GenerationScores | bool],
    adherence: Mapping[str, JudgeScore | float],
    threshold: float = DEFAULT_THRESHOLD,
) -> CueReport:
    """Classify every query and aggregate.

    ``gen`` maps query ids to their scores (``accuracy`` is the correctness
    label) or directly to a bool. ``adherence`` maps to judge scores or floats.

    Raises:
        CueInputError: if the three inputs do not cover the same query ids.
    """
    ids = {"hits": set(hits.query_ids), "generation": set(gen), "adherence": set(adherence)}
    union = set().union(*ids.values())
    if any(s != union for s in ids.values()):
        parts = [f"{name} lacks {sorted(union - s)}" for name, s in ids.items() if union - s]
        raise CueInputError("query-set mismatch: " + "; ".join(parts))

    entries = []
    for qid, row in zip(hits.query_ids, hits.rows):
        hit = any(row)
        correct = _as_correct(gen[qid])
        adh = _as_adherence(adherence[qid])
        entries.append(CueEntry(qid, classify_query(hit, correct, adh, threshold), hit, correct, adh))
    return _assemble(entries, threshold)
