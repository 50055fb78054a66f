"""Build the 59-query case-study fixture shipped in ``ragdiag/data/case_study``.

Every row's hit pattern, correctness and judged adherence is fixed by
construction, and the script checks the design against the real relevance
cascade and accuracy rule (with and without the hashing embedder) before
writing anything.

Usage: python scripts/build_case_study_fixture.py [--out DIR]
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from ragdiag.dataset import EvalRecord, EvalSet, RetrievedContext, dump_eval_set
from ragdiag.embeddings import EmbeddingVector, hashing_embedding
from ragdiag.normalize import default_rules
from ragdiag.pipeline import score_generation
from ragdiag.relevance import build_hit_matrix

OUT = Path(__file__).resolve().parents[1] / "src" / "ragdiag" / "data" / "case_study"
SEED = 7

GROUND_TRUTHS = [
    "annual low dose computed tomography screening",
    "biennial screening mammography",
    "statin therapy",
    "daily folic acid supplementation",
    "one time ultrasonography screening",
    "intensive behavioral counseling",
    "exercise interventions to prevent falls",
    "preexposure prophylaxis",
    "hepatitis c virus infection screening",
    "aspirin use after twelve weeks of gestation",
    "screening for latent tuberculosis infection",
    "chlamydia screening in sexually active women",
    "colorectal cancer screening starting at forty five",
    "bone density testing with dual energy absorptiometry",
    "referral to genetic counseling",
    "oral fluoride varnish application",
    "blood pressure measurement in office settings",
    "depression screening with adequate support systems",
    "tobacco cessation pharmacotherapy",
    "syphilis screening during pregnancy",
    "vision screening at least once between three and five",
    "hearing assessment in newborns",
    "lipid panel every five years",
    "gestational diabetes screening after twenty four weeks",
    "breastfeeding support programs",
    "skin cancer counseling for fair skinned youth",
    "unhealthy alcohol use screening",
    "anxiety screening in children eight through eighteen",
    "hiv screening for adolescents",
    "prediabetes testing in overweight adults",
    "abdominal aortic aneurysm ultrasonography",
    "rh blood typing at first visit",
    "iron supplementation is not recommended routinely",
    "vitamin d screening lacks sufficient evidence",
    "cervical cytology every three years",
    "high intensity statin",
    "weight loss behavioral programs",
    "perinatal depression counseling",
    "intimate partner violence screening",
    "hepatitis b vaccination series",
    "gonorrhea prophylaxis eye ointment",
    "phenylketonuria newborn testing",
    "congenital hypothyroidism newborn testing",
    "sickle cell disease newborn testing",
    "obesity screening from age six",
    "bacteriuria urine culture in pregnancy",
    "physical activity counseling",
    "dental caries prevention",
    "speech delay evaluation",
    "lung function spirometry is not advised",
    "carotid artery stenosis screening is discouraged",
    "prostate specific antigen shared decision",
    "ovarian cancer screening is not recommended",
    "testicular examination is not recommended",
    "thyroid cancer ultrasound is not recommended",
    "pancreatic cancer imaging is discouraged",
    "bladder cancer cytology lacks evidence",
    "atrial fibrillation electrocardiography lacks evidence",
    "peripheral artery ankle brachial index lacks evidence",
]

FILLER = [
    "Section notes describe documentation workflow for clinic scheduling staff.",
    "The appendix lists committee membership terms and meeting logistics.",
    "Formatting conventions follow the publisher house style manual.",
    "Contact the editorial office regarding permissions or reprints.",
    "Funding acknowledgments appear at the close of this chapter.",
    "Revision history tracks wording changes across prior editions.",
    "Glossary entries define administrative terminology used internally.",
    "Survey respondents rated readability on a numeric scale.",
    "Tables summarize stakeholder feedback gathered during public comment.",
    "Translation services remain available through regional offices.",
]

WRONG = [
    "defer to local policy", "watchful waiting alone", "no guidance given", "routine follow up visit",
    "refer to primary team", "repeat history taking", "observation in clinic", "patient preference only",
]

PATTERNS = (
    [(True, True, False)] * 9 + [(True, True, True)] * 4 + [(False, True, False)] * 4
    + [(True, False, False)] * 6 + [(True, False, True)] * 3 + [(False, False, True)] * 8
)
NO_HIT = (False, False, False)

# (hit, correct, adherence) groups: 29 effective use, 5 blindness, 20 lucky, 5 rejection
HIT_GROUPS = [(True, 0.96)] + [(True, 0.95)] * 20 + [(False, 0.95)] * 8 + [(True, 0.45)] + [(False, 0.45)] * 4
NO_HIT_GROUPS = [(True, 0.90)] * 20 + [(False, 0.35)] * 5

CR_HIT, CR_MISS = 0.20, 0.04


def _hit_context(gt: str, qi: int, rank: int) -> str:
    return (f"Recommendation statement {qi}.{rank}. For eligible patients the panel recommends {gt}. "
            f"The net benefit was judged at least moderate.")


def _filler_context(rng: random.Random, qi: int, rank: int) -> str:
    a, b = rng.sample(FILLER, 2)
    return f"Front matter part {qi}.{rank}. {a} {b}"


def build(seed: int = SEED):
    rng = random.Random(seed)
    rows = [(p, *g) for p, g in zip(PATTERNS, HIT_GROUPS)]
    rows += [(NO_HIT, *g) for g in NO_HIT_GROUPS]
    rng.shuffle(rows)

    records, scores = [], {}
    for i, ((pattern, correct, adherence), gt) in enumerate(zip(rows, GROUND_TRUTHS), start=1):
        qid = f"gq{i:02d}"
        contexts = tuple(
            RetrievedContext(r, _hit_context(gt, i, r) if hit else _filler_context(rng, i, r), round(1 / r, 4))
            for r, hit in enumerate(pattern, start=1)
        )
        if correct:
            answer = gt if i % 2 else f"The guideline recommends {gt}."
        else:
            answer = f"{WRONG[i % len(WRONG)]} for case {i}"
        records.append(EvalRecord(qid, f"What does the guideline advise in scenario {i}?", gt, answer,
                                  contexts, "extraction"))
        scores[qid] = {
            "context_adherence": adherence,
            "answer_relevancy": 0.9 if correct else 0.6,
            "context_relevancy": [CR_HIT if h else CR_MISS for h in pattern],
        }
    return EvalSet(tuple(records)), scores, rows


class _Hashing:
    def embed(self, texts):
        return [EmbeddingVector(hashing_embedding(t)) for t in texts]


def check(eval_set: EvalSet, rows) -> None:
    rules = default_rules()
    for embedder in (None, _Hashing()):
        hits = build_hit_matrix(eval_set, rules=rules, embedder=embedder)
        gen = score_generation(eval_set, rules, embedder)
        for rec, row, (pattern, correct, _) in zip(eval_set.records, hits.rows, rows):
            assert row == pattern, (rec.query_id, row, pattern)
            assert gen[rec.query_id].accuracy == correct, (rec.query_id, rec.answer)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=OUT)
    args = parser.parse_args()
    eval_set, scores, rows = build()
    check(eval_set, rows)
    args.out.mkdir(parents=True, exist_ok=True)
    dump_eval_set(eval_set, args.out / "records.jsonl")
    (args.out / "judge_scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(eval_set)} records to {args.out}")


if __name__ == "__main__":
    main()
