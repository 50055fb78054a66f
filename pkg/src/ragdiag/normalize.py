"""Medical text normalization applied before any metric is computed.

Stages run in a fixed order: general cleanup, abbreviation expansion,
age-threshold canonicalization, gender-term unification. Every rewrite
target is itself a fixed point of the pipeline, which is what makes
``normalize_text`` idempotent.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

# kept through punctuation stripping: they carry clinical thresholds
_KEEP_SYMBOLS = frozenset("<>=≥≤+%")

TOKEN_RE = re.compile(r"\d+(?:\.\d+)+|\w+|[<>=≥≤+%]+")


def tokenize(text: str) -> list[str]:
    """Split normalized text into word, decimal-number and symbol tokens."""
    return TOKEN_RE.findall(text)


def contains_phrase(text: str, phrase: str) -> bool:
    """True when the token sequence of ``phrase`` occurs contiguously in ``text``.

    This is substring containment that respects token boundaries: "aspirin"
    is found in "low dose aspirin daily" but "ca" is not found in "cancer".
    """
    needle = tokenize(phrase)
    if not needle:
        return False
    hay = tokenize(text)
    m = len(needle)
    return any(hay[i:i + m] == needle for i in range(len(hay) - m + 1))


class RulesError(ValueError):
    pass


@dataclass(frozen=True)
class GeneralFlags:
    lowercase: bool = True
    collapse_whitespace: bool = True
    strip_punctuation: bool = True


@dataclass(frozen=True)
class AgePattern:
    pattern: str
    canonical: str


@dataclass(frozen=True)
class NormalizationRules:
    abbreviation_map: dict[str, str] = field(default_factory=dict)
    age_patterns: tuple[AgePattern, ...] = ()
    gender_synonyms: dict[str, str] = field(default_factory=dict)
    general: GeneralFlags = field(default_factory=GeneralFlags)

    def __post_init__(self):
        object.__setattr__(self, "age_patterns", tuple(self.age_patterns))
        object.__setattr__(self, "_compiled", _compile(self))

    def to_dict(self) -> dict[str, Any]:
        return {
            "abbreviations": dict(self.abbreviation_map),
            "age_patterns": [{"pattern": p.pattern, "canonical": p.canonical} for p in self.age_patterns],
            "gender_synonyms": dict(self.gender_synonyms),
            "general": {
                "lowercase": self.general.lowercase,
                "collapse_whitespace": self.general.collapse_whitespace,
                "strip_punctuation": self.general.strip_punctuation,
            },
        }


def _strip_punctuation(text: str) -> str:
    """Replace punctuation, symbols and control characters with spaces and drop
    combining marks; threshold symbols and decimal points survive."""
    out = []
    n = len(text)
    for i, ch in enumerate(text):
        cat = unicodedata.category(ch)[0]
        if ch in _KEEP_SYMBOLS or ch.isspace():
            out.append(ch)
        elif ch == "." and 0 < i < n - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
            out.append(ch)
        elif cat == "M":
            continue
        elif cat in "PSC":
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


def general_cleanup(text: str, flags: GeneralFlags) -> str:
    if flags.lowercase:
        text = text.lower()
    if flags.strip_punctuation:
        text = _strip_punctuation(text)
    if flags.collapse_whitespace:
        text = " ".join(text.split())
    return text


def _phrase_regex(phrases: list[str]) -> re.Pattern | None:
    if not phrases:
        return None
    # longest first so multi-word variants win over their prefixes
    alts = "|".join(re.escape(p) for p in sorted(phrases, key=lambda p: (-len(p), p)))
    return re.compile(rf"(?<!\w)(?:{alts})(?!\w)", re.IGNORECASE)


@dataclass(frozen=True)
class _Compiled:
    abbrev_re: re.Pattern | None
    abbrev_sub: dict[str, str]
    age: tuple[tuple[re.Pattern, str], ...]
    gender_re: re.Pattern | None
    gender_sub: dict[str, str]


def _compile(rules: NormalizationRules) -> _Compiled:
    flags = rules.general
    folded: dict[str, str] = {}
    for key, expansion in rules.abbreviation_map.items():
        fk = key.casefold().strip()
        if not fk:
            raise RulesError("empty abbreviation key")
        if fk in folded:
            raise RulesError(f"abbreviation key {key!r} duplicates another key after case-folding")
        folded[fk] = general_cleanup(expansion, flags)

    # an expansion token that is itself a key would rewrite again on a second pass
    for fk, expansion in folded.items():
        for tok in tokenize(expansion.casefold()):
            if tok in folded:
                raise RulesError(
                    f"abbreviation cycle: expansion of {fk!r} contains key {tok!r}"
                )

    age = []
    for ap in rules.age_patterns:
        try:
            age.append((re.compile(ap.pattern, re.IGNORECASE), ap.canonical))
        except re.error as exc:
            raise RulesError(f"invalid age pattern {ap.pattern!r}: {exc}") from exc

    gender_sub = {}
    for variant, canonical in rules.gender_synonyms.items():
        gender_sub[variant.casefold()] = general_cleanup(canonical, flags)

    compiled = _Compiled(
        abbrev_re=_phrase_regex(list(folded)),
        abbrev_sub=folded,
        age=tuple(age),
        gender_re=_phrase_regex(list(gender_sub)),
        gender_sub=gender_sub,
    )
    _check_fixed_points(compiled)
    return compiled


def _apply_age(text: str, age: tuple[tuple[re.Pattern, str], ...]) -> str:
    for pattern, canonical in age:
        text = pattern.sub(canonical, text)
    return text


def _apply_gender(text: str, compiled: _Compiled) -> str:
    if compiled.gender_re is None:
        return text
    return compiled.gender_re.sub(lambda m: compiled.gender_sub[m.group(0).casefold()], text)


def _check_fixed_points(compiled: _Compiled) -> None:
    """Reject rule sets whose rewrite targets would be rewritten on a second pass."""

    def has_key(text: str) -> str | None:
        return next((t for t in tokenize(text.casefold()) if t in compiled.abbrev_sub), None)

    for variant, canonical in compiled.gender_sub.items():
        if _apply_gender(canonical, compiled) != canonical:
            raise RulesError(f"gender synonym cycle: {variant!r} -> {canonical!r} is rewritten again")
        if key := has_key(canonical):
            raise RulesError(f"gender canonical {canonical!r} contains abbreviation key {key!r}")

    for pattern, canonical in compiled.age:
        rendered = re.sub(r"\\(\d+)|\\g<(\w+)>", "65", canonical)
        if _apply_age(rendered, compiled.age) != rendered:
            raise RulesError(f"age canonical form {canonical!r} is rewritten again by the age patterns")
        if _apply_gender(rendered, compiled) != rendered:
            raise RulesError(f"age canonical form {canonical!r} is rewritten by gender synonyms")
        if key := has_key(rendered):
            raise RulesError(f"age canonical form {canonical!r} contains abbreviation key {key!r}")


def normalize_text(text: str, rules: NormalizationRules | None = None) -> str:
    """Normalize ``text`` with ``rules`` (the shipped defaults when omitted).

    >>> normalize_text("Screen for AAA in men")
    'screen for abdominal aortic aneurysm in men'
    """
    if rules is None:
        rules = default_rules()
    compiled: _Compiled = rules._compiled  # type: ignore[attr-defined]
    text = general_cleanup(text, rules.general)
    if compiled.abbrev_re is not None:
        text = compiled.abbrev_re.sub(lambda m: compiled.abbrev_sub[m.group(0).casefold()], text)
    text = _apply_age(text, compiled.age)
    text = _apply_gender(text, compiled)
    if rules.general.collapse_whitespace:
        text = " ".join(text.split())
    return text


def rules_from_dict(doc: Any) -> NormalizationRules:
    if not isinstance(doc, dict):
        raise RulesError("rules document must be a JSON object")
    abbreviations = doc.get("abbreviations", {}) or {}
    gender = doc.get("gender_synonyms", {}) or {}
    general = doc.get("general", {}) or {}
    raw_age = doc.get("age_patterns", []) or []
    if not isinstance(abbreviations, dict) or not isinstance(gender, dict):
        raise RulesError("'abbreviations' and 'gender_synonyms' must be objects")
    if not isinstance(raw_age, list) or not isinstance(general, dict):
        raise RulesError("'age_patterns' must be a list and 'general' an object")
    age = []
    for item in raw_age:
        if not isinstance(item, dict) or "pattern" not in item or "canonical" not in item:
            raise RulesError("each age pattern needs 'pattern' and 'canonical'")
        age.append(AgePattern(str(item["pattern"]), str(item["canonical"])))
    unknown = set(general) - {"lowercase", "collapse_whitespace", "strip_punctuation"}
    if unknown:
        raise RulesError(f"unknown general flag(s): {', '.join(sorted(unknown))}")
    return NormalizationRules(
        abbreviation_map={str(k): str(v) for k, v in abbreviations.items()},
        age_patterns=tuple(age),
        gender_synonyms={str(k): str(v) for k, v in gender.items()},
        general=GeneralFlags(**{k: bool(v) for k, v in general.items()}),
    )


_DEFAULT: NormalizationRules | None = None


def default_rules() -> NormalizationRules:
    global _DEFAULT
    if _DEFAULT is None:
        doc = json.loads(resources.files("ragdiag.data").joinpath("default_rules.json").read_text("utf-8"))
        _DEFAULT = rules_from_dict(doc)
    return _DEFAULT


def load_rules(path: str | Path | None = None) -> NormalizationRules:
    """Load a JSON rules file; ``None`` returns the shipped default rules."""
    if path is None:
        return default_rules()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8") or "{}")
    except json.JSONDecodeError as exc:
        raise RulesError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    except OSError as exc:
        raise RulesError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    return rules_from_dict(doc)
