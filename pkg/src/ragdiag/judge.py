"""LLM-as-a-judge scoring: context relevancy, answer relevancy, context adherence.

Chat-completion wire contract::

    POST {endpoint_url}  {"model": str, "messages": [{"role", "content"}], "temperature": float}
    ->   {"choices": [{"message": {"content": str}}]}

The judge must reply with a JSON object holding a ``score`` in [0, 1].
Unparseable or out-of-range replies are retried up to ``max_retries`` times
and never escape as scores.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import TypeVar

import httpx

from ._client import CacheMissError, DiskCache, ProviderError, RateLimiter, auth_headers, content_key, post_json

log = logging.getLogger(__name__)

TEMPLATES = ("context_relevancy", "answer_relevancy", "context_adherence")
SYSTEM_PROMPT = "You are a strict evaluation judge. Reply with a single JSON object and nothing else."


class JudgeParseError(ValueError):
    """A judge reply held no usable score."""


class JudgeRangeError(JudgeParseError):
    pass


class JudgeReplyError(ProviderError):
    """Every attempt produced an unusable reply; ``raw`` is the last one."""

    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}; last reply: {raw[:200]!r}")
        self.raw = raw


@dataclass(frozen=True)
class JudgeConfig:
    endpoint_url: str
    model_id: str
    temperature: float = 0.0
    max_retries: int = 2
    adherence_threshold: float = 0.7
    cache_path: str | None = None
    timeout: float = 60.0
    max_in_flight: int = 4
    requests_per_second: float | None = None
    api_key_env: str = "JUDGE_API_KEY"
    prompt_dir: str | None = None
    offline: bool = False

    def __post_init__(self):
        if not 0.0 <= self.adherence_threshold <= 1.0:
            raise ValueError("adherence_threshold must be in [0, 1]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class JudgeScore:
    value: float
    judge_model: str
    prompt_hash: str
    rationale: str | None = None
    retry_count: int = 0
    cached: bool = False

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"judge score {self.value} outside [0, 1]")


def _parse(raw: str) -> tuple[float, str | None]:
    decoder = json.JSONDecoder()
    saw_object = False
    pos = raw.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(raw, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            saw_object = True
            if "score" in obj:
                score = obj["score"]
                if isinstance(score, bool) or not isinstance(score, (int, float)):
                    raise JudgeParseError(f"score is not a number: {score!r}")
                score = float(score)
                if not math.isfinite(score) or not 0.0 <= score <= 1.0:
                    raise JudgeRangeError(f"score {score} outside [0, 1]")
                reason = obj.get("reason", obj.get("rationale"))
                return score, reason if isinstance(reason, str) else None
        pos = raw.find("{", pos + 1)
    raise JudgeParseError("JSON object has no 'score' field" if saw_object else "no JSON object in reply")


def parse_judge_reply(raw: str) -> float:
    """Score from the first JSON object in ``raw`` that has a ``score`` field."""
    return _parse(raw)[0]


def load_template(name: str, prompt_dir: str | Path | None = None) -> str:
    if name not in TEMPLATES:
        raise ValueError(f"unknown judge template {name!r}")
    if prompt_dir is not None:
        path = Path(prompt_dir) / f"{name}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
    return resources.files("ragdiag.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def render(template: str, **fields: str) -> str:
    out = template
    for key, value in fields.items():
        out = out.replace("{{" + key + "}}", value)
    return out


def format_contexts(contexts: Sequence[str]) -> str:
    return "\n\n".join(f"[Context {i}]\n{text}" for i, text in enumerate(contexts, start=1))


T = TypeVar("T")


class JudgeClient:
    def __init__(self, cfg: JudgeConfig, cache: DiskCache | None = None, http: httpx.Client | None = None):
        self.cfg = cfg
        self.cache = cache if cache is not None else DiskCache(cfg.cache_path)
        self._http = http or httpx.Client()
        self._in_flight = threading.Semaphore(cfg.max_in_flight)
        self._limiter = RateLimiter(cfg.requests_per_second)
        self._templates = {name: load_template(name, cfg.prompt_dir) for name in TEMPLATES}
        self._count_lock = threading.Lock()
        self.requests = 0

    def _call(self, prompt: str) -> str:
        with self._count_lock:
            self.requests += 1
        payload = {
            "model": self.cfg.model_id,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.cfg.temperature,
        }
        # transport retries live in post_json; reply retries are counted by score()
        body = post_json(
            self._http, self.cfg.endpoint_url, payload,
            headers=auth_headers(self.cfg.api_key_env), timeout=self.cfg.timeout,
            max_retries=0, in_flight=self._in_flight, limiter=self._limiter,
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise JudgeParseError(f"malformed chat response: {exc!r}") from exc
        if not isinstance(content, str):
            raise JudgeParseError("message content is not text")
        return content

    def score(self, template: str, **fields: str) -> JudgeScore:
        """Render ``template`` and obtain one validated score, consulting the cache first.

        At most ``1 + max_retries`` provider calls are made.
        """
        prompt = render(self._templates[template], **fields)
        phash = content_key("judge", self.cfg.model_id, repr(self.cfg.temperature), SYSTEM_PROMPT, prompt)
        hit = self.cache.get(phash)
        if hit is not None:
            return JudgeScore(hit["value"], self.cfg.model_id, phash, hit.get("rationale"), 0, True)
        if self.cfg.offline:
            raise CacheMissError("judge", [f"{template}:{phash[:16]}"])

        raw = ""
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                raw = self._call(prompt)
                value, rationale = _parse(raw)
            except (JudgeParseError, ProviderError) as exc:
                last_error = exc
                log.debug("judge attempt %d failed: %s", attempt + 1, exc)
                continue
            self.cache.set(phash, {"value": value, "rationale": rationale})
            return JudgeScore(value, self.cfg.model_id, phash, rationale, attempt)
        if isinstance(last_error, JudgeParseError):
            raise JudgeReplyError(f"{template}: unusable reply after {self.cfg.max_retries + 1} attempt(s) "
                                  f"({last_error})", raw) from last_error
        raise ProviderError(f"{template}: provider failed after {self.cfg.max_retries + 1} attempt(s): "
                            f"{last_error}") from last_error

    def context_relevancy(self, question: str, context: str) -> JudgeScore:
        if not question.strip() or not context.strip():
            raise ValueError("context relevancy needs a nonempty question and context")
        return self.score("context_relevancy", question=question, context=context)

    def answer_relevancy(self, question: str, answer: str) -> JudgeScore:
        if not answer.strip():
            raise ValueError("empty answer")
        return self.score("answer_relevancy", question=question, answer=answer)

    def context_adherence(self, answer: str, contexts: Sequence[str]) -> JudgeScore:
        if not contexts:
            raise ValueError("context adherence needs at least one context")
        if not answer.strip():
            raise ValueError("empty answer")
        return self.score("context_adherence", answer=answer, context=format_contexts(contexts))

    def run_many(self, jobs: Sequence[Callable[[], T]], parallelism: int | None = None) -> list[T]:
        """Run judging jobs concurrently; offline cache misses are pooled into one error."""
        workers = parallelism or self.cfg.max_in_flight
        missing: list[str] = []

        def run(job):
            try:
                return job()
            except CacheMissError as exc:
                missing.extend(exc.missing)
                return None

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
        if missing:
            raise CacheMissError("judge", missing)
        return results

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def judge_context_relevancy(question: str, context: str, cfg: JudgeConfig) -> JudgeScore:
    with JudgeClient(cfg) as client:
        return client.context_relevancy(question, context)


def judge_answer_relevancy(question: str, answer: str, cfg: JudgeConfig) -> JudgeScore:
    with JudgeClient(cfg) as client:
        return client.answer_relevancy(question, answer)


def judge_context_adherence(answer: str, contexts: Sequence[str], cfg: JudgeConfig) -> JudgeScore:
    with JudgeClient(cfg) as client:
        return client.context_adherence(answer, contexts)
