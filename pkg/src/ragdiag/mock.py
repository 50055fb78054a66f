"""In-process mock of the embedding and chat-completion providers.

Serves ``POST /v1/embeddings`` with deterministic hashing vectors and
``POST /v1/chat/completions`` with scripted or computed judge replies. It
counts requests and records the peak number of concurrently open requests,
which makes it suitable for contract tests and offline demos.
"""

from __future__ import annotations

import json
import threading
import time
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .dataset import EvalRecord
from .embeddings import hashing_embedding

EMBED_PATH = "/v1/embeddings"
CHAT_PATH = "/v1/chat/completions"

Scorer = Callable[[str], str]


def _reply(score: float, reason: str = "mock") -> str:
    return json.dumps({"score": score, "reason": reason})


class MockProvider:
    """Threaded HTTP mock; use as a context manager.

    Args:
        scorer: maps the user prompt to the raw reply text. Used once
            ``script`` is exhausted.
        script: raw chat replies served in order before falling back to ``scorer``.
        fail_first: number of initial requests (any route) answered with HTTP 500.
        latency: seconds each request sleeps while counted as in flight.
        dim: embedding dimension.
        embed_data: optional override building the response ``data`` list from
            the input texts, for simulating contract violations.
    """

    def __init__(self, scorer: Scorer | None = None, script: Iterable[str] = (), fail_first: int = 0,
                 latency: float = 0.0, dim: int = 256,
                 embed_data: Callable[[list[str]], list[dict]] | None = None):
        self.scorer = scorer or (lambda prompt: _reply(0.5))
        self.script = list(script)
        self.fail_first = fail_first
        self.latency = latency
        self.dim = dim
        self.embed_data = embed_data
        self.counts: Counter = Counter()
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def embed_url(self) -> str:
        return self.base_url + EMBED_PATH

    @property
    def chat_url(self) -> str:
        return self.base_url + CHAT_PATH

    @property
    def total_requests(self) -> int:
        return sum(self.counts.values())

    def start(self) -> MockProvider:
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> MockProvider:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _respond(self, path: str, body: Any) -> tuple[int, Any]:
        with self._lock:
            self.counts[path] += 1
            if self.fail_first > 0:
                self.fail_first -= 1
                return 500, {"error": "injected failure"}
        if path == EMBED_PATH:
            texts = body["input"]
            if self.embed_data is not None:
                return 200, {"data": self.embed_data(texts)}
            data = [{"index": i, "embedding": hashing_embedding(t, self.dim)} for i, t in enumerate(texts)]
            return 200, {"data": data, "model": body.get("model")}
        if path == CHAT_PATH:
            prompt = body["messages"][-1]["content"]
            with self._lock:
                content = self.script.pop(0) if self.script else None
            if content is None:
                content = self.scorer(prompt)
            return 200, {"choices": [{"message": {"role": "assistant", "content": content}}]}
        return 404, {"error": f"no route {path}"}

    def _handler(self):
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                with mock._lock:
                    mock.in_flight += 1
                    mock.max_in_flight = max(mock.max_in_flight, mock.in_flight)
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    body = json.loads(self.rfile.read(length) or b"{}")
                    if mock.latency:
                        time.sleep(mock.latency)
                    status, payload = mock._respond(self.path, body)
                finally:
                    with mock._lock:
                        mock.in_flight -= 1
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        return Handler


def _section(prompt: str, header: str, end: str) -> str:
    start = prompt.find(f"\n{header}\n")
    if start == -1:
        raise KeyError(header)
    start += len(header) + 2
    stop = prompt.find(f"\n\n{end}", start)
    return prompt[start:stop if stop != -1 else None]


class FixtureScorer:
    """Judge that replays per-query scores for a known eval set.

    ``scores`` maps query ids to ``{"context_adherence": float,
    "answer_relevancy": float, "context_relevancy": [float per rank]}``.
    The query is recognized from the question or answer in the prompt and the
    metric from the prompt's ``Task:`` line.
    """

    def __init__(self, records: Iterable[EvalRecord], scores: Mapping[str, Mapping[str, Any]]):
        self.records = {r.query_id: r for r in records}
        self.scores = scores
        self.by_question = {r.question: r.query_id for r in self.records.values()}
        self.by_answer = {r.answer: r.query_id for r in self.records.values() if r.answer}

    def __call__(self, prompt: str) -> str:
        task = prompt.split("\n", 1)[0].removeprefix("Task: ").rstrip(".")
        if task == "context adherence":
            qid = self.by_answer[_section(prompt, "Answer:", "Respond with")]
            return _reply(self.scores[qid]["context_adherence"])
        if task == "answer relevancy":
            qid = self.by_question[_section(prompt, "Question:", "Answer:")]
            return _reply(self.scores[qid].get("answer_relevancy", 1.0))
        if task == "context relevancy":
            qid = self.by_question[_section(prompt, "Question:", "Retrieved context:")]
            context = _section(prompt, "Retrieved context:", "Respond with")
            texts = self.records[qid].context_texts()
            return _reply(self.scores[qid]["context_relevancy"][texts.index(context)])
        raise ValueError(f"unrecognized judge task {task!r}")
