"""Plumbing shared by the embedding and judge HTTP clients."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sqlite3
import threading
import time
from pathlib import Path
from typing import Any

import httpx

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    """A remote provider failed or violated its wire contract."""


class CacheMissError(ProviderError):
    """Offline mode needed values that are not cached."""

    def __init__(self, kind: str, missing: list[str]):
        self.kind = kind
        self.missing = sorted(set(missing))
        preview = ", ".join(self.missing[:10])
        more = f", ... ({len(self.missing)} total)" if len(self.missing) > 10 else ""
        super().__init__(f"offline: {len(self.missing)} uncached {kind} key(s): {preview}{more}")


def content_key(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class DiskCache:
    """Content-addressed JSON value store.

    Backed by sqlite when ``path`` is given, otherwise memory only. The whole
    table is mirrored in a dict at open, so reads never touch the database;
    writes go through one lock.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._mem: dict[str, Any] = {}
        self._db = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._db = sqlite3.connect(str(self.path), check_same_thread=False)
            self._db.execute("CREATE TABLE IF NOT EXISTS cache (key TEXT PRIMARY KEY, value TEXT NOT NULL)")
            self._db.commit()
            for key, value in self._db.execute("SELECT key, value FROM cache"):
                self._mem[key] = json.loads(value)

    def get(self, key: str) -> Any | None:
        return self._mem.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self._mem

    def __len__(self) -> int:
        return len(self._mem)

    def set(self, key: str, value: Any) -> None:
        with self._lock:
            self._mem[key] = value
            if self._db is not None:
                self._db.execute(
                    "INSERT OR REPLACE INTO cache (key, value) VALUES (?, ?)", (key, json.dumps(value))
                )
                self._db.commit()

    def close(self) -> None:
        with self._lock:
            if self._db is not None:
                self._db.close()
                self._db = None


class RateLimiter:
    """Spaces request starts at least ``1 / rate`` seconds apart; ``rate=None`` disables."""

    def __init__(self, rate: float | None):
        self.interval = 1.0 / rate if rate else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            time.sleep(start - now)


def auth_headers(api_key_env: str | None) -> dict[str, str]:
    if api_key_env:
        key = os.environ.get(api_key_env)
        if key:
            return {"Authorization": f"Bearer {key}"}
    return {}


def post_json(
    http: httpx.Client,
    url: str,
    payload: dict,
    *,
    headers: dict[str, str],
    timeout: float,
    max_retries: int,
    in_flight: threading.Semaphore,
    limiter: RateLimiter,
    backoff: float = 0.05,
) -> Any:
    """POST with bounded retries on transport errors, 429 and 5xx."""
    last: Exception | None = None
    for attempt in range(max_retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        limiter.wait()
        try:
            with in_flight:
                resp = http.post(url, json=payload, headers=headers, timeout=timeout)
        except httpx.HTTPError as exc:
            last = exc
            log.debug("request to %s failed (%s), attempt %d", url, exc, attempt + 1)
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last = ProviderError(f"{url} returned HTTP {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise ProviderError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError(f"{url} returned non-JSON body") from exc
    raise ProviderError(f"{url} failed after {max_retries + 1} attempt(s): {last}") from last
