"""Chat-style remote model client with retries and a deterministic disk
cache.

One client fronts both text-only and image+text endpoints speaking the
chat-completions wire convention. Responses are cached under a digest of the
full request (model, temperature, messages, image bytes), so identical
requests are served from disk byte-identically and a pipeline run against a
fixed backend is reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .errors import ConfigError, InputError, RequestError, TransportError

log = logging.getLogger(__name__)

MAX_IMAGE_BYTES = 20 * 1024 * 1024


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = "TALKEVAL_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    retry_backoff_s: float = 1.0

    def __post_init__(self):
        if not self.base_url.startswith(("http://", "https://")):
            raise ConfigError(f"base_url must be an http(s) URL, got {self.base_url!r}")
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise ConfigError(
                f"API key environment variable {self.api_key_env} is not set"
            )
        return key


class ResponseCache:
    """One file per request digest. Writes are atomic (tmp + rename) and each
    key is guarded by its own lock so concurrent identical requests collapse
    into a single network call."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._registry = threading.Lock()

    def lock_for(self, key: str) -> threading.Lock:
        with self._registry:
            return self._locks.setdefault(key, threading.Lock())

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            log.warning("dropping unreadable cache entry %s", path.name)
            return None
        return entry.get("response")

    def put(self, key: str, response: str, model: str) -> None:
        entry = {
            "key": key,
            "model": model,
            "response": response,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        tmp = self._path(key).with_suffix(".tmp")
        tmp.write_text(json.dumps(entry, ensure_ascii=False), encoding="utf-8")
        tmp.replace(self._path(key))


def request_digest(model: str, temperature: float, messages: list[dict]) -> str:
    payload = json.dumps(
        {"model": model, "temperature": temperature, "messages": messages},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ChatClient:
    """Thread-safe handle for one remote endpoint.

    Counts logical calls and cache hits so pipeline manifests can assert
    exact call budgets.
    """

    def __init__(
        self,
        cfg: EndpointConfig,
        cache_dir: str | Path | None = None,
        use_cache: bool = True,
    ):
        self.cfg = cfg
        self.cache = ResponseCache(cache_dir) if (cache_dir and use_cache) else None
        self._http = httpx.Client(timeout=cfg.timeout_s)
        self._stats_lock = threading.Lock()
        self.text_calls = 0
        self.vision_calls = 0
        self.cache_hits = 0
        self.network_calls = 0

    def close(self) -> None:
        self._http.close()

    def stats(self) -> dict[str, int]:
        with self._stats_lock:
            return {
                "text_calls": self.text_calls,
                "vision_calls": self.vision_calls,
                "cache_hits": self.cache_hits,
                "network_calls": self.network_calls,
            }

    def _bump(self, name: str) -> None:
        with self._stats_lock:
            setattr(self, name, getattr(self, name) + 1)

    # -- public operations ---------------------------------------------------

    def complete_text(self, system: str, user: str) -> str:
        self._bump("text_calls")
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]
        return self._complete(messages)

    def complete_vision(
        self, system: str, user: str, image: bytes, media_type: str = "image/png"
    ) -> str:
        if not image:
            raise InputError("image payload is empty")
        if len(image) > MAX_IMAGE_BYTES:
            raise InputError(
                f"image of {len(image)} bytes exceeds the {MAX_IMAGE_BYTES} byte limit"
            )
        self._bump("vision_calls")
        image_url = f"data:{media_type};base64,{base64.b64encode(image).decode('ascii')}"
        messages = [
            {"role": "system", "content": system},
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": user},
                    {"type": "image_url", "image_url": {"url": image_url}},
                ],
            },
        ]
        # Key on the image digest, not the full base64 blob.
        digest_messages = [
            {"role": "system", "content": system},
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": user},
                    {
                        "type": "image_digest",
                        "sha256": hashlib.sha256(image).hexdigest(),
                        "media_type": media_type,
                    },
                ],
            },
        ]
        return self._complete(messages, digest_messages=digest_messages)

    # -- internals -------------------------------------------------------------

    def _complete(self, messages: list[dict], digest_messages: list[dict] | None = None) -> str:
        key = request_digest(
            self.cfg.model_name, self.cfg.temperature, digest_messages or messages
        )
        if self.cache is None:
            return self._request(messages)
        with self.cache.lock_for(key):
            cached = self.cache.get(key)
            if cached is not None:
                self._bump("cache_hits")
                return cached
            response = self._request(messages)
            self.cache.put(key, response, self.cfg.model_name)
            return response

    def _request(self, messages: list[dict]) -> str:
        api_key = self.cfg.api_key()
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": messages,
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        last_exc: Exception | None = None
        attempts = self.cfg.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.cfg.retry_backoff_s * 2 ** (attempt - 1))
            self._bump("network_calls")
            try:
                resp = self._http.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_exc = exc
                log.warning("request timed out (attempt %d/%d)", attempt + 1, attempts)
                continue
            except httpx.HTTPError as exc:
                last_exc = exc
                log.warning("transport failure (attempt %d/%d): %s", attempt + 1, attempts, exc)
                continue
            if resp.status_code >= 500:
                last_exc = TransportError(f"server returned {resp.status_code}")
                log.warning(
                    "server error %d (attempt %d/%d)", resp.status_code, attempt + 1, attempts
                )
                continue
            if resp.status_code >= 400:
                raise RequestError(
                    f"endpoint rejected request with HTTP {resp.status_code}: "
                    f"{resp.text[:500]}"
                )
            return self._extract_text(resp)
        raise TransportError(
            f"request failed after {attempts} attempts: {last_exc}"
        )

    @staticmethod
    def _extract_text(resp: httpx.Response) -> str:
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        if not isinstance(content, str):
            raise TransportError("completion content is not text")
        return content


def complete_text(
    cfg: EndpointConfig, system: str, user: str, cache_dir: str | Path | None = None
) -> str:
    """One-shot convenience wrapper around ChatClient.complete_text."""
    client = ChatClient(cfg, cache_dir=cache_dir)
    try:
        return client.complete_text(system, user)
    finally:
        client.close()


def complete_vision(
    cfg: EndpointConfig,
    system: str,
    user: str,
    image: bytes,
    media_type: str = "image/png",
    cache_dir: str | Path | None = None,
) -> str:
    """One-shot convenience wrapper around ChatClient.complete_vision."""
    client = ChatClient(cfg, cache_dir=cache_dir)
    try:
        return client.complete_vision(system, user, image, media_type)
    finally:
        client.close()
