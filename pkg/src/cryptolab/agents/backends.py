"""Language-model backends: a scripted fixture player and an HTTP chat client."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from ..errors import BackendError

log = logging.getLogger(__name__)

Message = dict  # {"role": ..., "content": ...}

DEFAULT_RETRIES = 2
API_KEY_ENV = "CRYPTOLAB_API_KEY"


def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class LlmBackend(Protocol):
    calls: int

    def complete(self, messages: Sequence[Message], temperature: float = 0.0) -> str: ...


def user_text(messages: Sequence[Message]) -> str:
    return "\n".join(m["content"] for m in messages if m.get("role") == "user")


class ScriptedBackend:
    """Replays canned replies, fully offline.

    A reply is looked up, in order, by the SHA-256 digest of the user prompt,
    by request ordinal, by the first rule whose ``contains`` substring occurs in
    the prompt, and finally by ``default``. Rules with a ``replies`` list cycle
    through it on successive hits.
    """

    def __init__(
        self,
        replies: Sequence[str] | None = None,
        digests: dict[str, str] | None = None,
        rules: Sequence[dict] | None = None,
        default: str | None = None,
    ):
        self.replies = list(replies or [])
        self.digests = dict(digests or {})
        self.rules = [dict(r) for r in rules or []]
        for rule in self.rules:
            if "contains" not in rule or ("reply" not in rule and "replies" not in rule):
                raise BackendError(f"scripted rule needs 'contains' and 'reply'/'replies': {rule}", transient=False)
        self.default = default
        self.calls = 0
        self._rule_hits = [0] * len(self.rules)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        with Path(path).open(encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, list):
            return cls(replies=data)
        return cls(
            replies=data.get("replies"),
            digests=data.get("digests"),
            rules=data.get("rules"),
            default=data.get("default"),
        )

    def reset(self) -> None:
        self.calls = 0
        self._rule_hits = [0] * len(self.rules)

    def complete(self, messages: Sequence[Message], temperature: float = 0.0) -> str:
        ordinal = self.calls
        self.calls += 1
        prompt = user_text(messages)
        digest = prompt_digest(prompt)
        if digest in self.digests:
            return self.digests[digest]
        if ordinal < len(self.replies):
            return self.replies[ordinal]
        for i, rule in enumerate(self.rules):
            if rule["contains"] in prompt:
                if "replies" in rule:
                    reply = rule["replies"][self._rule_hits[i] % len(rule["replies"])]
                else:
                    reply = rule["reply"]
                self._rule_hits[i] += 1
                return reply
        if self.default is not None:
            return self.default
        raise BackendError(f"scripted backend has no reply for request #{ordinal}", transient=False)


class HttpBackend:
    """OpenAI-style chat completion over HTTP with a bearer token from the environment."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = API_KEY_ENV,
        client: httpx.Client | None = None,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._client = client
        self.timeout = timeout
        self.calls = 0

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendError(f"environment variable {self.api_key_env} is not set", transient=False)
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def complete(self, messages: Sequence[Message], temperature: float = 0.0) -> str:
        self.calls += 1
        body = {"model": self.model, "messages": list(messages), "temperature": temperature}
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            resp = client.post(self.endpoint, json=body, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise BackendError(f"backend timeout: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"backend transport error: {exc}") from exc
        finally:
            if self._client is None:
                client.close()
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendError(f"backend returned {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"backend returned {resp.status_code}: {resp.text[:200]}", transient=False)
        try:
            data = resp.json()
        except ValueError as exc:
            raise BackendError("backend returned invalid JSON") from exc
        return _completion_text(data)


def _completion_text(data) -> str:
    if isinstance(data, dict):
        choices = data.get("choices")
        if choices:
            first = choices[0]
            if isinstance(first.get("message"), dict):
                return first["message"].get("content") or ""
            if "text" in first:
                return first["text"] or ""
        for key in ("content", "text", "completion"):
            if isinstance(data.get(key), str):
                return data[key]
    raise BackendError("backend response carries no completion text", transient=False)


def complete_with_retry(
    backend: LlmBackend,
    messages: Sequence[Message],
    *,
    retries: int = DEFAULT_RETRIES,
    temperature: float = 0.0,
    backoff: float = 0.0,
    sleep: Callable[[float], None] = time.sleep,
    label: str = "agent",
) -> str:
    """Call the backend, retrying transient failures and empty replies."""
    last: BackendError | None = None
    for attempt in range(retries + 1):
        if attempt:
            log.warning("%s: retry %d/%d after %s", label, attempt, retries, last)
            if backoff:
                sleep(backoff * 2 ** (attempt - 1))
        try:
            reply = backend.complete(messages, temperature=temperature)
        except BackendError as exc:
            if not exc.transient:
                raise
            last = exc
            continue
        if reply and reply.strip():
            return reply
        last = BackendError("empty report")
    raise BackendError(f"{label}: {last} (after {retries} retries)", transient=False)
