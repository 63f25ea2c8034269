"""Chat and embedding access for the pipeline agents.

Every agent owns its own append-only chat session. Two backends are
provided: a remote chat-completion HTTP backend, and a scripted backend
that replays canned transcripts and hashes text into fixed embeddings so
that whole runs are deterministic.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import httpx
import numpy as np
import yaml

from .errors import BackendUnreachable, ConfigError, ScriptedExhausted

logger = logging.getLogger(__name__)

EMBED_DIM = 256

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class AgentRole(str, Enum):
    SUMMARIZER = "summarizer"
    STRATEGY_ANALYZER = "strategy_analyzer"
    GENERATOR = "generator"
    COMMAND_EXTRACTOR = "command_extractor"
    RESULTS_VERIFIER = "results_verifier"
    REPORT_GENERATOR = "report_generator"


@dataclass
class ChatSession:
    """Append-only message history for one agent session."""

    role: AgentRole
    session_id: str
    model_id: str
    history: list[tuple[str, str]] = field(default_factory=list)

    def messages(self) -> list[dict]:
        return [{"role": speaker, "content": text} for speaker, text in self.history]


def hash_embed(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic test embedding.

    Lowercases, splits on non-alphanumeric boundaries, accumulates weight 1
    on one hashed coordinate per token, then L2-normalizes.
    """
    if not text:
        raise ValueError("embed: text must be non-empty")
    vec = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_SPLIT.split(text.lower()):
        if not token:
            continue
        coord = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:4], "big") % dim
        vec[coord] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass
class ScriptedEntry:
    role: AgentRole
    reply: str
    match: Optional[str] = None


class ScriptedTranscript:
    """Ordered canned replies, one queue per agent role.

    Consumption scans each role's remaining entries front to back and
    removes the first whose ``match`` substring occurs in the user message
    (entries without ``match`` always match). Replay of an identical
    request sequence yields an identical reply sequence.
    """

    def __init__(self, entries: list[ScriptedEntry]):
        self._queues: dict[AgentRole, list[ScriptedEntry]] = {role: [] for role in AgentRole}
        for entry in entries:
            self._queues[entry.role].append(entry)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedTranscript":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict) or "entries" not in doc:
            raise ConfigError(f"{path}: transcript must be a mapping with an 'entries' list")
        entries = []
        for i, raw in enumerate(doc["entries"]):
            try:
                role = AgentRole(raw["role"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}: entry {i}: bad role: {exc}") from exc
            if "reply" not in raw:
                raise ConfigError(f"{path}: entry {i}: missing reply")
            entries.append(ScriptedEntry(role=role, reply=str(raw["reply"]), match=raw.get("match")))
        return cls(entries)

    def consume(self, role: AgentRole, message: str) -> str:
        with self._lock:
            queue = self._queues[role]
            for i, entry in enumerate(queue):
                if entry.match is None or entry.match in message:
                    queue.pop(i)
                    return entry.reply
        raise ScriptedExhausted(
            f"no scripted reply for role={role.value!r} message starting {message[:120]!r}"
        )

    def remaining(self, role: AgentRole) -> int:
        with self._lock:
            return len(self._queues[role])


class ScriptedBackend:
    """Deterministic backend: canned chat replies plus the hash embedder."""

    embedding_dimension = EMBED_DIM

    def __init__(self, transcript: ScriptedTranscript):
        self.transcript = transcript
        self.requests: list[tuple[AgentRole, str]] = []
        self._lock = threading.Lock()

    def complete(self, session: ChatSession, message: str) -> str:
        with self._lock:
            self.requests.append((session.role, message))
        return self.transcript.consume(session.role, message)

    def embed_text(self, text: str) -> np.ndarray:
        return hash_embed(text)


class RemoteBackend:
    """Chat-completion HTTP backend.

    Speaks the common wire contract: POST ``/chat/completions`` with
    system/user/assistant messages, single text reply in
    ``choices[0].message.content``; POST ``/embeddings`` for vectors.
    The API key is read from the environment and never logged.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        embedding_model_id: str = "",
        temperature: float = 0.0,
        max_retries: int = 2,
        request_timeout: float = 60.0,
        api_key_env: str = "LLM_API_KEY",
        transport: Optional[httpx.BaseTransport] = None,
    ):
        if not endpoint:
            raise ConfigError("remote backend requires an endpoint URL")
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.embedding_model_id = embedding_model_id or model_id
        self.temperature = temperature
        self.max_retries = max_retries
        headers = {}
        api_key = os.environ.get(api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=request_timeout, headers=headers, transport=transport)
        self._dimension: Optional[int] = None

    @property
    def embedding_dimension(self) -> int:
        if self._dimension is None:
            raise BackendUnreachable("embedding dimension unknown before the first embed call")
        return self._dimension

    def _post(self, path: str, payload: dict) -> dict:
        last_exc: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(self.endpoint + path, json=payload)
                resp.raise_for_status()
                return resp.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(min(0.5 * 2**attempt, 4.0))
        raise BackendUnreachable(f"POST {path} failed after {self.max_retries + 1} attempts: {last_exc}")

    def complete(self, session: ChatSession, message: str) -> str:
        payload = {
            "model": session.model_id or self.model_id,
            "messages": session.messages() + [{"role": "user", "content": message}],
            "temperature": self.temperature,
        }
        data = self._post("/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnreachable(f"malformed chat-completion response: {exc}") from exc

    def embed_text(self, text: str) -> np.ndarray:
        data = self._post("/embeddings", {"model": self.embedding_model_id, "input": text})
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnreachable(f"malformed embedding response: {exc}") from exc
        if self._dimension is None:
            self._dimension = int(vec.shape[0])
        elif vec.shape[0] != self._dimension:
            raise BackendUnreachable(
                f"embedding dimension changed from {self._dimension} to {vec.shape[0]}"
            )
        return vec


class LLMGateway:
    """Session bookkeeping over a chat/embedding backend."""

    def __init__(self, backend, model_id: str = ""):
        self.backend = backend
        self.model_id = model_id
        self._session_counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def open_session(self, role: AgentRole, system_prompt: str) -> ChatSession:
        if not system_prompt:
            raise ValueError("open_session: system_prompt must be non-empty")
        with self._lock:
            n = self._session_counts.get(role.value, 0) + 1
            self._session_counts[role.value] = n
        session = ChatSession(role=role, session_id=f"{role.value}-{n}", model_id=self.model_id)
        session.history.append(("system", system_prompt))
        return session

    def chat(self, session: ChatSession, message: str) -> str:
        if not message:
            raise ValueError("chat: message must be non-empty")
        reply = self.backend.complete(session, message)
        session.history.append(("user", message))
        session.history.append(("assistant", reply))
        return reply

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("embed: text must be non-empty")
        return self.backend.embed_text(text)

    @property
    def embedding_dimension(self) -> int:
        return self.backend.embedding_dimension
