"""Tool-output summarization: overlapping chunking, per-chunk LLM calls, merge."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .config import DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE
from .errors import ConfigError
from .llm import AgentRole, LLMGateway
from .prompts import SUMMARIZER_SYSTEM

logger = logging.getLogger(__name__)

MERGE_DEPTH_CAP = 3
TRUNCATION_MARKER = "\n[...truncated before merge...]\n"


@dataclass(frozen=True)
class ChunkPlan:
    spans: tuple[tuple[int, int], ...]
    chunk_size: int
    overlap: int


@dataclass
class Summary:
    text: str
    source_len: int
    chunk_count: int


def plan_chunks(
    text_len: int, chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_CHUNK_OVERLAP
) -> ChunkPlan:
    """Fixed-stride spans covering [0, text_len).

    stride = chunk_size - overlap; a trailing span fully contained in the
    previous one is not emitted.
    """
    if overlap < 0 or chunk_size <= overlap:
        raise ConfigError(f"chunk_size ({chunk_size}) must exceed overlap ({overlap})")
    if text_len < 0:
        raise ValueError("text_len must be >= 0")
    stride = chunk_size - overlap
    spans: list[tuple[int, int]] = []
    i = 0
    while True:
        start = i * stride
        if start >= text_len:
            break
        end = min(start + chunk_size, text_len)
        if spans and end <= spans[-1][1]:
            break
        spans.append((start, end))
        if end >= text_len:
            break
        i += 1
    return ChunkPlan(spans=tuple(spans), chunk_size=chunk_size, overlap=overlap)


class Summarizer:
    """Chunk, summarize each chunk, and merge the partial summaries."""

    def __init__(
        self,
        gateway: LLMGateway,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        overlap: int = DEFAULT_CHUNK_OVERLAP,
    ):
        self._gateway = gateway
        self._chunk_size = chunk_size
        self._overlap = overlap
        self._session = gateway.open_session(AgentRole.SUMMARIZER, SUMMARIZER_SYSTEM)

    def summarize(self, tool_output: str | bytes) -> Summary:
        if isinstance(tool_output, bytes):
            # binary output is hex-escaped so the backend always sees text
            tool_output = tool_output.decode("utf-8", errors="backslashreplace")
        plan = plan_chunks(len(tool_output), self._chunk_size, self._overlap)
        if not plan.spans:
            return Summary(text="", source_len=0, chunk_count=0)
        partials = []
        for start, end in plan.spans:
            reply = self._gateway.chat(
                self._session, f"Summarize this tool output chunk:\n{tool_output[start:end]}"
            )
            partials.append(reply)
        if len(partials) == 1:
            return Summary(text=partials[0], source_len=len(tool_output), chunk_count=1)
        merged = self._merge(partials, depth=0)
        return Summary(text=merged, source_len=len(tool_output), chunk_count=len(plan.spans))

    def _merge(self, partials: list[str], depth: int) -> str:
        if len(partials) == 1:
            return partials[0]
        combined = "\n\n".join(partials)
        if len(combined) > self._chunk_size:
            if depth >= MERGE_DEPTH_CAP:
                logger.warning("merge depth cap reached; truncating combined summaries")
                combined = combined[: self._chunk_size - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
            else:
                plan = plan_chunks(len(combined), self._chunk_size, self._overlap)
                reduced = [
                    self._gateway.chat(
                        self._session,
                        f"Summarize this tool output chunk:\n{combined[start:end]}",
                    )
                    for start, end in plan.spans
                ]
                return self._merge(reduced, depth + 1)
        return self._gateway.chat(
            self._session,
            f"Merge these partial summaries into one final summary:\n{combined}",
        )
