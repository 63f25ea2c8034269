"""Append-only event log with replay for the HTTP event stream."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Iterator, Optional

EVENT_KINDS = (
    "phase_change",
    "ptt_updated",
    "step_selected",
    "repetition_prompt",
    "tool_started",
    "tool_output_chunk",
    "verdict",
    "report_ready",
    "run_done",
)


@dataclass
class Event:
    seq: int
    kind: str
    payload: dict
    ts: float

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload, "ts": self.ts}


class EventLog:
    """Strictly increasing sequence numbers; subscribers replay then follow."""

    def __init__(self):
        self._events: list[Event] = []
        self._cond = threading.Condition()
        self._closed = False

    def append(self, kind: str, payload: Optional[dict] = None) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._cond:
            event = Event(seq=len(self._events) + 1, kind=kind, payload=payload or {}, ts=time.time())
            self._events.append(event)
            if kind == "run_done":
                self._closed = True
            self._cond.notify_all()
            return event

    def replay(self, from_seq: int = 0) -> list[Event]:
        with self._cond:
            return self._events[from_seq:]

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def subscribe(self, from_seq: int = 0, poll_timeout: float = 0.5) -> Iterator[Optional[Event]]:
        """Yield every event with seq > from_seq until run_done has been sent.

        Yields None whenever the poll window elapses without news, so the
        HTTP layer can emit keepalives and notice dropped clients.
        """
        next_index = from_seq
        while True:
            with self._cond:
                if next_index >= len(self._events) and not self._closed:
                    self._cond.wait(poll_timeout)
                batch = self._events[next_index:]
                closed = self._closed
            if not batch:
                if closed:
                    return
                yield None
                continue
            for event in batch:
                yield event
                next_index = event.seq
            if closed and next_index >= len(self.replay()):
                return
