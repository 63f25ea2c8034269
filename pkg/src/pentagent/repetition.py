"""Loop detection over selected steps, and the operator decision channel.

Each selected step is structured into a service/technique/tool descriptor,
embedded, and compared against every previously stored step. A cosine
distance strictly below the threshold (default 0.15) counts as a
repetition, at which point the operator gets four options: continue on a
different path, exit to reporting, supply interactive-mode observations,
or give a general instruction for the summarizer.
"""

from __future__ import annotations

import logging
import re
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import DEFAULT_REPETITION_THRESHOLD
from .llm import AgentRole, LLMGateway
from .prompts import STEP_STRUCTURER_SYSTEM, build_describe_prompt
from .strategy import StrategyDecision

logger = logging.getLogger(__name__)

CONTINUE_HINT = "the previous approach was repeated; try a different path"

_FIELD_LINE = re.compile(r"^(SERVICE|TECHNIQUE|TOOL)\s*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_WS = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS.sub(" ", text.strip().lower())


@dataclass(frozen=True)
class StepDescriptor:
    service: str
    technique: str
    tool: str

    @property
    def canonical(self) -> str:
        return " | ".join(_normalize(part) for part in (self.service, self.technique, self.tool))


@dataclass
class StoredStep:
    descriptor: StepDescriptor
    vector: np.ndarray
    iteration: int


class StepEmbeddingStore:
    """Append-only record of every checked step within a run."""

    def __init__(self):
        self.entries: list[StoredStep] = []

    def append(self, descriptor: StepDescriptor, vector: np.ndarray, iteration: int) -> None:
        if self.entries and iteration < self.entries[-1].iteration:
            raise ValueError("iterations must not decrease")
        self.entries.append(StoredStep(descriptor, vector, iteration))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RepetitionVerdict:
    is_repetition: bool
    nearest_iteration: Optional[int]
    distance: float


@dataclass
class OperatorDecision:
    kind: str  # continue | exit | interactive | general
    payload: str = ""
    defaulted: bool = False

    def __post_init__(self):
        if self.kind in ("interactive", "general") and not self.payload:
            raise ValueError(f"{self.kind} decision requires a payload")
        if self.kind in ("continue", "exit"):
            self.payload = ""


@dataclass
class RepetitionPrompt:
    prompt_id: str
    step_statement: str
    nearest_iteration: Optional[int]
    distance: float


class RepetitionGuard:
    def __init__(self, gateway: LLMGateway, threshold: float = DEFAULT_REPETITION_THRESHOLD):
        if not (0 < threshold < 2):
            raise ValueError("threshold must lie in (0, 2)")
        self._gateway = gateway
        self._threshold = threshold
        self._session = gateway.open_session(AgentRole.STRATEGY_ANALYZER, STEP_STRUCTURER_SYSTEM)

    def describe_step(self, decision: StrategyDecision) -> StepDescriptor:
        reply = self._gateway.chat(self._session, build_describe_prompt(decision.step_statement))
        fields = self._parse_fields(reply)
        if len(fields) < 3:
            reply = self._gateway.chat(
                self._session,
                "Your previous reply was incomplete. Reply with exactly the three "
                "lines SERVICE:, TECHNIQUE:, TOOL: for the same step.",
            )
            fields = {**self._parse_fields(reply), **fields}
        return StepDescriptor(
            service=fields.get("service", "unknown"),
            technique=fields.get("technique", "unknown"),
            tool=fields.get("tool", "unknown"),
        )

    @staticmethod
    def _parse_fields(reply: str) -> dict[str, str]:
        fields = {}
        for key, value in _FIELD_LINE.findall(reply):
            value = value.strip()
            if value:
                fields.setdefault(key.lower(), value)
        return fields

    def check_repetition(
        self, descriptor: StepDescriptor, store: StepEmbeddingStore, iteration: int
    ) -> RepetitionVerdict:
        """Compare against every stored step; always record the new one."""
        vector = self._gateway.embed(descriptor.canonical)
        distance = 2.0
        nearest: Optional[int] = None
        for entry in store.entries:
            d = 1.0 - float(np.dot(vector, entry.vector))
            if d < distance:
                distance = d
                nearest = entry.iteration
        is_repetition = bool(store.entries) and distance < self._threshold
        store.append(descriptor, vector, iteration)
        return RepetitionVerdict(is_repetition=is_repetition, nearest_iteration=nearest, distance=distance)


# -- operator channels ------------------------------------------------------

OPTION_TEXT = (
    "A repetition of a previous step was detected. Options:\n"
    "  1) continue     - try a different path automatically (default)\n"
    "  2) exit         - stop and generate the report now\n"
    "  3) interactive  - you run the step by hand; send back your observations\n"
    "  4) general      - give a general instruction for the next analysis\n"
)


class OperatorChannel:
    """One-slot mailbox: at most one pending prompt, one decision per prompt."""

    def __init__(self):
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._counter = 0
        self._pending: Optional[RepetitionPrompt] = None
        self._decision: Optional[OperatorDecision] = None

    def open_prompt(
        self, step_statement: str, nearest_iteration: Optional[int], distance: float
    ) -> RepetitionPrompt:
        with self._lock:
            self._counter += 1
            self._pending = RepetitionPrompt(
                prompt_id=f"prompt-{self._counter}",
                step_statement=step_statement,
                nearest_iteration=nearest_iteration,
                distance=distance,
            )
            self._decision = None
            return self._pending

    def pending(self) -> Optional[RepetitionPrompt]:
        with self._lock:
            return self._pending

    def resolve(self, prompt_id: str, decision: OperatorDecision) -> bool:
        """Deliver the operator's decision; False when stale or none pending."""
        with self._ready:
            if self._pending is None or self._pending.prompt_id != prompt_id:
                return False
            if self._decision is not None:
                return False
            self._decision = decision
            self._ready.notify_all()
            return True

    def await_decision(self, prompt: RepetitionPrompt, timeout: float) -> OperatorDecision:
        deadline = time.monotonic() + timeout
        with self._ready:
            while self._decision is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._ready.wait(remaining)
            decision = self._decision
            self._pending = None
            self._decision = None
        if decision is None:
            return OperatorDecision(kind="continue", defaulted=True)
        return decision


class AutoContinueChannel(OperatorChannel):
    """Non-interactive mode: every prompt defaults to continue immediately."""

    def await_decision(self, prompt: RepetitionPrompt, timeout: float) -> OperatorDecision:
        with self._ready:
            self._pending = None
        return OperatorDecision(kind="continue", defaulted=True)


class TerminalChannel(OperatorChannel):
    """Interactive fallback on the controlling terminal."""

    def await_decision(self, prompt: RepetitionPrompt, timeout: float) -> OperatorDecision:
        print(OPTION_TEXT, file=sys.stderr)
        print(
            f"Repeated step: {prompt.step_statement!r} "
            f"(distance {prompt.distance:.3f} to iteration {prompt.nearest_iteration}).",
            file=sys.stderr,
        )
        print(f"Enter choice within {timeout:.0f}s [continue]: ", file=sys.stderr, end="", flush=True)
        line = self._read_line(timeout)
        with self._ready:
            self._pending = None
        if line is None:
            print("", file=sys.stderr)
            return OperatorDecision(kind="continue", defaulted=True)
        choice = line.strip().lower()
        if choice in ("", "1", "continue"):
            return OperatorDecision(kind="continue")
        if choice in ("2", "exit"):
            return OperatorDecision(kind="exit")
        if choice in ("3", "interactive"):
            payload = input("Run the step by hand, then paste your observations: ").strip()
            return OperatorDecision(kind="interactive", payload=payload or "(no observations)")
        if choice in ("4", "general"):
            payload = input("General instruction: ").strip()
            return OperatorDecision(kind="general", payload=payload or "(none)")
        logger.warning("unrecognized operator choice %r; continuing", choice)
        return OperatorDecision(kind="continue", defaulted=True)

    @staticmethod
    def _read_line(timeout: float) -> Optional[str]:
        import select

        ready, _, _ = select.select([sys.stdin], [], [], timeout)
        if not ready:
            return None
        return sys.stdin.readline()


class ScriptedChannel(OperatorChannel):
    """Test channel replaying a fixed list of decisions."""

    def __init__(self, decisions: list[OperatorDecision]):
        super().__init__()
        self._scripted = list(decisions)

    def await_decision(self, prompt: RepetitionPrompt, timeout: float) -> OperatorDecision:
        with self._ready:
            self._pending = None
        if self._scripted:
            return self._scripted.pop(0)
        return OperatorDecision(kind="continue", defaulted=True)


def handle_repetition(
    verdict: RepetitionVerdict,
    decision: StrategyDecision,
    channel: OperatorChannel,
    timeout: float,
) -> tuple[OperatorDecision, RepetitionPrompt]:
    """Present the four options for a flagged repetition and collect the answer."""
    if not verdict.is_repetition:
        raise ValueError("handle_repetition requires a flagged verdict")
    prompt = channel.open_prompt(decision.step_statement, verdict.nearest_iteration, verdict.distance)
    return channel.await_decision(prompt, timeout), prompt
