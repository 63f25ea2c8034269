"""LLM judgment of tool output with a bounded refine-and-retry loop."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Optional

from .config import DEFAULT_MAX_RETRIES_PER_STEP
from .generator import CommandPlan, parse_command_blocks
from .llm import AgentRole, LLMGateway
from .prompts import VERIFIER_SYSTEM, build_verify_prompt

logger = logging.getLogger(__name__)

_VERDICT_LINE = re.compile(r"VERDICT:\s*(VALID|RETRY)", re.IGNORECASE)
_TRANSCRIPT_SNIPPET = 4000  # chars of each transcript shown to the verifier


@dataclass
class RetryBudget:
    max_retries: int = DEFAULT_MAX_RETRIES_PER_STEP
    used: int = 0

    @property
    def exhausted(self) -> bool:
        return self.used >= self.max_retries


@dataclass
class Verdict:
    outcome: str  # valid | retry | give_up
    rationale: str = ""
    revised_plan: Optional[CommandPlan] = None


class ResultsVerifier:
    def __init__(self, gateway: LLMGateway):
        self._gateway = gateway
        self._session = gateway.open_session(AgentRole.RESULTS_VERIFIER, VERIFIER_SYSTEM)

    def verify(self, plan: CommandPlan, outcomes, budget: RetryBudget, step_statement: str) -> Verdict:
        """Judge the executed plan. Parse failures fail open as valid."""
        command_block = "\n".join(
            f"[{item.tool}] {item.command_text}" for item in plan.items
        )
        results_parts = []
        for outcome in outcomes:
            if outcome.result is None:
                results_parts.append(
                    f"[{outcome.item.tool}] blocked by scope guard "
                    f"(out-of-scope token {outcome.violation_token!r})"
                )
            else:
                snippet = outcome.result.transcript[:_TRANSCRIPT_SNIPPET]
                results_parts.append(
                    f"[{outcome.item.tool}] exit={outcome.result.exit_code}\n{snippet}"
                )
        reply = self._gateway.chat(
            self._session,
            build_verify_prompt(step_statement, command_block, "\n---\n".join(results_parts) or "(no output)"),
        )
        m = _VERDICT_LINE.search(reply)
        if m is None:
            logger.warning("verifier reply has no VERDICT line; failing open as valid")
            return Verdict(outcome="valid", rationale="verifier reply unparseable (fail-open)")
        rationale = reply[: m.start()].strip() or reply[m.end() :].strip()
        if m.group(1).upper() == "VALID":
            return Verdict(outcome="valid", rationale=rationale)
        if budget.exhausted:
            return Verdict(outcome="give_up", rationale=rationale)
        items = parse_command_blocks(reply)
        if not items:
            logger.warning("verifier asked to retry but gave no commands; failing open as valid")
            return Verdict(outcome="valid", rationale="retry without revised commands (fail-open)")
        budget.used += 1
        revised = CommandPlan(step_ref=plan.step_ref, items=items, raw_reply=reply)
        return Verdict(outcome="retry", rationale=rationale, revised_plan=revised)


class IdentityVerifier:
    """Ablation stand-in: every result is accepted as valid."""

    def verify(self, plan: CommandPlan, outcomes, budget: RetryBudget, step_statement: str) -> Verdict:
        return Verdict(outcome="valid", rationale="verification disabled")
