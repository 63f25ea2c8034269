"""Two-phase strategy analysis over the task tree.

Phase one folds the latest summary into the tree (LLM returns the full
revised tree in a fenced block, validated and repaired once on failure).
Phase two selects the next step; the complete current serialization is
supplied as fresh content on every call so long runs cannot drift from
the tree state.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import NoStepsRemaining, PttParseError
from .llm import AgentRole, LLMGateway
from .prompts import (
    STRATEGY_SYSTEM_PLAIN,
    STRATEGY_SYSTEM_REASONING,
    build_select_prompt,
    build_update_prompt,
)
from .ptt import PentestTaskTree, Status, extract_fenced_block, parse_ptt, serialize_ptt
from .summarize import Summary

logger = logging.getLogger(__name__)

_SELECTED_LINE = re.compile(r"SELECTED:\s*(?P<id>[0-9.]+)\s*\|\s*STEP:\s*(?P<step>.+)")


@dataclass
class StrategyDecision:
    reasoning: str
    selected_node_id: str
    step_statement: str
    raw_reply: str


def mark_selected(tree: PentestTaskTree, node_id: str) -> None:
    """Move the in-progress marker to the chosen node.

    A previously in-progress node that gathered findings counts as visited
    and is closed; one without findings returns to TODO.
    """
    for node in tree.nodes():
        if node.status is Status.IN_PROGRESS and node.id != node_id:
            node.status = Status.DONE if node.findings else Status.TODO
    target = tree.find(node_id)
    if target is not None and target.status in (Status.TODO, Status.IN_PROGRESS):
        target.status = Status.IN_PROGRESS
    tree.bump()


class StrategyAnalyzer:
    def __init__(self, gateway: LLMGateway, reasoning: bool = True):
        self._gateway = gateway
        system = STRATEGY_SYSTEM_REASONING if reasoning else STRATEGY_SYSTEM_PLAIN
        self._session = gateway.open_session(AgentRole.STRATEGY_ANALYZER, system)

    # -- update -----------------------------------------------------------

    def update_ptt(
        self, tree: PentestTaskTree, summary: Summary, instruction: str = ""
    ) -> PentestTaskTree:
        """Fold the summary into the tree; degrade to the prior tree on failure."""
        if not summary.text and not instruction:
            tree.bump()
            return tree
        prompt = build_update_prompt(summary.text, serialize_ptt(tree), instruction)
        reply = self._gateway.chat(self._session, prompt)
        candidate, reason = self._parse_update_reply(reply, tree)
        if candidate is None:
            repair = self._gateway.chat(
                self._session,
                f"Your previous reply was invalid ({reason}). Reply again with the "
                "complete corrected task tree in a single fenced block.",
            )
            candidate, reason = self._parse_update_reply(repair, tree)
        if candidate is None:
            logger.warning("task-tree update failed twice (%s); retaining prior tree", reason)
            node = next((n for n in tree.nodes() if n.status is Status.IN_PROGRESS), tree.root)
            if summary.text and node.status is not Status.TODO:
                node.findings.append(summary.text)
            tree.bump()
            return tree
        candidate.revision = tree.revision + 1
        return candidate

    def _parse_update_reply(
        self, reply: str, prior: PentestTaskTree
    ) -> tuple[PentestTaskTree | None, str]:
        block = extract_fenced_block(reply)
        if block is None:
            return None, "no fenced block found"
        try:
            candidate = parse_ptt(block)
        except PttParseError as exc:
            return None, str(exc)
        # updates may only grow the tree: no node vanishes, no finding is lost
        for old in prior.nodes():
            new = candidate.find(old.id)
            if new is None:
                return None, f"node {old.id} was removed"
            missing = [f for f in old.findings if f not in new.findings]
            if missing:
                return None, f"node {old.id} lost finding {missing[0]!r}"
        return candidate, ""

    # -- select -----------------------------------------------------------

    def select_next_step(self, tree: PentestTaskTree, hint: str = "") -> StrategyDecision:
        if not tree.has_open_steps():
            raise NoStepsRemaining("every task-tree node is done or failed")
        prompt = build_select_prompt(serialize_ptt(tree), hint)
        reply = self._gateway.chat(self._session, prompt)
        decision, reason = self._parse_select_reply(reply, tree)
        if decision is None:
            repair = self._gateway.chat(
                self._session,
                f"Your previous reply was invalid ({reason}). Answer again, ending "
                "with 'SELECTED: <existing TODO or IN-PROGRESS node id> | STEP: <statement>'.",
            )
            decision, reason = self._parse_select_reply(repair, tree)
        if decision is None:
            logger.warning("step selection failed twice (%s); falling back to first TODO", reason)
            fallback = next(
                (n for n in tree.nodes() if n.status is Status.TODO),
                None,
            ) or next(n for n in tree.nodes() if n.status is Status.IN_PROGRESS)
            decision = StrategyDecision(
                reasoning="",
                selected_node_id=fallback.id,
                step_statement=f"Proceed with subtask {fallback.id}: {fallback.title}",
                raw_reply=reply,
            )
        mark_selected(tree, decision.selected_node_id)
        return decision

    def _parse_select_reply(
        self, reply: str, tree: PentestTaskTree
    ) -> tuple[StrategyDecision | None, str]:
        m = _SELECTED_LINE.search(reply)
        if not m:
            return None, "no SELECTED line found"
        node_id = m.group("id").strip().rstrip(".")
        statement = m.group("step").strip()
        if not statement:
            return None, "empty step statement"
        node = tree.find(node_id)
        if node is None:
            return None, f"node {node_id} does not exist"
        if node.status in (Status.DONE, Status.FAILED):
            return None, f"node {node_id} is already {node.status.value}; pick a TODO node"
        reasoning = reply[: m.start()].strip()
        return (
            StrategyDecision(
                reasoning=reasoning,
                selected_node_id=node_id,
                step_statement=statement,
                raw_reply=reply,
            ),
            "",
        )

