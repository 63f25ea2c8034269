"""Retrieval-grounded command generation for a selected step."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .config import AttackHostProfile
from .llm import AgentRole, LLMGateway
from .prompts import GENERATOR_SYSTEM, build_generate_prompt
from .rag import KnowledgeChunk
from .strategy import StrategyDecision

logger = logging.getLogger(__name__)

# unresolved placeholders a human would have to fill in:
# <target-ip>, {{host}}, ${TARGET}
_PLACEHOLDER = re.compile(r"<[^<>\s]+>|\{\{[^{}]*\}\}|\$\{[^}]*\}")

_TOOL_LINE = re.compile(r"^TOOL:\s*(\S+)\s*$", re.MULTILINE)
_INSTRUCTIONS_LINE = re.compile(r"^INSTRUCTIONS:\s*(.*)$", re.MULTILINE)
_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_COMMAND_INLINE = re.compile(r"^COMMAND:\s*(\S.*)$", re.MULTILINE)


def has_placeholder(text: str) -> bool:
    """True when the command still contains an unexpanded placeholder token."""
    return bool(_PLACEHOLDER.search(text))


@dataclass
class CommandItem:
    tool: str
    command_text: str
    instructions: str = ""

    @property
    def incomplete(self) -> bool:
        return has_placeholder(self.command_text)


@dataclass
class CommandPlan:
    step_ref: str
    items: list[CommandItem] = field(default_factory=list)
    raw_reply: str = ""
    fallback_noop: bool = False

    @property
    def incomplete_count(self) -> int:
        if self.fallback_noop:
            return 1
        return sum(1 for item in self.items if item.incomplete)


def parse_command_blocks(text: str) -> list[CommandItem]:
    """Parse TOOL/COMMAND/INSTRUCTIONS blocks out of an LLM reply."""
    items = []
    matches = list(_TOOL_LINE.finditer(text))
    for i, m in enumerate(matches):
        block = text[m.end() : matches[i + 1].start() if i + 1 < len(matches) else len(text)]
        fence = _FENCE.search(block)
        inline = _COMMAND_INLINE.search(block)
        if fence:
            command = fence.group(1).strip("\n")
        elif inline:
            command = inline.group(1).strip()
        else:
            continue
        if not command.strip():
            continue
        instructions_m = _INSTRUCTIONS_LINE.search(block)
        items.append(
            CommandItem(
                tool=m.group(1).strip(),
                command_text=command,
                instructions=instructions_m.group(1).strip() if instructions_m else "",
            )
        )
    return items


class CommandGenerator:
    def __init__(self, gateway: LLMGateway, profile: AttackHostProfile):
        self._gateway = gateway
        self._profile = profile
        self._session = gateway.open_session(AgentRole.GENERATOR, GENERATOR_SYSTEM)

    def generate(
        self,
        decision: StrategyDecision,
        retrieved: list[KnowledgeChunk],
        targets: list[str],
        tool_names: list[str],
    ) -> CommandPlan:
        prompt = build_generate_prompt(
            decision.step_statement,
            decision.selected_node_id,
            [chunk.text for chunk in retrieved],
            self._profile.facts_text(),
            targets,
            tool_names,
        )
        reply = self._gateway.chat(self._session, prompt)
        items = parse_command_blocks(reply)
        if not items:
            reply = self._gateway.chat(
                self._session,
                "Your previous reply contained no parseable command block. Reply "
                "again using TOOL:/COMMAND: (fenced)/INSTRUCTIONS: blocks only.",
            )
            items = parse_command_blocks(reply)
        if not items:
            logger.warning("command generation failed twice for node %s", decision.selected_node_id)
            return CommandPlan(
                step_ref=decision.selected_node_id,
                items=[CommandItem(tool="noop", command_text="", instructions="generation failed")],
                raw_reply=reply,
                fallback_noop=True,
            )
        plan = CommandPlan(step_ref=decision.selected_node_id, items=items, raw_reply=reply)
        for item in plan.items:
            if item.incomplete:
                logger.warning("incomplete command for tool %s: %r", item.tool, item.command_text)
        return plan
