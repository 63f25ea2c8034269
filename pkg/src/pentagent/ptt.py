"""The pentest task tree: hierarchical subtasks with statuses and findings.

Text format (one node per line, two-space indent per depth level):

    1 Pentest 10.10.10.3 [IN-PROGRESS]
      1.1 Reconnaissance [DONE]
        - 21/tcp open ftp vsftpd 2.3.4
      1.2 Exploit ftp service [TODO]

Findings follow their node, indented two extra spaces, as ``- `` bullets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

from .errors import PttParseError


class Status(str, Enum):
    TODO = "todo"
    IN_PROGRESS = "in_progress"
    DONE = "done"
    FAILED = "failed"


_STATUS_TOKEN = {
    Status.TODO: "TODO",
    Status.IN_PROGRESS: "IN-PROGRESS",
    Status.DONE: "DONE",
    Status.FAILED: "FAILED",
}
_TOKEN_STATUS = {v: k for k, v in _STATUS_TOKEN.items()}

_NODE_LINE = re.compile(
    r"^(?P<indent> *)(?P<id>[1-9]\d*(?:\.[1-9]\d*)*) (?P<title>.+) "
    r"\[(?P<status>TODO|IN-PROGRESS|DONE|FAILED)\]$"
)
_FINDING_LINE = re.compile(r"^(?P<indent> *)- (?P<text>.*)$")


@dataclass
class PttNode:
    id: str
    title: str
    status: Status = Status.TODO
    findings: list[str] = field(default_factory=list)
    children: list["PttNode"] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return self.id.count(".")


@dataclass
class PentestTaskTree:
    root: PttNode
    revision: int = 0

    def bump(self) -> None:
        self.revision += 1

    def nodes(self) -> Iterator[PttNode]:
        """Depth-first pre-order walk."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def find(self, node_id: str) -> Optional[PttNode]:
        for node in self.nodes():
            if node.id == node_id:
                return node
        return None

    def has_open_steps(self) -> bool:
        return any(n.status in (Status.TODO, Status.IN_PROGRESS) for n in self.nodes())

    def validate(self) -> None:
        """Raise ValueError when a structural invariant is broken."""
        seen: set[str] = set()
        in_progress = 0
        for node in self.nodes():
            if node.id in seen:
                raise ValueError(f"duplicate node id {node.id}")
            seen.add(node.id)
            if node.status is Status.IN_PROGRESS:
                in_progress += 1
            if node.findings and node.status is Status.TODO:
                raise ValueError(f"node {node.id} has findings but was never visited")
            for child in node.children:
                parent_part, _, leaf = child.id.rpartition(".")
                if parent_part != node.id or not leaf:
                    raise ValueError(f"child id {child.id} does not extend parent id {node.id}")
        if in_progress > 1:
            raise ValueError("more than one node is in progress")


def seed_tree(target: str) -> PentestTaskTree:
    """Fresh tree for a new target: a root plus one reconnaissance subtask."""
    root = PttNode(id="1", title=f"Pentest {target}", status=Status.TODO)
    root.children.append(PttNode(id="1.1", title="Reconnaissance", status=Status.TODO))
    return PentestTaskTree(root=root, revision=0)


def serialize_ptt(tree: PentestTaskTree) -> str:
    lines: list[str] = []

    def emit(node: PttNode) -> None:
        indent = "  " * node.depth
        lines.append(f"{indent}{node.id} {node.title} [{_STATUS_TOKEN[node.status]}]")
        for finding in node.findings:
            lines.append(f"{indent}  - {finding}")
        for child in node.children:
            emit(child)

    emit(tree.root)
    return "\n".join(lines) + "\n"


def parse_ptt(text: str) -> PentestTaskTree:
    """Parse the text format back into a tree; inverse of serialize_ptt."""
    nodes_by_id: dict[str, PttNode] = {}
    root: Optional[PttNode] = None
    current: Optional[PttNode] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        finding = _FINDING_LINE.match(raw)
        node_m = _NODE_LINE.match(raw)
        if node_m:
            node_id = node_m.group("id")
            depth = node_id.count(".")
            if len(node_m.group("indent")) != 2 * depth:
                raise PttParseError(
                    f"node {node_id} indented {len(node_m.group('indent'))} spaces, expected {2 * depth}",
                    lineno,
                )
            if node_id in nodes_by_id:
                raise PttParseError(f"duplicate node id {node_id}", lineno)
            node = PttNode(
                id=node_id,
                title=node_m.group("title"),
                status=_TOKEN_STATUS[node_m.group("status")],
            )
            if depth == 0:
                if root is not None:
                    raise PttParseError("second root node", lineno)
                root = node
            else:
                parent_id = node_id.rpartition(".")[0]
                parent = nodes_by_id.get(parent_id)
                if parent is None:
                    raise PttParseError(f"node {node_id} has no parent {parent_id}", lineno)
                parent.children.append(node)
            nodes_by_id[node_id] = node
            current = node
        elif finding:
            if current is None:
                raise PttParseError("finding bullet before any node", lineno)
            if len(finding.group("indent")) != 2 * current.depth + 2:
                raise PttParseError(
                    f"finding under node {current.id} indented {len(finding.group('indent'))} "
                    f"spaces, expected {2 * current.depth + 2}",
                    lineno,
                )
            current.findings.append(finding.group("text"))
        else:
            raise PttParseError(f"unrecognized line {raw!r}", lineno)
    if root is None:
        raise PttParseError("no root node found", 1)
    tree = PentestTaskTree(root=root, revision=0)
    try:
        tree.validate()
    except ValueError as exc:
        raise PttParseError(str(exc), 1) from exc
    return tree


def extract_fenced_block(reply: str) -> Optional[str]:
    """Return the contents of the first ``` fenced block in an LLM reply."""
    m = re.search(r"```[a-zA-Z0-9_-]*\n(.*?)```", reply, re.DOTALL)
    return m.group(1) if m else None
