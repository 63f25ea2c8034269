from __future__ import annotations

from pathlib import Path

import pytest

from pentagent.config import AttackHostProfile
from pentagent.llm import AgentRole, LLMGateway, ScriptedBackend, ScriptedEntry, ScriptedTranscript


def make_gateway(entries: list[tuple[AgentRole, str | None, str]]) -> tuple[LLMGateway, ScriptedBackend]:
    """Gateway over a scripted backend built from (role, match, reply) triples."""
    backend = ScriptedBackend(
        ScriptedTranscript([ScriptedEntry(role=r, match=m, reply=reply) for r, m, reply in entries])
    )
    return LLMGateway(backend), backend


@pytest.fixture
def profile(tmp_path: Path) -> AttackHostProfile:
    users = tmp_path / "users.txt"
    users.write_text("root\nadmin\n", encoding="utf-8")
    prof = AttackHostProfile(
        local_ip="127.0.0.1",
        wordlist_paths={"usernames": users},
        workspace_dir=tmp_path / "workspace",
    )
    prof.validate()
    return prof
