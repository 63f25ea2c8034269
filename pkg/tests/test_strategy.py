"""Strategy analyzer: tree updates, step selection, repair and fallback paths."""

from __future__ import annotations

import pytest

from pentagent.errors import NoStepsRemaining
from pentagent.llm import AgentRole
from pentagent.ptt import Status, parse_ptt, serialize_ptt
from pentagent.strategy import StrategyAnalyzer, mark_selected
from pentagent.summarize import Summary

from conftest import make_gateway

BASE_TREE = """1 Pentest 10.10.10.3 [IN-PROGRESS]
  1.1 Reconnaissance [TODO]
  1.2 Scanning [TODO]
    1.2.2 Service fingerprinting [TODO]
"""

UPDATED_TREE = """1 Pentest 10.10.10.3 [IN-PROGRESS]
  1.1 Reconnaissance [DONE]
  1.2 Scanning [TODO]
    1.2.2 Service fingerprinting [DONE]
      - 21/tcp ftp vsftpd 2.3.4
      - 22/tcp ssh
      - 139/445 smb
  1.3 Exploitation [TODO]
    1.3.1 Exploit vsftpd 2.3.4 backdoor [TODO]
"""


def _tree():
    tree = parse_ptt(BASE_TREE)
    tree.revision = 5
    return tree


def test_update_ptt_applies_scripted_revision():
    gateway, backend = make_gateway(
        [(AgentRole.STRATEGY_ANALYZER, "Summary of the latest results", f"```\n{UPDATED_TREE}```")]
    )
    analyzer = StrategyAnalyzer(gateway)
    summary = Summary(text="21/ftp vsftpd 2.3.4, 22/ssh, 139/445 smb", source_len=100, chunk_count=1)
    tree = analyzer.update_ptt(_tree(), summary)
    node = tree.find("1.2.2")
    assert node.status is Status.DONE
    assert "21/tcp ftp vsftpd 2.3.4" in node.findings
    assert tree.revision == 6
    # the update prompt carried the full prior serialization
    assert BASE_TREE in backend.requests[0][1]


def test_update_ptt_empty_summary_is_noop_with_revision_bump():
    gateway, backend = make_gateway([])
    analyzer = StrategyAnalyzer(gateway)
    tree = _tree()
    out = analyzer.update_ptt(tree, Summary(text="", source_len=0, chunk_count=0))
    assert out is tree
    assert out.revision == 6
    assert backend.requests == []


def test_update_ptt_malformed_twice_retains_tree_and_appends_finding():
    gateway, _ = make_gateway(
        [
            (AgentRole.STRATEGY_ANALYZER, "Summary of the latest results", "no fence here"),
            (AgentRole.STRATEGY_ANALYZER, "invalid", "still no fence"),
        ]
    )
    analyzer = StrategyAnalyzer(gateway)
    tree = _tree()
    before = serialize_ptt(tree)
    summary = Summary(text="some findings", source_len=13, chunk_count=1)
    out = analyzer.update_ptt(tree, summary)
    assert out.revision == 6
    assert out.root.findings == ["some findings"]  # root is the in-progress node
    after = serialize_ptt(out)
    assert after != before
    assert "some findings" in after


def test_update_ptt_rejects_candidate_that_drops_findings():
    tree = parse_ptt(UPDATED_TREE)
    tree.revision = 1
    shrunk = UPDATED_TREE.replace("      - 22/tcp ssh\n", "")
    gateway, backend = make_gateway(
        [
            (AgentRole.STRATEGY_ANALYZER, "Summary of the latest results", f"```\n{shrunk}```"),
            (AgentRole.STRATEGY_ANALYZER, "lost finding", f"```\n{UPDATED_TREE}```"),
        ]
    )
    analyzer = StrategyAnalyzer(gateway)
    out = analyzer.update_ptt(tree, Summary(text="new data", source_len=8, chunk_count=1))
    assert out.find("1.2.2").findings == [
        "21/tcp ftp vsftpd 2.3.4",
        "22/tcp ssh",
        "139/445 smb",
    ]
    assert len(backend.requests) == 2  # repair round-trip happened


def test_select_next_step_scripted_metasploit_choice():
    tree = parse_ptt(UPDATED_TREE)
    gateway, backend = make_gateway(
        [
            (
                AgentRole.STRATEGY_ANALYZER,
                "Select the next best step",
                "The vsftpd 2.3.4 service is a known backdoor candidate.\n"
                "SELECTED: 1.3.1 | STEP: exploit vsftpd 2.3.4 backdoor with Metasploit",
            )
        ]
    )
    analyzer = StrategyAnalyzer(gateway)
    decision = analyzer.select_next_step(tree)
    assert decision.selected_node_id == "1.3.1"
    assert decision.step_statement == "exploit vsftpd 2.3.4 backdoor with Metasploit"
    assert "backdoor candidate" in decision.reasoning
    # fresh-context law: the select prompt contains the full serialization
    assert serialize_ptt(tree).startswith("1 Pentest 10.10.10.3")
    assert "1.3.1 Exploit vsftpd 2.3.4 backdoor" in backend.requests[0][1]
    assert tree.find("1.3.1").status is Status.IN_PROGRESS


def test_select_raises_when_all_done():
    tree = parse_ptt(
        "1 Pentest x [DONE]\n  1.1 Recon [DONE]\n"
    )
    gateway, backend = make_gateway([])
    analyzer = StrategyAnalyzer(gateway)
    with pytest.raises(NoStepsRemaining):
        analyzer.select_next_step(tree)
    assert backend.requests == []


def test_select_invalid_node_falls_back_to_first_todo_depth_first():
    # hand-computed: depth-first order is 1, 1.1, 1.2, 1.2.2, 1.3, 1.3.1;
    # root is IN-PROGRESS, 1.1 is DONE, so the first TODO node is 1.2
    tree = parse_ptt(UPDATED_TREE)
    gateway, _ = make_gateway(
        [
            (AgentRole.STRATEGY_ANALYZER, "Select the next best step", "SELECTED: 9.9 | STEP: bogus"),
            (AgentRole.STRATEGY_ANALYZER, "invalid", "SELECTED: 9.9 | STEP: still bogus"),
        ]
    )
    analyzer = StrategyAnalyzer(gateway)
    decision = analyzer.select_next_step(tree)
    assert decision.selected_node_id == "1.2"
    assert decision.step_statement.startswith("Proceed with subtask 1.2")


def test_select_done_node_triggers_repair():
    tree = parse_ptt(UPDATED_TREE)
    gateway, backend = make_gateway(
        [
            (AgentRole.STRATEGY_ANALYZER, "Select the next best step",
             "SELECTED: 1.1 | STEP: redo recon"),
            (AgentRole.STRATEGY_ANALYZER, "already done",
             "SELECTED: 1.3.1 | STEP: exploit the ftp backdoor"),
        ]
    )
    analyzer = StrategyAnalyzer(gateway)
    decision = analyzer.select_next_step(tree)
    assert decision.selected_node_id == "1.3.1"
    assert len(backend.requests) == 2


def test_mark_selected_moves_single_in_progress_marker():
    tree = parse_ptt(BASE_TREE)
    mark_selected(tree, "1.1")
    assert tree.find("1.1").status is Status.IN_PROGRESS
    # the previous in-progress root had no findings, so it returns to TODO
    assert tree.find("1").status is Status.TODO
    tree.validate()
    mark_selected(tree, "1.2.2")
    assert tree.find("1.2.2").status is Status.IN_PROGRESS
    assert tree.find("1.1").status is Status.TODO
    assert sum(1 for n in tree.nodes() if n.status is Status.IN_PROGRESS) == 1


def test_single_in_progress_after_update_select_sequences():
    gateway, _ = make_gateway(
        [
            (AgentRole.STRATEGY_ANALYZER, "Summary of the latest results", f"```\n{UPDATED_TREE}```"),
            (AgentRole.STRATEGY_ANALYZER, "Select the next best step",
             "SELECTED: 1.3.1 | STEP: exploit vsftpd"),
        ]
    )
    analyzer = StrategyAnalyzer(gateway)
    tree = analyzer.update_ptt(_tree(), Summary(text="scan data", source_len=9, chunk_count=1))
    analyzer.select_next_step(tree)
    assert sum(1 for n in tree.nodes() if n.status is Status.IN_PROGRESS) == 1
    tree.validate()
