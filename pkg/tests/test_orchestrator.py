"""End-to-end orchestration against inline scripted fixtures and fake tools."""

from __future__ import annotations

import json
import stat
import textwrap
from pathlib import Path

import yaml

from pentagent.config import RunConfig, parse_ablation
from pentagent.orchestrator import PHASE_EDGES, RunController
from pentagent.repetition import AutoContinueChannel, OperatorDecision, ScriptedChannel
from pentagent.reporting import compute_metrics, read_log_records

TREE_AFTER_SCAN = """1 Pentest 10.9.9.9 [IN-PROGRESS]
  1.1 Reconnaissance [DONE]
    - 22/tcp open ssh OpenSSH 7.2
  1.2 Assess ssh service [TODO]
"""

TREE_ALL_DONE = """1 Pentest 10.9.9.9 [DONE]
  1.1 Reconnaissance [DONE]
    - 22/tcp open ssh OpenSSH 7.2
  1.2 Assess ssh service [DONE]
    - password authentication enabled
"""


def _fake_tool(tmp_path: Path, name: str, body: str) -> Path:
    path = tmp_path / name
    path.write_text("#!/usr/bin/env python3\n" + textwrap.dedent(body), encoding="utf-8")
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return path


def _write_registry(tmp_path: Path, tools: dict[str, Path]) -> Path:
    doc = {
        "version": 1,
        "tools": [
            {"name": name, "mode": "static", "binary_path": str(path),
             "default_timeout": 10, "max_output": 100000}
            for name, path in tools.items()
        ],
    }
    registry = tmp_path / "registry.yaml"
    registry.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return registry


def _write_transcript(tmp_path: Path, entries: list[dict]) -> Path:
    path = tmp_path / "llm.yaml"
    path.write_text(yaml.safe_dump({"version": 1, "entries": entries}), encoding="utf-8")
    return path


def _argv_json(*tokens: str) -> str:
    return json.dumps([{"tool": tokens[0], "kind": "argv", "argv": list(tokens)}])


def _base_entries() -> list[dict]:
    """Two full iterations, then all-done: ends via no_steps_remaining."""
    return [
        # iteration 1 (seed recon)
        {"role": "strategy_analyzer", "match": "Structure the selected step",
         "reply": "SERVICE: network\nTECHNIQUE: port scan\nTOOL: nmap"},
        {"role": "generator", "match": "Generate the commands",
         "reply": "TOOL: nmap\nCOMMAND: nmap -sV 10.9.9.9\nINSTRUCTIONS: scan the target"},
        {"role": "command_extractor", "match": "Extract the commands",
         "reply": _argv_json("nmap", "-sV", "10.9.9.9")},
        {"role": "results_verifier", "match": "Judge the tool output",
         "reply": "VERDICT: VALID\nscan output looks complete"},
        # iteration 2
        {"role": "summarizer", "match": "Summarize this tool output chunk",
         "reply": "Port 22 open running OpenSSH 7.2"},
        {"role": "strategy_analyzer", "match": "Summary of the latest results",
         "reply": f"```\n{TREE_AFTER_SCAN}```"},
        {"role": "strategy_analyzer", "match": "Select the next best step",
         "reply": "SELECTED: 1.2 | STEP: probe ssh authentication methods with nmap"},
        {"role": "strategy_analyzer", "match": "Structure the selected step",
         "reply": "SERVICE: ssh\nTECHNIQUE: auth probe\nTOOL: nmap"},
        {"role": "generator", "match": "Generate the commands",
         "reply": "TOOL: nmap\nCOMMAND: nmap -p22 --script ssh-auth-methods 10.9.9.9\nINSTRUCTIONS: probe"},
        {"role": "command_extractor", "match": "Extract the commands",
         "reply": _argv_json("nmap", "-p22", "--script", "ssh-auth-methods", "10.9.9.9")},
        {"role": "results_verifier", "match": "Judge the tool output",
         "reply": "VERDICT: VALID\nauth methods enumerated"},
        # iteration 3: update marks everything done; select never queried
        {"role": "summarizer", "match": "Summarize this tool output chunk",
         "reply": "ssh allows password authentication"},
        {"role": "strategy_analyzer", "match": "Summary of the latest results",
         "reply": f"```\n{TREE_ALL_DONE}```"},
        # reporting
        {"role": "report_generator", "match": "vulnerability rows",
         "reply": json.dumps([{
             "cve_number": "", "cvss_score": "", "risk_level": "Info", "protocol": "tcp",
             "port": "22", "vulnerability_name": "SSH password authentication enabled",
             "synopsis": "Password auth allowed", "description": "ssh allows password login",
             "solution": "Prefer key-based auth", "hostname": "", "ip_address": "10.9.9.9",
             "os": "Linux", "reference_url": "", "vpr": ""}])},
    ]


def _config(tmp_path: Path, entries: list[dict], **overrides) -> RunConfig:
    nmap = _fake_tool(
        tmp_path, "nmap", "import sys\nsys.stdout.write('22/tcp open ssh OpenSSH 7.2\\n')\n"
    )
    registry = _write_registry(tmp_path, {"nmap": nmap})
    transcript = _write_transcript(tmp_path, entries)
    config = RunConfig(
        targets=["10.9.9.9"],
        max_iterations=overrides.pop("max_iterations", 6),
        interactive=False,
        registry_path=registry,
        report_out=tmp_path / "report.csv",
        log_out=tmp_path / "run.jsonl",
    )
    config.backend.kind = "scripted"
    config.backend.transcript_path = transcript
    config.profile.workspace_dir = tmp_path / "ws"
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def test_full_run_completes_via_no_steps_remaining(tmp_path):
    config = _config(tmp_path, _base_entries())
    controller = RunController(config, AutoContinueChannel())
    outcome = controller.run()
    assert outcome.stop_reason == "no_steps_remaining"
    assert outcome.metrics.steps == 2
    assert outcome.metrics.loops == 0
    assert outcome.metrics.incomplete_commands == 0
    assert outcome.report_rows == 1
    assert outcome.report_path.exists()
    assert (tmp_path / "run.ptt.txt").read_text(encoding="utf-8") == TREE_ALL_DONE
    records = read_log_records(config.log_out)
    iteration_records = [r for r in records if r["kind"] == "iteration"]
    assert [r["index"] for r in iteration_records] == [1, 2]
    assert "22/tcp open ssh" in iteration_records[0]["results"][0]["transcript"]


def test_phase_sequence_follows_the_automaton(tmp_path):
    config = _config(tmp_path, _base_entries())
    RunController(config, AutoContinueChannel()).run()
    phases = [r["phase"] for r in read_log_records(config.log_out) if r["kind"] == "phase"]
    previous = None
    for phase in phases:
        assert phase in PHASE_EDGES[previous], f"illegal transition {previous} -> {phase}"
        previous = phase
    assert previous == "done"


def test_event_stream_shape(tmp_path):
    config = _config(tmp_path, _base_entries())
    controller = RunController(config, AutoContinueChannel())
    controller.run()
    events = controller.events.replay(0)
    kinds = [e.kind for e in events]
    assert kinds[-1] == "run_done"
    assert "report_ready" in kinds
    assert kinds.index("report_ready") < kinds.index("run_done")
    assert [e.seq for e in events] == list(range(1, len(events) + 1))
    assert any(k == "tool_started" for k in kinds)
    assert any(k == "tool_output_chunk" for k in kinds)


def test_max_iterations_cap_single_iteration(tmp_path):
    entries = _base_entries()[:4]  # only the seed iteration fixtures
    entries.append({"role": "report_generator", "match": "vulnerability rows", "reply": "[]"})
    config = _config(tmp_path, entries, max_iterations=1)
    outcome = RunController(config, AutoContinueChannel()).run()
    assert outcome.stop_reason == "max_iterations"
    assert outcome.metrics.steps == 1


def test_when_verifier_ablated_no_retry_occurs(tmp_path):
    # the tool output is garbage, but with V off the identity verifier accepts it
    entries = [e for e in _base_entries() if e["role"] != "results_verifier"]
    config = _config(tmp_path, entries)
    config.ablation = parse_ablation("R,L")  # B*,R,L without V
    outcome = RunController(config, AutoContinueChannel()).run()
    records = read_log_records(config.log_out)
    for record in records:
        if record["kind"] == "iteration":
            assert all(v["outcome"] == "valid" for v in record["verdicts"])
            assert all(v["retries_used"] == 0 for v in record["verdicts"])
    assert outcome.metrics.steps == 2


def test_when_repetition_ablated_no_describe_calls(tmp_path):
    entries = [e for e in _base_entries() if "Structure the selected step" != e.get("match")]
    config = _config(tmp_path, entries)
    config.ablation = parse_ablation("R,V")  # B*,R,V without L
    outcome = RunController(config, AutoContinueChannel()).run()
    assert outcome.metrics.steps == 2
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    assert all(r["descriptor"] is None for r in records)
    assert all(not r["repetition"]["is_repetition"] for r in records)


def _loop_entries() -> list[dict]:
    """Iteration 2 selects the same step as iteration 1; continue re-plans."""
    return [
        # iteration 1 (seed)
        {"role": "strategy_analyzer", "match": "Structure the selected step",
         "reply": "SERVICE: network\nTECHNIQUE: port scan\nTOOL: nmap"},
        {"role": "generator", "match": "Generate the commands",
         "reply": "TOOL: nmap\nCOMMAND: nmap -sV 10.9.9.9\nINSTRUCTIONS: scan"},
        {"role": "command_extractor", "match": "Extract the commands",
         "reply": _argv_json("nmap", "-sV", "10.9.9.9")},
        {"role": "results_verifier", "match": "Judge the tool output",
         "reply": "VERDICT: VALID\nok"},
        # iteration 2: the strategy repeats the recon step verbatim
        {"role": "summarizer", "match": "Summarize this tool output chunk",
         "reply": "Port 22 open running OpenSSH 7.2"},
        {"role": "strategy_analyzer", "match": "Summary of the latest results",
         "reply": f"```\n{TREE_AFTER_SCAN}```"},
        {"role": "strategy_analyzer", "match": "Select the next best step",
         "reply": "SELECTED: 1.2 | STEP: run a port scan of the target with nmap"},
        {"role": "strategy_analyzer", "match": "Structure the selected step",
         "reply": "SERVICE: network\nTECHNIQUE: port scan\nTOOL: nmap"},
    ]


def test_repetition_flag_exit_decision_ends_run(tmp_path):
    entries = _loop_entries()
    entries.append({"role": "report_generator", "match": "vulnerability rows", "reply": "[]"})
    config = _config(tmp_path, entries, interactive=True, operator_timeout=5.0)
    channel = ScriptedChannel([OperatorDecision(kind="exit")])
    outcome = RunController(config, channel).run()
    assert outcome.stop_reason == "operator_exit"
    assert outcome.report_path.exists()  # partial report still written
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    assert records[-1]["repetition"]["is_repetition"] is True
    assert records[-1]["operator"]["kind"] == "exit"
    metrics = compute_metrics(config.log_out)
    assert metrics.loops == 1
    assert metrics.human_interactions == 1


def test_repetition_continue_replans_with_hint(tmp_path):
    entries = _loop_entries()
    entries += [
        # the re-plan select carries the try-a-different-path hint
        {"role": "strategy_analyzer", "match": "try a different path",
         "reply": "SELECTED: 1.2 | STEP: probe ssh authentication methods instead"},
        {"role": "strategy_analyzer", "match": "Structure the selected step",
         "reply": "SERVICE: ssh\nTECHNIQUE: auth probe\nTOOL: nmap"},
        {"role": "generator", "match": "Generate the commands",
         "reply": "TOOL: nmap\nCOMMAND: nmap -p22 --script ssh-auth-methods 10.9.9.9\nINSTRUCTIONS: probe"},
        {"role": "command_extractor", "match": "Extract the commands",
         "reply": _argv_json("nmap", "-p22", "10.9.9.9")},
        {"role": "results_verifier", "match": "Judge the tool output",
         "reply": "VERDICT: VALID\nok"},
        {"role": "summarizer", "match": "Summarize this tool output chunk",
         "reply": "ssh allows password auth"},
        {"role": "strategy_analyzer", "match": "Summary of the latest results",
         "reply": f"```\n{TREE_ALL_DONE}```"},
        {"role": "report_generator", "match": "vulnerability rows", "reply": "[]"},
    ]
    config = _config(tmp_path, entries)
    outcome = RunController(config, AutoContinueChannel()).run()
    assert outcome.stop_reason == "no_steps_remaining"
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    # the repeated step re-planned inside iteration 2: same index, final statement differs
    assert len(records) == 2
    assert records[1]["repetition"]["is_repetition"] is True
    assert "ssh authentication" in records[1]["decision"]["step_statement"]
    assert compute_metrics(config.log_out).loops == 1


def test_interactive_feedback_routes_to_summarizer(tmp_path):
    entries = _loop_entries()
    entries += [
        # iteration 3 summarizes the operator's observations
        {"role": "summarizer", "match": "I logged in via the web console",
         "reply": "Operator gained web console access"},
        {"role": "strategy_analyzer", "match": "Summary of the latest results",
         "reply": f"```\n{TREE_ALL_DONE}```"},
        {"role": "report_generator", "match": "vulnerability rows", "reply": "[]"},
    ]
    config = _config(tmp_path, entries, interactive=True, operator_timeout=5.0)
    channel = ScriptedChannel(
        [OperatorDecision(kind="interactive", payload="I logged in via the web console manually")]
    )
    outcome = RunController(config, channel).run()
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    assert records[1]["operator"]["kind"] == "interactive"
    assert records[1]["plan"] is None  # the operator ran the step by hand
    assert outcome.metrics.steps == 2
    assert outcome.metrics.human_interactions == 1


def test_general_instruction_prepended_to_summarizer_input(tmp_path):
    entries = _loop_entries()
    entries += [
        {"role": "summarizer", "match": "focus on port 8443",
         "reply": "Instruction noted: focus on 8443"},
        {"role": "strategy_analyzer", "match": "Summary of the latest results",
         "reply": f"```\n{TREE_ALL_DONE}```"},
        {"role": "report_generator", "match": "vulnerability rows", "reply": "[]"},
    ]
    config = _config(tmp_path, entries, interactive=True, operator_timeout=5.0)
    channel = ScriptedChannel([OperatorDecision(kind="general", payload="focus on port 8443")])
    outcome = RunController(config, channel).run()
    assert outcome.stop_reason == "no_steps_remaining"
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    assert records[-1]["operator"]["kind"] == "general"


def test_scope_violation_blocks_execution_and_is_logged(tmp_path):
    entries = [
        {"role": "strategy_analyzer", "match": "Structure the selected step",
         "reply": "SERVICE: network\nTECHNIQUE: port scan\nTOOL: nmap"},
        {"role": "generator", "match": "Generate the commands",
         "reply": "TOOL: nmap\nCOMMAND: nmap -sV 98.76.54.32\nINSTRUCTIONS: scan"},
        {"role": "command_extractor", "match": "Extract the commands",
         "reply": _argv_json("nmap", "-sV", "98.76.54.32")},
        {"role": "results_verifier", "match": "Judge the tool output",
         "reply": "VERDICT: VALID\nnothing ran"},
        {"role": "report_generator", "match": "vulnerability rows", "reply": "[]"},
    ]
    config = _config(tmp_path, entries, max_iterations=1)
    RunController(config, AutoContinueChannel()).run()
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    assert records[0]["results"] == []  # nothing was executed
    assert records[0]["violations"] == [{"tool": "nmap", "token": "98.76.54.32"}]


def test_dry_run_records_instead_of_executing(tmp_path):
    config = _config(tmp_path, _base_entries())
    config.dry_run = True
    outcome = RunController(config, AutoContinueChannel()).run()
    records = [r for r in read_log_records(config.log_out) if r["kind"] == "iteration"]
    assert all(
        result["transcript"].startswith("[dry-run]")
        for record in records
        for result in record["results"]
    )
    assert outcome.stop_reason in ("no_steps_remaining", "max_iterations")
