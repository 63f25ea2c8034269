"""Scenario packs: stub installation, checklist evaluation, determinism."""

from __future__ import annotations

import pytest
import yaml

from pentagent.aci import ExtractedCommand, ScriptStep, execute_interactive, execute_static, load_registry
from pentagent.config import RunConfig
from pentagent.errors import PackError
from pentagent.orchestrator import RunController
from pentagent.repetition import AutoContinueChannel
from pentagent.reporting import canonicalize_log
from pentagent.simharness import (
    assert_checklist,
    completion_percent,
    install,
    load_pack,
    resolve_pack_path,
)


def _run_pack(pack, tmp_path, tag="a", **config_overrides):
    harness = tmp_path / f"harness-{tag}"
    registry = install(pack, harness)
    config = RunConfig(
        targets=[pack.target],
        target_hostname=pack.hostname,
        interactive=False,
        registry_path=registry,
        kb_path=pack.kb_dir,
        report_out=tmp_path / f"report-{tag}.csv",
        log_out=tmp_path / f"run-{tag}.jsonl",
        max_iterations=int(pack.defaults.get("max_iterations", 25)),
    )
    config.backend.kind = "scripted"
    config.backend.transcript_path = pack.llm_transcript_path
    config.profile.workspace_dir = tmp_path / f"ws-{tag}"
    for key, value in config_overrides.items():
        setattr(config, key, value)
    controller = RunController(config, AutoContinueChannel())
    outcome = controller.run()
    return config, outcome


def test_bundled_packs_load():
    for name in ("lame", "loop_bait", "filtered_ports", "vm_sweep"):
        pack = load_pack(name)
        assert pack.name
        assert pack.target
        assert pack.llm_transcript_path.exists()


def test_resolve_pack_path_rejects_unknown():
    with pytest.raises(PackError):
        resolve_pack_path("no-such-pack")


def test_install_writes_executable_stubs_and_registry(tmp_path):
    pack = load_pack("lame")
    registry_path = install(pack, tmp_path / "harness")
    registry = load_registry(registry_path)
    assert set(registry.names()) == set(pack.fake_tools)
    for spec in registry.specs():
        assert spec.binary_path.exists()
        assert spec.binary_path.stat().st_mode & 0o111


def test_lame_nmap_stub_replays_canned_scan(tmp_path):
    pack = load_pack("lame")
    registry = load_registry(install(pack, tmp_path / "h"))
    spec = registry.get("nmap")
    result = execute_static(
        ExtractedCommand(tool="nmap", kind="argv", argv=["nmap", "-sV", "-p-", "10.10.10.3"]), spec
    )
    assert "21/tcp   open  ftp         vsftpd 2.3.4" in result.transcript
    assert result.exit_code == 0


def test_unmatched_invocation_emits_sentinel(tmp_path):
    pack = load_pack("lame")
    registry = load_registry(install(pack, tmp_path / "h"))
    result = execute_static(
        ExtractedCommand(tool="nmap", kind="argv", argv=["nmap", "--badflag"]),
        registry.get("nmap"),
    )
    assert result.transcript.startswith("UNMATCHED:")
    assert result.exit_code == 1


def test_interactive_metasploit_stub_two_step_script(tmp_path):
    pack = load_pack("lame")
    registry = load_registry(install(pack, tmp_path / "h"))
    cmd = ExtractedCommand(
        tool="metasploit",
        kind="script",
        script=[
            ScriptStep(send="use exploit/unix/ftp/vsftpd_234_backdoor",
                       await_pattern="defaulting to cmd/unix/interact"),
            ScriptStep(send="run", await_pattern="Command shell session 1 opened"),
        ],
    )
    result = execute_interactive(cmd, registry.get("metasploit"))
    assert "defaulting to cmd/unix/interact" in result.transcript
    assert "Command shell session 1 opened" in result.transcript


def test_lame_run_completes_checklist(tmp_path):
    pack = load_pack("lame")
    config, outcome = _run_pack(pack, tmp_path)
    results = assert_checklist(pack, config.log_out)
    assert all(ok for _, ok in results), results
    assert completion_percent(results) == 100.0
    assert outcome.metrics.steps == pack.expected_metrics["steps"]
    assert outcome.metrics.loops == pack.expected_metrics["loops"]
    assert outcome.metrics.incomplete_commands == pack.expected_metrics["incomplete"]
    assert outcome.report_rows >= 1


def test_lame_partial_run_partial_checklist(tmp_path):
    pack = load_pack("lame")
    config, outcome = _run_pack(pack, tmp_path, tag="partial", max_iterations=1)
    results = assert_checklist(pack, config.log_out)
    assert [ok for _, ok in results] == [True, False, False, False]
    assert completion_percent(results) == 25.0


def test_checklist_empty_log_scores_zero(tmp_path):
    pack = load_pack("lame")
    results = assert_checklist(pack, tmp_path / "missing.jsonl")
    assert all(not ok for _, ok in results)
    assert completion_percent(results) == 0.0


@pytest.mark.parametrize("name", ["lame", "vm_sweep"])
def test_pack_runs_deterministic_modulo_timestamps(tmp_path, name):
    pack = load_pack(name)
    config_a, _ = _run_pack(pack, tmp_path, tag="a")
    config_b, _ = _run_pack(pack, tmp_path, tag="b")
    assert canonicalize_log(config_a.log_out) == canonicalize_log(config_b.log_out)


def test_pack_validation_catches_unfaked_tool(tmp_path):
    pack_dir = tmp_path / "broken"
    pack_dir.mkdir()
    (pack_dir / "llm.yaml").write_text(
        yaml.safe_dump(
            {"version": 1, "entries": [
                {"role": "generator", "reply": "TOOL: hydra\nCOMMAND: hydra x"}]}
        ),
        encoding="utf-8",
    )
    (pack_dir / "pack.yaml").write_text(
        yaml.safe_dump(
            {"version": 1, "name": "broken", "target": "10.0.0.1",
             "llm_transcript": "llm.yaml", "tools": {}}
        ),
        encoding="utf-8",
    )
    with pytest.raises(PackError, match="hydra"):
        load_pack(pack_dir)
