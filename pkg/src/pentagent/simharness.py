"""Deterministic desk-scale environment: fake tools, scripted LLMs, checklists.

A scenario pack is a directory holding a manifest, canned tool transcripts,
a scripted LLM transcript, and a machine-checkable subtask checklist.
``install`` materializes the fake tools as executable stubs and returns a
tool registry pointing at them; unmatched invocations always emit an
UNMATCHED sentinel rather than silently succeeding.
"""

from __future__ import annotations

import json
import re
import stat
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .aci import ToolSpec, save_registry
from .errors import PackError
from .reporting import read_log_records

PACK_FORMAT_VERSION = 1

_STATIC_STUB = """#!/usr/bin/env python3
import json, re, sys, time

with open({rules_path!r}, encoding="utf-8") as fh:
    cfg = json.load(fh)
line = " ".join(sys.argv[1:])
for rule in cfg["rules"]:
    if re.search(rule["match"], line):
        time.sleep(rule.get("delay", 0))
        sys.stdout.write(rule["transcript"])
        sys.stdout.flush()
        sys.exit(int(rule.get("exit_code", 0)))
sys.stdout.write("UNMATCHED: " + line + "\\n")
sys.exit(1)
"""

_INTERACTIVE_STUB = """#!/usr/bin/env python3
import json, os, re, sys, time

with open({rules_path!r}, encoding="utf-8") as fh:
    cfg = json.load(fh)
out = sys.stdout
out.write(cfg.get("banner", ""))
prompt = cfg.get("prompt", "")
if prompt:
    out.write(prompt)
out.flush()
while True:
    try:
        line = sys.stdin.readline()
    except OSError:
        break
    if not line:
        break
    line = line.strip()
    if line in ("exit", "quit"):
        break
    matched = False
    for rule in cfg["responses"]:
        if re.search(rule["match"], line):
            time.sleep(rule.get("delay", 0))
            out.write(rule["reply"])
            matched = True
            break
    if not matched:
        out.write("UNMATCHED: " + line + "\\n")
    if prompt:
        out.write(prompt)
    try:
        out.flush()
    except OSError:
        break
os._exit(0)  # skip the atexit flush: the pty may already be closed
"""


@dataclass
class FakeToolConfig:
    name: str
    mode: str
    rules: list[dict] = field(default_factory=list)  # static: match/transcript/exit_code/delay
    responses: list[dict] = field(default_factory=list)  # interactive: match/reply/delay
    banner: str = ""
    prompt: str = ""
    default_timeout: float = 30.0
    quiet_period: float = 0.5
    max_output: int = 200_000


@dataclass
class ChecklistItem:
    name: str
    pattern: str


@dataclass
class ScenarioPack:
    name: str
    path: Path
    target: str
    hostname: str
    llm_transcript_path: Path
    kb_dir: Optional[Path]
    fake_tools: dict[str, FakeToolConfig]
    checklist: list[ChecklistItem]
    expected_metrics: Optional[dict]
    defaults: dict


def bundled_pack_dir() -> Path:
    return Path(__file__).parent / "packs"


def resolve_pack_path(spec: str | Path) -> Path:
    """Accept a pack directory path or the name of a bundled pack."""
    path = Path(spec)
    if path.is_dir():
        return path
    bundled = bundled_pack_dir() / str(spec)
    if bundled.is_dir():
        return bundled
    raise PackError(f"scenario pack {spec!r} not found (no such directory or bundled pack)")


def _load_rule_text(pack_dir: Path, raw: dict, key: str) -> str:
    if key in raw:
        return str(raw[key])
    file_key = f"{key}_file"
    if file_key in raw:
        file_path = pack_dir / raw[file_key]
        if not file_path.is_file():
            raise PackError(f"{file_path} referenced by the manifest does not exist")
        return file_path.read_text(encoding="utf-8")
    raise PackError(f"rule needs either {key!r} or {file_key!r}: {raw}")


def load_pack(spec: str | Path) -> ScenarioPack:
    pack_dir = resolve_pack_path(spec)
    manifest_path = pack_dir / "pack.yaml"
    if not manifest_path.is_file():
        raise PackError(f"{pack_dir} has no pack.yaml manifest")
    with open(manifest_path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or doc.get("version") != PACK_FORMAT_VERSION:
        raise PackError(f"{manifest_path}: expected a version-{PACK_FORMAT_VERSION} pack manifest")
    try:
        name = doc["name"]
        target = doc["target"]
        transcript_rel = doc["llm_transcript"]
    except KeyError as exc:
        raise PackError(f"{manifest_path}: missing required key {exc}") from exc
    transcript_path = pack_dir / transcript_rel
    if not transcript_path.is_file():
        raise PackError(f"{transcript_path} does not exist")
    tools: dict[str, FakeToolConfig] = {}
    for tool_name, raw in (doc.get("tools") or {}).items():
        mode = raw.get("mode", "static")
        cfg = FakeToolConfig(
            name=tool_name,
            mode=mode,
            banner=raw.get("banner", ""),
            prompt=raw.get("prompt", ""),
            default_timeout=float(raw.get("default_timeout", 30.0)),
            quiet_period=float(raw.get("quiet_period", 0.5)),
            max_output=int(raw.get("max_output", 200_000)),
        )
        if mode == "static":
            for rule in raw.get("rules", []):
                cfg.rules.append(
                    {
                        "match": rule["match"],
                        "transcript": _load_rule_text(pack_dir, rule, "transcript"),
                        "exit_code": int(rule.get("exit_code", 0)),
                        "delay": float(rule.get("delay", 0)),
                    }
                )
        elif mode == "interactive":
            for rule in raw.get("responses", []):
                cfg.responses.append(
                    {
                        "match": rule["match"],
                        "reply": _load_rule_text(pack_dir, rule, "reply"),
                        "delay": float(rule.get("delay", 0)),
                    }
                )
        else:
            raise PackError(f"tool {tool_name}: unknown mode {mode!r}")
        tools[tool_name] = cfg
    checklist = [
        ChecklistItem(name=item["name"], pattern=item["pattern"])
        for item in doc.get("checklist", [])
    ]
    kb_dir = pack_dir / doc["kb_dir"] if doc.get("kb_dir") else None
    if kb_dir is not None and not kb_dir.is_dir():
        raise PackError(f"{kb_dir} does not exist")
    pack = ScenarioPack(
        name=name,
        path=pack_dir,
        target=target,
        hostname=doc.get("hostname", name),
        llm_transcript_path=transcript_path,
        kb_dir=kb_dir,
        fake_tools=tools,
        checklist=checklist,
        expected_metrics=doc.get("expected_metrics"),
        defaults=doc.get("defaults") or {},
    )
    _validate_transcript_tools(pack)
    return pack


def _validate_transcript_tools(pack: ScenarioPack) -> None:
    """Every tool named by the transcript's command fixtures must be faked."""
    text = pack.llm_transcript_path.read_text(encoding="utf-8")
    referenced = set(re.findall(r"TOOL:\s*([A-Za-z0-9_-]+)", text))
    referenced |= set(re.findall(r'"tool"\s*:\s*"([A-Za-z0-9_-]+)"', text))
    missing = referenced - set(pack.fake_tools) - {"noop"}
    if missing:
        raise PackError(
            f"pack {pack.name}: transcript references unfaked tools: {sorted(missing)}"
        )


def install(pack: ScenarioPack, dest_dir: str | Path) -> Path:
    """Write executable stubs plus a registry file; returns the registry path."""
    dest = Path(dest_dir)
    bin_dir = dest / "bin"
    rules_dir = dest / "rules"
    bin_dir.mkdir(parents=True, exist_ok=True)
    rules_dir.mkdir(parents=True, exist_ok=True)
    specs = []
    for name, cfg in pack.fake_tools.items():
        rules_path = rules_dir / f"{name}.json"
        if cfg.mode == "static":
            rules_path.write_text(json.dumps({"rules": cfg.rules}, indent=1), encoding="utf-8")
            stub = _STATIC_STUB.format(rules_path=str(rules_path))
        else:
            rules_path.write_text(
                json.dumps(
                    {"banner": cfg.banner, "prompt": cfg.prompt, "responses": cfg.responses},
                    indent=1,
                ),
                encoding="utf-8",
            )
            stub = _INTERACTIVE_STUB.format(rules_path=str(rules_path))
        stub_path = bin_dir / name
        stub_path.write_text(stub, encoding="utf-8")
        stub_path.chmod(stub_path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
        specs.append(
            ToolSpec(
                name=name,
                mode=cfg.mode,
                binary_path=stub_path,
                default_timeout=cfg.default_timeout,
                quiet_period=cfg.quiet_period,
                max_output=cfg.max_output,
            )
        )
    registry_path = dest / "registry.yaml"
    save_registry(specs, registry_path)
    return registry_path


def _searchable_log_text(log_path: str | Path) -> str:
    """Flatten the structured log into plain text for checklist regexes."""
    parts: list[str] = []
    for record in read_log_records(log_path):
        kind = record.get("kind")
        if kind == "iteration":
            parts.append(record.get("summary") or "")
            decision = record.get("decision") or {}
            parts.append(decision.get("step_statement") or "")
            parts.append(record.get("ptt_text") or "")
            for item in (record.get("plan") or {}).get("items", []):
                parts.append(item.get("command_text") or "")
            for result in record.get("results", []):
                parts.append(result.get("transcript") or "")
        elif kind == "ptt_final":
            parts.append(record.get("text") or "")
    return "\n".join(parts)


def assert_checklist(pack: ScenarioPack, log_path: str | Path) -> list[tuple[str, bool]]:
    """Evaluate each subtask predicate against the finished run's log."""
    if not Path(log_path).exists():
        return [(item.name, False) for item in pack.checklist]
    text = _searchable_log_text(log_path)
    results = []
    for item in pack.checklist:
        results.append((item.name, re.search(item.pattern, text, re.MULTILINE) is not None))
    return results


def completion_percent(results: list[tuple[str, bool]]) -> float:
    if not results:
        return 0.0
    return 100.0 * sum(1 for _, ok in results if ok) / len(results)
