"""Agent-computer interface: structured command extraction and tool execution.

Static tools run as plain subprocesses with a timeout watchdog and an
output cap. Interactive consoles run under a pseudo-terminal: each script
step sends one line, then waits for an expected output pattern or for the
output to go quiet. Every address literal in a command must pass the scope
guard before anything is spawned.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import os
import re
import select
import signal
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import yaml

from .config import AttackHostProfile
from .errors import BinaryMissing, ConfigError
from .llm import AgentRole, LLMGateway
from .prompts import EXTRACTOR_SYSTEM, build_extract_prompt

logger = logging.getLogger(__name__)

STEP_HARD_CAP = 120.0  # seconds an interactive step may wait for its pattern
SETTLE_GRACE = 0.15  # silence needed after a banner/pattern before moving on
REGISTRY_FORMAT_VERSION = 1

OutputCallback = Callable[[str], None]


@dataclass
class ToolSpec:
    name: str
    mode: str  # static | interactive
    binary_path: Path
    default_timeout: float = 120.0
    quiet_period: float = 5.0
    max_output: int = 200_000

    def validate(self) -> None:
        if self.mode not in ("static", "interactive"):
            raise ConfigError(f"tool {self.name}: mode must be static or interactive")
        if self.default_timeout <= 0 or self.quiet_period <= 0:
            raise ConfigError(f"tool {self.name}: timeouts must be positive")
        if self.max_output <= 0:
            raise ConfigError(f"tool {self.name}: max_output must be positive")


class ToolRegistry:
    def __init__(self, specs: list[ToolSpec]):
        self._specs: dict[str, ToolSpec] = {}
        for spec in specs:
            spec.validate()
            if spec.name in self._specs:
                raise ConfigError(f"duplicate tool name {spec.name}")
            self._specs[spec.name] = spec

    def get(self, name: str) -> Optional[ToolSpec]:
        return self._specs.get(name)

    def names(self) -> list[str]:
        return list(self._specs)

    def specs(self) -> list[ToolSpec]:
        return list(self._specs.values())

    def __len__(self) -> int:
        return len(self._specs)


def load_registry(path: str | Path) -> ToolRegistry:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or doc.get("version") != REGISTRY_FORMAT_VERSION:
        raise ConfigError(f"{path}: expected a version-{REGISTRY_FORMAT_VERSION} tool registry")
    specs = []
    for raw in doc.get("tools", []):
        specs.append(
            ToolSpec(
                name=raw["name"],
                mode=raw["mode"],
                binary_path=Path(raw["binary_path"]),
                default_timeout=float(raw.get("default_timeout", 120.0)),
                quiet_period=float(raw.get("quiet_period", 5.0)),
                max_output=int(raw.get("max_output", 200_000)),
            )
        )
    if not specs:
        raise ConfigError(f"{path}: registry lists no tools")
    return ToolRegistry(specs)


def save_registry(specs: list[ToolSpec], path: str | Path) -> None:
    doc = {
        "version": REGISTRY_FORMAT_VERSION,
        "tools": [
            {
                "name": s.name,
                "mode": s.mode,
                "binary_path": str(s.binary_path),
                "default_timeout": s.default_timeout,
                "quiet_period": s.quiet_period,
                "max_output": s.max_output,
            }
            for s in specs
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


@dataclass
class ScriptStep:
    send: str
    await_pattern: Optional[str] = None


@dataclass
class ExtractedCommand:
    tool: str
    kind: str  # argv | script
    argv: list[str] = field(default_factory=list)
    script: list[ScriptStep] = field(default_factory=list)
    timeout_override: Optional[float] = None

    def text(self) -> str:
        if self.kind == "argv":
            return " ".join(self.argv)
        return "\n".join(step.send for step in self.script)


@dataclass
class ToolResult:
    tool: str
    transcript: str
    exit_code: int | str  # int, "timeout", or "killed"
    duration: float
    truncated: bool = False


# -- extraction --------------------------------------------------------------


def _parse_extraction_reply(reply: str, registry: ToolRegistry) -> tuple[list[ExtractedCommand], list[str]]:
    """Returns (valid commands, problems). Problems trigger one repair pass."""
    text = reply.strip()
    fence = re.search(r"```(?:json)?\n(.*?)```", text, re.DOTALL)
    if fence:
        text = fence.group(1)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return [], [f"reply is not valid JSON: {exc}"]
    if not isinstance(data, list):
        return [], ["reply must be a JSON array"]
    commands: list[ExtractedCommand] = []
    problems: list[str] = []
    for i, raw in enumerate(data):
        if not isinstance(raw, dict):
            problems.append(f"item {i} is not an object")
            continue
        tool = str(raw.get("tool", ""))
        spec = registry.get(tool)
        if spec is None:
            problems.append(f"item {i} names unregistered tool {tool!r}")
            continue
        kind = str(raw.get("kind", ""))
        if kind not in ("argv", "script"):
            problems.append(f"item {i} has bad kind {kind!r}")
            continue
        if (kind == "argv") != (spec.mode == "static"):
            problems.append(f"item {i}: kind {kind!r} does not match tool mode {spec.mode!r}")
            continue
        timeout = raw.get("timeout")
        if kind == "argv":
            argv = [str(tok) for tok in raw.get("argv", [])]
            if not argv:
                problems.append(f"item {i} has an empty argv")
                continue
            commands.append(ExtractedCommand(tool=tool, kind="argv", argv=argv, timeout_override=timeout))
        else:
            steps = []
            for step in raw.get("script", []):
                if isinstance(step, dict) and step.get("send"):
                    steps.append(ScriptStep(send=str(step["send"]), await_pattern=step.get("await")))
            if not steps:
                problems.append(f"item {i} has an empty script")
                continue
            commands.append(ExtractedCommand(tool=tool, kind="script", script=steps, timeout_override=timeout))
    return commands, problems


class CommandExtractor:
    def __init__(self, gateway: LLMGateway, registry: ToolRegistry):
        if len(registry) == 0:
            raise ConfigError("cannot extract commands with an empty tool registry")
        self._gateway = gateway
        self._registry = registry
        self._session = gateway.open_session(AgentRole.COMMAND_EXTRACTOR, EXTRACTOR_SYSTEM)

    def extract(self, raw_commands: str) -> list[ExtractedCommand]:
        registry_lines = [f"{s.name}: {s.mode}" for s in self._registry.specs()]
        prompt = build_extract_prompt(raw_commands, registry_lines)
        reply = self._gateway.chat(self._session, prompt)
        commands, problems = _parse_extraction_reply(reply, self._registry)
        if problems:
            repair = self._gateway.chat(
                self._session,
                "Your previous reply had problems: "
                + "; ".join(problems)
                + ". Reply again with a corrected JSON array using only registered tools.",
            )
            repaired, problems = _parse_extraction_reply(repair, self._registry)
            if repaired:
                commands = repaired
            for problem in problems:
                logger.warning("dropping extracted command: %s", problem)
        return commands


# -- scope guard -------------------------------------------------------------

_IPV4 = re.compile(r"(?<![\w.])((?:\d{1,3}\.){3}\d{1,3})(?![\w.])")
_HOSTNAME = re.compile(r"(?<![\w@.-])((?:[A-Za-z0-9][A-Za-z0-9-]*\.)+[A-Za-z]{2,})(?![\w.-])")

# dotted tokens ending in these are files, not hosts
_FILE_EXTS = {
    "txt", "lst", "dic", "rules", "rule", "conf", "cfg", "log", "csv", "json",
    "yaml", "yml", "xml", "html", "htm", "php", "asp", "aspx", "jsp", "py",
    "sh", "pl", "rb", "ps1", "exe", "dll", "bin", "db", "sql", "gz", "tgz",
    "zip", "tar", "rar", "md", "pdf", "bak", "old", "war", "jar", "so",
}


@dataclass
class ScopeCheck:
    ok: bool
    violation_token: str = ""


def _address_candidates(text: str) -> list[str]:
    candidates = []
    for m in _IPV4.finditer(text):
        try:
            ipaddress.ip_address(m.group(1))
        except ValueError:
            continue
        candidates.append(m.group(1))
    for m in _HOSTNAME.finditer(text):
        token = m.group(1)
        if token.rsplit(".", 1)[-1].lower() in _FILE_EXTS:
            continue
        candidates.append(token)
    return candidates


def scope_guard(
    command: ExtractedCommand, scoped_targets: list[str], profile: AttackHostProfile
) -> ScopeCheck:
    """Every address literal must be loopback, the attack host, or a scoped target."""
    allowed = {t.lower() for t in scoped_targets}
    allowed.add(profile.local_ip.lower())
    allowed.add("localhost")
    for token in _address_candidates(command.text()):
        lowered = token.lower()
        if lowered in allowed:
            continue
        try:
            if ipaddress.ip_address(token).is_loopback:
                continue
        except ValueError:
            pass
        return ScopeCheck(ok=False, violation_token=token)
    return ScopeCheck(ok=True)


# -- execution ---------------------------------------------------------------


def _kill_group(proc: subprocess.Popen, sig: int = signal.SIGKILL) -> None:
    try:
        os.killpg(proc.pid, sig)
    except (ProcessLookupError, PermissionError):
        pass


def _check_binary(spec: ToolSpec) -> None:
    if not Path(spec.binary_path).exists():
        raise BinaryMissing(f"tool {spec.name}: binary {spec.binary_path} not found")


class _TranscriptBuffer:
    """Accumulates decoded output up to the cap; excess is dropped."""

    def __init__(self, cap: int, on_output: Optional[OutputCallback] = None):
        self._cap = cap
        self._parts: list[str] = []
        self._length = 0
        self.truncated = False
        self._on_output = on_output

    def add(self, text: str) -> None:
        if self._on_output and text:
            self._on_output(text)
        if self.truncated:
            return
        room = self._cap - self._length
        if len(text) >= room:
            self._parts.append(text[:room])
            self._length = self._cap
            self.truncated = True
        else:
            self._parts.append(text)
            self._length += len(text)

    def add_marker(self, marker: str) -> None:
        self.add(marker)

    def value(self) -> str:
        return "".join(self._parts)


def execute_static(
    cmd: ExtractedCommand, spec: ToolSpec, on_output: Optional[OutputCallback] = None
) -> ToolResult:
    if cmd.kind != "argv":
        raise ValueError("execute_static requires an argv command")
    _check_binary(spec)
    args = cmd.argv[1:] if cmd.argv and cmd.argv[0] == spec.name else list(cmd.argv)
    timeout = cmd.timeout_override or spec.default_timeout
    buffer = _TranscriptBuffer(spec.max_output, on_output)
    started = time.monotonic()
    proc = subprocess.Popen(
        [str(spec.binary_path), *args],
        stdin=subprocess.DEVNULL,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        start_new_session=True,
    )
    exit_code: int | str
    deadline = started + timeout
    stdout = proc.stdout
    assert stdout is not None
    timed_out = False
    try:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                timed_out = True
                break
            ready, _, _ = select.select([stdout], [], [], min(remaining, 0.25))
            if not ready:
                continue
            chunk = stdout.read1(65536)
            if not chunk:
                break
            buffer.add(chunk.decode("utf-8", errors="replace"))
        if timed_out:
            _kill_group(proc)
            proc.wait()
            exit_code = "timeout"
        else:
            try:
                exit_code = proc.wait(timeout=max(deadline - time.monotonic(), 0.1))
            except subprocess.TimeoutExpired:
                _kill_group(proc)
                proc.wait()
                exit_code = "timeout"
    finally:
        _kill_group(proc)
        stdout.close()
    return ToolResult(
        tool=cmd.tool,
        transcript=buffer.value(),
        exit_code=exit_code,
        duration=time.monotonic() - started,
        truncated=buffer.truncated,
    )


def _read_pty(fd: int, timeout: float) -> Optional[bytes]:
    """One bounded read from the pty master. b'' = no data, None = EOF."""
    try:
        ready, _, _ = select.select([fd], [], [], timeout)
    except OSError:
        return None
    if not ready:
        return b""
    try:
        data = os.read(fd, 65536)
    except OSError:  # EIO when the child side closed
        return None
    return data if data else None


def execute_interactive(
    cmd: ExtractedCommand, spec: ToolSpec, on_output: Optional[OutputCallback] = None
) -> ToolResult:
    if cmd.kind != "script":
        raise ValueError("execute_interactive requires a script command")
    if not cmd.script:
        raise ValueError("interactive script must not be empty")
    _check_binary(spec)
    import pty

    timeout = cmd.timeout_override or spec.default_timeout
    buffer = _TranscriptBuffer(spec.max_output, on_output)
    started = time.monotonic()
    deadline = started + timeout
    master, slave = pty.openpty()
    proc = subprocess.Popen(
        [str(spec.binary_path)],
        stdin=slave,
        stdout=slave,
        stderr=slave,
        start_new_session=True,
        close_fds=True,
    )
    os.close(slave)
    session_open = True
    timed_out = False

    def drain(window: float) -> bool:
        """Read whatever arrives within the window; False when session ended."""
        nonlocal session_open
        data = _read_pty(master, window)
        if data is None:
            session_open = False
            return False
        if data:
            buffer.add(data.decode("utf-8", errors="replace").replace("\r\n", "\n"))
        return bool(data)

    def settle(grace: float, limit: float) -> None:
        """Drain until the output has been silent for `grace` seconds."""
        quiet_at = time.monotonic() + grace
        while session_open and time.monotonic() < min(limit, deadline):
            if drain(0.02):
                quiet_at = time.monotonic() + grace
            elif time.monotonic() >= quiet_at:
                return

    try:
        # capture the banner (if any) before the first send, so transcripts
        # interleave deterministically on prompt-style tools
        banner_limit = time.monotonic() + min(spec.quiet_period, 2.0)
        while session_open and time.monotonic() < min(banner_limit, deadline):
            if drain(0.05):
                settle(SETTLE_GRACE, banner_limit + 1.0)
                break
        for step in cmd.script:
            if time.monotonic() >= deadline:
                timed_out = True
                break
            if not session_open:
                buffer.add_marker(f"\n[session closed before step {step.send!r}]\n")
                break
            try:
                os.write(master, step.send.encode("utf-8") + b"\n")
            except OSError:
                session_open = False
                buffer.add_marker(f"\n[session closed before step {step.send!r}]\n")
                break
            step_start_len = len(buffer.value())
            step_deadline = min(time.monotonic() + STEP_HARD_CAP, deadline)
            if step.await_pattern:
                found = False
                while time.monotonic() < step_deadline and session_open:
                    drain(0.05)
                    if step.await_pattern in buffer.value()[step_start_len:]:
                        found = True
                        break
                if found:
                    settle(SETTLE_GRACE, step_deadline)
                elif session_open:
                    if time.monotonic() >= deadline:
                        timed_out = True
                        break
                    buffer.add_marker(f"\n[pattern_timeout: {step.await_pattern!r}]\n")
            else:
                quiet_until = time.monotonic() + spec.quiet_period
                while time.monotonic() < step_deadline and session_open:
                    if drain(0.05):
                        quiet_until = time.monotonic() + spec.quiet_period
                    elif time.monotonic() >= quiet_until:
                        break
                if time.monotonic() >= deadline:
                    timed_out = True
                    break
        # trailing output after the last step
        if session_open and not timed_out:
            settle_until = time.monotonic() + min(spec.quiet_period, max(deadline - time.monotonic(), 0))
            while time.monotonic() < settle_until and session_open:
                if drain(0.05):
                    settle_until = time.monotonic() + spec.quiet_period
    finally:
        exit_code = _close_interactive(proc, master, timed_out)
        _kill_group(proc)
    return ToolResult(
        tool=cmd.tool,
        transcript=buffer.value(),
        exit_code=exit_code,
        duration=time.monotonic() - started,
        truncated=buffer.truncated,
    )


def _close_interactive(proc: subprocess.Popen, master: int, timed_out: bool) -> int | str:
    """EOF first, then terminate/kill escalation. Returns the exit code."""
    try:
        os.close(master)
    except OSError:
        pass
    if timed_out:
        _kill_group(proc)
        proc.wait()
        return "timeout"
    try:
        return proc.wait(timeout=1.5)
    except subprocess.TimeoutExpired:
        pass
    _kill_group(proc, signal.SIGTERM)
    try:
        proc.wait(timeout=1.0)
    except subprocess.TimeoutExpired:
        _kill_group(proc, signal.SIGKILL)
        proc.wait()
    return "killed"


def make_dry_run_result(cmd: ExtractedCommand) -> ToolResult:
    """Stand-in result when execution is disabled (--dry-run)."""
    if cmd.kind == "argv":
        body = " ".join(cmd.argv)
    else:
        body = "; ".join(step.send for step in cmd.script)
    return ToolResult(
        tool=cmd.tool,
        transcript=f"[dry-run] would execute {cmd.tool}: {body}\n",
        exit_code=0,
        duration=0.0,
        truncated=False,
    )


def execute(
    cmd: ExtractedCommand,
    spec: ToolSpec,
    dry_run: bool = False,
    on_output: Optional[OutputCallback] = None,
) -> ToolResult:
    if dry_run:
        return make_dry_run_result(cmd)
    if spec.mode == "static":
        return execute_static(cmd, spec, on_output)
    return execute_interactive(cmd, spec, on_output)
