"""Run log (JSON Lines plus human-readable mirror), CSV report, and metrics.

The log is the single source of truth: the report generator walks it and
the quantitative metrics are pure functions of it, so recomputation always
yields identical values.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import FatalIOError
from .llm import AgentRole, LLMGateway
from .prompts import REPORT_SYSTEM, build_report_prompt

logger = logging.getLogger(__name__)

LOG_FORMAT_VERSION = 1

CSV_COLUMNS = [
    "CVE number",
    "CVSS score",
    "Risk level",
    "Protocol",
    "Port",
    "Vulnerability name",
    "Synopsis",
    "Description",
    "Solution",
    "Hostname",
    "IP address",
    "OS",
    "Reference URL",
    "VPR",
]
CSV_HEADER = ",".join(CSV_COLUMNS)

RISK_LEVELS = ("Critical", "High", "Medium", "Low", "Info")

_RECORD_FIELDS = (
    "cve_number", "cvss_score", "risk_level", "protocol", "port",
    "vulnerability_name", "synopsis", "description", "solution",
    "hostname", "ip_address", "os", "reference_url", "vpr",
)

# service keywords recognized in summaries and step descriptors
_SERVICE_ALIASES = {
    "ftp": "ftp", "vsftpd": "ftp", "ssh": "ssh", "openssh": "ssh",
    "http": "http", "https": "http", "apache": "http", "nginx": "http",
    "smb": "smb", "samba": "smb", "netbios": "smb", "netbios-ssn": "smb",
    "microsoft-ds": "smb", "telnet": "telnet", "smtp": "smtp", "dns": "dns",
    "mysql": "mysql", "postgresql": "postgres", "postgres": "postgres",
    "ldap": "ldap", "kerberos": "kerberos", "rpc": "rpc", "vnc": "vnc",
    "rdp": "rdp", "snmp": "snmp", "tftp": "tftp", "imap": "imap", "pop3": "pop3",
}
_SERVICE_TOKEN = re.compile(r"[a-z][a-z0-9-]*")


def derive_risk_level(cvss: float) -> str:
    if cvss >= 9.0:
        return "Critical"
    if cvss >= 7.0:
        return "High"
    if cvss >= 4.0:
        return "Medium"
    if cvss >= 0.1:
        return "Low"
    return "Info"


@dataclass
class VulnerabilityRecord:
    cve_number: str = ""
    cvss_score: str = ""
    risk_level: str = ""
    protocol: str = ""
    port: str = ""
    vulnerability_name: str = ""
    synopsis: str = ""
    description: str = ""
    solution: str = ""
    hostname: str = ""
    ip_address: str = ""
    os: str = ""
    reference_url: str = ""
    vpr: str = ""

    def row(self) -> list[str]:
        return [getattr(self, f) for f in _RECORD_FIELDS]

    @property
    def dedup_key(self) -> tuple[str, str, str]:
        return (self.cve_number, self.port, self.vulnerability_name)


def validate_vulnerability(raw: dict, scoped_targets: list[str]) -> Optional[VulnerabilityRecord]:
    """Build a record from an LLM row; None when a field fails validation."""
    rec = VulnerabilityRecord()
    for name in _RECORD_FIELDS:
        value = raw.get(name, "")
        setattr(rec, name, "" if value is None else str(value).strip())
    if rec.cvss_score:
        try:
            score = float(rec.cvss_score)
        except ValueError:
            logger.warning("dropping report row with bad CVSS %r", rec.cvss_score)
            return None
        if not (0.0 <= score <= 10.0):
            logger.warning("dropping report row with out-of-range CVSS %s", score)
            return None
        if not rec.risk_level:
            rec.risk_level = derive_risk_level(score)
            logger.info("derived risk level %s from CVSS %s for %r",
                        rec.risk_level, score, rec.vulnerability_name)
    if rec.risk_level and rec.risk_level not in RISK_LEVELS:
        normalized = rec.risk_level.capitalize()
        if normalized not in RISK_LEVELS:
            logger.warning("dropping report row with bad risk level %r", rec.risk_level)
            return None
        rec.risk_level = normalized
    if rec.port:
        if not rec.port.isdigit():
            logger.warning("dropping report row with bad port %r", rec.port)
            return None
    if rec.ip_address and rec.ip_address not in scoped_targets:
        logger.warning("dropping report row for out-of-scope address %r", rec.ip_address)
        return None
    if not rec.ip_address and scoped_targets:
        rec.ip_address = scoped_targets[0]
    if not rec.vulnerability_name:
        logger.warning("dropping report row without a vulnerability name")
        return None
    return rec


def write_report_csv(
    records: list[VulnerabilityRecord], out_path: str | Path, hostname: str, targets: list[str]
) -> int:
    """Write the metadata preamble, the 14-column header, and deduplicated rows."""
    seen: set[tuple[str, str, str]] = set()
    unique: list[VulnerabilityRecord] = []
    for rec in records:
        if rec.dedup_key in seen:
            continue
        seen.add(rec.dedup_key)
        unique.append(rec)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Hostname", hostname])
        writer.writerow(["IP address", " ".join(targets)])
        writer.writerow([])
        writer.writerow(CSV_COLUMNS)
        for rec in unique:
            writer.writerow(rec.row())
    return len(unique)


def parse_report_csv(path: str | Path) -> list[VulnerabilityRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        header_idx = next(i for i, row in enumerate(rows) if row == CSV_COLUMNS)
    except StopIteration:
        raise ValueError(f"{path}: report header row not found") from None
    records = []
    for row in rows[header_idx + 1 :]:
        if not row:
            continue
        rec = VulnerabilityRecord()
        for name, value in zip(_RECORD_FIELDS, row):
            setattr(rec, name, value)
        records.append(rec)
    return records


# -- run log -----------------------------------------------------------------


class RunLog:
    """Append-only JSON Lines log and its human-readable mirror."""

    def __init__(self, path: str | Path, mirror_path: str | Path | None = None, meta: Optional[dict] = None):
        self.path = Path(path)
        self.mirror_path = Path(mirror_path) if mirror_path else self.path.with_suffix(".log")
        self._last_index = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
            self._mirror = open(self.mirror_path, "w", encoding="utf-8")
        except OSError as exc:
            raise FatalIOError(f"cannot open run log {path}: {exc}") from exc
        self._write({"kind": "header", "version": LOG_FORMAT_VERSION, "ts": time.time(), **(meta or {})})

    def _write(self, record: dict) -> None:
        try:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()
        except (OSError, ValueError) as exc:
            raise FatalIOError(f"run log write failed: {exc}") from exc

    def _write_mirror(self, text: str) -> None:
        try:
            self._mirror.write(text)
            self._mirror.flush()
        except (OSError, ValueError) as exc:
            raise FatalIOError(f"run log mirror write failed: {exc}") from exc

    def append_phase(self, phase: str, iteration: int) -> None:
        self._write({"kind": "phase", "phase": phase, "iteration": iteration, "ts": time.time()})

    def append_iteration(self, record: dict) -> None:
        index = record.get("index")
        if index != self._last_index + 1:
            raise ValueError(f"iteration index {index} does not follow {self._last_index}")
        self._last_index = index
        self._write({"kind": "iteration", "ts": time.time(), **record})
        self._write_mirror(self._render_iteration(record))

    def append_extra(self, kind: str, **fields) -> None:
        self._write({"kind": kind, "ts": time.time(), **fields})

    def close(self) -> None:
        for fh in (self._fh, self._mirror):
            try:
                fh.close()
            except OSError:
                pass

    @staticmethod
    def _render_iteration(record: dict) -> str:
        lines = [f"==== Iteration {record['index']} ===="]
        if record.get("summary"):
            lines.append(f"Summary: {record['summary']}")
        decision = record.get("decision") or {}
        if decision:
            lines.append(
                f"Selected step [{decision.get('selected_node_id')}]: {decision.get('step_statement')}"
            )
        repetition = record.get("repetition") or {}
        if repetition.get("is_repetition"):
            lines.append(
                f"Repetition detected (distance {repetition.get('distance'):.4f} "
                f"to iteration {repetition.get('nearest_iteration')})"
            )
        operator = record.get("operator")
        if operator:
            lines.append(f"Operator decision: {operator.get('kind')} {operator.get('payload', '')}".rstrip())
        for item in (record.get("plan") or {}).get("items", []):
            lines.append(f"Command [{item['tool']}]: {item['command_text']}")
        for violation in record.get("violations", []):
            lines.append(f"Scope violation blocked: {violation['token']} ({violation['tool']})")
        for result in record.get("results", []):
            lines.append(
                f"--- {result['tool']} output (exit={result['exit_code']}) ---\n{result['transcript']}"
            )
        for verdict in record.get("verdicts", []):
            lines.append(f"Verifier: {verdict['outcome']} - {verdict.get('rationale', '')}")
        lines.append("")
        return "\n".join(lines) + "\n"


def read_log_records(path: str | Path) -> list[dict]:
    """Read a JSONL run log, skipping a half-written final line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                logger.warning("skipping half-written final log line")
                continue
            raise
    return records


_VOLATILE_KEYS = ("ts", "started_ts", "finished_ts", "duration")


def _strip_volatile(value):
    if isinstance(value, dict):
        return {k: _strip_volatile(v) for k, v in value.items() if k not in _VOLATILE_KEYS}
    if isinstance(value, list):
        return [_strip_volatile(v) for v in value]
    return value


def canonicalize_log(path: str | Path) -> str:
    """Log text with timestamps and durations removed, for byte comparisons."""
    records = [_strip_volatile(rec) for rec in read_log_records(path)]
    return "\n".join(json.dumps(rec, sort_keys=True) for rec in records)


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricsReport:
    steps: int = 0
    loops: int = 0
    human_interactions: int = 0
    incomplete_commands: int = 0
    services_covered: set[str] = field(default_factory=set)
    subtasks_completed: Optional[tuple[int, int]] = None

    def to_dict(self) -> dict:
        d = {
            "steps": self.steps,
            "loops": self.loops,
            "human_interactions": self.human_interactions,
            "incomplete_commands": self.incomplete_commands,
            "services_covered": sorted(self.services_covered),
        }
        if self.subtasks_completed is not None:
            d["subtasks_completed"] = list(self.subtasks_completed)
        return d


def _extract_services(*texts: str) -> set[str]:
    services = set()
    for text in texts:
        if not text:
            continue
        for token in _SERVICE_TOKEN.findall(text.lower()):
            if token in _SERVICE_ALIASES:
                services.add(_SERVICE_ALIASES[token])
    return services


def compute_metrics(log_path: str | Path, checklist=None) -> MetricsReport:
    """Quantitative run metrics, recomputed purely from the log.

    A loop is an iteration whose step either was flagged as a repetition or
    repeats an earlier iteration's step verbatim (the latter catches actual
    repeats in runs where the repetition guard is ablated).
    """
    metrics = MetricsReport()
    seen_statements: set[str] = set()
    seen_canonicals: set[str] = set()
    for record in read_log_records(log_path):
        if record.get("kind") != "iteration":
            continue
        metrics.steps += 1
        repetition = record.get("repetition") or {}
        descriptor = record.get("descriptor") or {}
        decision = record.get("decision") or {}
        statement = " ".join((decision.get("step_statement") or "").lower().split())
        canonical = descriptor.get("canonical") or ""
        flagged = bool(repetition.get("is_repetition"))
        repeated = (statement and statement in seen_statements) or (
            canonical and canonical in seen_canonicals
        )
        if flagged or repeated:
            metrics.loops += 1
        if statement:
            seen_statements.add(statement)
        if canonical:
            seen_canonicals.add(canonical)
        operator = record.get("operator")
        if operator and not operator.get("defaulted"):
            metrics.human_interactions += 1
        metrics.incomplete_commands += int(record.get("incomplete_flags", 0))
        metrics.services_covered |= _extract_services(
            record.get("summary", ""), descriptor.get("service", ""), statement
        )
    if checklist is not None:
        passed = sum(1 for _, ok in checklist if ok)
        metrics.subtasks_completed = (passed, len(checklist))
    return metrics


# -- report generation ---------------------------------------------------------


def _log_digest(records: list[dict], limit_per_iteration: int = 2000) -> str:
    parts = []
    for record in records:
        if record.get("kind") != "iteration":
            continue
        chunk = [f"Iteration {record['index']}:"]
        if record.get("summary"):
            chunk.append(f"  summary: {record['summary'][:limit_per_iteration]}")
        decision = record.get("decision") or {}
        if decision:
            chunk.append(f"  step: {decision.get('step_statement')}")
        for result in record.get("results", []):
            chunk.append(
                f"  [{result['tool']} exit={result['exit_code']}] "
                + result["transcript"][:limit_per_iteration].replace("\n", "\n    ")
            )
        parts.append("\n".join(chunk))
    return "\n".join(parts)


def generate_report(
    log_path: str | Path,
    gateway: LLMGateway,
    out_path: str | Path,
    scoped_targets: list[str],
    hostname: str = "",
) -> int:
    """Walk the log, ask the report agent for rows, validate, dedupe, write CSV."""
    records = read_log_records(log_path)
    iteration_records = [r for r in records if r.get("kind") == "iteration"]
    rows: list[VulnerabilityRecord] = []
    if iteration_records:
        session = gateway.open_session(AgentRole.REPORT_GENERATOR, REPORT_SYSTEM)
        reply = gateway.chat(session, build_report_prompt(_log_digest(records), scoped_targets))
        text = reply.strip()
        fence = re.search(r"```(?:json)?\n(.*?)```", text, re.DOTALL)
        if fence:
            text = fence.group(1)
        try:
            data = json.loads(text)
            if not isinstance(data, list):
                raise ValueError("report reply is not a JSON array")
        except (json.JSONDecodeError, ValueError) as exc:
            logger.warning("report reply unparseable (%s); writing empty report", exc)
            data = []
        for raw in data:
            if not isinstance(raw, dict):
                continue
            rec = validate_vulnerability(raw, scoped_targets)
            if rec is not None:
                rows.append(rec)
    return write_report_csv(rows, out_path, hostname, scoped_targets)
