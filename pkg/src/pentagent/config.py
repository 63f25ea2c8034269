"""Run, backend, and attack-host configuration."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

# Ablation flags: reasoning strategy analyzer, retrieval grounding,
# repetition guard, results verifier. Full config enables all four.
ABLATION_REASONING = "B*"
ABLATION_RAG = "R"
ABLATION_REPETITION = "L"
ABLATION_VERIFIER = "V"
ALL_ABLATION_FLAGS = frozenset({ABLATION_REASONING, ABLATION_RAG, ABLATION_REPETITION, ABLATION_VERIFIER})

DEFAULT_CHUNK_SIZE = 6000
DEFAULT_CHUNK_OVERLAP = 500
DEFAULT_KB_CHUNK_CHARS = 500
DEFAULT_RETRIEVE_K = 10
DEFAULT_REPETITION_THRESHOLD = 0.15
DEFAULT_MAX_RETRIES_PER_STEP = 2
DEFAULT_OPERATOR_TIMEOUT = 30.0


def parse_ablation(spec: Optional[str]) -> frozenset[str]:
    """Parse the ``--ablation`` flag value into the enabled-module set.

    ``None`` means the full configuration. The reasoning analyzer is always
    implied unless the literal value ``base`` is given.
    """
    if spec is None:
        return ALL_ABLATION_FLAGS
    spec = spec.strip()
    if spec.lower() == "base":
        return frozenset()
    flags = {ABLATION_REASONING}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part not in ALL_ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation flag {part!r}; expected subset of B*,R,L,V or 'base'")
        flags.add(part)
    return frozenset(flags)


@dataclass
class BackendConfig:
    kind: str = "remote"  # remote | scripted
    endpoint: str = ""
    model_id: str = ""
    embedding_model_id: str = ""
    temperature: float = 0.0
    max_retries: int = 2
    request_timeout: float = 60.0
    api_key_env: str = "LLM_API_KEY"
    transcript_path: Optional[Path] = None  # scripted only

    def validate(self) -> None:
        if self.kind not in ("remote", "scripted"):
            raise ConfigError(f"backend kind must be remote or scripted, got {self.kind!r}")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigError("remote backend requires an endpoint")
        if self.kind == "scripted" and not self.transcript_path:
            raise ConfigError("scripted backend requires a transcript path")


@dataclass
class AttackHostProfile:
    """Facts about the attacking host that commands may rely on."""

    local_ip: str = "127.0.0.1"
    wordlist_paths: dict[str, Path] = field(default_factory=dict)
    workspace_dir: Path = Path(".pentagent-workspace")

    def validate(self) -> None:
        try:
            ipaddress.ip_address(self.local_ip)
        except ValueError as exc:
            raise ConfigError(f"local_ip {self.local_ip!r} is not a valid IP address") from exc
        for name, path in self.wordlist_paths.items():
            if not Path(path).exists():
                raise ConfigError(f"wordlist {name!r} not found at {path}")
        Path(self.workspace_dir).mkdir(parents=True, exist_ok=True)

    def facts_text(self) -> str:
        lines = [f"attack host local IP: {self.local_ip}"]
        for name, path in sorted(self.wordlist_paths.items()):
            lines.append(f"wordlist {name}: {path}")
        lines.append(f"workspace directory: {self.workspace_dir}")
        return "\n".join(lines)


@dataclass
class RunConfig:
    targets: list[str] = field(default_factory=list)
    target_hostname: str = ""
    max_iterations: int = 25
    interactive: bool = True
    dry_run: bool = False
    ablation: frozenset[str] = ALL_ABLATION_FLAGS
    kb_path: Optional[Path] = None
    kb_index_path: Optional[Path] = None
    registry_path: Optional[Path] = None
    report_out: Path = Path("report.csv")
    log_out: Path = Path("run.jsonl")
    backend: BackendConfig = field(default_factory=BackendConfig)
    profile: AttackHostProfile = field(default_factory=AttackHostProfile)
    operator_timeout: float = DEFAULT_OPERATOR_TIMEOUT
    chunk_size: int = DEFAULT_CHUNK_SIZE
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP
    kb_chunk_chars: int = DEFAULT_KB_CHUNK_CHARS
    retrieve_k: int = DEFAULT_RETRIEVE_K
    repetition_threshold: float = DEFAULT_REPETITION_THRESHOLD
    max_retries_per_step: int = DEFAULT_MAX_RETRIES_PER_STEP

    def validate(self) -> None:
        if not self.targets:
            raise ConfigError("at least one scoped target is required")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not (0 < self.repetition_threshold < 2):
            raise ConfigError("repetition threshold must lie in (0, 2)")
        self.backend.validate()
        self.profile.validate()

    def has(self, flag: str) -> bool:
        return flag in self.ablation


def load_config_file(path: str | Path) -> dict:
    """Load the optional YAML config file (backend + profile settings)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return doc


def apply_config_file(config: RunConfig, doc: dict) -> None:
    backend = doc.get("backend", {})
    for key in ("kind", "endpoint", "model_id", "embedding_model_id", "api_key_env"):
        if key in backend:
            setattr(config.backend, key, backend[key])
    for key in ("temperature", "request_timeout"):
        if key in backend:
            setattr(config.backend, key, float(backend[key]))
    if "max_retries" in backend:
        config.backend.max_retries = int(backend["max_retries"])
    profile = doc.get("profile", {})
    if "local_ip" in profile:
        config.profile.local_ip = profile["local_ip"]
    if "workspace_dir" in profile:
        config.profile.workspace_dir = Path(profile["workspace_dir"])
    for name, path in (profile.get("wordlists") or {}).items():
        config.profile.wordlist_paths[name] = Path(path)
    run = doc.get("run", {})
    if "max_iterations" in run:
        config.max_iterations = int(run["max_iterations"])
    if "operator_timeout" in run:
        config.operator_timeout = float(run["operator_timeout"])
