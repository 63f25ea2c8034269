"""Exception types shared across the pipeline."""


class PentagentError(Exception):
    """Base class for all package errors."""


class ConfigError(PentagentError):
    """Invalid configuration or CLI arguments (exit code 2)."""


class FatalIOError(PentagentError):
    """Run-log write failure; log integrity is mandatory (exit code 3)."""


class BackendUnreachable(PentagentError):
    """Remote LLM backend could not be reached after retries."""


class ScriptedExhausted(PentagentError):
    """The scripted backend has no matching entry left; fixture bug."""


class PttParseError(PentagentError):
    """Malformed task-tree text. Carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NoStepsRemaining(PentagentError):
    """Every task-tree node is done or failed; the run is complete."""


class BinaryMissing(PentagentError):
    """A registered tool's binary does not exist on disk."""


class PackError(PentagentError):
    """Scenario pack is missing files or malformed."""
