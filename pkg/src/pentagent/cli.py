"""Command-line entry point.

Thin layer only: flags become a RunConfig, the run executes in the
controller, and ``--serve`` additionally exposes the HTTP service for the
operator console while the run proceeds in the background.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import threading
from pathlib import Path

from .config import BackendConfig, RunConfig, apply_config_file, load_config_file, parse_ablation
from .errors import ConfigError, FatalIOError, PackError, PentagentError
from .orchestrator import RunController
from .repetition import AutoContinueChannel, OperatorChannel, TerminalChannel
from .simharness import assert_checklist, completion_percent, install, load_pack
from .reporting import compute_metrics

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pentagent",
        description="Iterative, scope-guarded pentest orchestration against explicitly allowed targets.",
    )
    parser.add_argument("--target", action="append", default=[], help="scoped target IP/hostname (repeatable)")
    parser.add_argument("--config", type=Path, help="YAML config file (backend, profile)")
    parser.add_argument("--kb", type=Path, help="knowledge-base directory of .txt/.md documents")
    parser.add_argument("--registry", type=Path, help="tool registry YAML")
    parser.add_argument("--max-iterations", type=int, default=None, help="iteration cap (default 25)")
    parser.add_argument("--non-interactive", action="store_true", help="never prompt; repetition defaults to continue")
    parser.add_argument("--dry-run", action="store_true", help="plan and extract, but record instead of executing")
    parser.add_argument("--ablation", default=None, metavar="FLAGS",
                        help="subset of B*,R,L,V to enable (B* implied), or 'base'")
    parser.add_argument("--report-out", type=Path, default=None, help="CSV report path")
    parser.add_argument("--log-out", type=Path, default=None, help="run log path (JSON Lines)")
    parser.add_argument("--scenario", default=None, metavar="PACK",
                        help="scenario pack directory or bundled pack name (activates the sim harness)")
    parser.add_argument("--serve", default=None, metavar="ADDR", help="serve the HTTP API on host:port")
    parser.add_argument("--mock-llm", type=Path, default=None, metavar="TRANSCRIPT",
                        help="scripted LLM transcript file (YAML)")
    return parser


def _build_config(args) -> tuple[RunConfig, object]:
    config = RunConfig()
    pack = None
    if args.config:
        apply_config_file(config, load_config_file(args.config))
    if args.scenario:
        pack = load_pack(args.scenario)
        harness_dir = Path(tempfile.mkdtemp(prefix=f"pentagent-{pack.name}-"))
        config.registry_path = install(pack, harness_dir)
        config.targets = [pack.target]
        config.target_hostname = pack.hostname
        if pack.kb_dir:
            config.kb_path = pack.kb_dir
        if "max_iterations" in pack.defaults:
            config.max_iterations = int(pack.defaults["max_iterations"])
        if "operator_timeout" in pack.defaults:
            config.operator_timeout = float(pack.defaults["operator_timeout"])
        config.backend.kind = "scripted"
        config.backend.transcript_path = pack.llm_transcript_path
        config.profile.workspace_dir = harness_dir / "workspace"
    if args.target:
        config.targets = list(args.target)
    if not config.targets:
        raise ConfigError("--target is required unless --scenario provides one")
    if args.mock_llm:
        config.backend = BackendConfig(kind="scripted", transcript_path=args.mock_llm)
    if args.kb:
        config.kb_path = args.kb
    if args.registry:
        config.registry_path = args.registry
    if args.max_iterations is not None:
        config.max_iterations = args.max_iterations
    config.interactive = not args.non_interactive
    config.dry_run = args.dry_run
    config.ablation = parse_ablation(args.ablation)
    if args.report_out:
        config.report_out = args.report_out
    elif args.scenario:
        config.report_out = Path(tempfile.gettempdir()) / f"pentagent-{pack.name}-report.csv"
    if args.log_out:
        config.log_out = args.log_out
    elif args.scenario:
        config.log_out = Path(tempfile.gettempdir()) / f"pentagent-{pack.name}-run.jsonl"
    return config, pack


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host:
        host = "127.0.0.1"
    try:
        return host, int(port)
    except ValueError as exc:
        raise ConfigError(f"--serve expects host:port, got {addr!r}") from exc


def _serve(controller: RunController, addr: str) -> None:
    import uvicorn

    from .service import create_app

    host, port = _parse_addr(addr)
    app = create_app(controller)
    runner = threading.Thread(target=controller.run, name="pentagent-run", daemon=True)
    runner.start()
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config, pack = _build_config(args)
    except (ConfigError, PackError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2

    channel: OperatorChannel
    if args.serve:
        channel = OperatorChannel()  # decisions arrive over HTTP
    elif config.interactive:
        channel = TerminalChannel()
    else:
        channel = AutoContinueChannel()
    controller = RunController(config, channel)

    if args.serve:
        _serve(controller, args.serve)
        return 0

    try:
        outcome = controller.run()
    except FatalIOError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PentagentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    checklist_results = None
    if pack is not None and pack.checklist:
        checklist_results = assert_checklist(pack, config.log_out)
        metrics = compute_metrics(config.log_out, checklist_results)
    else:
        metrics = outcome.metrics
    print(f"run finished: {outcome.stop_reason}")
    print(f"log: {outcome.log_path}")
    print(f"report: {outcome.report_path} ({outcome.report_rows} rows)")
    print(
        f"metrics: steps={metrics.steps} loops={metrics.loops} "
        f"human_interactions={metrics.human_interactions} "
        f"incomplete_commands={metrics.incomplete_commands} "
        f"services={','.join(sorted(metrics.services_covered)) or '-'}"
    )
    if checklist_results is not None:
        for name, ok in checklist_results:
            print(f"subtask {name}: {'PASS' if ok else 'FAIL'}")
        print(f"subtask completion: {completion_percent(checklist_results):.1f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
