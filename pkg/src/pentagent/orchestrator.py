"""The iteration state machine driving one pentest run.

Each completed iteration flows summarize -> analyze -> repetition_check ->
generate -> execute -> verify; flagged repetitions detour through
await_operator, and the run ends in reporting -> done on operator exit,
when no open task-tree nodes remain, or at the iteration cap.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import aci, rag
from .config import (
    ABLATION_RAG,
    ABLATION_REASONING,
    ABLATION_REPETITION,
    ABLATION_VERIFIER,
    RunConfig,
)
from .errors import BinaryMissing, NoStepsRemaining
from .events import EventLog
from .generator import CommandGenerator, CommandItem, CommandPlan
from .llm import LLMGateway, RemoteBackend, ScriptedBackend, ScriptedTranscript
from .ptt import PentestTaskTree, seed_tree, serialize_ptt
from .repetition import (
    CONTINUE_HINT,
    AutoContinueChannel,
    OperatorChannel,
    RepetitionGuard,
    RepetitionVerdict,
    StepEmbeddingStore,
    TerminalChannel,
)
from .reporting import MetricsReport, RunLog, compute_metrics, generate_report
from .strategy import StrategyAnalyzer, StrategyDecision, mark_selected
from .summarize import Summarizer, Summary
from .verify import IdentityVerifier, ResultsVerifier, RetryBudget

logger = logging.getLogger(__name__)

PHASES = (
    "summarize",
    "analyze",
    "repetition_check",
    "generate",
    "execute",
    "verify",
    "await_operator",
    "reporting",
    "done",
)

# legal transitions of the pipeline automaton; None is the run start
PHASE_EDGES: dict[Optional[str], set[str]] = {
    None: {"repetition_check", "generate", "reporting"},
    "summarize": {"analyze"},
    "analyze": {"repetition_check", "generate", "reporting"},
    "repetition_check": {"generate", "await_operator"},
    "await_operator": {"analyze", "summarize", "generate", "reporting"},
    "generate": {"execute", "summarize", "reporting"},
    "execute": {"verify"},
    "verify": {"execute", "summarize", "reporting"},
    "reporting": {"done"},
    "done": set(),
}

_MAX_REPLANS = 2  # re-selections after repeated continue decisions, per iteration


@dataclass
class ExecutionOutcome:
    item: CommandItem
    scope_ok: bool = True
    violation_token: str = ""
    result: Optional[aci.ToolResult] = None
    error: str = ""


@dataclass
class RunOutcome:
    log_path: Path
    report_path: Path
    metrics: MetricsReport
    stop_reason: str
    report_rows: int


def build_backend(config: RunConfig):
    bc = config.backend
    bc.validate()
    if bc.kind == "scripted":
        return ScriptedBackend(ScriptedTranscript.from_file(bc.transcript_path))
    return RemoteBackend(
        endpoint=bc.endpoint,
        model_id=bc.model_id,
        embedding_model_id=bc.embedding_model_id,
        temperature=bc.temperature,
        max_retries=bc.max_retries,
        request_timeout=bc.request_timeout,
        api_key_env=bc.api_key_env,
    )


def default_registry_path() -> Path:
    return Path(__file__).parent / "data" / "registry.yaml"


class RunController:
    """Owns one run: pipeline state, event log, operator mailbox, artifacts."""

    def __init__(self, config: RunConfig, channel: Optional[OperatorChannel] = None):
        config.validate()
        self.config = config
        self.events = EventLog()
        if channel is not None:
            self.channel = channel
        elif config.interactive:
            self.channel = TerminalChannel()
        else:
            self.channel = AutoContinueChannel()
        self._lock = threading.Lock()
        self._phase: Optional[str] = None
        self._iteration = 0
        self._ptt: Optional[PentestTaskTree] = None
        self._stop_reason: Optional[str] = None
        self._report_ready = False
        self._error: Optional[str] = None
        self.outcome: Optional[RunOutcome] = None

    # -- observable state ---------------------------------------------------

    def snapshot(self) -> dict:
        with self._lock:
            pending = self.channel.pending()
            return {
                "phase": self._phase,
                "iteration": self._iteration,
                "targets": list(self.config.targets),
                "ptt": serialize_ptt(self._ptt) if self._ptt else "",
                "ptt_revision": self._ptt.revision if self._ptt else 0,
                "stop_reason": self._stop_reason,
                "report_ready": self._report_ready,
                "error": self._error,
                "pending_prompt": (
                    {
                        "prompt_id": pending.prompt_id,
                        "step_statement": pending.step_statement,
                        "nearest_iteration": pending.nearest_iteration,
                        "distance": pending.distance,
                    }
                    if pending
                    else None
                ),
            }

    @property
    def report_ready(self) -> bool:
        with self._lock:
            return self._report_ready

    def _enter(self, phase: str, iteration: int) -> None:
        with self._lock:
            self._phase = phase
            self._iteration = iteration
        self._log.append_phase(phase, iteration)
        self.events.append("phase_change", {"phase": phase, "iteration": iteration})

    def _set_ptt(self, tree: PentestTaskTree) -> None:
        with self._lock:
            self._ptt = tree
        text = serialize_ptt(tree)
        tmp = self._ptt_path.with_suffix(".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(self._ptt_path)
        self.events.append("ptt_updated", {"revision": tree.revision})

    # -- run ------------------------------------------------------------------

    def run(self) -> RunOutcome:
        try:
            return self._run()
        except Exception as exc:
            with self._lock:
                self._error = f"{type(exc).__name__}: {exc}"
            if not self.events.closed:
                self.events.append("run_done", {"error": self._error})
            raise

    def _run(self) -> RunOutcome:
        cfg = self.config
        gateway = LLMGateway(build_backend(cfg), model_id=cfg.backend.model_id)
        registry_path = cfg.registry_path or default_registry_path()
        registry = aci.load_registry(registry_path)

        self._log = RunLog(
            cfg.log_out,
            meta={
                "targets": list(cfg.targets),
                "ablation": sorted(cfg.ablation),
                "dry_run": cfg.dry_run,
            },
        )
        self._ptt_path = Path(cfg.log_out).with_suffix(".ptt.txt")

        index = None
        if cfg.has(ABLATION_RAG) and cfg.kb_path:
            index = rag.build_index(cfg.kb_path, gateway, cfg.kb_index_path, cfg.kb_chunk_chars)

        summarizer = Summarizer(gateway, cfg.chunk_size, cfg.chunk_overlap)
        strategy = StrategyAnalyzer(gateway, reasoning=cfg.has(ABLATION_REASONING))
        guard = RepetitionGuard(gateway, cfg.repetition_threshold) if cfg.has(ABLATION_REPETITION) else None
        generator = CommandGenerator(gateway, cfg.profile)
        extractor = aci.CommandExtractor(gateway, registry)
        verifier = ResultsVerifier(gateway) if cfg.has(ABLATION_VERIFIER) else IdentityVerifier()
        store = StepEmbeddingStore()

        ptt = seed_tree(cfg.targets[0])
        self._set_ptt(ptt)

        summary_input = ""  # verified tool output (or operator feedback) awaiting summarization
        instruction = ""  # operator general instruction for the next analysis
        stop_reason: Optional[str] = None
        iteration = 0

        while stop_reason is None:
            iteration += 1
            if iteration > cfg.max_iterations:
                stop_reason = "max_iterations"
                break
            status, summary_input, instruction = self._iteration_pass(
                iteration=iteration,
                ptt=ptt,
                summary_input=summary_input,
                instruction=instruction,
                gateway=gateway,
                summarizer=summarizer,
                strategy=strategy,
                guard=guard,
                generator=generator,
                extractor=extractor,
                verifier=verifier,
                store=store,
                registry=registry,
                index=index,
            )
            ptt = self._ptt  # updates may have replaced the tree object
            if status in ("operator_exit", "no_steps_remaining"):
                stop_reason = status

        # reporting phase
        self._enter("reporting", iteration)
        self._log.append_extra("ptt_final", text=serialize_ptt(ptt), revision=ptt.revision)
        self._log.append_extra("stop", reason=stop_reason)
        rows = generate_report(
            cfg.log_out, gateway, cfg.report_out, list(cfg.targets), hostname=cfg.target_hostname
        )
        with self._lock:
            self._report_ready = True
            self._stop_reason = stop_reason
        self.events.append("report_ready", {"path": str(cfg.report_out), "rows": rows})
        metrics = compute_metrics(cfg.log_out)
        self._log.append_extra("metrics", **metrics.to_dict())
        self._enter("done", iteration)
        self._log.close()
        self.events.append("run_done", {"stop_reason": stop_reason, "metrics": metrics.to_dict()})
        outcome = RunOutcome(
            log_path=Path(cfg.log_out),
            report_path=Path(cfg.report_out),
            metrics=metrics,
            stop_reason=stop_reason or "",
            report_rows=rows,
        )
        self.outcome = outcome
        return outcome

    # -- one iteration ---------------------------------------------------------

    def _iteration_pass(
        self, *, iteration, ptt, summary_input, instruction, gateway, summarizer,
        strategy, guard, generator, extractor, verifier, store, registry, index,
    ) -> tuple[str, str, str]:
        """Run one iteration. Returns (status, next_summary_input, instruction)."""
        cfg = self.config
        started_ts = time.time()
        summary = Summary(text="", source_len=0, chunk_count=0)
        record: dict = {"index": iteration}
        descriptor = None
        flagged: Optional[RepetitionVerdict] = None
        operator_rec: Optional[dict] = None

        while True:  # a general operator instruction restarts the analysis
            if iteration == 1 and not summary_input:
                # synthesized seed: the run always opens with a port scan
                decision = StrategyDecision(
                    reasoning="",
                    selected_node_id="1.1",
                    step_statement=(
                        f"Run a reconnaissance port scan of {cfg.targets[0]} with nmap "
                        "to identify open ports and service versions"
                    ),
                    raw_reply="",
                )
                mark_selected(ptt, "1.1")
                self._set_ptt(ptt)
            else:
                self._enter("summarize", iteration)
                text_in = f"{instruction}\n\n{summary_input}".strip() if instruction else summary_input
                summary = summarizer.summarize(text_in)
                self._enter("analyze", iteration)
                ptt = strategy.update_ptt(ptt, summary, instruction)
                instruction = ""
                self._set_ptt(ptt)
                try:
                    decision = strategy.select_next_step(ptt)
                except NoStepsRemaining:
                    if operator_rec is not None:
                        # operator redirected the analysis, then no steps remained:
                        # keep the interaction on the record
                        record.update(
                            self._build_record(
                                summary, ptt, StrategyDecision("", "", "", ""), descriptor,
                                flagged or RepetitionVerdict(False, None, 2.0), operator_rec,
                                None, [], [], started_ts,
                            )
                        )
                        record["decision"] = None
                        self._log.append_iteration(record)
                    return "no_steps_remaining", summary_input, instruction
                self._set_ptt(ptt)
            self.events.append(
                "step_selected",
                {"iteration": iteration, "node_id": decision.selected_node_id,
                 "statement": decision.step_statement},
            )

            verdict = RepetitionVerdict(is_repetition=False, nearest_iteration=None, distance=2.0)
            replans = 0
            restart_analysis = False

            while True:  # repetition check / re-plan loop
                if guard is not None:
                    self._enter("repetition_check", iteration)
                    descriptor = guard.describe_step(decision)
                    verdict = guard.check_repetition(descriptor, store, iteration)
                if not verdict.is_repetition:
                    break
                flagged = verdict
                self._enter("await_operator", iteration)
                prompt = self.channel.open_prompt(
                    decision.step_statement, verdict.nearest_iteration, verdict.distance
                )
                self.events.append(
                    "repetition_prompt",
                    {"prompt_id": prompt.prompt_id, "iteration": iteration,
                     "step_statement": decision.step_statement,
                     "nearest_iteration": verdict.nearest_iteration,
                     "distance": verdict.distance},
                )
                op = self.channel.await_decision(
                    prompt, cfg.operator_timeout if cfg.interactive else 0.0
                )
                operator_rec = {"kind": op.kind, "payload": op.payload, "defaulted": op.defaulted}
                if op.kind == "exit":
                    record.update(
                        self._build_record(
                            summary, ptt, decision, descriptor, flagged or verdict,
                            operator_rec, None, [], [], started_ts,
                        )
                    )
                    self._log.append_iteration(record)
                    return "operator_exit", summary_input, instruction
                if op.kind == "interactive":
                    # the operator ran the step by hand; observations are the result
                    record.update(
                        self._build_record(
                            summary, ptt, decision, descriptor, flagged or verdict,
                            operator_rec, None, [], [], started_ts,
                        )
                    )
                    self._log.append_iteration(record)
                    return "completed", op.payload, instruction
                if op.kind == "general":
                    instruction = op.payload
                    restart_analysis = True
                    break
                # continue: re-plan on a different path, bounded per iteration
                if replans >= _MAX_REPLANS:
                    logger.warning("re-plan cap reached; proceeding with the repeated step")
                    break
                self._enter("analyze", iteration)
                try:
                    decision = strategy.select_next_step(ptt, hint=CONTINUE_HINT)
                except NoStepsRemaining:
                    return "no_steps_remaining", summary_input, instruction
                self._set_ptt(ptt)
                self.events.append(
                    "step_selected",
                    {"iteration": iteration, "node_id": decision.selected_node_id,
                     "statement": decision.step_statement, "replan": True},
                )
                replans += 1

            if restart_analysis:
                continue  # back to the summarizer with the operator's instruction
            break

        # generate -> execute -> verify (with bounded retries)
        self._enter("generate", iteration)
        retrieved = []
        if index is not None and cfg.has(ABLATION_RAG):
            retrieved = rag.retrieve(index, decision.step_statement, gateway, cfg.retrieve_k)
        plan = generator.generate(decision, retrieved, list(cfg.targets), registry.names())

        verdicts: list[dict] = []
        outcomes: list[ExecutionOutcome] = []
        if plan.fallback_noop:
            summary_next = f"Command generation failed for step: {decision.step_statement}"
        else:
            budget = RetryBudget(max_retries=cfg.max_retries_per_step)
            while True:
                self._enter("execute", iteration)
                outcomes = self._execute_plan(plan, extractor, registry)
                self._enter("verify", iteration)
                verdict_obj = verifier.verify(plan, outcomes, budget, decision.step_statement)
                verdicts.append(
                    {"outcome": verdict_obj.outcome, "rationale": verdict_obj.rationale,
                     "retries_used": budget.used}
                )
                self.events.append(
                    "verdict",
                    {"iteration": iteration, "outcome": verdict_obj.outcome,
                     "retries_used": budget.used},
                )
                if verdict_obj.outcome == "retry" and verdict_obj.revised_plan is not None:
                    plan = verdict_obj.revised_plan
                    continue
                break
            parts = []
            for outcome in outcomes:
                if outcome.result is not None:
                    parts.append(outcome.result.transcript)
                elif outcome.violation_token:
                    parts.append(
                        f"[blocked by scope guard: out-of-scope token {outcome.violation_token!r}]"
                    )
                elif outcome.error:
                    parts.append(f"[execution error: {outcome.error}]")
            if verdicts and verdicts[-1]["outcome"] == "give_up":
                parts.append("[results verifier gave up after exhausting retries]")
            summary_next = "\n".join(parts)

        record.update(
            self._build_record(
                summary, ptt, decision, descriptor, flagged or verdict, operator_rec,
                plan, outcomes, verdicts, started_ts,
            )
        )
        self._log.append_iteration(record)
        return "completed", summary_next, instruction

    def _execute_plan(self, plan: CommandPlan, extractor, registry) -> list[ExecutionOutcome]:
        cfg = self.config
        outcomes: list[ExecutionOutcome] = []
        for cmd in extractor.extract(plan.raw_reply):
            spec = registry.get(cmd.tool)
            item = CommandItem(tool=cmd.tool, command_text=cmd.text())
            check = aci.scope_guard(cmd, list(cfg.targets), cfg.profile)
            if not check.ok:
                logger.warning("scope guard blocked %s: token %r", cmd.tool, check.violation_token)
                outcomes.append(
                    ExecutionOutcome(item=item, scope_ok=False, violation_token=check.violation_token)
                )
                continue
            self.events.append("tool_started", {"tool": cmd.tool, "command": item.command_text})
            on_chunk = lambda text, tool=cmd.tool: self.events.append(
                "tool_output_chunk", {"tool": tool, "text": text}
            )
            try:
                result = aci.execute(cmd, spec, dry_run=cfg.dry_run, on_output=on_chunk)
            except BinaryMissing as exc:
                logger.warning("%s", exc)
                outcomes.append(ExecutionOutcome(item=item, error=str(exc)))
                continue
            outcomes.append(ExecutionOutcome(item=item, result=result))
        return outcomes

    @staticmethod
    def _build_record(
        summary, ptt, decision, descriptor, verdict, operator_rec, plan, outcomes,
        verdicts, started_ts,
    ) -> dict:
        results = []
        violations = []
        for outcome in outcomes:
            if outcome.result is not None:
                results.append(
                    {
                        "tool": outcome.result.tool,
                        "transcript": outcome.result.transcript,
                        "exit_code": outcome.result.exit_code,
                        "duration": outcome.result.duration,
                        "truncated": outcome.result.truncated,
                    }
                )
            elif not outcome.scope_ok:
                violations.append({"tool": outcome.item.tool, "token": outcome.violation_token})
        return {
            "summary": summary.text,
            "summary_chunks": summary.chunk_count,
            "ptt_revision": ptt.revision,
            "ptt_text": serialize_ptt(ptt),
            "decision": {
                "selected_node_id": decision.selected_node_id,
                "step_statement": decision.step_statement,
                "reasoning": decision.reasoning,
            },
            "descriptor": (
                {
                    "service": descriptor.service,
                    "technique": descriptor.technique,
                    "tool": descriptor.tool,
                    "canonical": descriptor.canonical,
                }
                if descriptor
                else None
            ),
            "repetition": {
                "is_repetition": verdict.is_repetition,
                "nearest_iteration": verdict.nearest_iteration,
                "distance": verdict.distance,
            },
            "operator": operator_rec,
            "plan": (
                {
                    "step_ref": plan.step_ref,
                    "fallback_noop": plan.fallback_noop,
                    "items": [
                        {
                            "tool": item.tool,
                            "command_text": item.command_text,
                            "instructions": item.instructions,
                            "incomplete": item.incomplete,
                        }
                        for item in plan.items
                    ],
                }
                if plan
                else None
            ),
            "results": results,
            "violations": violations,
            "verdicts": verdicts,
            "incomplete_flags": plan.incomplete_count if plan else 0,
            "started_ts": started_ts,
            "finished_ts": time.time(),
        }


def run(config: RunConfig, channel: Optional[OperatorChannel] = None) -> RunOutcome:
    """Convenience wrapper: one orchestrated run from a config."""
    return RunController(config, channel).run()
