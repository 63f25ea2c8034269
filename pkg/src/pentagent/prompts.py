"""System prompts and user-prompt builders for the six agent roles.

User prompts carry stable marker phrases ("Summary of the latest results",
"Select the next best step", ...) so scripted transcripts can route replies
by substring match.
"""

from __future__ import annotations

SUMMARIZER_SYSTEM = (
    "You summarize raw security-tool output for a penetration-testing pipeline. "
    "Condense the text into a short, factual summary. Keep every concrete detail "
    "that matters for planning: hosts, ports, service names and versions, "
    "credentials, shares, file paths, URLs, and error messages. Do not speculate "
    "and do not give advice."
)

STRATEGY_SYSTEM_REASONING = (
    "You are the strategy analyzer of a penetration-testing pipeline. You maintain "
    "a task tree whose nodes carry a status (TODO, IN-PROGRESS, DONE, FAILED) and "
    "bullet findings. Reason step by step about the accumulated findings before "
    "every decision, checking how the newest information aligns with the current "
    "strategy, and prefer incremental steps inside the current subtask; when a "
    "subtask is complete, move to a node marked TODO.\n"
    "When asked to update the plan, reply with the complete revised tree inside a "
    "single fenced code block, one node per line, findings as '- ' bullets.\n"
    "When asked to select a step, finish your reply with one line of the exact "
    "form: SELECTED: <node id> | STEP: <one-sentence next action>."
)

STRATEGY_SYSTEM_PLAIN = (
    "You are the strategy analyzer of a penetration-testing pipeline. You maintain "
    "a task tree whose nodes carry a status (TODO, IN-PROGRESS, DONE, FAILED) and "
    "bullet findings. Answer directly without explaining your reasoning.\n"
    "When asked to update the plan, reply with the complete revised tree inside a "
    "single fenced code block, one node per line, findings as '- ' bullets.\n"
    "When asked to select a step, reply with one line of the exact form: "
    "SELECTED: <node id> | STEP: <one-sentence next action>."
)

STEP_STRUCTURER_SYSTEM = (
    "You turn a selected penetration-testing step into a three-field descriptor. "
    "Reply with exactly three lines:\n"
    "SERVICE: <what service will be exploited>\n"
    "TECHNIQUE: <how it is done>\n"
    "TOOL: <what tool it uses>"
)

GENERATOR_SYSTEM = (
    "You generate complete, executable commands for CLI security tools to carry "
    "out one selected penetration-testing step. Ground every command in the "
    "supplied reference excerpts and attack-host facts; use only the scoped "
    "target addresses and the listed wordlist/workspace paths. Never leave "
    "placeholders such as <target-ip>.\n"
    "Reply with one block per command in this exact layout:\n"
    "TOOL: <tool name>\n"
    "COMMAND:\n"
    "```\n"
    "<the full command line, or one interactive input line per line>\n"
    "```\n"
    "INSTRUCTIONS: <one sentence on what the command does>"
)

EXTRACTOR_SYSTEM = (
    "You convert generated tool commands into structured invocations. Reply with "
    "a JSON array only. Each element is either\n"
    '{"tool": "<name>", "kind": "argv", "argv": ["<token>", ...]} for a static '
    "CLI tool, or\n"
    '{"tool": "<name>", "kind": "script", "script": [{"send": "<line>", '
    '"await": "<expected output pattern or null>"}, ...]} for an interactive '
    "console. Use only registered tool names; keep the original command order."
)

VERIFIER_SYSTEM = (
    "You verify whether security-tool output achieved the intent of the current "
    "step. If the output is usable, reply with a line 'VERDICT: VALID' and a "
    "short rationale. If the commands should be refined and retried, reply with "
    "'VERDICT: RETRY', a short rationale, and the revised commands in TOOL/"
    "COMMAND/INSTRUCTIONS blocks (fenced command body), keeping the same step."
)

REPORT_SYSTEM = (
    "You compile the final vulnerability report from a penetration-test run log. "
    "Reply with a JSON array only; one object per distinct vulnerability with "
    'the keys: "cve_number", "cvss_score", "risk_level", "protocol", "port", '
    '"vulnerability_name", "synopsis", "description", "solution", "hostname", '
    '"ip_address", "os", "reference_url", "vpr". Use empty strings for unknown '
    "fields; risk_level is one of Critical, High, Medium, Low, Info."
)


def build_update_prompt(summary_text: str, ptt_text: str, instruction: str = "") -> str:
    parts = []
    if instruction:
        parts.append(f"Operator instruction: {instruction}")
    parts.append("Summary of the latest results:")
    parts.append(summary_text)
    parts.append("Current task tree:")
    parts.append(f"```\n{ptt_text}\n```")
    parts.append(
        "Update the tree with the new findings: annotate the relevant nodes with "
        "'- ' finding bullets, adjust statuses, and add follow-up subtasks as "
        "needed. Reply with the complete revised tree in one fenced block."
    )
    return "\n\n".join(parts)


def build_select_prompt(ptt_text: str, hint: str = "") -> str:
    parts = [
        "Current task tree:",
        f"```\n{ptt_text}\n```",
    ]
    if hint:
        parts.append(f"Note: {hint}")
    parts.append(
        "Select the next best step. Pick an existing node that is TODO or "
        "IN-PROGRESS and state the single next action. End with the line "
        "'SELECTED: <node id> | STEP: <statement>'."
    )
    return "\n\n".join(parts)


def build_describe_prompt(step_statement: str) -> str:
    return (
        "Structure the selected step into its service, technique, and tool.\n"
        f"Step: {step_statement}"
    )


def build_generate_prompt(
    step_statement: str,
    node_id: str,
    retrieved_texts: list[str],
    profile_facts: str,
    targets: list[str],
    tool_names: list[str],
) -> str:
    parts = [
        f"Selected step (node {node_id}): {step_statement}",
        f"Scoped target(s): {', '.join(targets)}",
        f"Attack host facts:\n{profile_facts}",
        f"Available tools: {', '.join(tool_names)}",
    ]
    if retrieved_texts:
        excerpts = "\n---\n".join(retrieved_texts)
        parts.append(f"Reference excerpts:\n{excerpts}")
    parts.append("Generate the commands for this step.")
    return "\n\n".join(parts)


def build_extract_prompt(raw_commands: str, registry_lines: list[str]) -> str:
    return (
        "Registered tools (name: mode):\n"
        + "\n".join(registry_lines)
        + "\n\nGenerator output:\n"
        + raw_commands
        + "\n\nExtract the commands as a JSON array."
    )


def build_verify_prompt(step_statement: str, command_block: str, results_block: str) -> str:
    return (
        f"Step under test: {step_statement}\n\n"
        f"Commands that were run:\n{command_block}\n\n"
        f"Tool output:\n{results_block}\n\n"
        "Judge the tool output against the step's intent."
    )


def build_report_prompt(log_digest: str, targets: list[str]) -> str:
    return (
        f"Scoped target(s): {', '.join(targets)}\n\n"
        f"Run log digest:\n{log_digest}\n\n"
        "Produce the vulnerability rows as a JSON array."
    )
