"""Iterative pentest orchestration with scope-guarded tool execution.

The pipeline summarizes tool output, maintains a findings-annotated task
tree, detects strategy loops by embedding similarity, generates commands
grounded in a retrieval index, executes static and interactive CLI tools,
verifies results with bounded retries, and emits a structured run log plus
a CSV vulnerability report. Real tools only ever run against explicitly
scoped targets; a simulation harness covers all testing.
"""

__version__ = "0.1.0"
