// Wire types mirrored from the run service API.

export type EventKind =
  | 'phase_change'
  | 'ptt_updated'
  | 'step_selected'
  | 'repetition_prompt'
  | 'tool_started'
  | 'tool_output_chunk'
  | 'verdict'
  | 'report_ready'
  | 'run_done';

export interface RunEvent {
  seq: number;
  kind: EventKind;
  payload: Record<string, unknown>;
  ts: number;
}

export interface PendingPrompt {
  prompt_id: string;
  step_statement: string;
  nearest_iteration: number | null;
  distance: number;
}

export interface StateSnapshot {
  phase: string | null;
  iteration: number;
  targets: string[];
  ptt: string;
  ptt_revision: number;
  stop_reason: string | null;
  report_ready: boolean;
  error: string | null;
  pending_prompt: PendingPrompt | null;
}

export type DecisionKind = 'continue' | 'exit' | 'interactive' | 'general';

export type ConnectionStatus = 'connecting' | 'open' | 'reconnecting' | 'closed';
