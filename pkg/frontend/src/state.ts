// Console state reducer. The server is the sole source of truth: events
// fold into the view model, and any 409 on a decision refreshes the
// pending prompt from /api/state instead of guessing.

import type { ConnectionStatus, PendingPrompt, RunEvent, StateSnapshot } from './types.js';
import type { SseFrame } from './sse.js';

export interface TimelineEntry {
  seq: number | null;
  label: string;
  detail: string;
  warning?: string;
}

export interface ConsoleState {
  connection: ConnectionStatus;
  connectionDetail: string;
  lastSeq: number;
  phase: string | null;
  iteration: number;
  ptt: string;
  timeline: TimelineEntry[];
  toolOutput: string;
  pendingPrompt: PendingPrompt | null;
  reportReady: boolean;
  runDone: boolean;
  seqGap: boolean;
}

export function initialState(): ConsoleState {
  return {
    connection: 'connecting',
    connectionDetail: '',
    lastSeq: 0,
    phase: null,
    iteration: 0,
    ptt: '',
    timeline: [],
    toolOutput: '',
    pendingPrompt: null,
    reportReady: false,
    runDone: false,
    seqGap: false,
  };
}

function describe(event: RunEvent): string {
  const p = event.payload as Record<string, any>;
  switch (event.kind) {
    case 'phase_change':
      return `phase ${p.phase} (iteration ${p.iteration})`;
    case 'step_selected':
      return `step [${p.node_id}] ${p.statement}${p.replan ? ' (re-planned)' : ''}`;
    case 'repetition_prompt':
      return `repetition of iteration ${p.nearest_iteration} (distance ${Number(p.distance).toFixed(3)})`;
    case 'tool_started':
      return `${p.tool}: ${p.command}`;
    case 'verdict':
      return `verifier: ${p.outcome}`;
    case 'ptt_updated':
      return `task tree revision ${p.revision}`;
    case 'report_ready':
      return `report ready (${p.rows} rows)`;
    case 'run_done':
      return `run done: ${p.stop_reason ?? p.error ?? ''}`;
    default:
      return event.kind;
  }
}

/** Fold one SSE frame into the state. Malformed payloads render raw. */
export function applyFrame(state: ConsoleState, frame: SseFrame): ConsoleState {
  let event: RunEvent;
  try {
    event = JSON.parse(frame.data) as RunEvent;
    if (typeof event.seq !== 'number' || typeof event.kind !== 'string') {
      throw new Error('missing seq/kind');
    }
  } catch (err) {
    return {
      ...state,
      timeline: [
        ...state.timeline,
        { seq: null, label: 'raw', detail: frame.data, warning: `unparseable event: ${err}` },
      ],
    };
  }
  return applyEvent(state, event);
}

export function applyEvent(state: ConsoleState, event: RunEvent): ConsoleState {
  const next: ConsoleState = { ...state, timeline: [...state.timeline] };
  if (event.seq <= state.lastSeq) {
    return state; // duplicate replay, already folded
  }
  if (state.lastSeq > 0 && event.seq !== state.lastSeq + 1) {
    next.seqGap = true;
  }
  next.lastSeq = event.seq;
  const p = event.payload as Record<string, any>;
  if (event.kind !== 'tool_output_chunk') {
    next.timeline.push({ seq: event.seq, label: event.kind, detail: describe(event) });
  }
  switch (event.kind) {
    case 'phase_change':
      next.phase = String(p.phase);
      next.iteration = Number(p.iteration ?? state.iteration);
      if (p.phase !== 'await_operator') next.pendingPrompt = null;
      break;
    case 'repetition_prompt':
      next.pendingPrompt = {
        prompt_id: String(p.prompt_id),
        step_statement: String(p.step_statement ?? ''),
        nearest_iteration: (p.nearest_iteration as number | null) ?? null,
        distance: Number(p.distance ?? 0),
      };
      break;
    case 'step_selected':
    case 'run_done':
      next.pendingPrompt = null;
      break;
    case 'tool_output_chunk':
      next.toolOutput = state.toolOutput + String(p.text ?? '');
      break;
    case 'report_ready':
      next.reportReady = true;
      break;
  }
  if (event.kind === 'run_done') {
    next.runDone = true;
  }
  return next;
}

export function applyStatus(
  state: ConsoleState,
  status: ConnectionStatus,
  detail = '',
): ConsoleState {
  return { ...state, connection: status, connectionDetail: detail };
}

/** Resync the prompt (and run flags) from a /api/state snapshot after a 409. */
export function applySnapshot(state: ConsoleState, snapshot: StateSnapshot): ConsoleState {
  return {
    ...state,
    phase: snapshot.phase,
    iteration: snapshot.iteration,
    ptt: snapshot.ptt || state.ptt,
    pendingPrompt: snapshot.pending_prompt,
    reportReady: snapshot.report_ready,
    runDone: snapshot.phase === 'done',
  };
}

/** The decision controls are enabled only while a prompt is pending. */
export function decisionControlsEnabled(state: ConsoleState): boolean {
  return state.pendingPrompt !== null && !state.runDone;
}
