// Browser wiring: connect the event stream, keep the view in sync, and
// expose exactly two write paths (decision, feedback). Everything else is
// read-only; the console never originates commands.

import { ApiClient, ApiError } from './api.js';
import { countFindings, countNodes, parsePtt, renderAscii } from './ptt.js';
import { EventStreamClient } from './sse.js';
import {
  applyFrame,
  applySnapshot,
  applyStatus,
  decisionControlsEnabled,
  initialState,
  type ConsoleState,
} from './state.js';
import type { DecisionKind } from './types.js';

const baseUrl = (window as any).PENTAGENT_BASE_URL ?? '';
const api = new ApiClient(baseUrl);
let state: ConsoleState = initialState();

const el = (id: string) => document.getElementById(id)!;

function render(): void {
  el('connection').textContent = `${state.connection}${state.connectionDetail ? ` (${state.connectionDetail})` : ''}`;
  el('connection').className = `banner ${state.connection}`;
  el('phase').textContent = state.phase
    ? `phase: ${state.phase} | iteration ${state.iteration} | last event #${state.lastSeq}` +
      (state.seqGap ? ' | WARNING: sequence gap detected' : '')
    : 'waiting for the run to start';

  const roots = parsePtt(state.ptt);
  el('ptt').textContent = state.ptt ? renderAscii(roots) : '(no task tree yet)';
  el('ptt-meta').textContent = state.ptt
    ? `${countNodes(roots)} nodes, ${countFindings(roots)} findings`
    : '';

  const timeline = el('timeline');
  timeline.innerHTML = '';
  for (const entry of state.timeline.slice(-200)) {
    const li = document.createElement('li');
    li.textContent = `#${entry.seq ?? '?'} ${entry.label}: ${entry.detail}`;
    if (entry.warning) {
      li.className = 'warning';
      li.title = entry.warning;
    }
    timeline.appendChild(li);
  }

  el('tool-output').textContent = state.toolOutput.slice(-20_000);

  const prompt = state.pendingPrompt;
  el('prompt-panel').style.display = prompt ? 'block' : 'none';
  if (prompt) {
    el('prompt-text').textContent =
      `Repeated step: ${prompt.step_statement} ` +
      `(distance ${prompt.distance.toFixed(3)} to iteration ${prompt.nearest_iteration ?? '-'})`;
  }
  const enabled = decisionControlsEnabled(state);
  for (const id of ['btn-continue', 'btn-exit', 'btn-interactive', 'btn-general']) {
    (el(id) as HTMLButtonElement).disabled = !enabled;
  }

  const report = el('report-link') as HTMLAnchorElement;
  report.style.display = state.reportReady ? 'inline' : 'none';
  report.href = api.reportUrl();
}

function setState(next: ConsoleState): void {
  state = next;
  render();
}

async function refreshSnapshot(): Promise<void> {
  try {
    setState(applySnapshot(state, await api.getState()));
  } catch (err) {
    setState(applyStatus(state, state.connection, `state refresh failed: ${err}`));
  }
}

async function submitDecision(kind: DecisionKind): Promise<void> {
  const prompt = state.pendingPrompt;
  if (!prompt) return;
  let payload = '';
  if (kind === 'interactive' || kind === 'general') {
    payload = (el('payload') as HTMLTextAreaElement).value.trim();
    if (!payload) {
      el('prompt-error').textContent = `${kind} needs text in the box below`;
      return;
    }
  }
  el('prompt-error').textContent = '';
  try {
    await api.submitDecision(prompt.prompt_id, kind, payload);
    (el('payload') as HTMLTextAreaElement).value = '';
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // someone else answered first: resync from the source of truth
      await refreshSnapshot();
      el('prompt-error').textContent = 'prompt was already answered; view refreshed';
    } else {
      el('prompt-error').textContent = String(err);
    }
  }
}

function wireControls(): void {
  el('btn-continue').addEventListener('click', () => void submitDecision('continue'));
  el('btn-exit').addEventListener('click', () => void submitDecision('exit'));
  el('btn-interactive').addEventListener('click', () => void submitDecision('interactive'));
  el('btn-general').addEventListener('click', () => void submitDecision('general'));
}

async function main(): Promise<void> {
  wireControls();
  render();
  await refreshSnapshot();
  const stream = new EventStreamClient(baseUrl, {
    resumeFrom: () => state.lastSeq,
    onStatus: (status, detail) => setState(applyStatus(state, status, detail)),
    onFrame: (frame) => {
      const before = state.lastSeq;
      setState(applyFrame(state, frame));
      if (state.runDone) stream.stop(); // the server closes after run_done
      const parsed = state.timeline[state.timeline.length - 1];
      // the tree text lives in /api/state; refresh it when a revision lands
      if (state.lastSeq !== before && parsed && parsed.label === 'ptt_updated') {
        void refreshSnapshot();
      }
    },
  });
  await stream.run();
  await refreshSnapshot(); // final tree + report state after run_done
}

void main();
