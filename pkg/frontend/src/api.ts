// REST client for the run service. The console is read-only except for
// the two operator POSTs.

import type { DecisionKind, StateSnapshot } from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  reportUrl(): string {
    return `${this.baseUrl}/api/report`;
  }

  async getState(): Promise<StateSnapshot> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/state`);
    if (!resp.ok) throw new ApiError(resp.status, `state fetch failed: ${resp.status}`);
    return (await resp.json()) as StateSnapshot;
  }

  async submitDecision(promptId: string, kind: DecisionKind, payload = ''): Promise<void> {
    if ((kind === 'interactive' || kind === 'general') && payload.trim() === '') {
      throw new ApiError(0, `${kind} decision requires a non-empty payload`);
    }
    const resp = await this.fetchImpl(`${this.baseUrl}/api/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ prompt_id: promptId, kind, payload }),
    });
    if (!resp.ok) throw new ApiError(resp.status, await safeDetail(resp));
  }

  async submitFeedback(text: string): Promise<void> {
    if (text.trim() === '') throw new ApiError(0, 'feedback requires text');
    const resp = await this.fetchImpl(`${this.baseUrl}/api/feedback`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ text }),
    });
    if (!resp.ok) throw new ApiError(resp.status, await safeDetail(resp));
  }

  async fetchReport(): Promise<string> {
    const resp = await this.fetchImpl(this.reportUrl());
    if (!resp.ok) throw new ApiError(resp.status, 'report not ready');
    return await resp.text();
  }
}

async function safeDetail(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: string };
    return body.detail ?? `HTTP ${resp.status}`;
  } catch {
    return `HTTP ${resp.status}`;
  }
}
