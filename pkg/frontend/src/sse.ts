// Server-sent-events client over fetch streams.
//
// Reconnects from the last seen sequence number so a dropped connection
// replays every missed event and never leaves a gap. Built on fetch rather
// than EventSource so the same code runs in the browser and under node
// test runners, and so the resume point is explicit.

export interface SseFrame {
  id: string | null;
  event: string | null;
  data: string;
}

export class SseParser {
  private buffer = '';

  push(chunk: string): SseFrame[] {
    this.buffer += chunk.replace(/\r\n/g, '\n');
    const frames: SseFrame[] = [];
    let sep: number;
    while ((sep = this.buffer.indexOf('\n\n')) >= 0) {
      const block = this.buffer.slice(0, sep);
      this.buffer = this.buffer.slice(sep + 2);
      const frame: SseFrame = { id: null, event: null, data: '' };
      const dataLines: string[] = [];
      for (const line of block.split('\n')) {
        if (line.startsWith(':') || line === '') continue; // comment / keepalive
        const colon = line.indexOf(':');
        const field = colon < 0 ? line : line.slice(0, colon);
        let value = colon < 0 ? '' : line.slice(colon + 1);
        if (value.startsWith(' ')) value = value.slice(1);
        if (field === 'id') frame.id = value;
        else if (field === 'event') frame.event = value;
        else if (field === 'data') dataLines.push(value);
      }
      frame.data = dataLines.join('\n');
      if (frame.id !== null || frame.event !== null || frame.data !== '') {
        frames.push(frame);
      }
    }
    return frames;
  }
}

export interface StreamCallbacks {
  onFrame: (frame: SseFrame) => void;
  onStatus?: (status: 'connecting' | 'open' | 'reconnecting' | 'closed', detail?: string) => void;
  /** Called before each (re)connect; return the seq to resume from. */
  resumeFrom: () => number;
}

export interface StreamOptions {
  retryDelayMs?: number;
  maxRetries?: number; // unlimited when undefined
  fetchImpl?: typeof fetch;
}

export class EventStreamClient {
  private stopped = false;
  private retries = 0;

  constructor(
    private readonly baseUrl: string,
    private readonly callbacks: StreamCallbacks,
    private readonly options: StreamOptions = {},
  ) {}

  stop(): void {
    this.stopped = true;
  }

  /** Runs until the stream ends (run_done closes it server-side) or stop(). */
  async run(): Promise<void> {
    const fetchImpl = this.options.fetchImpl ?? fetch;
    const retryDelay = this.options.retryDelayMs ?? 1000;
    while (!this.stopped) {
      const from = this.callbacks.resumeFrom();
      this.callbacks.onStatus?.(this.retries > 0 ? 'reconnecting' : 'connecting');
      let response: Response;
      try {
        response = await fetchImpl(`${this.baseUrl}/api/events?from=${from}`, {
          headers: { Accept: 'text/event-stream' },
        });
      } catch (err) {
        if (!(await this.backoff(retryDelay, String(err)))) return;
        continue;
      }
      if (!response.ok || !response.body) {
        if (!(await this.backoff(retryDelay, `HTTP ${response.status}`))) return;
        continue;
      }
      this.callbacks.onStatus?.('open');
      this.retries = 0;
      const reader = response.body.getReader();
      const decoder = new TextDecoder();
      const parser = new SseParser();
      try {
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
            this.callbacks.onFrame(frame);
          }
          if (this.stopped) break;
        }
      } catch (err) {
        if (!(await this.backoff(retryDelay, String(err)))) return;
        continue;
      }
      if (this.stopped) {
        this.callbacks.onStatus?.('closed');
        return;
      }
      // the server only closes after run_done; the frame handler calls
      // stop() when it sees it. Any other close is a drop: reconnect and
      // replay from the last seen sequence.
      if (!(await this.backoff(retryDelay, 'stream closed'))) return;
    }
    this.callbacks.onStatus?.('closed');
  }

  private async backoff(delayMs: number, detail: string): Promise<boolean> {
    this.retries += 1;
    const max = this.options.maxRetries;
    if (this.stopped || (max !== undefined && this.retries > max)) {
      this.callbacks.onStatus?.('closed', detail);
      return false;
    }
    this.callbacks.onStatus?.('reconnecting', detail);
    await new Promise((resolve) => setTimeout(resolve, delayMs));
    return true;
  }
}
