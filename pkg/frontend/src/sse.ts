import { FrameEvent, SessionInfo, SteerAck } from './types.js';

export interface SseMessage {
  event: string;
  data: string;
}

// Incremental parser for a text/event-stream body. Handles chunk
// boundaries falling mid-line, CRLF endings, comment keepalives and
// multi-line data fields. Cancels the reader when the consumer stops
// iterating so the underlying HTTP stream is closed.
export async function* sseMessages(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<SseMessage> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffered = '';
  let eventName = '';
  let dataLines: string[] = [];
  try {
    while (true) {
      const { done, value } = await reader.read();
      if (done) break;
      buffered += decoder.decode(value, { stream: true });
      let nl: number;
      while ((nl = buffered.indexOf('\n')) >= 0) {
        let line = buffered.slice(0, nl);
        buffered = buffered.slice(nl + 1);
        if (line.endsWith('\r')) line = line.slice(0, -1);
        if (line === '') {
          if (dataLines.length) {
            yield { event: eventName || 'message', data: dataLines.join('\n') };
          }
          eventName = '';
          dataLines = [];
        } else if (line.startsWith(':')) {
          continue; // comment / keepalive
        } else {
          const colon = line.indexOf(':');
          const field = colon < 0 ? line : line.slice(0, colon);
          let value = colon < 0 ? '' : line.slice(colon + 1);
          if (value.startsWith(' ')) value = value.slice(1);
          if (field === 'event') eventName = value;
          else if (field === 'data') dataLines.push(value);
          // id and retry fields are not used by this service
        }
      }
    }
  } finally {
    try {
      await reader.cancel();
    } catch {
      // stream already errored, nothing to release
    }
  }
}

export type ClientState = 'connecting' | 'live' | 'reconnecting' | 'closed';

export interface ClientHooks {
  onFrame?: (event: FrameEvent) => void;
  onState?: (state: ClientState, detail: string) => void;
  onSession?: (session: SessionInfo) => void;
}

export interface ClientOptions {
  condition?: number;
  seed?: number;
  fetchFn?: typeof fetch;
  backoffMs?: number[];
  sleepFn?: (ms: number) => Promise<void>;
}

const BACKOFF_MS = [500, 1000, 2000, 4000, 8000];

// Owns one live stream against the service: creates a session via
// POST /streams, consumes the SSE frame channel and reconnects with
// exponential backoff when the connection drops. Every reconnect is a
// fresh server-side session whose indices restart at 1, so incoming
// indices are rebased by the last index seen; the indices handed to
// onFrame never decrease across reconnects.
export class StreamClient {
  session: SessionInfo | null = null;
  state: ClientState = 'closed';
  condition: number;

  private stopFlag = false;
  private attempt = 0;
  private frameBase = 0;
  private lastIndex = 0;
  private lastDetail = '';
  private abort: AbortController | null = null;
  private wakeStop: (() => void) | null = null;
  private readonly fetchFn: typeof fetch;
  private readonly backoff: number[];
  private readonly sleepFn: (ms: number) => Promise<void>;

  constructor(
    readonly base: string,
    private hooks: ClientHooks = {},
    private opts: ClientOptions = {},
  ) {
    this.condition = opts.condition ?? 0;
    this.fetchFn = opts.fetchFn ?? fetch.bind(globalThis);
    this.backoff = opts.backoffMs ?? BACKOFF_MS;
    this.sleepFn = opts.sleepFn ?? ((ms) => new Promise((r) => setTimeout(r, ms)));
  }

  // Runs until stop(); callers normally fire and forget.
  async start(): Promise<void> {
    this.stopFlag = false;
    const stopped = new Promise<void>((r) => (this.wakeStop = r));
    while (!this.stopFlag) {
      this.setState(this.attempt === 0 ? 'connecting' : 'reconnecting',
        this.attempt === 0 ? '' : `attempt ${this.attempt}`);
      try {
        const session = await this.createSession();
        this.session = session;
        this.frameBase = this.lastIndex;
        this.hooks.onSession?.(session);
        await this.consume(session.id);
      } catch {
        // fall through to backoff; stopFlag aborts land here too
      }
      if (this.stopFlag) break;
      const wait = this.backoff[Math.min(this.attempt, this.backoff.length - 1)];
      this.attempt += 1;
      this.setState('reconnecting', `retrying in ${wait} ms`);
      await Promise.race([this.sleepFn(wait), stopped]);
    }
    this.setState('closed', '');
  }

  stop(): void {
    this.stopFlag = true;
    this.abort?.abort();
    this.wakeStop?.();
  }

  async steer(label: number): Promise<SteerAck> {
    if (!this.session) throw new Error('not connected');
    const res = await this.fetchFn(`${this.base}/streams/${this.session.id}/condition`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ label }),
    });
    if (!res.ok) {
      let detail = `steer failed (${res.status})`;
      try {
        const body = await res.json();
        if (typeof body.detail === 'string') detail = body.detail;
      } catch {
        // non-JSON error body, keep the status line
      }
      throw new Error(detail);
    }
    this.condition = label;
    return (await res.json()) as SteerAck;
  }

  private async createSession(): Promise<SessionInfo> {
    const body: Record<string, number> = { condition: this.condition };
    if (this.opts.seed !== undefined) body.seed = this.opts.seed;
    const res = await this.fetchFn(`${this.base}/streams`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(`create failed (${res.status})`);
    return (await res.json()) as SessionInfo;
  }

  private async consume(id: string): Promise<void> {
    this.abort = new AbortController();
    const res = await this.fetchFn(`${this.base}/streams/${id}/events`, {
      signal: this.abort.signal,
    });
    if (!res.ok || !res.body) throw new Error(`event stream failed (${res.status})`);
    for await (const msg of sseMessages(res.body)) {
      if (this.stopFlag) break;
      if (msg.event !== 'frame') continue;
      const frame = JSON.parse(msg.data) as FrameEvent;
      frame.frame_index += this.frameBase;
      this.attempt = 0;
      this.setState('live', '');
      if (frame.frame_index > this.lastIndex) this.lastIndex = frame.frame_index;
      this.hooks.onFrame?.(frame);
    }
  }

  private setState(state: ClientState, detail: string): void {
    if (state === this.state && detail === this.lastDetail) return;
    this.state = state;
    this.lastDetail = detail;
    this.hooks.onState?.(state, detail);
  }
}
