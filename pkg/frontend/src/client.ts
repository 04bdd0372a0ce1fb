import type {
  Ack, Command, Delta, GatewayState, Sections, ServerDoc, Snapshot,
} from './types.js';

const RETRY_MIN_MS = 500;
const RETRY_MAX_MS = 8000;

// Narrow view of a WebSocket so tests can substitute a fake.
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export function fromSnapshot(doc: Snapshot): GatewayState {
  const { type: _type, seq, ...sections } = doc;
  return { seq, sections: sections as Sections };
}

// Deltas replace whole top-level sections; the server guarantees that
// replaying them over any snapshot reproduces every later snapshot, so the
// client never merges inside a section.
export function applyDelta(state: GatewayState, delta: Delta): GatewayState {
  return { seq: delta.seq, sections: { ...state.sections, ...delta.changed } };
}

interface Pending {
  resolve: (ack: Ack) => void;
  reject: (err: Error) => void;
}

export class GatewayClient {
  state: GatewayState | null = null;
  connected = false;

  private url = '';
  private sock: SocketLike | null = null;
  private makeSocket: SocketFactory;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private stateListeners: Array<(state: GatewayState) => void> = [];
  private statusListeners: Array<(connected: boolean) => void> = [];
  private closed = true;
  private retryMs = RETRY_MIN_MS;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(makeSocket?: SocketFactory) {
    this.makeSocket =
      makeSocket ?? ((url) => new WebSocket(url) as unknown as SocketLike);
  }

  onState(fn: (state: GatewayState) => void): void {
    this.stateListeners.push(fn);
  }

  onStatus(fn: (connected: boolean) => void): void {
    this.statusListeners.push(fn);
  }

  connect(url: string): void {
    this.close();
    this.url = url;
    this.closed = false;
    this.retryMs = RETRY_MIN_MS;
    this.open();
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    const sock = this.sock;
    this.sock = null;
    sock?.close();
    this.drop();
  }

  send(cmd: string, args: Record<string, unknown> = {}): Promise<Ack> {
    const sock = this.sock;
    if (sock === null || !this.connected) {
      return Promise.reject(new Error('not connected'));
    }
    const id = this.nextId++;
    const doc: Command = { id, cmd, args };
    const ack = new Promise<Ack>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
    });
    sock.send(JSON.stringify(doc));
    return ack;
  }

  private open(): void {
    const sock = this.makeSocket(this.url);
    this.sock = sock;
    sock.onopen = () => {
      if (this.sock !== sock) return;
      this.connected = true;
      this.retryMs = RETRY_MIN_MS;
      for (const fn of this.statusListeners) fn(true);
    };
    sock.onmessage = (ev) => {
      if (this.sock !== sock) return;
      let doc: ServerDoc;
      try {
        doc = JSON.parse(ev.data);
      } catch {
        return;
      }
      this.handle(doc);
    };
    sock.onclose = () => {
      if (this.sock !== sock) return;
      this.sock = null;
      this.drop();
      this.retryTimer = setTimeout(() => {
        this.retryTimer = null;
        this.open();
      }, this.retryMs);
      this.retryMs = Math.min(this.retryMs * 2, RETRY_MAX_MS);
    };
    sock.onerror = () => {
      // onclose follows and owns the retry
    };
  }

  private drop(): void {
    const wasConnected = this.connected;
    this.connected = false;
    for (const p of this.pending.values()) p.reject(new Error('connection lost'));
    this.pending.clear();
    if (wasConnected) {
      for (const fn of this.statusListeners) fn(false);
    }
  }

  private handle(doc: ServerDoc): void {
    if (doc.type === 'snapshot') {
      this.state = fromSnapshot(doc);
      this.notify();
    } else if (doc.type === 'delta') {
      if (this.state === null) return;
      if (doc.seq <= this.state.seq) return; // already inside the snapshot
      if (doc.seq !== this.state.seq + 1) {
        // Lost a frame; a reconnect replays snapshot + stream.
        this.sock?.close();
        return;
      }
      this.state = applyDelta(this.state, doc);
      this.notify();
    } else if (doc.type === 'ack') {
      if (doc.id === null || doc.id === undefined) return;
      const p = this.pending.get(doc.id);
      if (p !== undefined) {
        this.pending.delete(doc.id);
        p.resolve(doc);
      }
    }
  }

  private notify(): void {
    const state = this.state;
    if (state === null) return;
    for (const fn of this.stateListeners) fn(state);
  }
}

// Serializes rapid-fire commands (drags, slider moves): at most one in
// flight, only the newest waiting; intermediates are dropped on purpose.
export class CommandGate {
  private inflight = false;
  private queued: [string, Record<string, unknown>] | null = null;

  constructor(
    private client: GatewayClient,
    private onAck?: (ack: Ack) => void,
  ) {}

  send(cmd: string, args: Record<string, unknown>): void {
    if (this.inflight) {
      this.queued = [cmd, args];
      return;
    }
    this.inflight = true;
    this.client
      .send(cmd, args)
      .then((ack) => this.onAck?.(ack))
      .catch(() => {})
      .then(() => {
        this.inflight = false;
        const next = this.queued;
        this.queued = null;
        if (next !== null) this.send(next[0], next[1]);
      });
  }
}
