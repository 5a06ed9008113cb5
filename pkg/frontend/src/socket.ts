// WebSocket connection with reconnect and rejoin-driven backfill.
//
// The WebSocket constructor is injectable so tests can run under node with
// the `ws` package. On an unexpected close the client reconnects with
// capped backoff and, if it was in a room, re-sends join_room; the server
// replies with the full broadcast log, which the state layer deduplicates
// by seq.

import type { ClientEventType, Envelope } from "./protocol.js";
import { encodeClientEvent, parseEnvelope } from "./protocol.js";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface GatewayClientHooks {
  onEnvelope(envelope: Envelope): void;
  onStatus(status: "connecting" | "open" | "reconnecting" | "closed"): void;
}

const MAX_BACKOFF_MS = 5000;

export class GatewayClient {
  private ws: WebSocketLike | null = null;
  private closedByUs = false;
  private backoffMs = 250;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  /** Set while joined; used to rejoin (and trigger backfill) on reconnect. */
  rejoin: { roomId: string; displayName: string } | null = null;

  constructor(
    private url: string,
    private hooks: GatewayClientHooks,
    private factory: WebSocketFactory = (u) =>
      new WebSocket(u) as unknown as WebSocketLike,
  ) {}

  connect(): void {
    this.closedByUs = false;
    this.hooks.onStatus("connecting");
    this.open();
  }

  private open(): void {
    const ws = this.factory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = 250;
      this.hooks.onStatus("open");
      if (this.rejoin !== null) {
        this.send("join_room", {
          room_id: this.rejoin.roomId,
          display_name: this.rejoin.displayName,
        });
      }
    };
    ws.onmessage = (event) => {
      const envelope = parseEnvelope(String(event.data));
      if (envelope === null) {
        console.warn("dropping malformed frame");
        return;
      }
      this.hooks.onEnvelope(envelope);
    };
    ws.onclose = () => {
      if (this.closedByUs) {
        this.hooks.onStatus("closed");
        return;
      }
      this.hooks.onStatus("reconnecting");
      this.reconnectTimer = setTimeout(() => this.open(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, MAX_BACKOFF_MS);
    };
    ws.onerror = () => {
      // onclose follows; nothing to do here
    };
  }

  send(type: ClientEventType, payload: Record<string, unknown> = {}): void {
    if (this.ws === null) {
      throw new Error("not connected");
    }
    this.ws.send(encodeClientEvent(type, payload));
  }

  /** Drop and re-open the connection to force a backfill via rejoin. */
  forceRejoin(): void {
    if (this.ws !== null) {
      this.ws.close();
    }
  }

  close(): void {
    this.closedByUs = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
    }
    if (this.ws !== null) {
      this.ws.close();
    }
  }
}
