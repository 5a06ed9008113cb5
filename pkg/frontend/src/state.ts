// Client session state: one reducer rule per server envelope type.
//
// Broadcast envelopes carry a per-room seq; the transcript is kept ordered
// and deduplicated by seq, and a detected gap flips needsBackfill so the
// socket layer can rejoin (the server replays the full broadcast log on
// rejoin). Unicast envelopes (room_created, room_full, feedback_delivered,
// error) carry no seq and update state directly.

import type { Envelope, FeedbackStats, ServerEventType } from "./protocol.js";
import { SERVER_EVENT_TYPES, isServerEventType } from "./protocol.js";
import { renderMarkdown, escapeHtml } from "./markdown.js";

export type Phase = "lobby" | "waiting" | "discussion" | "feedback";

export type ConnectionStatus =
  | "idle"
  | "connecting"
  | "open"
  | "reconnecting"
  | "closed";

export interface TranscriptItem {
  seq: number;
  kind: "roster" | "started" | "chat" | "moderator" | "reveal" | "notice";
  name?: string;
  text: string;
  /** Sanitized HTML; only set for moderator markdown and reveal cards. */
  html?: string;
  action?: string;
  questionIndex?: number;
}

export interface FeedbackView {
  text: string;
  html: string;
  stats: FeedbackStats;
}

export interface ErrorView {
  code: string;
  detail: string;
}

export class SessionState {
  connection: ConnectionStatus = "idle";
  phase: Phase = "lobby";
  roomId: string | null = null;
  myName: string | null = null;
  roster: string[] = [];
  capacity = 0;
  passageTitle: string | null = null;
  items: TranscriptItem[] = [];
  feedback: FeedbackView | null = null;
  roomFull = false;
  lastError: ErrorView | null = null;
  needsBackfill = false;

  private seen = new Set<number>();

  /** Apply one server envelope; unknown types are dropped with a log. */
  apply(envelope: Envelope): void {
    if (!isServerEventType(envelope.type)) {
      console.warn("dropping envelope of unknown type", envelope.type);
      return;
    }
    if (envelope.seq !== undefined) {
      if (this.seen.has(envelope.seq)) {
        return; // backfill overlap
      }
      const expected = this.seen.size === 0 ? 0 : Math.max(...this.seen) + 1;
      if (envelope.seq > expected) {
        this.needsBackfill = true;
      }
      this.seen.add(envelope.seq);
    }
    HANDLERS[envelope.type](this, envelope);
    this.items.sort((a, b) => a.seq - b.seq);
  }

  /** True when every received seq from 0 upward is present. */
  get gapFree(): boolean {
    return [...this.seen].every((seq) => seq < this.seen.size);
  }

  canSend(type: string): boolean {
    switch (type) {
      case "create_room":
      case "join_room":
        return this.phase === "lobby" && !this.roomFull;
      case "post_message":
      case "request_hint":
        return this.phase === "discussion";
      case "leave":
        return this.roomId !== null;
      default:
        return false;
    }
  }

  resetForRetry(): void {
    this.roomFull = false;
    this.lastError = null;
  }

  private push(item: TranscriptItem): void {
    this.items.push(item);
  }

  // Reducer rules, one per server event type (see HANDLERS below).

  onRoomCreated(envelope: Envelope): void {
    this.roomId = String(envelope.payload.room_id ?? "");
    this.phase = "waiting";
  }

  onJoined(envelope: Envelope): void {
    this.roster = Array.isArray(envelope.payload.roster)
      ? envelope.payload.roster.map(String)
      : [];
    this.capacity = Number(envelope.payload.capacity ?? this.roster.length);
    if (this.phase === "lobby") {
      this.roomId = envelope.room_id ?? this.roomId;
      this.phase = "waiting";
    }
    this.push({
      seq: envelope.seq ?? -1,
      kind: "roster",
      text: `In the room: ${this.roster.join(", ")}`,
    });
  }

  onRoomFull(_envelope: Envelope): void {
    this.roomFull = true;
    this.phase = "lobby";
    this.roomId = null;
  }

  onSessionStarted(envelope: Envelope): void {
    this.passageTitle = String(envelope.payload.passage_title ?? "");
    this.phase = "discussion";
    this.push({
      seq: envelope.seq ?? -1,
      kind: "started",
      text: `Discussion started: ${this.passageTitle}`,
    });
  }

  onChatBroadcast(envelope: Envelope): void {
    this.push({
      seq: envelope.seq ?? -1,
      kind: "chat",
      name: String(envelope.payload.name ?? ""),
      text: String(envelope.payload.text ?? ""),
    });
  }

  onModeratorMessage(envelope: Envelope): void {
    const text = String(envelope.payload.text_markdown ?? "");
    this.push({
      seq: envelope.seq ?? -1,
      kind: "moderator",
      name: "Moderator",
      text,
      html: renderMarkdown(text),
      action: String(envelope.payload.action ?? ""),
    });
  }

  onQuestionRevealed(envelope: Envelope): void {
    const index = Number(envelope.payload.index ?? 0);
    const answer = String(envelope.payload.answer ?? "");
    this.push({
      seq: envelope.seq ?? -1,
      kind: "reveal",
      text: answer,
      html: `<p class="reveal-label">Answer to question ${index + 1}</p><p>${escapeHtml(answer)}</p>`,
      questionIndex: index,
    });
  }

  onFeedbackDelivered(envelope: Envelope): void {
    const stats = (envelope.payload.stats ?? {}) as Record<string, unknown>;
    const text = String(envelope.payload.feedback_text ?? "");
    this.feedback = {
      text,
      html: renderMarkdown(text),
      stats: {
        message_count: Number(stats.message_count ?? 0),
        mean_message_tokens: Number(stats.mean_message_tokens ?? 0),
        prompted_count: Number(stats.prompted_count ?? 0),
      },
    };
    this.phase = "feedback";
  }

  onError(envelope: Envelope): void {
    this.lastError = {
      code: String(envelope.payload.code ?? "unknown"),
      detail: String(envelope.payload.detail ?? ""),
    };
    if (envelope.seq !== undefined) {
      this.push({
        seq: envelope.seq,
        kind: "notice",
        text: `Server notice: ${this.lastError.code}`,
      });
    }
  }
}

// Exactly one rendering rule per server envelope type; the protocol test
// checks this table against the vocabulary.
export const HANDLERS: Record<
  ServerEventType,
  (state: SessionState, envelope: Envelope) => void
> = {
  room_created: (s, e) => s.onRoomCreated(e),
  joined: (s, e) => s.onJoined(e),
  room_full: (s, e) => s.onRoomFull(e),
  session_started: (s, e) => s.onSessionStarted(e),
  chat_broadcast: (s, e) => s.onChatBroadcast(e),
  moderator_message: (s, e) => s.onModeratorMessage(e),
  question_revealed: (s, e) => s.onQuestionRevealed(e),
  feedback_delivered: (s, e) => s.onFeedbackDelivered(e),
  error: (s, e) => s.onError(e),
};

// Compile-time exhaustiveness: a missing key above is a type error.
const _exhaustive: readonly ServerEventType[] = SERVER_EVENT_TYPES;
void _exhaustive;
