// Envelope vocabulary for the discussion server's wire protocol.
// One JSON object per WebSocket text frame; unknown extra fields are
// ignored on receipt, so parsing is intentionally lenient about extras
// and strict about shape.

export const SERVER_EVENT_TYPES = [
  "room_created",
  "joined",
  "room_full",
  "session_started",
  "chat_broadcast",
  "moderator_message",
  "question_revealed",
  "feedback_delivered",
  "error",
] as const;

export type ServerEventType = (typeof SERVER_EVENT_TYPES)[number];

export const CLIENT_EVENT_TYPES = [
  "create_room",
  "join_room",
  "post_message",
  "request_hint",
  "leave",
] as const;

export type ClientEventType = (typeof CLIENT_EVENT_TYPES)[number];

export interface Envelope {
  type: string;
  room_id?: string;
  sender?: string;
  payload: Record<string, unknown>;
  seq?: number;
  ts?: number;
}

export interface FeedbackStats {
  message_count: number;
  mean_message_tokens: number;
  prompted_count: number;
}

/** Parse a frame; null means malformed (caller drops it and logs). */
export function parseEnvelope(raw: string): Envelope | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    return null;
  }
  const record = data as Record<string, unknown>;
  if (typeof record.type !== "string" || record.type.length === 0) {
    return null;
  }
  const payload =
    typeof record.payload === "object" &&
    record.payload !== null &&
    !Array.isArray(record.payload)
      ? (record.payload as Record<string, unknown>)
      : {};
  return {
    type: record.type,
    room_id: typeof record.room_id === "string" ? record.room_id : undefined,
    sender: typeof record.sender === "string" ? record.sender : undefined,
    payload,
    seq: typeof record.seq === "number" ? record.seq : undefined,
    ts: typeof record.ts === "number" ? record.ts : undefined,
  };
}

export function encodeClientEvent(
  type: ClientEventType,
  payload: Record<string, unknown> = {},
): string {
  return JSON.stringify({ type, payload });
}

export function isServerEventType(type: string): type is ServerEventType {
  return (SERVER_EVENT_TYPES as readonly string[]).includes(type);
}
