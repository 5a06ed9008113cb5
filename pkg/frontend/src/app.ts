// DOM application: lobby, waiting room, live chat, feedback panel.
//
// The app owns one SessionState and re-renders the dynamic regions from it
// after every applied envelope. Student messages render as plain text;
// moderator messages render through the allowlist markdown renderer;
// reveals get a distinct answer card.

import type { Envelope } from "./protocol.js";
import { GatewayClient, type WebSocketFactory } from "./socket.js";
import { SessionState } from "./state.js";

export interface AppOptions {
  serverUrl?: string;
  factory?: WebSocketFactory;
}

export class App {
  readonly state = new SessionState();
  client: GatewayClient | null = null;
  private root: HTMLElement;
  private pendingName = "";

  constructor(
    root: HTMLElement,
    private options: AppOptions = {},
  ) {
    this.root = root;
    this.root.innerHTML = TEMPLATE;
    this.bind();
    this.render();
  }

  private element<T extends HTMLElement>(selector: string): T {
    const found = this.root.querySelector<T>(selector);
    if (found === null) {
      throw new Error(`missing element ${selector}`);
    }
    return found;
  }

  private bind(): void {
    this.element<HTMLButtonElement>("#create-btn").addEventListener(
      "click",
      () => this.createRoom(),
    );
    this.element<HTMLButtonElement>("#join-btn").addEventListener("click", () =>
      this.joinRoom(),
    );
    this.element<HTMLButtonElement>("#retry-btn").addEventListener(
      "click",
      () => {
        this.state.resetForRetry();
        this.render();
      },
    );
    this.element<HTMLButtonElement>("#send-btn").addEventListener("click", () =>
      this.sendMessage(),
    );
    this.element<HTMLInputElement>("#message-input").addEventListener(
      "keydown",
      (event) => {
        if ((event as KeyboardEvent).key === "Enter") {
          this.sendMessage();
        }
      },
    );
    this.element<HTMLButtonElement>("#hint-btn").addEventListener("click", () => {
      if (this.state.canSend("request_hint")) {
        this.client?.send("request_hint", {});
      }
    });
  }

  private ensureClient(): GatewayClient {
    if (this.client === null) {
      const url =
        this.options.serverUrl ??
        this.element<HTMLInputElement>("#server-input").value.trim();
      this.client = new GatewayClient(
        url,
        {
          onEnvelope: (envelope) => this.handleEnvelope(envelope),
          onStatus: (status) => {
            this.state.connection = status;
            this.render();
          },
        },
        this.options.factory,
      );
      this.client.connect();
    }
    return this.client;
  }

  createRoom(): void {
    const name = this.element<HTMLInputElement>("#name-input").value.trim();
    if (!name || !this.state.canSend("create_room")) {
      return;
    }
    this.pendingName = name;
    this.state.myName = name;
    const client = this.ensureClient();
    whenOpen(client, () => client.send("create_room", { display_name: name }));
  }

  joinRoom(): void {
    const name = this.element<HTMLInputElement>("#name-input").value.trim();
    const roomId = this.element<HTMLInputElement>("#room-input").value
      .trim()
      .toUpperCase();
    if (!name || !roomId || !this.state.canSend("join_room")) {
      return;
    }
    this.pendingName = name;
    this.state.myName = name;
    const client = this.ensureClient();
    whenOpen(client, () =>
      client.send("join_room", { room_id: roomId, display_name: name }),
    );
  }

  sendMessage(): void {
    const input = this.element<HTMLInputElement>("#message-input");
    const text = input.value.trim();
    if (!text || !this.state.canSend("post_message")) {
      return;
    }
    this.client?.send("post_message", { text });
    input.value = "";
  }

  handleEnvelope(envelope: Envelope): void {
    this.state.apply(envelope);
    if (this.client !== null && this.state.roomId !== null) {
      this.client.rejoin = {
        roomId: this.state.roomId,
        displayName: this.pendingName,
      };
    }
    if (this.state.needsBackfill) {
      this.state.needsBackfill = false;
      this.client?.forceRejoin();
    }
    this.render();
  }

  render(): void {
    const { state } = this;
    this.toggle("#lobby-view", state.phase === "lobby");
    this.toggle("#waiting-view", state.phase === "waiting");
    this.toggle(
      "#session-view",
      state.phase === "discussion" || state.phase === "feedback",
    );
    this.toggle("#room-full-notice", state.roomFull);
    this.toggle(
      "#connection-banner",
      state.connection === "reconnecting" || state.connection === "closed",
    );

    if (state.phase === "waiting") {
      this.element("#meeting-id").textContent = state.roomId ?? "";
      this.element("#waiting-roster").textContent =
        `${state.roster.join(", ")} (${state.roster.length}/${state.capacity})`;
    }

    if (state.phase === "discussion" || state.phase === "feedback") {
      this.element("#passage-title").textContent = state.passageTitle ?? "";
      this.renderTranscript();
      const inDiscussion = state.phase === "discussion";
      this.element<HTMLInputElement>("#message-input").disabled = !inDiscussion;
      this.element<HTMLButtonElement>("#send-btn").disabled = !inDiscussion;
      this.element<HTMLButtonElement>("#hint-btn").disabled = !inDiscussion;
      this.toggle("#composer", inDiscussion);
      this.toggle("#feedback-panel", state.phase === "feedback");
      if (state.feedback !== null) {
        this.element("#feedback-text").innerHTML = state.feedback.html;
        const stats = state.feedback.stats;
        this.element("#feedback-stats").textContent =
          `messages: ${stats.message_count} | avg tokens: ` +
          `${stats.mean_message_tokens.toFixed(1)} | prompts received: ` +
          `${stats.prompted_count}`;
      }
    }

    const error = state.lastError;
    this.element("#error-line").textContent =
      error === null ? "" : `${error.code}: ${error.detail}`;
  }

  private renderTranscript(): void {
    const list = this.element("#transcript");
    list.innerHTML = "";
    for (const item of this.state.items) {
      const row = list.ownerDocument.createElement("div");
      row.className = `item item-${item.kind}`;
      if (item.kind === "chat") {
        const who = list.ownerDocument.createElement("span");
        who.className = "who";
        who.textContent = `${item.name}: `;
        const body = list.ownerDocument.createElement("span");
        body.textContent = item.text; // plain text: student input stays inert
        row.append(who, body);
      } else if (item.kind === "moderator") {
        const who = list.ownerDocument.createElement("span");
        who.className = "who moderator";
        who.textContent = "Moderator";
        const body = list.ownerDocument.createElement("div");
        body.className = "markdown";
        body.innerHTML = item.html ?? "";
        row.append(who, body);
      } else if (item.kind === "reveal") {
        row.className += " answer-card";
        row.innerHTML = item.html ?? "";
      } else {
        row.textContent = item.text;
      }
      list.appendChild(row);
    }
    list.scrollTop = list.scrollHeight;
  }

  private toggle(selector: string, visible: boolean): void {
    this.element(selector).classList.toggle("hidden", !visible);
  }
}

function whenOpen(client: GatewayClient, action: () => void): void {
  // The first lobby action may race the socket open; try now, else shortly.
  try {
    action();
  } catch {
    setTimeout(() => whenOpen(client, action), 50);
  }
}

export const TEMPLATE = `
<div id="connection-banner" class="banner hidden">
  Connection lost, reconnecting. The transcript will be restored.
</div>
<div id="error-line" class="error-line"></div>

<section id="lobby-view">
  <h1>Reading Circle</h1>
  <label>Server <input id="server-input" value="ws://127.0.0.1:8765"></label>
  <label>Your name <input id="name-input" placeholder="e.g. Sophia"></label>
  <div class="lobby-actions">
    <button id="create-btn">Create a room</button>
    <span class="or">or</span>
    <input id="room-input" placeholder="MEETING ID">
    <button id="join-btn">Join</button>
  </div>
  <div id="room-full-notice" class="notice hidden">
    That room is full. Ask for another meeting ID, then
    <button id="retry-btn">try again</button>.
  </div>
</section>

<section id="waiting-view" class="hidden">
  <h1>Share this meeting ID</h1>
  <div id="meeting-id" class="meeting-id"></div>
  <p>Waiting for everyone to arrive<span class="spinner">...</span></p>
  <p id="waiting-roster"></p>
</section>

<section id="session-view" class="hidden">
  <h2 id="passage-title"></h2>
  <div id="transcript" class="transcript"></div>
  <div id="composer" class="composer">
    <input id="message-input" placeholder="Share your thoughts">
    <button id="send-btn">Send</button>
    <button id="hint-btn" title="Ask the moderator for a hint">Hint</button>
  </div>
  <div id="feedback-panel" class="feedback hidden">
    <h3>Your session feedback</h3>
    <div id="feedback-text" class="markdown"></div>
    <p id="feedback-stats" class="stats"></p>
  </div>
</section>
`;
