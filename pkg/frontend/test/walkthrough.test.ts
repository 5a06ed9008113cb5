// @vitest-environment jsdom
//
// Full walkthrough against the real Python server: create a room in one
// app, share the meeting ID, join from a second app plus two headless
// protocol clients, auto-start, hold the discussion, and end with the
// feedback panel, without console errors.

import { spawn, type ChildProcess } from "node:child_process";
import { resolve } from "node:path";
import { createInterface } from "node:readline";
import { afterAll, beforeAll, describe, expect, it, vi } from "vitest";
import WebSocket from "ws";

import { App } from "../src/app.js";
import { GatewayClient, type WebSocketLike } from "../src/socket.js";
import { SessionState } from "../src/state.js";

// vitest runs with cwd = frontend/
const DATASET = resolve(process.cwd(), "../src/discourse/data/storybook.jsonl");

const factory = (url: string) => new WebSocket(url) as unknown as WebSocketLike;

let server: ChildProcess;
let serverUrl = "";

beforeAll(async () => {
  server = spawn(
    "discourse",
    [
      "serve",
      "--dataset",
      DATASET,
      "--port",
      "0",
      "--max-students",
      "4",
      "--max-questions",
      "1",
      "--prompt-grace-seconds",
      "0.3",
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  server.stderr!.on("data", (chunk) => {
    stderr += String(chunk);
  });
  serverUrl = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server never ready")), 15000);
    createInterface({ input: server.stdout! }).on("line", (line) => {
      const match = /listening on ([\d.]+):(\d+)/.exec(line);
      if (match) {
        clearTimeout(timer);
        resolve(`ws://${match[1]}:${match[2]}`);
      }
    });
    server.on("exit", (code) =>
      reject(new Error(`server exited: ${code}\n${stderr}`)),
    );
  });
}, 20000);

afterAll(() => {
  server?.kill();
});

function makeApp(name: string): App {
  const mount = document.createElement("div");
  mount.id = `mount-${name}`;
  document.body.appendChild(mount);
  const app = new App(mount, { serverUrl, factory });
  (mount.querySelector("#name-input") as HTMLInputElement).value = name;
  return app;
}

interface HeadlessClient {
  name: string;
  state: SessionState;
  client: GatewayClient;
}

function makeHeadless(name: string): HeadlessClient {
  const state = new SessionState();
  const client = new GatewayClient(
    serverUrl,
    {
      onEnvelope: (envelope) => state.apply(envelope),
      onStatus: (status) => {
        state.connection = status;
      },
    },
    factory,
  );
  client.connect();
  return { name, state, client };
}

async function until(
  predicate: () => boolean,
  what: string,
  timeoutMs = 15000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) {
      return;
    }
    await new Promise((resolve) => setTimeout(resolve, 40));
  }
  throw new Error(`timed out waiting for ${what}`);
}

function appSend(app: App, text: string): void {
  const root = document.getElementById(
    `mount-${app.state.myName}`,
  ) as HTMLElement;
  const input = root.querySelector("#message-input") as HTMLInputElement;
  input.value = text;
  (root.querySelector("#send-btn") as HTMLButtonElement).click();
}

describe("two-app walkthrough against the live server", () => {
  it("create, share ID, join x3, auto-start, discuss, feedback", async () => {
    const consoleErrors = vi.spyOn(console, "error");

    const ana = makeApp("Ana");
    (document
      .querySelector("#mount-Ana #create-btn") as HTMLButtonElement).click();
    await until(() => ana.state.roomId !== null, "room creation");

    // The meeting ID is displayed prominently for sharing.
    const shown = (
      document.querySelector("#mount-Ana #meeting-id") as HTMLElement
    ).textContent;
    expect(shown).toBe(ana.state.roomId);
    expect(
      (document.querySelector("#mount-Ana #waiting-view") as HTMLElement)
        .classList.contains("hidden"),
    ).toBe(false);

    const roomId = ana.state.roomId!;
    const ben = makeApp("Ben");
    (document.querySelector("#mount-Ben #room-input") as HTMLInputElement).value =
      roomId;
    (document.querySelector("#mount-Ben #join-btn") as HTMLButtonElement).click();
    await until(() => ben.state.roster.includes("Ben"), "Ben joined");

    const cat = makeHeadless("Cat");
    await until(() => cat.state.connection === "open", "Cat connected");
    cat.client.send("join_room", { room_id: roomId, display_name: "Cat" });
    await until(() => cat.state.roster.includes("Cat"), "Cat joined");

    const dee = makeHeadless("Dee");
    await until(() => dee.state.connection === "open", "Dee connected");
    dee.client.send("join_room", { room_id: roomId, display_name: "Dee" });

    // Fourth join auto-starts the session for everyone.
    await until(() => ana.state.phase === "discussion", "auto-start for Ana");
    await until(() => ben.state.phase === "discussion", "auto-start for Ben");
    expect(ana.state.passageTitle).toBeTruthy();

    // Discussion: respond whenever the moderator asks or prompts us.
    const speakers: Record<string, () => void> = {
      Ana: () => appSend(ana, "The cat waited in the path."),
      Ben: () => appSend(ben, "I think patience was the plan."),
      Cat: () => cat.client.send("post_message", { text: "The buck got uneasy." }),
      Dee: () => dee.client.send("post_message", { text: "Calm beats boasting." }),
    };
    const spoken = new Set<string>();
    const driver = setInterval(() => {
      const items = ana.state.items;
      const lastModerator = [...items]
        .reverse()
        .find((item) => item.kind === "moderator");
      if (lastModerator === undefined) {
        return;
      }
      const action = lastModerator.action ?? "";
      if (action.startsWith("ask:") && !spoken.has("Ana")) {
        spoken.add("Ana");
        speakers.Ana();
      } else if (action.startsWith("prompt:")) {
        const target = action.split(":", 2)[1];
        if (!spoken.has(target) && speakers[target]) {
          spoken.add(target);
          speakers[target]();
        }
      }
    }, 50);

    try {
      await until(() => ana.state.feedback !== null, "Ana feedback", 20000);
      await until(() => ben.state.feedback !== null, "Ben feedback");
      await until(() => cat.state.feedback !== null, "Cat feedback");
      await until(() => dee.state.feedback !== null, "Dee feedback");
    } finally {
      clearInterval(driver);
    }

    // The answer card appeared and the feedback panel replaced the composer.
    expect(ana.state.items.some((item) => item.kind === "reveal")).toBe(true);
    const anaRoot = document.getElementById("mount-Ana")!;
    expect(
      (anaRoot.querySelector("#feedback-panel") as HTMLElement).classList
        .contains("hidden"),
    ).toBe(false);
    expect(
      (anaRoot.querySelector("#composer") as HTMLElement).classList.contains(
        "hidden",
      ),
    ).toBe(true);
    expect(
      (anaRoot.querySelector("#message-input") as HTMLInputElement).disabled,
    ).toBe(true);
    expect(
      (anaRoot.querySelector("#feedback-text") as HTMLElement).innerHTML,
    ).not.toBe("");

    // Everyone rendered one identical ordered broadcast stream.
    const seqs = ana.state.items.map((item) => item.seq);
    expect([...seqs].sort((a, b) => a - b)).toEqual(seqs);
    expect(ana.state.gapFree).toBe(true);
    expect(ben.state.gapFree).toBe(true);

    // No console errors during the whole walkthrough.
    expect(consoleErrors).not.toHaveBeenCalled();

    cat.client.close();
    dee.client.close();
    ana.client?.close();
    ben.client?.close();
  }, 40000);
});
