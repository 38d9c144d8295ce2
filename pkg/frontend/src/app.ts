/**
 * The chat application: state, event wiring, and re-rendering.
 *
 * All visible UI is recomputed from `state` (an ordered turn list plus a
 * few flags), so every interaction is: mutate state, then render().  One
 * request may be in flight at a time; the composer is disabled while the
 * model is loading or a reply is pending.
 */

import { ApiError, GendsClient } from "./api.js";

/** The slice of the client the app needs; tests substitute a stub. */
export type ServiceClient = Pick<GendsClient, "health" | "reply">;
import {
  ChatTurn,
  errorTurn,
  modelTurn,
  renderInspector,
  renderTranscript,
  userTurn,
} from "./transcript.js";

export interface AppState {
  turns: ChatTurn[];
  pending: boolean;
  modelReady: boolean;
  modelVersion: string | null;
  /** Index of the model turn shown in the inspector, or null. */
  selected: number | null;
}

export interface AppOptions {
  /** Health re-check interval while the model is loading; 0 disables. */
  pollMs?: number;
  now?: () => number;
}

export interface AppHandle {
  state: AppState;
  checkHealth(): Promise<void>;
  send(text?: string): Promise<void>;
  render(): void;
}

const SHELL = `
  <header>
    <h1>gends chat</h1>
    <span id="model-version"></span>
    <div id="banner" hidden>model loading...</div>
  </header>
  <main>
    <section id="transcript" aria-live="polite"></section>
    <aside id="inspector"></aside>
  </main>
  <form id="composer">
    <input id="message" autocomplete="off"
           placeholder="say something about the music library" />
    <button id="send" type="submit">send</button>
  </form>
`;

export function createApp(
  root: HTMLElement,
  client: ServiceClient,
  options: AppOptions = {},
): AppHandle {
  const now = options.now ?? (() => Date.now());
  const state: AppState = {
    turns: [],
    pending: false,
    modelReady: false,
    modelVersion: null,
    selected: null,
  };

  root.innerHTML = SHELL;
  const transcript = root.querySelector("#transcript") as HTMLElement;
  const inspector = root.querySelector("#inspector") as HTMLElement;
  const banner = root.querySelector("#banner") as HTMLElement;
  const version = root.querySelector("#model-version") as HTMLElement;
  const form = root.querySelector("#composer") as HTMLFormElement;
  const input = root.querySelector("#message") as HTMLInputElement;
  const sendButton = root.querySelector("#send") as HTMLButtonElement;

  function updateControls(): void {
    const blocked = state.pending || !state.modelReady;
    input.disabled = blocked;
    sendButton.disabled = blocked || input.value.trim() === "";
  }

  function render(): void {
    transcript.innerHTML = renderTranscript(state.turns);
    const turn = state.selected === null
      ? null
      : state.turns[state.selected] ?? null;
    inspector.innerHTML = renderInspector(turn);
    banner.hidden = state.modelReady;
    version.textContent = state.modelVersion ?? "";
    updateControls();
    transcript.scrollTop = transcript.scrollHeight;
  }

  async function checkHealth(): Promise<void> {
    try {
      const health = await client.health();
      state.modelReady = health.status === "ok";
      state.modelVersion = health.model_version ?? null;
    } catch {
      state.modelReady = false;
      state.modelVersion = null;
    }
    render();
  }

  async function send(text?: string): Promise<void> {
    const message = (text ?? input.value).trim();
    if (message === "" || state.pending || !state.modelReady) return;
    state.turns.push(userTurn(message, now()));
    state.pending = true;
    input.value = "";
    render();
    try {
      const reply = await client.reply(message);
      state.turns.push(modelTurn(reply, now()));
      state.selected = state.turns.length - 1;
    } catch (err) {
      const detail = err instanceof ApiError
        ? err.status === 0
          ? `no reply: ${err.message}`
          : `no reply (${err.status}): ${err.message}`
        : `no reply: ${String(err)}`;
      state.turns.push(errorTurn(detail, message, now()));
    } finally {
      state.pending = false;
      render();
    }
  }

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void send();
  });
  input.addEventListener("input", updateControls);

  transcript.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const retry = target.closest<HTMLElement>("button.retry");
    if (retry) {
      void send(retry.dataset.retry ?? "");
      return;
    }
    const turnEl = target.closest<HTMLElement>(".turn.model");
    if (turnEl) {
      state.selected = Number(turnEl.dataset.index);
      render();
    }
  });

  inspector.addEventListener("click", (event) => {
    const row = (event.target as HTMLElement)
      .closest<HTMLElement>(".inspector-row");
    if (row) {
      input.value = `tell me more about ${row.dataset.surface ?? ""}`;
      updateControls();
      input.focus();
    }
  });

  render();
  void checkHealth();
  if (options.pollMs && options.pollMs > 0) {
    const timer = setInterval(() => {
      if (state.modelReady) {
        clearInterval(timer);
        return;
      }
      void checkHealth();
    }, options.pollMs);
  }

  return { state, checkHealth, send, render };
}
