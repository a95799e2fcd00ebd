// Session wiring: reviewer token prompt, periodic queue polling, and
// the feedback / approve actions. The pending list is only ever
// re-rendered from a server payload, so nothing mutates client-side
// unless the gateway answered 2xx.

import { ApiError, GatewayClient, type FetchLike } from "./api.js";
import { renderPending } from "./render.js";
import type { Ticket } from "./types.js";

export const DEFAULT_POLL_MS = 10_000;

export interface ConsoleOptions {
  baseUrl?: string;
  pollMs?: number;
  fetchFn?: FetchLike;
}

export interface ReviewConsole {
  start(): void;
  stop(): void;
  refresh(): Promise<void>;
  // settles when all queued actions have finished; test hook
  whenIdle(): Promise<void>;
}

export function createConsole(
  root: HTMLElement,
  opts: ConsoleOptions = {},
): ReviewConsole {
  const baseUrl = opts.baseUrl ?? "";
  const pollMs = opts.pollMs ?? DEFAULT_POLL_MS;

  let client: GatewayClient | null = null;
  let pollTimer: ReturnType<typeof setInterval> | null = null;
  // serialises refreshes and feedback actions so they cannot interleave
  let chain: Promise<void> = Promise.resolve();

  root.textContent = "";
  const banner = child(root, "div", "banner hidden");
  const notice = child(root, "div", "notice hidden");

  const tokenForm = child(root, "form", "token-form") as HTMLFormElement;
  const tokenLabel = child(tokenForm, "label") as HTMLLabelElement;
  tokenLabel.textContent = "Reviewer token";
  const tokenInput = child(tokenForm, "input", "token-input") as HTMLInputElement;
  tokenInput.type = "password";
  tokenInput.autocomplete = "off";
  const startButton = child(tokenForm, "button", "start-session") as HTMLButtonElement;
  startButton.type = "button";
  startButton.textContent = "Start session";
  const hint = child(tokenForm, "p", "hint");
  hint.textContent = "Leave blank if the gateway runs without tokens.";

  const queue = child(root, "div", "queue hidden");

  const handlers = {
    onFeedback(ticket: Ticket, text: string) {
      act(() => mustClient().submitFeedback(ticket.ticket_id, text));
    },
    onApprove(ticket: Ticket) {
      act(() => mustClient().approve(ticket.ticket_id));
    },
  };

  function mustClient(): GatewayClient {
    if (!client) {
      throw new Error("session not started");
    }
    return client;
  }

  function startSession() {
    // token stays in this closure only, never persisted anywhere
    client = new GatewayClient(baseUrl, tokenInput.value.trim(), opts.fetchFn);
    tokenInput.value = "";
    hide(banner);
    tokenForm.classList.add("hidden");
    queue.classList.remove("hidden");
    enqueue(doRefresh);
    if (pollTimer === null) {
      pollTimer = setInterval(() => enqueue(doRefresh), pollMs);
    }
  }

  function endSession(message: string) {
    client = null;
    if (pollTimer !== null) {
      clearInterval(pollTimer);
      pollTimer = null;
    }
    queue.classList.add("hidden");
    tokenForm.classList.remove("hidden");
    show(banner, message);
  }

  async function doRefresh(): Promise<void> {
    if (!client) {
      return;
    }
    try {
      const entries = await client.listPending();
      renderPending(queue, entries, handlers);
      hide(banner);
    } catch (err) {
      if (err instanceof ApiError && err.status === 401) {
        endSession("Token rejected. Enter a valid reviewer token.");
        return;
      }
      // keep the last rendered list; just surface the problem
      show(banner, describe(err));
    }
  }

  // run one feedback or approve call, then re-sync from the server
  function act(run: () => Promise<unknown>) {
    enqueue(async () => {
      hide(notice);
      try {
        await run();
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          show(notice, "Ticket was already closed elsewhere; refreshing.");
        } else if (err instanceof ApiError && err.status === 401) {
          endSession("Token rejected. Enter a valid reviewer token.");
          return;
        } else {
          show(banner, describe(err));
          return;
        }
      }
      await doRefresh();
    });
  }

  function enqueue(task: () => Promise<void>) {
    chain = chain.then(task, task);
  }

  startButton.addEventListener("click", startSession);
  tokenForm.addEventListener("submit", (event) => {
    event.preventDefault();
    startSession();
  });

  return {
    start() {
      tokenInput.focus();
    },
    stop() {
      if (pollTimer !== null) {
        clearInterval(pollTimer);
        pollTimer = null;
      }
    },
    refresh() {
      enqueue(doRefresh);
      return this.whenIdle();
    },
    whenIdle() {
      return chain;
    },
  };
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status > 0 ? `Gateway error ${err.status}: ${err.message}` : err.message;
  }
  return String(err);
}

function show(element: HTMLElement, message: string) {
  element.textContent = message;
  element.classList.remove("hidden");
}

function hide(element: HTMLElement) {
  element.classList.add("hidden");
}

function child(parent: HTMLElement, tag: string, className?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  parent.appendChild(node);
  return node;
}
