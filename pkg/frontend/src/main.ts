/** Browser entry: connect to a session, follow its event stream, render,
 * and post exam results back. */

import { EngineClient, ServiceError } from "./client.js";
import { renderSessionView } from "./view.js";

const root = document.getElementById("app") as HTMLElement;
const client = new EngineClient(window.location.origin);

let currentSession: string | null = null;
let streamAbort: AbortController | null = null;

function connectForm(): string {
  return `
    <form id="connect-form" class="connect">
      <h1>Diagnostic session console</h1>
      <label>Session id <input name="session" placeholder="e.g. 1f2e3d4c5b6a"/></label>
      <button type="submit">Connect</button>
      <div class="form-error" id="connect-error"></div>
    </form>`;
}

async function refresh(sessionId: string): Promise<void> {
  const state = await client.getSession(sessionId);
  root.innerHTML = renderSessionView(state);
  wireExamForm(sessionId);
}

function wireExamForm(sessionId: string): void {
  const form = document.getElementById("exam-form") as HTMLFormElement | null;
  if (!form) return;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const answers: Record<string, string> = {};
    form.querySelectorAll<HTMLInputElement>("input[data-exam]").forEach((input) => {
      if (input.value.trim()) answers[input.dataset.exam!] = input.value.trim();
    });
    const errorBox = document.getElementById("exam-form-error")!;
    if (Object.keys(answers).length === 0) {
      errorBox.textContent = "enter at least one result before submitting";
      return;
    }
    try {
      await client.submitExams(sessionId, answers);
      await refresh(sessionId);
    } catch (error) {
      errorBox.textContent =
        error instanceof ServiceError
          ? `submission rejected (${error.status}): ${error.message}`
          : String(error);
    }
  });
}

async function follow(sessionId: string): Promise<void> {
  currentSession = sessionId;
  streamAbort?.abort();
  streamAbort = new AbortController();
  await refresh(sessionId);
  try {
    await client.streamEvents(
      sessionId,
      () => {
        // every event re-projects the full state: the view is a pure
        // function of the server's session, never a local mutation
        void refresh(sessionId);
      },
      streamAbort.signal,
    );
  } catch {
    // stream dropped (server restart): resync once, then offer reconnect
    await refresh(sessionId).catch(() => showConnect("session unavailable"));
  }
}

function showConnect(message = ""): void {
  root.innerHTML = connectForm();
  const errorBox = document.getElementById("connect-error")!;
  errorBox.textContent = message;
  const form = document.getElementById("connect-form") as HTMLFormElement;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const input = form.querySelector<HTMLInputElement>("input[name=session]")!;
    const sessionId = input.value.trim();
    if (!sessionId) return;
    try {
      await client.getSession(sessionId);
    } catch (error) {
      errorBox.textContent =
        error instanceof ServiceError && error.status === 404
          ? `unknown session ${sessionId}; check the id and retry`
          : String(error);
      return;
    }
    window.location.hash = sessionId;
    void follow(sessionId);
  });
}

function boot(): void {
  const fromHash = window.location.hash.replace(/^#/, "");
  if (fromHash) void follow(fromHash);
  else showConnect();
}

window.addEventListener("hashchange", () => {
  const id = window.location.hash.replace(/^#/, "");
  if (id && id !== currentSession) void follow(id);
});

boot();
