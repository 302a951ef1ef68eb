/** REST + SSE client for the engine session service.
 *
 * The event stream is read through fetch so the same code runs in the
 * browser and under node-based tests (no EventSource dependency).
 */

import type {
  CreateSessionRequest,
  SessionEvent,
  SessionState,
} from "./types.js";

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* keep the status text */
    }
    throw new ServiceError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class EngineClient {
  constructor(
    readonly baseUrl: string,
    readonly authToken?: string,
  ) {}

  private headers(extra?: Record<string, string>): Record<string, string> {
    const headers: Record<string, string> = {
      "content-type": "application/json",
      ...extra,
    };
    if (this.authToken) headers["authorization"] = `Bearer ${this.authToken}`;
    return headers;
  }

  async createSession(
    body: CreateSessionRequest,
  ): Promise<{ session_id: string; status: string }> {
    const response = await fetch(`${this.baseUrl}/api/sessions`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(body),
    });
    return expectJson(response);
  }

  async getSession(sessionId: string): Promise<SessionState> {
    const response = await fetch(`${this.baseUrl}/api/sessions/${sessionId}`, {
      headers: this.headers(),
    });
    return expectJson(response);
  }

  async advance(sessionId: string): Promise<{ status: string }> {
    const response = await fetch(
      `${this.baseUrl}/api/sessions/${sessionId}/advance`,
      { method: "POST", headers: this.headers() },
    );
    return expectJson(response);
  }

  async submitExams(
    sessionId: string,
    answers: Record<string, string>,
    submitToken?: string,
  ): Promise<{ status: string }> {
    const extra = submitToken ? { "x-submit-token": submitToken } : undefined;
    const response = await fetch(
      `${this.baseUrl}/api/sessions/${sessionId}/exams`,
      {
        method: "POST",
        headers: this.headers(extra),
        body: JSON.stringify({ answers }),
      },
    );
    return expectJson(response);
  }

  /** Subscribe to the turn event stream; resolves when the final event
   * arrives or the stream closes. */
  async streamEvents(
    sessionId: string,
    onEvent: (event: SessionEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const response = await fetch(
      `${this.baseUrl}/api/sessions/${sessionId}/events`,
      { headers: this.headers(), signal },
    );
    if (!response.ok || !response.body) {
      throw new ServiceError(response.status, "event stream unavailable");
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let boundary: number;
      while ((boundary = buffer.indexOf("\n\n")) >= 0) {
        const block = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        const event = parseSseBlock(block);
        if (event) {
          onEvent(event);
          if (event.event === "final") return;
        }
      }
    }
  }
}

export function parseSseBlock(block: string): SessionEvent | null {
  let eventName = "";
  const dataLines: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith("event: ")) eventName = line.slice("event: ".length);
    else if (line.startsWith("data: ")) dataLines.push(line.slice("data: ".length));
  }
  if (!eventName || dataLines.length === 0) return null;
  return { event: eventName, data: JSON.parse(dataLines.join("\n")) } as SessionEvent;
}
