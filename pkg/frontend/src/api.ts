// Thin client for the gateway v1 endpoints. Every mutation the console
// performs goes through this class; callers map ApiError statuses to UI.

import type { FeedbackResponse, PendingEntry } from "./types.js";

// The server treats this exact feedback string as approve: it closes
// the result's tickets without running another refinement round.
export const APPROVAL_TEXT = "APPROVED";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  private baseUrl: string;

  constructor(
    baseUrl: string,
    private token: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  listPending(): Promise<PendingEntry[]> {
    return this.request("GET", "/v1/review/pending");
  }

  submitFeedback(ticketId: string, text: string): Promise<FeedbackResponse> {
    const path = `/v1/review/${encodeURIComponent(ticketId)}/feedback`;
    return this.request("POST", path, { feedback: text });
  }

  approve(ticketId: string): Promise<FeedbackResponse> {
    return this.submitFeedback(ticketId, APPROVAL_TEXT);
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `gateway unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await readDetail(response));
    }
    return response.json() as Promise<T>;
  }
}

async function readDetail(response: Response): Promise<string> {
  try {
    const doc = await response.json();
    if (doc && typeof doc.detail === "string") {
      return doc.detail;
    }
  } catch {
    // non-JSON error body, fall through to the generic message
  }
  return `request failed with status ${response.status}`;
}
