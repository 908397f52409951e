import type {
  ChoiceAck, Distribution, HumanEvalTask, SessionView, UserResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed wrapper over the /api/v1 JSON endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/v1${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail = typeof payload?.detail === "string"
        ? payload.detail : `request failed (${res.status})`;
      throw new ApiError(res.status, detail);
    }
    return payload as T;
  }

  createSession(query: { query_id?: string; query_text?: string }): Promise<SessionView> {
    return this.request("POST", "/sessions", query);
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  respond(sessionId: string, response: UserResponse): Promise<SessionView> {
    return this.request("POST", `/sessions/${sessionId}/respond`, { response });
  }

  nextTask(subjectId: string): Promise<HumanEvalTask> {
    return this.request("GET", `/humaneval/task?subject_id=${encodeURIComponent(subjectId)}`);
  }

  submitChoice(subjectId: string, taskId: string, choiceIndex: number,
               token: string): Promise<ChoiceAck> {
    return this.request("POST", "/humaneval/choice", {
      subject_id: subjectId, task_id: taskId, choice_index: choiceIndex, token,
    });
  }

  distribution(): Promise<Distribution> {
    return this.request("GET", "/humaneval/distribution");
  }
}
