import { ApiClient } from "./api.js";
import type { SessionView, UserResponse } from "./types.js";

export interface TranscriptEntry {
  role: "system" | "user";
  text: string;
}

/** Client-side session state machine.
 *
 * The transcript is append-only, exactly one response can be in flight per
 * prompt, and every MAP value comes from a service payload — the client
 * never computes retrieval state of its own.
 */
export class SessionController {
  view: SessionView | null = null;
  transcript: TranscriptEntry[] = [];
  mapTrajectory: number[] = [];
  private busy = false;

  constructor(private readonly api: ApiClient) {}

  get status(): string {
    return this.view?.status ?? "idle";
  }

  get locked(): boolean {
    return this.busy || this.status !== "active";
  }

  private absorb(view: SessionView): void {
    this.view = view;
    if (view.judged) {
      // map_history is authoritative; keep the longest prefix-consistent copy
      this.mapTrajectory = [...view.map_history];
    }
    if (view.status === "active" && view.prompt) {
      this.transcript.push({ role: "system", text: view.prompt.utterance });
    }
  }

  async start(query: { query_id?: string; query_text?: string }): Promise<SessionView> {
    const view = await this.api.createSession(query);
    this.transcript = [];
    this.mapTrajectory = [];
    this.absorb(view);
    return view;
  }

  async resume(sessionId: string): Promise<SessionView> {
    const view = await this.api.getSession(sessionId);
    this.transcript = [];
    this.mapTrajectory = [];
    this.absorb(view);
    return view;
  }

  describe(response: UserResponse): string {
    switch (response.type) {
      case "pick_document": return `picked ${response.doc_id}`;
      case "yes_no": return response.yes ? "yes" : "no";
      case "provide_term": return response.term;
      case "pick_topic": return `topic ${response.topic_id}`;
      case "terminate": return response.success ? "satisfied, ending" : "giving up";
    }
  }

  async submit(response: UserResponse): Promise<SessionView> {
    if (this.view === null) throw new Error("no active session");
    if (this.locked) throw new Error("a response is already pending");
    this.busy = true;
    try {
      const view = await this.api.respond(this.view.session_id, response);
      this.transcript.push({ role: "user", text: this.describe(response) });
      this.absorb(view);
      return view;
    } finally {
      this.busy = false;
    }
  }
}
