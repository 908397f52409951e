import { ApiClient, ApiError } from "./api.js";
import type { HumanEvalTask } from "./types.js";

function freshToken(): string {
  return `tok-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

/** Drives one subject through the annotation task pool.
 *
 * One idempotency token is minted per task: a double-click submits once (the
 * busy flag swallows the re-entrant call), a network retry re-sends the same
 * token and the server acknowledges without recording a duplicate, and a 409
 * means the task was answered elsewhere (another tab) so the flow advances.
 */
export class HumanEvalController {
  current: HumanEvalTask | null = null;
  completed = 0;
  private token = freshToken();
  private busy = false;

  constructor(private readonly api: ApiClient, readonly subjectId: string) {}

  get done(): boolean {
    return this.current !== null && this.current.done;
  }

  /** Fetch the first unanswered task; safe to call after a reload. */
  async advance(): Promise<HumanEvalTask> {
    this.current = await this.api.nextTask(this.subjectId);
    this.token = freshToken();
    if (this.current.done) this.completed = this.current.completed;
    return this.current;
  }

  async choose(choiceIndex: number): Promise<void> {
    if (this.busy || this.current === null || this.current.done) return;
    this.busy = true;
    try {
      await this.api.submitChoice(this.subjectId, this.current.task_id,
                                  choiceIndex, this.token);
      this.completed += 1;
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 409)) throw err;
    } finally {
      this.busy = false;
    }
    await this.advance();
  }
}
