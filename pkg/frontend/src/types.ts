// JSON shapes of the /api/v1 session service.

export interface DocSummary {
  doc_id: string;
  top_terms: string[];
  score?: number;
}

export interface TopicOption {
  topic_id: string;
  label: string;
}

export type PromptPayload =
  | { action: "return_documents"; documents: DocSummary[]; utterance: string }
  | { action: "return_keyterm"; key_term: string; utterance: string }
  | { action: "return_request"; utterance: string }
  | { action: "return_topic"; topics: TopicOption[]; utterance: string };

export interface TerminalSummary {
  outcome: string;
  turns: number;
  map_history: number[];
  return: number | null;
}

export interface SessionView {
  session_id: string;
  status: "active" | "success" | "failure" | "abandoned";
  turn: number;
  map: number | null;
  map_history: number[];
  judged: boolean;
  ranking: DocSummary[];
  prompt?: PromptPayload;
  summary?: TerminalSummary;
}

export type UserResponse =
  | { type: "pick_document"; doc_id: string }
  | { type: "yes_no"; yes: boolean }
  | { type: "provide_term"; term: string }
  | { type: "pick_topic"; topic_id: string }
  | { type: "terminate"; success: boolean };

export type HumanEvalTask =
  | { done: false; task_id: string; query_id: string; candidates: DocSummary[] }
  | { done: true; completed: number };

export interface ChoiceAck {
  ok: boolean;
  task_id: string;
  choice_index: number;
}

export interface Distribution {
  counts: number[];
  n_samples: number;
  probabilities: number[] | null;
}
