import type {
  DocSummary, PromptPayload, SessionView, TerminalSummary, UserResponse,
} from "./types.js";

// Every widget is a plain DOM element; the data-widget attribute names the
// kind so tests (and styles) can address it. Nothing here computes retrieval
// state: all numbers and strings come straight from service payloads.

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function docLabel(doc: DocSummary): string {
  return `${doc.doc_id} — ${doc.top_terms.join(", ")}`;
}

export type SubmitHandler = (response: UserResponse) => void;

/** Render the input widget matching the pending prompt's action. */
export function renderPrompt(prompt: PromptPayload, onSubmit: SubmitHandler): HTMLElement {
  const box = el("div", "prompt");
  box.appendChild(el("p", "utterance", prompt.utterance));

  switch (prompt.action) {
    case "return_documents": {
      box.dataset.widget = "document-list";
      const list = el("ul", "doc-choices");
      for (const doc of prompt.documents) {
        const item = el("li");
        const button = el("button", "choice", docLabel(doc));
        button.addEventListener("click", () =>
          onSubmit({ type: "pick_document", doc_id: doc.doc_id }));
        item.appendChild(button);
        list.appendChild(item);
      }
      box.appendChild(list);
      break;
    }
    case "return_keyterm": {
      box.dataset.widget = "yes-no";
      const row = el("div", "yes-no-row");
      for (const yes of [true, false]) {
        const button = el("button", "choice", yes ? "Yes" : "No");
        button.addEventListener("click", () => onSubmit({ type: "yes_no", yes }));
        row.appendChild(button);
      }
      box.appendChild(row);
      break;
    }
    case "return_request": {
      box.dataset.widget = "text-input";
      const form = el("form", "term-form");
      const input = el("input");
      input.type = "text";
      input.placeholder = "a term describing what you need";
      const button = el("button", "choice", "Send");
      button.type = "submit";
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        const term = input.value.trim();
        if (term) onSubmit({ type: "provide_term", term });
      });
      form.append(input, button);
      box.appendChild(form);
      break;
    }
    case "return_topic": {
      box.dataset.widget = "topic-picker";
      const list = el("div", "topic-choices");
      for (const topic of prompt.topics) {
        const button = el("button", "choice", topic.label);
        button.dataset.topicId = topic.topic_id;
        button.addEventListener("click", () =>
          onSubmit({ type: "pick_topic", topic_id: topic.topic_id }));
        list.appendChild(button);
      }
      box.appendChild(list);
      break;
    }
    default: {
      const exhaustive: never = prompt;
      throw new Error(`unknown prompt action ${(exhaustive as PromptPayload).action}`);
    }
  }
  return box;
}

/** Lock a rendered widget after one submission (one response per prompt). */
export function lockWidget(widget: HTMLElement): void {
  widget.classList.add("locked");
  for (const button of widget.querySelectorAll("button, input")) {
    (button as HTMLButtonElement | HTMLInputElement).disabled = true;
  }
}

export function renderRanking(ranking: DocSummary[]): HTMLElement {
  const panel = el("div", "ranking");
  panel.dataset.widget = "ranking";
  const list = el("ol");
  for (const doc of ranking) {
    const item = el("li", undefined, docLabel(doc));
    if (doc.score !== undefined) {
      item.appendChild(el("span", "score", doc.score.toFixed(3)));
    }
    list.appendChild(item);
  }
  panel.appendChild(list);
  return panel;
}

/** Inline SVG sparkline of the per-turn MAP trajectory. */
export function renderMapSparkline(history: number[]): SVGSVGElement {
  const width = 160;
  const height = 36;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.setAttribute("class", "sparkline");
  if (history.length > 0) {
    const step = history.length > 1 ? width / (history.length - 1) : 0;
    const points = history
      .map((value, i) => `${(i * step).toFixed(1)},${(height - value * (height - 4) - 2).toFixed(1)}`)
      .join(" ");
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute("points", points);
    line.setAttribute("fill", "none");
    svg.appendChild(line);
    // threshold rule at MAP 0.6
    const rule = document.createElementNS("http://www.w3.org/2000/svg", "line");
    const y = (height - 0.6 * (height - 4) - 2).toFixed(1);
    rule.setAttribute("x1", "0");
    rule.setAttribute("x2", String(width));
    rule.setAttribute("y1", y);
    rule.setAttribute("y2", y);
    rule.setAttribute("class", "threshold");
    svg.appendChild(rule);
  }
  return svg;
}

export function renderSummary(summary: TerminalSummary, view: SessionView): HTMLElement {
  const banner = el("div", `summary outcome-${summary.outcome}`);
  banner.dataset.widget = "terminal-summary";
  banner.appendChild(el("h3", undefined, `Session ${summary.outcome}`));
  banner.appendChild(el("p", undefined, `${summary.turns} turns`));
  if (view.judged) {
    banner.appendChild(el("p", undefined,
      `MAP ${summary.map_history.map((m) => m.toFixed(3)).join(" → ")}`));
    banner.appendChild(renderMapSparkline(summary.map_history));
    if (summary.return !== null) {
      banner.appendChild(el("p", undefined, `dialogue return ${summary.return.toFixed(2)}`));
    }
  }
  return banner;
}
