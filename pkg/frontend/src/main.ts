import { ApiClient } from "./api.js";
import { HumanEvalController } from "./humaneval.js";
import { SessionController } from "./session.js";
import type { SessionView } from "./types.js";
import {
  lockWidget, renderMapSparkline, renderPrompt, renderRanking, renderSummary,
} from "./widgets.js";

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function setupDialogueTab(api: ApiClient): void {
  const controller = new SessionController(api);
  const transcript = byId("transcript");
  const rankingPanel = byId("ranking-panel");
  const statusLine = byId("status-line");
  const promptSlot = byId("prompt-slot");

  function appendBubble(role: string, text: string): void {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${role}`;
    bubble.textContent = text;
    transcript.appendChild(bubble);
    transcript.scrollTop = transcript.scrollHeight;
  }

  function showView(view: SessionView): void {
    rankingPanel.replaceChildren(renderRanking(view.ranking));
    if (view.judged && view.map !== null) {
      statusLine.textContent =
        `turn ${view.turn} · MAP ${view.map.toFixed(3)} · ${view.status}`;
      statusLine.appendChild(renderMapSparkline(view.map_history));
    } else {
      statusLine.textContent = `turn ${view.turn} · ${view.status}`;
    }
    if (view.status === "active" && view.prompt) {
      appendBubble("system", view.prompt.utterance);
      const widget = renderPrompt(view.prompt, (response) => {
        lockWidget(widget);
        appendBubble("user", controller.describe(response));
        controller.submit(response).then(showView).catch((err) => {
          appendBubble("error", String(err));
        });
      });
      promptSlot.replaceChildren(widget);
    } else if (view.summary) {
      promptSlot.replaceChildren(renderSummary(view.summary, view));
    }
  }

  byId("start-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const queryId = (byId("query-id") as HTMLInputElement).value.trim();
    const queryText = (byId("query-text") as HTMLInputElement).value.trim();
    const request = queryId ? { query_id: queryId } : { query_text: queryText };
    transcript.replaceChildren();
    controller.start(request).then(showView).catch((err) => {
      statusLine.textContent = String(err);
    });
  });

  byId("give-up").addEventListener("click", () => {
    if (!controller.locked) {
      controller.submit({ type: "terminate", success: false })
        .then(showView).catch(() => undefined);
    }
  });
}

function setupHumanEvalTab(api: ApiClient): void {
  const taskPanel = byId("task-panel");
  const progress = byId("task-progress");

  byId("subject-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const subject = (byId("subject-id") as HTMLInputElement).value.trim();
    if (!subject) return;
    const controller = new HumanEvalController(api, subject);

    function showTask(): void {
      const task = controller.current;
      if (!task) return;
      if (task.done) {
        taskPanel.replaceChildren();
        const doneNote = document.createElement("p");
        doneNote.className = "done";
        doneNote.textContent = `All tasks answered (${task.completed} recorded). Thank you!`;
        taskPanel.appendChild(doneNote);
        progress.textContent = "";
        return;
      }
      progress.textContent = `answered ${controller.completed} · current ${task.task_id}`;
      const box = document.createElement("div");
      box.dataset.widget = "humaneval-task";
      const question = document.createElement("p");
      question.textContent = "Which of these four documents is most relevant?";
      box.appendChild(question);
      task.candidates.forEach((doc, index) => {
        const button = document.createElement("button");
        button.className = "choice";
        button.textContent = `${index + 1}. ${doc.doc_id} — ${doc.top_terms.join(", ")}`;
        button.addEventListener("click", () => {
          lockWidget(box);
          controller.choose(index).then(showTask);
        });
        box.appendChild(button);
      });
      taskPanel.replaceChildren(box);
    }

    controller.advance().then(showTask);
  });
}

export function boot(): void {
  const api = new ApiClient((byId("server-url") as HTMLInputElement).value || "");
  setupDialogueTab(api);
  setupHumanEvalTab(api);
  for (const tab of document.querySelectorAll("[data-tab]")) {
    tab.addEventListener("click", () => {
      for (const panel of document.querySelectorAll(".tab-panel")) {
        panel.classList.toggle("active",
          panel.id === (tab as HTMLElement).dataset.tab);
      }
    });
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
