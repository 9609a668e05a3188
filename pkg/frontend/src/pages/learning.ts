// Learning page: question and images on the left, dialogue on the right.
// Every system bubble carries exactly one up/down vote pair bound to its
// event id; tool directives from replies auto-open the named tool panel.
// The page holds no learning state: a reload rebuilds everything from
// GET state + dialogue.

import {
  ApiClient,
  ApiError,
  DialogueEntry,
  SessionStatePayload,
  ToolDirective,
  TurnResponse,
  sendWithRetry,
} from "../api.js";
import { clear, el } from "../dom.js";
import { navigate } from "../router.js";
import { DEFAULT_GRID, createFillTablePanel } from "../tools/fillTable.js";
import { createNotebookPanel } from "../tools/notebook.js";
import { createTwoLinePanel } from "../tools/twoLine.js";

export function renderBubble(
  entry: DialogueEntry,
  onVote: (eventId: number, vote: "up" | "down", note?: string) => void,
): HTMLElement {
  const bubble = el(
    "div",
    { class: `bubble ${entry.speaker}`, "data-event-id": String(entry.event_id) },
    el("p", { class: "text" }, entry.text),
  );
  if (entry.speaker === "system") {
    if (entry.component) bubble.append(el("span", { class: "component" }, entry.component));
    const note = el("input", {
      type: "text",
      class: "vote-note",
      placeholder: "optional note",
    }) as HTMLInputElement;
    const controls = el(
      "div",
      { class: "vote-controls" },
      el(
        "button",
        { class: "vote-up", onclick: () => onVote(entry.event_id, "up", note.value || undefined) },
        "\u{1F44D}",
      ),
      el(
        "button",
        { class: "vote-down", onclick: () => onVote(entry.event_id, "down", note.value || undefined) },
        "\u{1F44E}",
      ),
      note,
    );
    bubble.append(controls);
  }
  return bubble;
}

export function renderTranscript(
  container: HTMLElement,
  entries: DialogueEntry[],
  onVote: (eventId: number, vote: "up" | "down", note?: string) => void,
): void {
  clear(container);
  for (const entry of entries) {
    container.append(renderBubble(entry, onVote));
  }
}

export interface LearningPage {
  root: HTMLElement;
  load(): Promise<void>;
  send(text: string): Promise<void>;
  openTool(toolId: string): void;
  transcript: HTMLElement;
  toolDock: HTMLElement;
  statusLine: HTMLElement;
  notebook: ReturnType<typeof createNotebookPanel>;
}

export function createLearningPage(api: ApiClient, activityId: string): LearningPage {
  const transcript = el("div", { class: "transcript" });
  const statusLine = el("p", { class: "status-line" });
  const questionPanel = el("div", { class: "question-panel" });
  const toolDock = el("div", { class: "tool-dock" });
  const input = el("textarea", { class: "message-input", rows: "3" }) as HTMLTextAreaElement;
  const sendButton = el("button", { class: "send" }, "Send") as HTMLButtonElement;
  const notebook = createNotebookPanel(api);

  const root = el(
    "div",
    { class: "page learning" },
    el("div", { class: "left" }, questionPanel, toolDock),
    el(
      "div",
      { class: "right" },
      transcript,
      statusLine,
      el("div", { class: "composer" }, input, sendButton),
    ),
  );

  function vote(eventId: number, voteValue: "up" | "down", note?: string): void {
    void api.vote(eventId, voteValue, note).then(
      () => setStatus(`feedback recorded for #${eventId}`),
      () => setStatus("feedback failed - try again"),
    );
  }

  function setStatus(text: string): void {
    statusLine.textContent = text;
  }

  async function refreshTranscript(): Promise<void> {
    const dialogue = await api.dialogue(activityId);
    renderTranscript(transcript, dialogue.entries, vote);
    transcript.scrollTop = transcript.scrollHeight;
  }

  function showSummary(state: SessionStatePayload): void {
    if (state.lifecycle !== "Completed" || !state.summary) return;
    if (root.querySelector(".summary")) return;
    root.append(
      el(
        "div",
        { class: "summary" },
        el("h3", {}, "Activity complete"),
        el("pre", {}, state.summary),
        el("button", { class: "exit", onclick: () => navigate({ page: "progress" }) }, "Exit to progress"),
      ),
    );
  }

  function openTool(toolId: string): void {
    if (toolDock.querySelector(`[data-tool="${toolId}"]`)) return;
    let panel: HTMLElement | null = null;
    if (toolId === "two_line") {
      panel = createTwoLinePanel((payload) => void submitTool("two_line", payload)).root;
    } else if (toolId === "fill_table") {
      panel = createFillTablePanel(DEFAULT_GRID, (payload) => void submitTool("fill_table", payload)).root;
    } else if (toolId === "notebook") {
      panel = notebook.root;
      void notebook.load();
    }
    if (panel) {
      panel.setAttribute("data-tool", toolId);
      toolDock.append(panel);
    }
  }

  function handleDirectives(directives: ToolDirective[]): void {
    for (const directive of directives) {
      openTool(directive.tool_id);
    }
  }

  async function runTurn(sendOnce: () => Promise<TurnResponse>): Promise<void> {
    sendButton.disabled = true;
    input.disabled = true;
    try {
      const result = await sendWithRetry(sendOnce, () => setStatus("thinking…"));
      setStatus(result.decision.message || "");
      handleDirectives(result.tool_directives);
      await refreshTranscript();
      showSummary(result.state);
    } catch (error) {
      if (error instanceof ApiError && error.status === 502) {
        setStatus("the tutor is unreachable");
        statusLine.append(
          " ",
          el("button", { class: "retry", onclick: () => void runTurn(sendOnce) }, "Retry"),
        );
      } else {
        setStatus(error instanceof Error ? error.message : "send failed");
      }
    } finally {
      sendButton.disabled = false;
      input.disabled = false;
    }
  }

  async function send(text: string): Promise<void> {
    if (!text.trim()) return;
    await runTurn(() => api.sendMessage(activityId, text));
  }

  async function submitTool(toolId: string, data: unknown): Promise<void> {
    await runTurn(() => api.sendToolEvent(activityId, toolId, data));
  }

  sendButton.addEventListener("click", () => {
    const text = input.value;
    input.value = "";
    void send(text);
  });

  return {
    root,
    transcript,
    toolDock,
    statusLine,
    notebook,
    openTool,
    send,
    async load() {
      const started = await api.startActivity(activityId);
      clear(questionPanel);
      questionPanel.append(
        el("h2", {}, started.title),
        el("p", { class: "question-text" }, started.question_text),
        ...started.image_refs.map((ref) =>
          el("img", { src: api.assetUrl(ref), alt: `figure for ${started.title}` }),
        ),
      );
      const notebookButton = el("button", { class: "open-notebook", onclick: () => openTool("notebook") }, "Notebook");
      questionPanel.append(notebookButton);
      await refreshTranscript();
      showSummary(started.state);
    },
  };
}
