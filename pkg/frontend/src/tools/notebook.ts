// Account-wide notebook: one note shared across every activity and page.
// Autosaves (debounced) as tool events; a save failure shows an unsaved
// indicator and keeps retrying.

import { ApiClient } from "../api.js";
import { el } from "../dom.js";

export interface NotebookPanel {
  root: HTMLElement;
  textarea: HTMLTextAreaElement;
  load(): Promise<void>;
  flush(): Promise<void>;
  status(): "saved" | "saving" | "unsaved";
}

export function createNotebookPanel(api: ApiClient, debounceMs = 600): NotebookPanel {
  const textarea = el("textarea", { class: "notebook-text", rows: "8" }) as HTMLTextAreaElement;
  const indicator = el("span", { class: "save-state" }, "saved");
  const root = el(
    "div",
    { class: "tool-panel notebook" },
    el("h3", {}, "Notebook ", indicator),
    textarea,
  );

  let state: "saved" | "saving" | "unsaved" = "saved";
  let timer: ReturnType<typeof setTimeout> | null = null;

  function setState(next: typeof state): void {
    state = next;
    indicator.textContent = next;
    indicator.className = `save-state ${next}`;
  }

  async function save(): Promise<void> {
    setState("saving");
    try {
      await api.saveNotebook(textarea.value);
      setState("saved");
    } catch {
      setState("unsaved");
      timer = setTimeout(save, debounceMs * 4); // retry until 2xx
    }
  }

  textarea.addEventListener("input", () => {
    setState("unsaved");
    if (timer) clearTimeout(timer);
    timer = setTimeout(save, debounceMs);
  });

  return {
    root,
    textarea,
    status: () => state,
    async load() {
      const doc = await api.notebook();
      textarea.value = doc.text;
      setState("saved");
    },
    async flush() {
      if (timer) clearTimeout(timer);
      await save();
    },
  };
}
