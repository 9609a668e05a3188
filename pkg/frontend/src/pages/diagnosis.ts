// Diagnosis page: one question at a time with Previous/Next so earlier
// answers can be revisited and revised; every click is posted individually
// and Finish asks for confirmation before scoring.

import { ApiClient, DiagnosisAttempt, DiagnosisQuestion } from "../api.js";
import { clear, el } from "../dom.js";
import { navigate } from "../router.js";

export interface DiagnosisPage {
  root: HTMLElement;
  load(): Promise<void>;
  showQuestion(index: number): void;
  toggle(questionId: string, optionId: string, selected: boolean): Promise<void>;
  finish(): Promise<void>;
}

export function createDiagnosisPage(api: ApiClient, diagnosisId: string): DiagnosisPage {
  const questionHolder = el("div", { class: "question-holder" });
  const controls = el("div", { class: "diagnosis-controls" });
  const root = el("div", { class: "page diagnosis" }, el("h2", {}, "Diagnosis"), questionHolder, controls);

  let questions: DiagnosisQuestion[] = [];
  let attempt: DiagnosisAttempt | null = null;
  let cursor = 0;

  function selectionsFor(questionId: string): Set<string> {
    return new Set(attempt?.selections[questionId] ?? []);
  }

  function showQuestion(index: number): void {
    cursor = Math.max(0, Math.min(index, questions.length - 1));
    const question = questions[cursor];
    clear(questionHolder);
    const chosen = selectionsFor(question.id);
    questionHolder.append(
      el("p", { class: "counter" }, `Question ${cursor + 1} of ${questions.length}`),
      el("p", { class: "prompt" }, question.prompt),
      ...question.options.map((option) => {
        const box = el("input", {
          type: question.multi_select ? "checkbox" : "radio",
          name: question.id,
          "data-option": option.option_id,
        }) as HTMLInputElement;
        box.checked = chosen.has(option.option_id);
        box.addEventListener("change", () => void toggle(question.id, option.option_id, box.checked));
        return el("label", { class: "option" }, box, ` ${option.text}`);
      }),
    );

    clear(controls);
    const previous = el("button", { class: "previous", onclick: () => showQuestion(cursor - 1) }, "Previous") as HTMLButtonElement;
    const next = el("button", { class: "next", onclick: () => showQuestion(cursor + 1) }, "Next") as HTMLButtonElement;
    previous.disabled = cursor === 0;
    next.disabled = cursor === questions.length - 1;
    const finishButton = el(
      "button",
      {
        class: "finish",
        onclick: () => {
          clear(controls);
          controls.append(
            el("span", {}, "Finish and score this attempt? "),
            el("button", { class: "confirm-finish", onclick: () => void finish() }, "Yes, finish"),
            el("button", { class: "cancel-finish", onclick: () => showQuestion(cursor) }, "Keep working"),
          );
        },
      },
      "Finish",
    );
    controls.append(previous, next, finishButton);
  }

  async function toggle(questionId: string, optionId: string, selected: boolean): Promise<void> {
    const doc = await api.selectOption(diagnosisId, questionId, optionId, selected);
    attempt = doc.attempt;
    showQuestion(cursor); // re-render so single-select replacement is visible
  }

  async function finish(): Promise<void> {
    const doc = await api.finishDiagnosis(diagnosisId);
    attempt = doc.attempt;
    clear(questionHolder);
    clear(controls);
    questionHolder.append(
      el("h3", {}, `Score: ${doc.score.total_correct} / ${questions.length}`),
      ...questions.map((question) =>
        el(
          "p",
          { class: doc.score.per_question[question.id] ? "correct" : "incorrect" },
          `${question.prompt} - ${doc.score.per_question[question.id] ? "correct" : "incorrect"}`,
        ),
      ),
      el("button", { class: "exit", onclick: () => navigate({ page: "progress" }) }, "Back to progress"),
    );
  }

  return {
    root,
    showQuestion,
    toggle,
    finish,
    async load() {
      const doc = await api.openDiagnosis(diagnosisId);
      attempt = doc.attempt;
      questions = doc.questions;
      showQuestion(attempt.cursor);
    },
  };
}
