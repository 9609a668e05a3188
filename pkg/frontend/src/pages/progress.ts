// Progress page: CK/PCK -> module -> activity hierarchy with status badges;
// diagnosis rows stay disabled until the module is complete.

import { ApiClient, PackOutline, ProgressView } from "../api.js";
import { clear, el } from "../dom.js";
import { navigate } from "../router.js";

export function renderProgress(
  container: HTMLElement,
  outline: PackOutline,
  view: ProgressView,
): void {
  clear(container);
  const statusFor = new Map(view.activities.map((a) => [a.activity_id, a.status]));
  const unlockedFor = new Map(view.modules.map((m) => [m.module_id, m.diagnosis_unlocked]));

  for (const domain of ["CK", "PCK"] as const) {
    const modules = outline.modules.filter((m) => m.domain === domain);
    if (!modules.length) continue;
    const section = el("section", { class: `domain ${domain}` }, el("h2", {}, domain));
    for (const module of modules) {
      const list = el("ul", { class: "activities" });
      for (const activity of module.activities) {
        const status = statusFor.get(activity.id) ?? "NotAttempted";
        list.append(
          el(
            "li",
            { class: "activity-row", "data-activity": activity.id },
            el("span", { class: "title" }, activity.title),
            el("span", { class: `badge ${status}` }, badgeText(status)),
            el(
              "button",
              { class: "enter", onclick: () => navigate({ page: "learning", activityId: activity.id }) },
              "Enter",
            ),
          ),
        );
      }
      const unlocked = unlockedFor.get(module.id) ?? false;
      const diagnosisButton = el(
        "button",
        { class: "enter", onclick: () => navigate({ page: "diagnosis", diagnosisId: module.diagnosis_id }) },
        "Enter",
      ) as HTMLButtonElement;
      diagnosisButton.disabled = !unlocked;
      list.append(
        el(
          "li",
          { class: `activity-row diagnosis ${unlocked ? "unlocked" : "locked"}`, "data-diagnosis": module.diagnosis_id },
          el("span", { class: "title" }, `Diagnosis: ${module.title}`),
          el("span", { class: "badge" }, unlocked ? "unlocked" : "locked"),
          diagnosisButton,
        ),
      );
      section.append(el("div", { class: "module" }, el("h3", {}, module.title), list));
    }
    container.append(section);
  }
}

function badgeText(status: string): string {
  switch (status) {
    case "Completed":
      return "completed";
    case "Attempted":
      return "attempted but not completed";
    default:
      return "not attempted";
  }
}

export function createProgressPage(api: ApiClient): { root: HTMLElement; load(): Promise<void> } {
  const container = el("div", { class: "page progress" });
  return {
    root: container,
    async load() {
      const [outline, view] = await Promise.all([api.packOutline(), api.progress()]);
      renderProgress(container, outline, view);
    },
  };
}
