// SPA bootstrap: client routing over the three page types. The only
// client-side persistence is the auth token for the current tab.

import { ApiClient, ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import { createDiagnosisPage } from "./pages/diagnosis.js";
import { createLearningPage } from "./pages/learning.js";
import { createLoginPage } from "./pages/login.js";
import { createProgressPage } from "./pages/progress.js";
import { navigate, parseRoute } from "./router.js";

const api = new ApiClient("");

async function show(root: HTMLElement): Promise<void> {
  const route = api.token ? parseRoute(window.location.hash) : { page: "login" as const };
  clear(root);
  try {
    if (route.page === "login") {
      root.append(createLoginPage(api));
    } else if (route.page === "progress") {
      const page = createProgressPage(api);
      root.append(page.root);
      await page.load();
    } else if (route.page === "learning") {
      const page = createLearningPage(api, route.activityId);
      root.append(page.root);
      await page.load();
    } else {
      const page = createDiagnosisPage(api, route.diagnosisId);
      root.append(page.root);
      await page.load();
    }
  } catch (error) {
    if (error instanceof ApiError && error.status === 401) {
      api.token = null;
      navigate({ page: "login" });
      return;
    }
    if (error instanceof ApiError && error.status === 423) {
      root.append(el("p", { class: "error" }, "This diagnosis is still locked - finish the module first."));
      return;
    }
    root.append(el("p", { class: "error" }, error instanceof Error ? error.message : "something went wrong"));
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  window.addEventListener("hashchange", () => void show(root));
  void show(root);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
