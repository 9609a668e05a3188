import { ApiClient, ApiError } from "../api.js";
import { el } from "../dom.js";
import { navigate } from "../router.js";

export function createLoginPage(api: ApiClient): HTMLElement {
  const username = el("input", { type: "text", placeholder: "username" }) as HTMLInputElement;
  const password = el("input", { type: "password", placeholder: "password" }) as HTMLInputElement;
  const error = el("p", { class: "error" });

  async function submit(register: boolean): Promise<void> {
    error.textContent = "";
    try {
      if (register) await api.register(username.value, password.value);
      await api.login(username.value, password.value);
      navigate({ page: "progress" });
    } catch (exc) {
      error.textContent = exc instanceof ApiError ? exc.message : "login failed";
    }
  }

  return el(
    "div",
    { class: "page login" },
    el("h1", {}, "Teacher PD tutor"),
    username,
    password,
    el("div", { class: "buttons" },
      el("button", { onclick: () => void submit(false) }, "Log in"),
      el("button", { onclick: () => void submit(true) }, "Register"),
    ),
    error,
  );
}
