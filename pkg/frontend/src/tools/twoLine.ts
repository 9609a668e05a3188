// Two-line draw board: two adjustable linear graphs y = slope * x + intercept
// on one axis. The submitted payload carries exactly the numbers shown in
// the inputs; all interpretation happens server-side.

import { el } from "../dom.js";

export interface LineParams {
  slope: number;
  intercept: number;
}

export interface TwoLineParams {
  line1: LineParams;
  line2: LineParams;
}

export function buildTwoLinePayload(params: TwoLineParams): TwoLineParams {
  return {
    line1: { slope: params.line1.slope, intercept: params.line1.intercept },
    line2: { slope: params.line2.slope, intercept: params.line2.intercept },
  };
}

// Strict numeric parse: "" or junk is null, which blocks submission.
export function parseNumeric(text: string): number | null {
  const trimmed = text.trim();
  if (trimmed === "") return null;
  const value = Number(trimmed);
  return Number.isFinite(value) ? value : null;
}

const VIEW = { width: 260, height: 200, xMax: 10, yMax: 30 };

function linePoints(params: LineParams): string {
  const x0 = 0;
  const x1 = VIEW.xMax;
  const toSvg = (x: number, y: number) => {
    const sx = 20 + (x / VIEW.xMax) * (VIEW.width - 40);
    const sy = VIEW.height - 20 - (y / VIEW.yMax) * (VIEW.height - 40);
    return `${sx.toFixed(1)},${sy.toFixed(1)}`;
  };
  return `${toSvg(x0, params.slope * x0 + params.intercept)} ${toSvg(x1, params.slope * x1 + params.intercept)}`;
}

export function renderTwoLineSvg(params: TwoLineParams): SVGSVGElement {
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${VIEW.width} ${VIEW.height}`);
  svg.setAttribute("class", "two-line-plot");
  const axes = document.createElementNS("http://www.w3.org/2000/svg", "path");
  axes.setAttribute(
    "d",
    `M20 ${VIEW.height - 20} H${VIEW.width - 20} M20 ${VIEW.height - 20} V20`,
  );
  axes.setAttribute("stroke", "#444");
  axes.setAttribute("fill", "none");
  svg.append(axes);
  for (const [key, color] of [
    ["line1", "#4045db"],
    ["line2", "#e07a00"],
  ] as const) {
    const poly = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    poly.setAttribute("points", linePoints(params[key]));
    poly.setAttribute("stroke", color);
    poly.setAttribute("fill", "none");
    poly.setAttribute("stroke-width", "2");
    poly.setAttribute("data-line", key);
    svg.append(poly);
  }
  return svg;
}

export interface TwoLinePanel {
  root: HTMLElement;
  setInput(line: "line1" | "line2", field: "slope" | "intercept", text: string): void;
  currentParams(): TwoLineParams | null;
  submit(): void;
  submitButton: HTMLButtonElement;
}

export function createTwoLinePanel(onSubmit: (payload: TwoLineParams) => void): TwoLinePanel {
  const inputs: Record<string, HTMLInputElement> = {};
  const plotHolder = el("div", { class: "plot-holder" });

  const fields = (line: "line1" | "line2", label: string) =>
    el(
      "fieldset",
      { class: `line-fields ${line}` },
      el("legend", {}, label),
      el("label", {}, "slope ", (inputs[`${line}.slope`] = el("input", { type: "text", value: "1" }))),
      el(
        "label",
        {},
        "intercept ",
        (inputs[`${line}.intercept`] = el("input", { type: "text", value: "0" })),
      ),
    );

  const submitButton = el("button", { class: "submit" }, "Submit to tutor") as HTMLButtonElement;
  const root = el(
    "div",
    { class: "tool-panel two-line" },
    el("h3", {}, "Two-line board"),
    fields("line1", "Line 1"),
    fields("line2", "Line 2"),
    plotHolder,
    submitButton,
  );

  function currentParams(): TwoLineParams | null {
    const values: Record<string, number> = {};
    for (const [key, input] of Object.entries(inputs)) {
      const parsed = parseNumeric(input.value);
      input.classList.toggle("invalid", parsed === null);
      if (parsed === null) return null;
      values[key] = parsed;
    }
    return {
      line1: { slope: values["line1.slope"], intercept: values["line1.intercept"] },
      line2: { slope: values["line2.slope"], intercept: values["line2.intercept"] },
    };
  }

  function refresh(): void {
    const params = currentParams();
    submitButton.disabled = params === null;
    plotHolder.replaceChildren(params ? renderTwoLineSvg(params) : el("p", { class: "flag" }, "numbers only"));
  }

  for (const input of Object.values(inputs)) {
    input.addEventListener("input", refresh);
  }
  refresh();

  function submit(): void {
    const params = currentParams();
    if (params !== null) onSubmit(buildTwoLinePayload(params));
  }

  submitButton.addEventListener("click", submit);

  return {
    root,
    submitButton,
    currentParams,
    submit,
    setInput(line, field, text) {
      inputs[`${line}.${field}`].value = text;
      inputs[`${line}.${field}`].dispatchEvent(new Event("input"));
    },
  };
}
