// Fill-table board: an editable numeric grid. Blanks submit as nulls (the
// backend judges them); non-numeric cells are flagged and block submission.

import { el } from "../dom.js";
import { parseNumeric } from "./twoLine.js";

export interface GridSpec {
  rows: number;
  cols: number;
  columnLabels?: string[];
  hint?: string;
}

export const DEFAULT_GRID: GridSpec = {
  rows: 4,
  cols: 2,
  columnLabels: ["first quantity", "second quantity"],
  hint: "Fill pairs that belong together; leave unknown cells blank.",
};

export interface CellsResult {
  cells: (number | null)[][];
  invalid: [number, number][];
}

// Row-major cells from raw input strings: "" -> null, junk -> invalid.
export function cellsFromInputs(texts: string[][]): CellsResult {
  const cells: (number | null)[][] = [];
  const invalid: [number, number][] = [];
  texts.forEach((row, r) => {
    const out: (number | null)[] = [];
    row.forEach((text, c) => {
      if (text.trim() === "") {
        out.push(null);
      } else {
        const value = parseNumeric(text);
        if (value === null) {
          invalid.push([r, c]);
          out.push(null);
        } else {
          out.push(value);
        }
      }
    });
    cells.push(out);
  });
  return { cells, invalid };
}

export interface FillTablePanel {
  root: HTMLElement;
  setCell(row: number, col: number, text: string): void;
  currentCells(): CellsResult;
  submit(): void;
  submitButton: HTMLButtonElement;
}

export function createFillTablePanel(
  spec: GridSpec,
  onSubmit: (payload: { cells: (number | null)[][] }) => void,
): FillTablePanel {
  const inputs: HTMLInputElement[][] = [];
  const table = el("table", { class: "fill-table" });
  if (spec.columnLabels) {
    table.append(el("tr", {}, ...spec.columnLabels.map((label) => el("th", {}, label))));
  }
  for (let r = 0; r < spec.rows; r++) {
    const rowInputs: HTMLInputElement[] = [];
    const tr = el("tr", {});
    for (let c = 0; c < spec.cols; c++) {
      const input = el("input", { type: "text", "data-cell": `${r},${c}` });
      rowInputs.push(input);
      tr.append(el("td", {}, input));
    }
    inputs.push(rowInputs);
    table.append(tr);
  }

  const submitButton = el("button", { class: "submit" }, "Submit to tutor") as HTMLButtonElement;
  const flag = el("p", { class: "flag", hidden: "hidden" }, "numbers only - clear the marked cells");
  const root = el(
    "div",
    { class: "tool-panel fill-table-panel" },
    el("h3", {}, "Fill-table board"),
    spec.hint ? el("p", { class: "hint-row" }, spec.hint) : "",
    table,
    flag,
    submitButton,
  );

  function currentCells(): CellsResult {
    const result = cellsFromInputs(inputs.map((row) => row.map((input) => input.value)));
    inputs.flat().forEach((input) => input.classList.remove("invalid"));
    for (const [r, c] of result.invalid) {
      inputs[r][c].classList.add("invalid");
    }
    submitButton.disabled = result.invalid.length > 0;
    flag.toggleAttribute("hidden", result.invalid.length === 0);
    return result;
  }

  inputs.flat().forEach((input) => input.addEventListener("input", currentCells));
  currentCells();

  function submit(): void {
    const result = currentCells();
    if (result.invalid.length === 0) onSubmit({ cells: result.cells });
  }

  submitButton.addEventListener("click", submit);

  return {
    root,
    submitButton,
    currentCells,
    submit,
    setCell(row, col, text) {
      inputs[row][col].value = text;
      inputs[row][col].dispatchEvent(new Event("input"));
    },
  };
}
