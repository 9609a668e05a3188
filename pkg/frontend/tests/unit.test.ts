import { describe, expect, it, vi } from "vitest";

import { ApiError, sendWithRetry, TurnResponse } from "../src/api.js";
import { parseRoute, routeHash } from "../src/router.js";
import { cellsFromInputs, createFillTablePanel, DEFAULT_GRID } from "../src/tools/fillTable.js";
import {
  buildTwoLinePayload,
  createTwoLinePanel,
  parseNumeric,
  renderTwoLineSvg,
} from "../src/tools/twoLine.js";

describe("router", () => {
  it("round-trips all routes", () => {
    for (const route of [
      { page: "login" } as const,
      { page: "progress" } as const,
      { page: "learning", activityId: "CKSM1-1" } as const,
      { page: "diagnosis", diagnosisId: "CKSM1-D" } as const,
    ]) {
      expect(parseRoute(routeHash(route))).toEqual(route);
    }
  });

  it("falls back to login for junk", () => {
    expect(parseRoute("#/whatever/else/entirely").page).toBe("login");
    expect(parseRoute("").page).toBe("login");
  });
});

describe("numeric parsing", () => {
  it("accepts plain and signed decimals", () => {
    expect(parseNumeric("2")).toBe(2);
    expect(parseNumeric(" -1.5 ")).toBe(-1.5);
    expect(parseNumeric("0")).toBe(0);
  });

  it("rejects junk and blanks", () => {
    expect(parseNumeric("abc")).toBeNull();
    expect(parseNumeric("")).toBeNull();
    expect(parseNumeric("1/2")).toBeNull();
    expect(parseNumeric("Infinity")).toBeNull();
  });
});

describe("two-line board", () => {
  it("payload carries the exact numbers", () => {
    const payload = buildTwoLinePayload({
      line1: { slope: 2, intercept: 0 },
      line2: { slope: 1, intercept: 0 },
    });
    expect(payload).toEqual({ line1: { slope: 2, intercept: 0 }, line2: { slope: 1, intercept: 0 } });
  });

  it("renders two lines, zero slopes give horizontal lines", () => {
    const svg = renderTwoLineSvg({ line1: { slope: 0, intercept: 5 }, line2: { slope: 0, intercept: 10 } });
    const lines = svg.querySelectorAll("polyline");
    expect(lines.length).toBe(2);
    for (const line of lines) {
      const points = (line.getAttribute("points") ?? "").split(" ").map((p) => p.split(",")[1]);
      expect(points[0]).toBe(points[1]); // same y at both ends
    }
  });

  it("identical params render overlapping lines and still submit", () => {
    const submitted: unknown[] = [];
    const panel = createTwoLinePanel((payload) => submitted.push(payload));
    for (const line of ["line1", "line2"] as const) {
      panel.setInput(line, "slope", "3");
      panel.setInput(line, "intercept", "1");
    }
    expect(panel.submitButton.disabled).toBe(false);
    panel.submit();
    expect(submitted).toEqual([{ line1: { slope: 3, intercept: 1 }, line2: { slope: 3, intercept: 1 } }]);
  });

  it("blocks non-numeric input client-side", () => {
    const submitted: unknown[] = [];
    const panel = createTwoLinePanel((payload) => submitted.push(payload));
    panel.setInput("line1", "slope", "abc");
    expect(panel.submitButton.disabled).toBe(true);
    panel.submit();
    expect(submitted).toEqual([]);
    expect(panel.root.querySelector("input.invalid")).not.toBeNull();
  });
});

describe("fill-table board", () => {
  it("serializes row-major with blanks as nulls", () => {
    const result = cellsFromInputs([
      ["2", "3"],
      ["", "6"],
    ]);
    expect(result.cells).toEqual([
      [2, 3],
      [null, 6],
    ]);
    expect(result.invalid).toEqual([]);
  });

  it("all blanks are allowed (the backend judges them)", () => {
    const submitted: unknown[] = [];
    const panel = createFillTablePanel({ rows: 2, cols: 2 }, (payload) => submitted.push(payload));
    expect(panel.submitButton.disabled).toBe(false);
    panel.submit();
    expect(submitted).toEqual([{ cells: [[null, null], [null, null]] }]);
  });

  it("flags non-numeric cells and disables submit until cleared", () => {
    const submitted: unknown[] = [];
    const panel = createFillTablePanel(DEFAULT_GRID, (payload) => submitted.push(payload));
    panel.setCell(0, 0, "abc");
    expect(panel.submitButton.disabled).toBe(true);
    expect(panel.root.querySelector("input.invalid")).not.toBeNull();
    panel.submit();
    expect(submitted).toEqual([]);
    panel.setCell(0, 0, "4");
    expect(panel.submitButton.disabled).toBe(false);
    expect(panel.root.querySelector("input.invalid")).toBeNull();
  });

  it("preserves values exactly; ratio checking is the backend's job", () => {
    const result = cellsFromInputs([
      ["2", "4"],
      ["3", "6"],
    ]);
    expect(result.cells).toEqual([
      [2, 4],
      [3, 6],
    ]);
  });
});

describe("sendWithRetry", () => {
  const turn = { reply: "ok" } as unknown as TurnResponse;

  it("retries quietly on 409 then succeeds", async () => {
    let calls = 0;
    const waiting = vi.fn();
    const result = await sendWithRetry(
      async () => {
        calls += 1;
        if (calls < 3) throw new ApiError(409, "turn in flight");
        return turn;
      },
      waiting,
      1,
    );
    expect(result).toBe(turn);
    expect(calls).toBe(3);
    expect(waiting).toHaveBeenCalledTimes(2);
  });

  it("propagates 502 for an explicit retry affordance", async () => {
    await expect(
      sendWithRetry(
        async () => {
          throw new ApiError(502, "gateway down");
        },
        () => undefined,
        1,
      ),
    ).rejects.toMatchObject({ status: 502 });
  });
});
