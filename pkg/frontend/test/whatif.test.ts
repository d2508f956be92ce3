import { describe, expect, it } from "vitest";
import type { WhatIfResponse } from "../src/api";
import { formatSeconds, gridCells, gridNeedsWarning, GRID_WARN_CELLS } from "../src/whatif";

const GRID: WhatIfResponse = {
  rows: 2,
  cols: 2,
  x_positions: [0, 512],
  y_positions: [0, 512],
  seconds: [
    [3.0, 3.5],
    [4.0, 5.0],
  ],
};

describe("gridCells", () => {
  it("keeps the service values verbatim in cells and tooltips", () => {
    const cells = gridCells(GRID);
    expect(cells).toHaveLength(4);
    const last = cells[3];
    expect(last.seconds).toBe(5.0);
    expect(last.x).toBe(512);
    expect(last.y).toBe(512);
    expect(last.tooltip).toBe("(512, 512): 5.00 s");
  });

  it("colors the fastest cell blue and the slowest red on a min-max scale", () => {
    const cells = gridCells(GRID);
    expect(cells[0].color).toEqual([0, 0, 255]);
    expect(cells[3].color).toEqual([255, 0, 0]);
  });

  it("a 1x1 grid displays exactly the predict panel value", () => {
    const one: WhatIfResponse = {
      rows: 1,
      cols: 1,
      x_positions: [100],
      y_positions: [200],
      seconds: [[4.27]],
    };
    const cells = gridCells(one);
    expect(cells).toHaveLength(1);
    expect(formatSeconds(cells[0].seconds)).toBe(formatSeconds(4.27));
  });
});

describe("gridNeedsWarning", () => {
  it("warns only above the documented cell budget", () => {
    expect(gridNeedsWarning(16, 16)).toBe(false);
    expect(gridNeedsWarning(17, 16)).toBe(true);
    expect(16 * 16).toBe(GRID_WARN_CELLS);
  });
});
