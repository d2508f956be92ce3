import type { WhatIfResponse } from "./api";
import { colorFor, minMaxScale, normalize } from "./heatmap";

/** Cells beyond this count trigger a warning before the request is sent. */
export const GRID_WARN_CELLS = 256;

export interface GridCell {
  row: number;
  col: number;
  x: number;
  y: number;
  seconds: number;
  color: [number, number, number];
  tooltip: string;
}

/** Number shown in a grid cell or the predict panel, same rounding. */
export function formatSeconds(seconds: number): string {
  return `${seconds.toFixed(2)} s`;
}

/**
 * Colors every placement on a min-max scale over this grid: the fastest
 * placement is blue, the slowest red. Tooltips carry the exact seconds.
 */
export function gridCells(resp: WhatIfResponse): GridCell[] {
  const flat: number[] = [];
  for (const row of resp.seconds) {
    for (const v of row) flat.push(v);
  }
  const scale = minMaxScale(flat);
  const cells: GridCell[] = [];
  for (let r = 0; r < resp.rows; r++) {
    for (let c = 0; c < resp.cols; c++) {
      const seconds = resp.seconds[r][c];
      cells.push({
        row: r,
        col: c,
        x: resp.x_positions[c],
        y: resp.y_positions[r],
        seconds,
        color: colorFor(normalize(seconds, scale)),
        tooltip: `(${resp.x_positions[c]}, ${resp.y_positions[r]}): ${formatSeconds(seconds)}`,
      });
    }
  }
  return cells;
}

/** True when the requested grid is large enough to warrant a warning. */
export function gridNeedsWarning(rows: number, cols: number): boolean {
  return rows * cols > GRID_WARN_CELLS;
}
