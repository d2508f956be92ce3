import type { Box } from "./state";

export type Handle =
  | "move"
  | "nw"
  | "ne"
  | "sw"
  | "se"
  | null;

const HANDLE_RADIUS = 8;

function near(px: number, py: number, x: number, y: number): boolean {
  return Math.abs(px - x) <= HANDLE_RADIUS && Math.abs(py - y) <= HANDLE_RADIUS;
}

/** Maps a pointer-down position to the drag mode it starts. */
export function hitHandle(box: Box, px: number, py: number): Handle {
  if (near(px, py, box.x, box.y)) return "nw";
  if (near(px, py, box.x + box.w, box.y)) return "ne";
  if (near(px, py, box.x, box.y + box.h)) return "sw";
  if (near(px, py, box.x + box.w, box.y + box.h)) return "se";
  if (px >= box.x && px <= box.x + box.w && py >= box.y && py <= box.y + box.h) {
    return "move";
  }
  return null;
}

/**
 * Applies a pointer delta to the box for the given handle. Returns the
 * raw geometry; the caller clamps it to session invariants.
 */
export function applyDrag(box: Box, handle: Handle, dx: number, dy: number): Box {
  switch (handle) {
    case "move":
      return { ...box, x: box.x + dx, y: box.y + dy };
    case "nw":
      return { x: box.x + dx, y: box.y + dy, w: box.w - dx, h: box.h - dy };
    case "ne":
      return { x: box.x, y: box.y + dy, w: box.w + dx, h: box.h - dy };
    case "sw":
      return { x: box.x + dx, y: box.y, w: box.w - dx, h: box.h + dy };
    case "se":
      return { x: box.x, y: box.y, w: box.w + dx, h: box.h + dy };
    default:
      return box;
  }
}
