import type { PredictResponse, TargetType, WhatIfResponse } from "./api";
import { TARGET_TYPES } from "./api";

export const PAGE_SIZE = 1024;
export const MIN_BOX = 15;

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface Pin {
  label: string;
  box: Box;
  seconds: number;
}

/**
 * Everything needed to reconstruct the explorer view. Serializable so a
 * session can be shared as a file or URL fragment. The loaded screenshot
 * is referenced, never mutated, by any state transition.
 */
export interface SessionState {
  screenshot: string | null;
  pageWidth: number;
  pageHeight: number;
  box: Box;
  targetType: TargetType;
  nCandidates: number;
  heatmapOpacity: number;
  grid: { rows: number; cols: number };
  pins: Pin[];
  lastPrediction: PredictResponse | null;
  lastWhatIf: WhatIfResponse | null;
}

export function initialState(): SessionState {
  return {
    screenshot: null,
    pageWidth: PAGE_SIZE,
    pageHeight: PAGE_SIZE,
    box: { x: 100, y: 100, w: 80, h: 40 },
    targetType: "link",
    nCandidates: 10,
    heatmapOpacity: 0.5,
    grid: { rows: 8, cols: 8 },
    pins: [],
    lastPrediction: null,
    lastWhatIf: null,
  };
}

export interface ClampResult {
  box: Box;
  /** True when the requested box violated a constraint and was adjusted. */
  clamped: boolean;
  hint: string | null;
}

/**
 * Snaps a box to the session's invariants: at least MIN_BOX on each side
 * and fully inside the page. Returns a hint string for the UI when the
 * input had to be adjusted.
 */
export function clampBox(box: Box, pageWidth: number, pageHeight: number): ClampResult {
  let { x, y, w, h } = box;
  const hints: string[] = [];
  if (w < MIN_BOX || h < MIN_BOX) {
    w = Math.max(w, MIN_BOX);
    h = Math.max(h, MIN_BOX);
    hints.push(`target box must be at least ${MIN_BOX}x${MIN_BOX} px`);
  }
  if (w > pageWidth) w = pageWidth;
  if (h > pageHeight) h = pageHeight;
  const nx = Math.min(Math.max(x, 0), pageWidth - w);
  const ny = Math.min(Math.max(y, 0), pageHeight - h);
  if (nx !== x || ny !== y) {
    hints.push("target box must stay inside the page");
  }
  return {
    box: { x: nx, y: ny, w, h },
    clamped: hints.length > 0,
    hint: hints.length > 0 ? hints.join("; ") : null,
  };
}

/** Returns a new state with the box replaced by its clamped form. */
export function withBox(state: SessionState, box: Box): SessionState {
  const { box: clamped } = clampBox(box, state.pageWidth, state.pageHeight);
  return { ...state, box: clamped };
}

export function serializeState(state: SessionState): string {
  return JSON.stringify(state);
}

export function deserializeState(raw: string): SessionState {
  const data = JSON.parse(raw);
  const base = initialState();
  if (typeof data !== "object" || data === null) {
    throw new Error("session state must be a JSON object");
  }
  const state: SessionState = { ...base, ...data };
  if (!TARGET_TYPES.includes(state.targetType)) {
    throw new Error(`unknown target type ${String(state.targetType)}`);
  }
  if (!Number.isInteger(state.nCandidates) || state.nCandidates < 1) {
    throw new Error("n_candidates must be a positive integer");
  }
  if (state.heatmapOpacity < 0 || state.heatmapOpacity > 1) {
    throw new Error("heatmap opacity must be in [0, 1]");
  }
  state.box = clampBox(state.box, state.pageWidth, state.pageHeight).box;
  return state;
}
