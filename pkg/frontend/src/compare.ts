import type { Box, Pin, SessionState } from "./state";

/** Adds the current placement and its predicted time to the pin board. */
export function pinPlacement(state: SessionState, seconds: number): SessionState {
  const label = `pin ${state.pins.length + 1}`;
  const pin: Pin = { label, box: { ...state.box }, seconds };
  return { ...state, pins: [...state.pins, pin] };
}

/** Pins sorted fastest first for the side-by-side comparison panel. */
export function sortedPins(pins: Pin[]): Pin[] {
  return [...pins].sort((a, b) => a.seconds - b.seconds);
}

export function removePin(state: SessionState, label: string): SessionState {
  return { ...state, pins: state.pins.filter((p) => p.label !== label) };
}

/** True when the two placements differ only in vertical position. */
export function differsOnlyInY(a: Box, b: Box): boolean {
  return a.x === b.x && a.w === b.w && a.h === b.h && a.y !== b.y;
}
