import { describe, expect, it } from "vitest";
import { differsOnlyInY, pinPlacement, removePin, sortedPins } from "../src/compare";
import { initialState } from "../src/state";

describe("pinPlacement", () => {
  it("copies the current box so later drags do not move the pin", () => {
    let state = initialState();
    state = pinPlacement(state, 4.5);
    const pinned = state.pins[0];
    state = { ...state, box: { ...state.box, y: state.box.y + 100 } };
    expect(pinned.box.y).not.toBe(state.box.y);
    expect(pinned.seconds).toBe(4.5);
  });

  it("labels pins in order", () => {
    let state = initialState();
    state = pinPlacement(state, 4.5);
    state = pinPlacement(state, 3.1);
    expect(state.pins.map((p) => p.label)).toEqual(["pin 1", "pin 2"]);
  });
});

describe("sortedPins", () => {
  it("orders fastest first without mutating the input", () => {
    let state = initialState();
    state = pinPlacement(state, 5.0);
    state = { ...state, box: { ...state.box, y: 40 } };
    state = pinPlacement(state, 3.2);
    const sorted = sortedPins(state.pins);
    expect(sorted.map((p) => p.seconds)).toEqual([3.2, 5.0]);
    expect(state.pins.map((p) => p.seconds)).toEqual([5.0, 3.2]);
  });
});

describe("differsOnlyInY", () => {
  it("is true for a pure vertical move", () => {
    const a = { x: 10, y: 20, w: 60, h: 40 };
    expect(differsOnlyInY(a, { ...a, y: 300 })).toBe(true);
  });

  it("is false when anything else changes or y is equal", () => {
    const a = { x: 10, y: 20, w: 60, h: 40 };
    expect(differsOnlyInY(a, { ...a })).toBe(false);
    expect(differsOnlyInY(a, { ...a, y: 300, x: 11 })).toBe(false);
    expect(differsOnlyInY(a, { ...a, y: 300, w: 61 })).toBe(false);
  });
});

describe("removePin", () => {
  it("removes by label", () => {
    let state = initialState();
    state = pinPlacement(state, 4.0);
    state = pinPlacement(state, 5.0);
    state = removePin(state, "pin 1");
    expect(state.pins.map((p) => p.label)).toEqual(["pin 2"]);
  });
});
