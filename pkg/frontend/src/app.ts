// Browser wiring: connects the pure modules to the DOM. Everything with
// behavior worth testing lives in the imported modules; this file only
// shuffles events and pixels.

import {
  ApiError,
  latestWins,
  predict,
  whatif,
  type PredictRequest,
  type PredictResponse,
  type TargetType,
  type WhatIfResponse,
} from "./api";
import { debounce } from "./debounce";
import { applyDrag, hitHandle, type Handle } from "./drag";
import { bilinearUpsample, heatmapRgba } from "./heatmap";
import { differsOnlyInY, pinPlacement, sortedPins } from "./compare";
import {
  clampBox,
  deserializeState,
  initialState,
  serializeState,
  type Box,
  type SessionState,
} from "./state";
import { formatSeconds, gridCells, gridNeedsWarning } from "./whatif";

const API_BASE = (window as unknown as { API_BASE?: string }).API_BASE ?? "";

let state: SessionState = initialState();
let image: HTMLImageElement | null = null;

const canvas = document.getElementById("page") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const timeEl = document.getElementById("time")!;
const hintEl = document.getElementById("hint")!;
const errorEl = document.getElementById("error")!;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;
const pinsEl = document.getElementById("pins")!;
const gridEl = document.getElementById("whatif")!;

function setError(err: unknown) {
  if (err instanceof ApiError) {
    errorEl.textContent = `${err.field}: ${err.message}`;
  } else {
    errorEl.textContent = String(err);
  }
  retryBtn.hidden = false;
}

function clearError() {
  errorEl.textContent = "";
  retryBtn.hidden = true;
}

function requestBody(box: Box): PredictRequest {
  return {
    screenshot: state.screenshot ?? "",
    bbox: [box.x, box.y, box.w, box.h],
    target_type: state.targetType,
    n_candidates: state.nCandidates,
  };
}

const predictLatest = latestWins((signal, body: PredictRequest) =>
  predict(API_BASE, body, signal),
);
const whatifLatest = latestWins((signal, body: PredictRequest) =>
  whatif(API_BASE, { ...body, grid: state.grid }, signal),
);

function renderPrediction(resp: PredictResponse) {
  state = { ...state, lastPrediction: resp };
  timeEl.textContent = formatSeconds(resp.seconds);
  drawPage();
}

function drawPage() {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (image) ctx.drawImage(image, 0, 0, canvas.width, canvas.height);
  const resp = state.lastPrediction;
  if (resp) {
    const up = bilinearUpsample(resp.attention, resp.grid, canvas.width, canvas.height);
    const rgba = heatmapRgba(up, canvas.width, canvas.height, state.heatmapOpacity);
    const overlay = new ImageData(
      new Uint8ClampedArray(rgba),
      canvas.width,
      canvas.height,
    );
    const off = document.createElement("canvas");
    off.width = canvas.width;
    off.height = canvas.height;
    off.getContext("2d")!.putImageData(overlay, 0, 0);
    ctx.drawImage(off, 0, 0);
  }
  ctx.strokeStyle = "#00ff88";
  ctx.lineWidth = 2;
  ctx.strokeRect(state.box.x, state.box.y, state.box.w, state.box.h);
  for (const pin of state.pins) {
    ctx.strokeStyle = "#ffaa00";
    ctx.strokeRect(pin.box.x, pin.box.y, pin.box.w, pin.box.h);
  }
}

const requestPrediction = debounce(() => {
  if (!state.screenshot) return;
  clearError();
  predictLatest(requestBody(state.box))
    .then((resp) => {
      if (resp) renderPrediction(resp);
    })
    .catch(setError);
}, 250);

function renderWhatIf(resp: WhatIfResponse) {
  state = { ...state, lastWhatIf: resp };
  gridEl.innerHTML = "";
  for (const cell of gridCells(resp)) {
    const div = document.createElement("div");
    div.className = "cell";
    div.title = cell.tooltip;
    div.textContent = formatSeconds(cell.seconds);
    div.style.background = `rgb(${cell.color[0]}, ${cell.color[1]}, ${cell.color[2]})`;
    div.style.gridRow = String(cell.row + 1);
    div.style.gridColumn = String(cell.col + 1);
    gridEl.appendChild(div);
  }
}

function requestWhatIf() {
  if (!state.screenshot) return;
  const { rows, cols } = state.grid;
  if (gridNeedsWarning(rows, cols)) {
    const ok = window.confirm(
      `a ${rows}x${cols} grid means ${rows * cols} predictions and may be slow; continue?`,
    );
    if (!ok) return;
  }
  clearError();
  whatifLatest(requestBody(state.box))
    .then((resp) => {
      if (resp) renderWhatIf(resp);
    })
    .catch(setError);
}

function renderPins() {
  pinsEl.innerHTML = "";
  const pins = sortedPins(state.pins);
  for (const pin of pins) {
    const li = document.createElement("li");
    li.textContent = `${pin.label} (${pin.box.x}, ${pin.box.y}): ${formatSeconds(pin.seconds)}`;
    pinsEl.appendChild(li);
  }
  if (pins.length === 2 && differsOnlyInY(pins[0].box, pins[1].box)) {
    const note = document.createElement("li");
    note.textContent =
      pins[0].box.y < pins[1].box.y
        ? "higher placement is faster"
        : "lower placement is faster";
    pinsEl.appendChild(note);
  }
}

// bbox drag and resize
let handle: Handle = null;
let last: { x: number; y: number } | null = null;

canvas.addEventListener("pointerdown", (ev) => {
  const r = canvas.getBoundingClientRect();
  const px = ((ev.clientX - r.left) / r.width) * canvas.width;
  const py = ((ev.clientY - r.top) / r.height) * canvas.height;
  handle = hitHandle(state.box, px, py);
  last = { x: px, y: py };
});

canvas.addEventListener("pointermove", (ev) => {
  if (!handle || !last) return;
  const r = canvas.getBoundingClientRect();
  const px = ((ev.clientX - r.left) / r.width) * canvas.width;
  const py = ((ev.clientY - r.top) / r.height) * canvas.height;
  const raw = applyDrag(state.box, handle, px - last.x, py - last.y);
  last = { x: px, y: py };
  const { box, hint } = clampBox(raw, state.pageWidth, state.pageHeight);
  hintEl.textContent = hint ?? "";
  state = { ...state, box };
  drawPage();
  requestPrediction();
});

window.addEventListener("pointerup", () => {
  handle = null;
  last = null;
});

// controls
(document.getElementById("file") as HTMLInputElement).addEventListener("change", (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const reader = new FileReader();
  reader.onload = () => {
    const url = reader.result as string;
    const b64 = url.slice(url.indexOf(",") + 1);
    image = new Image();
    image.onload = () => {
      state = { ...state, screenshot: b64 };
      drawPage();
      requestPrediction();
    };
    image.src = url;
  };
  reader.readAsDataURL(file);
});

(document.getElementById("type") as HTMLSelectElement).addEventListener("change", (ev) => {
  state = { ...state, targetType: (ev.target as HTMLSelectElement).value as TargetType };
  requestPrediction();
});

(document.getElementById("candidates") as HTMLInputElement).addEventListener("change", (ev) => {
  state = { ...state, nCandidates: Number((ev.target as HTMLInputElement).value) };
  requestPrediction();
});

(document.getElementById("opacity") as HTMLInputElement).addEventListener("input", (ev) => {
  state = { ...state, heatmapOpacity: Number((ev.target as HTMLInputElement).value) };
  drawPage();
});

document.getElementById("run-whatif")!.addEventListener("click", requestWhatIf);

document.getElementById("pin")!.addEventListener("click", () => {
  if (!state.lastPrediction) return;
  state = pinPlacement(state, state.lastPrediction.seconds);
  renderPins();
  drawPage();
});

retryBtn.addEventListener("click", () => requestPrediction());

document.getElementById("share")!.addEventListener("click", () => {
  window.location.hash = encodeURIComponent(serializeState(state));
});

if (window.location.hash.length > 1) {
  try {
    state = deserializeState(decodeURIComponent(window.location.hash.slice(1)));
    drawPage();
  } catch {
    // stale or malformed fragment, start fresh
  }
}
