// Client-side rendering of the raw attention grid the service returns.
// The server stays render-free; all color mapping happens here.

export interface Scale {
  min: number;
  max: number;
}

/** Min-max scale over the given values; degenerate input maps to [0, 1]. */
export function minMaxScale(values: ArrayLike<number>): Scale {
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    if (v < min) min = v;
    if (v > max) max = v;
  }
  if (!isFinite(min) || !isFinite(max) || min === max) {
    return { min: 0, max: 1 };
  }
  return { min, max };
}

export function normalize(value: number, scale: Scale): number {
  const t = (value - scale.min) / (scale.max - scale.min);
  return Math.min(Math.max(t, 0), 1);
}

/**
 * Blue-to-red ramp through white, min-max scaled: the smallest value on
 * screen is pure blue, the largest pure red. Relative, not absolute, by
 * design; tooltips carry the numbers.
 */
export function colorFor(t: number): [number, number, number] {
  const c = Math.min(Math.max(t, 0), 1);
  if (c < 0.5) {
    const u = c * 2;
    return [Math.round(255 * u), Math.round(255 * u), 255];
  }
  const u = (c - 0.5) * 2;
  return [255, Math.round(255 * (1 - u)), Math.round(255 * (1 - u))];
}

/**
 * Bilinearly upsamples a square grid of floats (row-major, length
 * grid*grid) to outW by outH, sampling cell centers so a constant grid
 * stays constant and corners map to corner cells.
 */
export function bilinearUpsample(
  values: ArrayLike<number>,
  grid: number,
  outW: number,
  outH: number,
): Float32Array {
  if (values.length !== grid * grid) {
    throw new Error(`expected ${grid * grid} values, got ${values.length}`);
  }
  const out = new Float32Array(outW * outH);
  for (let oy = 0; oy < outH; oy++) {
    const gy = outH === 1 ? 0 : (oy / (outH - 1)) * (grid - 1);
    const y0 = Math.floor(gy);
    const y1 = Math.min(y0 + 1, grid - 1);
    const fy = gy - y0;
    for (let ox = 0; ox < outW; ox++) {
      const gx = outW === 1 ? 0 : (ox / (outW - 1)) * (grid - 1);
      const x0 = Math.floor(gx);
      const x1 = Math.min(x0 + 1, grid - 1);
      const fx = gx - x0;
      const top = values[y0 * grid + x0] * (1 - fx) + values[y0 * grid + x1] * fx;
      const bot = values[y1 * grid + x0] * (1 - fx) + values[y1 * grid + x1] * fx;
      out[oy * outW + ox] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

/**
 * Turns upsampled attention values into an RGBA pixel buffer suitable for
 * putImageData, with uniform alpha set by the opacity slider.
 */
export function heatmapRgba(
  values: Float32Array,
  width: number,
  height: number,
  opacity: number,
): Uint8ClampedArray {
  if (values.length !== width * height) {
    throw new Error(`expected ${width * height} values, got ${values.length}`);
  }
  const scale = minMaxScale(values);
  const alpha = Math.round(255 * Math.min(Math.max(opacity, 0), 1));
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < values.length; i++) {
    const [r, g, b] = colorFor(normalize(values[i], scale));
    rgba[i * 4] = r;
    rgba[i * 4 + 1] = g;
    rgba[i * 4 + 2] = b;
    rgba[i * 4 + 3] = alpha;
  }
  return rgba;
}
