/**
 * Bilinear resize and input normalization, matching the client toolkit's
 * resampling convention (centers aligned: src = (dst + 0.5) * scale - 0.5,
 * rounded half away from zero back to 8-bit).
 */

import type { DecodedImage } from "./png.js";

export function resizeBilinear(image: DecodedImage, outW: number, outH: number): DecodedImage {
  const { width: w, height: h, pixels } = image;
  if (outW === w && outH === h) {
    return { width: w, height: h, pixels: pixels.slice() };
  }
  const out = new Uint8Array(outW * outH * 4);

  const coords = (nOut: number, nIn: number) => {
    const lo = new Int32Array(nOut);
    const hi = new Int32Array(nOut);
    const frac = new Float64Array(nOut);
    for (let i = 0; i < nOut; i++) {
      let pos = ((i + 0.5) * nIn) / nOut - 0.5;
      pos = Math.min(Math.max(pos, 0), nIn - 1);
      lo[i] = Math.floor(pos);
      hi[i] = Math.min(lo[i] + 1, nIn - 1);
      frac[i] = pos - lo[i];
    }
    return { lo, hi, frac };
  };

  const cx = coords(outW, w);
  const cy = coords(outH, h);

  for (let y = 0; y < outH; y++) {
    for (let x = 0; x < outW; x++) {
      const dst = (y * outW + x) * 4;
      for (let c = 0; c < 4; c++) {
        const tl = pixels[(cy.lo[y] * w + cx.lo[x]) * 4 + c];
        const tr = pixels[(cy.lo[y] * w + cx.hi[x]) * 4 + c];
        const bl = pixels[(cy.hi[y] * w + cx.lo[x]) * 4 + c];
        const br = pixels[(cy.hi[y] * w + cx.hi[x]) * 4 + c];
        const top = tl * (1 - cx.frac[x]) + tr * cx.frac[x];
        const bot = bl * (1 - cx.frac[x]) + br * cx.frac[x];
        const value = top * (1 - cy.frac[y]) + bot * cy.frac[y];
        out[dst + c] = Math.min(255, Math.max(0, Math.floor(value + 0.5)));
      }
    }
  }
  return { width: outW, height: outH, pixels: out };
}

/** RGB scaled to [0,1] then (x - mean[c]) / std[c]; alpha is dropped. */
export function normalize(image: DecodedImage, mean: number[], std: number[]): Float64Array {
  const count = image.width * image.height;
  const out = new Float64Array(count * 3);
  for (let i = 0; i < count; i++) {
    for (let c = 0; c < 3; c++) {
      out[i * 3 + c] = (image.pixels[i * 4 + c] / 255 - mean[c]) / std[c];
    }
  }
  return out;
}
