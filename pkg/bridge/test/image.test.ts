import assert from "node:assert/strict";
import * as fs from "node:fs";
import * as path from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { normalize, resizeBilinear } from "../src/image.js";
import { decodePng } from "../src/png.js";

const fixtures = path.join(path.dirname(fileURLToPath(import.meta.url)), "..", "..", "test", "fixtures");

test("bilinear resize matches the client toolkit's frozen output exactly", () => {
  // expected pixels were produced by the Python side's resampler; both ends
  // must agree so declared input dims mean the same thing everywhere
  const big = decodePng(fs.readFileSync(path.join(fixtures, "big_rgba.png")));
  const expected = JSON.parse(
    fs.readFileSync(path.join(fixtures, "big_rgba_resized_8x8.json"), "utf-8"),
  );
  const resized = resizeBilinear(big, 8, 8);
  assert.equal(resized.width, 8);
  assert.equal(resized.height, 8);
  assert.deepEqual(Array.from(resized.pixels), expected.pixels);
});

test("resize to the same size is the identity", () => {
  const img = decodePng(fs.readFileSync(path.join(fixtures, "gradient_rgba.png")));
  const same = resizeBilinear(img, img.width, img.height);
  assert.deepEqual(Array.from(same.pixels), Array.from(img.pixels));
});

test("normalization applies (x/255 - mean) / std per channel and drops alpha", () => {
  const img = { width: 1, height: 1, pixels: Uint8Array.from([255, 128, 0, 9]) };
  const out = normalize(img, [0.5, 0.5, 0.5], [0.25, 0.5, 1.0]);
  assert.equal(out.length, 3);
  assert.ok(Math.abs(out[0] - (1.0 - 0.5) / 0.25) < 1e-12);
  assert.ok(Math.abs(out[1] - (128 / 255 - 0.5) / 0.5) < 1e-12);
  assert.ok(Math.abs(out[2] - (0.0 - 0.5) / 1.0) < 1e-12);
});
