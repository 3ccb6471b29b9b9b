/**
 * Model loading and inference. Two artifact kinds, both plain JSON:
 *
 *   {"kind": "stub", "classes": K, "input_w": W, "input_h": H,
 *    "logits": [K numbers]}
 *       answers every input with the same logits; protocol and plumbing
 *       tests run against this.
 *
 *   {"kind": "linear", "classes": K, "input_w": W, "input_h": H,
 *    "weights": [K rows of W*H*3 numbers], "bias": [K numbers]}
 *       logits = weights @ normalized_rgb + bias; the export format for
 *       small classifier heads.
 */

import * as fs from "node:fs";

export interface BridgeConfig {
  modelPath: string;
  mean: number[];
  std: number[];
  softmax: boolean;
}

export interface Model {
  classes: number;
  inputW: number;
  inputH: number;
  infer(features: Float64Array): number[];
}

interface ModelDoc {
  kind: string;
  classes: number;
  input_w: number;
  input_h: number;
  logits?: number[];
  weights?: number[][];
  bias?: number[];
}

export function loadModel(path: string): Model {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8")) as ModelDoc;
  if (!Number.isInteger(doc.classes) || doc.classes < 2) {
    throw new Error(`model ${path}: classes must be an integer >= 2`);
  }
  if (!Number.isInteger(doc.input_w) || !Number.isInteger(doc.input_h) || doc.input_w < 1 || doc.input_h < 1) {
    throw new Error(`model ${path}: input_w/input_h must be positive integers`);
  }

  if (doc.kind === "stub") {
    const logits = doc.logits;
    if (!Array.isArray(logits) || logits.length !== doc.classes) {
      throw new Error(`model ${path}: stub needs ${doc.classes} logits`);
    }
    return {
      classes: doc.classes,
      inputW: doc.input_w,
      inputH: doc.input_h,
      infer: () => logits.slice(),
    };
  }

  if (doc.kind === "linear") {
    const { weights, bias } = doc;
    const featureLen = doc.input_w * doc.input_h * 3;
    if (!Array.isArray(weights) || weights.length !== doc.classes) {
      throw new Error(`model ${path}: linear needs ${doc.classes} weight rows`);
    }
    for (const row of weights) {
      if (row.length !== featureLen) {
        throw new Error(`model ${path}: weight rows must have ${featureLen} entries`);
      }
    }
    if (!Array.isArray(bias) || bias.length !== doc.classes) {
      throw new Error(`model ${path}: linear needs ${doc.classes} bias entries`);
    }
    const rows = weights.map((r) => Float64Array.from(r));
    return {
      classes: doc.classes,
      inputW: doc.input_w,
      inputH: doc.input_h,
      infer: (features) => {
        const out = new Array<number>(doc.classes);
        for (let k = 0; k < doc.classes; k++) {
          let acc = bias[k];
          const row = rows[k];
          for (let i = 0; i < row.length; i++) acc += row[i] * features[i];
          out[k] = acc;
        }
        return out;
      },
    };
  }

  throw new Error(`model ${path}: unknown kind ${JSON.stringify(doc.kind)}`);
}

export function softmax(logits: number[]): number[] {
  const m = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - m));
  const sum = exps.reduce((a, b) => a + b, 0);
  return exps.map((v) => v / sum);
}
