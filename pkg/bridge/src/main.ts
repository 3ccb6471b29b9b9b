#!/usr/bin/env node
/**
 * CLI entry point. Launch from the client toolkit as
 *   proc:node bridge/dist/src/main.js --model model.json [--mean r,g,b]
 *       [--std r,g,b] [--raw-logits]
 */

import { BridgeConfig } from "./model.js";
import { serve } from "./server.js";

function parseTriplet(value: string, flag: string): number[] {
  const parts = value.split(",").map(Number);
  if (parts.length !== 3 || parts.some((v) => !Number.isFinite(v))) {
    throw new Error(`${flag} expects three comma-separated numbers, got ${value}`);
  }
  return parts;
}

export function parseArgs(argv: string[]): BridgeConfig {
  let modelPath = "";
  let mean = [0, 0, 0];
  let std = [1, 1, 1];
  let softmax = true;

  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    switch (arg) {
      case "--model":
        modelPath = argv[++i] ?? "";
        break;
      case "--mean":
        mean = parseTriplet(argv[++i] ?? "", "--mean");
        break;
      case "--std":
        std = parseTriplet(argv[++i] ?? "", "--std");
        break;
      case "--raw-logits":
        softmax = false;
        break;
      default:
        throw new Error(`unknown flag ${arg}`);
    }
  }
  if (!modelPath) throw new Error("--model is required");
  if (std.some((v) => v === 0)) throw new Error("--std entries must be nonzero");
  return { modelPath, mean, std, softmax };
}

const isMain = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (isMain) {
  try {
    const config = parseArgs(process.argv.slice(2));
    serve(config, { input: process.stdin, output: process.stdout }).catch((err) => {
      process.stderr.write(`fatal: ${err}\n`);
      process.exit(1);
    });
  } catch (err) {
    process.stderr.write(`usage error: ${err instanceof Error ? err.message : err}\n`);
    process.exit(2);
  }
}
