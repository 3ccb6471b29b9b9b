/**
 * The wire protocol, oracle side. First line out is the handshake:
 *
 *   {"hello":{"classes":K,"input_w":W,"input_h":H,"normalized":true}}
 *
 * then one response per request line, ids echoed back:
 *
 *   {"id":1,"png_b64":"..."}  ->  {"id":1,"scores":[...]}
 *                             or  {"id":1,"error":"message"}
 *
 * Requests are handled serially in arrival order; a malformed request gets
 * an error response and the process stays alive.
 */

import { createInterface } from "node:readline";
import { normalize, resizeBilinear } from "./image.js";
import { BridgeConfig, Model, loadModel, softmax } from "./model.js";
import { decodePng } from "./png.js";

export interface ServerIo {
  input: NodeJS.ReadableStream;
  output: NodeJS.WritableStream;
}

export function handshakeLine(model: Model, config: BridgeConfig): string {
  return JSON.stringify({
    hello: {
      classes: model.classes,
      input_w: model.inputW,
      input_h: model.inputH,
      normalized: config.softmax,
    },
  });
}

export function answer(model: Model, config: BridgeConfig, line: string): string {
  let id = -1;
  try {
    const msg = JSON.parse(line);
    if (typeof msg !== "object" || msg === null) throw new Error("request is not an object");
    if (typeof msg.id === "number" && Number.isInteger(msg.id)) id = msg.id;
    else throw new Error("missing integer id");
    if (typeof msg.png_b64 !== "string") throw new Error("missing png_b64");

    const decoded = decodePng(Buffer.from(msg.png_b64, "base64"));
    const resized = resizeBilinear(decoded, model.inputW, model.inputH);
    const features = normalize(resized, config.mean, config.std);
    let scores = model.infer(features);
    if (config.softmax) scores = softmax(scores);
    return JSON.stringify({ id, scores });
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    return JSON.stringify({ id, error: message });
  }
}

export async function serve(config: BridgeConfig, io: ServerIo): Promise<void> {
  const model: Model = loadModel(config.modelPath);
  io.output.write(handshakeLine(model, config) + "\n");

  const rl = createInterface({ input: io.input });
  for await (const line of rl) {
    if (!line.trim()) continue;
    io.output.write(answer(model, config, line) + "\n");
  }
}
