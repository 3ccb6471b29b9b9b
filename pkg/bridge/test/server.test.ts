import assert from "node:assert/strict";
import { ChildProcess, spawn } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { createInterface } from "node:readline";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));
const fixtures = path.join(here, "..", "..", "test", "fixtures");
const mainJs = path.join(here, "..", "src", "main.js"); // compiled layout: dist/test -> dist/src

function pngB64(name: string): string {
  return fs.readFileSync(path.join(fixtures, name)).toString("base64");
}

class BridgeClient {
  proc: ChildProcess;
  private lines: string[] = [];
  private waiters: Array<(line: string) => void> = [];

  constructor(args: string[]) {
    this.proc = spawn(process.execPath, [mainJs, ...args], {
      stdio: ["pipe", "pipe", "inherit"],
    });
    const rl = createInterface({ input: this.proc.stdout! });
    rl.on("line", (line) => {
      const waiter = this.waiters.shift();
      if (waiter) waiter(line);
      else this.lines.push(line);
    });
  }

  nextLine(timeoutMs = 10_000): Promise<string> {
    const queued = this.lines.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("timeout waiting for line")), timeoutMs);
      this.waiters.push((line) => {
        clearTimeout(timer);
        resolve(line);
      });
    });
  }

  send(obj: unknown): void {
    this.proc.stdin!.write(JSON.stringify(obj) + "\n");
  }

  sendRaw(text: string): void {
    this.proc.stdin!.write(text + "\n");
  }

  close(): void {
    this.proc.stdin!.end();
    this.proc.kill();
  }
}

function stubBridge(): BridgeClient {
  return new BridgeClient(["--model", path.join(fixtures, "stub_model.json")]);
}

function softmax(logits: number[]): number[] {
  const m = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - m));
  const s = exps.reduce((a, b) => a + b, 0);
  return exps.map((v) => v / s);
}

test("handshake is the first line and declares K, W, H, normalized", async () => {
  const bridge = stubBridge();
  try {
    const hello = JSON.parse(await bridge.nextLine());
    assert.deepEqual(hello, {
      hello: { classes: 3, input_w: 8, input_h: 8, normalized: true },
    });
  } finally {
    bridge.close();
  }
});

test("stub scores equal softmax of the stub logits to 1e-9", async () => {
  const bridge = stubBridge();
  try {
    await bridge.nextLine(); // handshake
    bridge.send({ id: 1, png_b64: pngB64("gradient_rgba.png") });
    const reply = JSON.parse(await bridge.nextLine());
    assert.equal(reply.id, 1);
    const expected = softmax([0.5, 2.0, -1.0]);
    assert.equal(reply.scores.length, 3);
    for (let i = 0; i < 3; i++) {
      assert.ok(Math.abs(reply.scores[i] - expected[i]) < 1e-9, `score ${i}`);
    }
  } finally {
    bridge.close();
  }
});

test("identical requests give identical scores", async () => {
  const bridge = new BridgeClient(["--model", path.join(fixtures, "linear_model.json")]);
  try {
    await bridge.nextLine();
    const payload = pngB64("photo_rgb.png");
    const replies: string[] = [];
    for (let i = 1; i <= 3; i++) {
      bridge.send({ id: i, png_b64: payload });
      replies.push((await bridge.nextLine()).replace(/"id":\d+/, '"id":0'));
    }
    assert.equal(replies[0], replies[1]);
    assert.equal(replies[1], replies[2]);
  } finally {
    bridge.close();
  }
});

test("linear model reproduces the frozen reference scores to 1e-9", async () => {
  const expected = JSON.parse(
    fs.readFileSync(path.join(fixtures, "linear_expected.json"), "utf-8"),
  );
  const bridge = new BridgeClient([
    "--model", path.join(fixtures, "linear_model.json"),
    "--mean", expected.mean.join(","),
    "--std", expected.std.join(","),
  ]);
  try {
    await bridge.nextLine();
    bridge.send({ id: 7, png_b64: pngB64("gradient_rgba.png") });
    const reply = JSON.parse(await bridge.nextLine());
    assert.equal(reply.id, 7);
    for (let i = 0; i < expected.scores.length; i++) {
      assert.ok(Math.abs(reply.scores[i] - expected.scores[i]) < 1e-9, `score ${i}`);
    }
  } finally {
    bridge.close();
  }
});

test("100 pipelined requests with shuffled ids all come back with matching ids", async () => {
  const bridge = stubBridge();
  try {
    await bridge.nextLine();
    const ids = Array.from({ length: 100 }, (_, i) => i + 1);
    // deterministic shuffle
    let state = 12345;
    for (let i = ids.length - 1; i > 0; i--) {
      state = (state * 1103515245 + 12345) & 0x7fffffff;
      const j = state % (i + 1);
      [ids[i], ids[j]] = [ids[j], ids[i]];
    }
    const payloads = ["gradient_rgba.png", "photo_rgb.png", "gray.png", "big_rgba.png"];
    for (let i = 0; i < ids.length; i++) {
      bridge.send({ id: ids[i], png_b64: pngB64(payloads[i % payloads.length]) });
    }
    const seen: number[] = [];
    for (let i = 0; i < ids.length; i++) {
      const reply = JSON.parse(await bridge.nextLine());
      assert.ok(!("error" in reply), `unexpected error: ${reply.error}`);
      assert.equal(reply.scores.length, 3);
      seen.push(reply.id);
    }
    assert.deepEqual(seen, ids); // serial handling answers in arrival order
  } finally {
    bridge.close();
  }
});

test("malformed requests get an error with the same id and the process stays alive", async () => {
  const bridge = stubBridge();
  try {
    await bridge.nextLine();
    bridge.send({ id: 42, png_b64: "bm90IGEgcG5n" }); // "not a png"
    const bad = JSON.parse(await bridge.nextLine());
    assert.equal(bad.id, 42);
    assert.match(bad.error, /PNG/i);

    bridge.send({ id: 43 }); // missing payload
    const missing = JSON.parse(await bridge.nextLine());
    assert.equal(missing.id, 43);
    assert.match(missing.error, /png_b64/);

    bridge.sendRaw("this is not json");
    const junk = JSON.parse(await bridge.nextLine());
    assert.equal(junk.id, -1);

    // still serving
    bridge.send({ id: 44, png_b64: pngB64("gray.png") });
    const ok = JSON.parse(await bridge.nextLine());
    assert.equal(ok.id, 44);
    assert.equal(ok.scores.length, 3);
  } finally {
    bridge.close();
  }
});

test("golden transcript replays byte-for-byte modulo 9-significant-digit floats", async () => {
  const transcript = fs
    .readFileSync(path.join(fixtures, "golden_transcript.jsonl"), "utf-8")
    .trim()
    .split("\n");
  assert.equal(transcript.length, 7); // handshake + 3 request/response pairs

  const round9 = (value: unknown): unknown => {
    if (typeof value === "number" && Number.isFinite(value) && !Number.isInteger(value)) {
      return Number(value.toPrecision(9));
    }
    if (Array.isArray(value)) return value.map(round9);
    if (value && typeof value === "object") {
      return Object.fromEntries(
        Object.entries(value as Record<string, unknown>).map(([k, v]) => [k, round9(v)]),
      );
    }
    return value;
  };
  const canonical = (line: string) => JSON.stringify(round9(JSON.parse(line)));

  const bridge = stubBridge();
  try {
    const hello = await bridge.nextLine();
    assert.equal(canonical(hello), canonical(transcript[0]));
    for (let i = 0; i < 3; i++) {
      const requestLine = transcript[1 + 2 * i];
      const expectedResponse = transcript[2 + 2 * i];
      bridge.sendRaw(requestLine);
      const got = await bridge.nextLine();
      assert.equal(canonical(got), canonical(expectedResponse));
    }
  } finally {
    bridge.close();
  }
});
