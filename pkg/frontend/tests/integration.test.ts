// End-to-end client/server loop against a live backend: list samples, submit
// a drag's box, receive the overlay, verify purity and error surfacing.
// Opt-in (RUN_INTEGRATION=1) because it trains a tiny model first.

import { spawn, ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, RefineClient } from "../src/api.js";
import { clampBox, normalizeBox } from "../src/geometry.js";
import { RefineSession } from "../src/session.js";

const RUN = process.env.RUN_INTEGRATION === "1";
const PYTHON = process.env.PYTHON ?? "python3";

let server: ChildProcess | null = null;
let baseUrl = "";

async function startServer(): Promise<string> {
  return new Promise((resolve, reject) => {
    const proc = spawn(PYTHON, [new URL("./serve_fixture.py", import.meta.url).pathname], {
      stdio: ["ignore", "pipe", "inherit"],
    });
    server = proc;
    const timer = setTimeout(() => reject(new Error("server did not start in time")), 120_000);
    proc.stdout!.on("data", (chunk: Buffer) => {
      const match = /PORT (\d+)/.exec(chunk.toString());
      if (match) {
        clearTimeout(timer);
        resolve(`http://127.0.0.1:${match[1]}`);
      }
    });
    proc.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
  });
}

describe.runIf(RUN)("live refinement loop", () => {
  beforeAll(async () => {
    baseUrl = await startServer();
  }, 150_000);

  afterAll(() => {
    server?.kill();
  });

  it("lists samples with dimensions", async () => {
    const client = new RefineClient(baseUrl);
    const samples = await client.samples();
    expect(samples.length).toBeGreaterThan(0);
    expect(samples[0]).toHaveProperty("width");
    expect(samples[0]).toHaveProperty("height");
  });

  it("completes a drag-to-overlay interaction quickly and purely", async () => {
    const client = new RefineClient(baseUrl);
    const samples = await client.samples();
    const target = samples[0];
    // scripted drag: bottom-right to top-left, then normalize + clamp
    const box = clampBox(normalizeBox(20, 24, 3, 2), target.width, target.height);

    const t0 = Date.now();
    const first = await client.refine(target.id, box);
    const elapsed = Date.now() - t0;
    expect(elapsed).toBeLessThan(2000); // interactive budget per interaction
    expect(first.blob.size).toBeGreaterThan(0);
    if (first.metrics) {
      expect(first.metrics.mae).toBeGreaterThanOrEqual(0);
    }

    const second = await client.refine(target.id, box);
    const [a, b] = await Promise.all([first.blob.arrayBuffer(), second.blob.arrayBuffer()]);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true); // identical drags, identical overlays
  });

  it("surfaces an out-of-bounds drag as a 400 with a reason", async () => {
    const client = new RefineClient(baseUrl);
    const samples = await client.samples();
    const errors: Array<{ message: string; status?: number }> = [];
    const session = new RefineSession(client, {
      onResult: () => {
        throw new Error("should not succeed");
      },
      onError: (message, status) => errors.push({ message, status }),
    });
    await session.submit(samples[0].id, { x0: 0, y0: 0, x1: 9999, y1: 9999 });
    expect(errors).toHaveLength(1);
    expect(errors[0].status).toBe(400);
    expect(errors[0].message.toLowerCase()).toContain("box");
  });

  it("404s unknown ids", async () => {
    const client = new RefineClient(baseUrl);
    await expect(client.refine("ghost", { x0: 0, y0: 0, x1: 1, y1: 1 })).rejects.toThrowError(
      ApiError,
    );
    await client.refine("ghost", { x0: 0, y0: 0, x1: 1, y1: 1 }).catch((err: ApiError) => {
      expect(err.status).toBe(404);
    });
  });
});

describe("integration gate", () => {
  it.runIf(!RUN)("is skipped unless RUN_INTEGRATION=1", () => {
    expect(RUN).toBe(false);
  });
});
