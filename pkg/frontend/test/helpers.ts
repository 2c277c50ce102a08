import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { GridBuffer } from "../src/buffers.js";
import { decodeSplg } from "../src/splg.js";

export function cli(args: string[]): { stdout: string } {
  const proc = spawnSync("python3", ["-m", "pointpose", ...args], {
    maxBuffer: 64 * 1024 * 1024,
  });
  if (proc.status !== 0) {
    throw new Error(`core CLI failed: ${proc.stderr?.toString()}`);
  }
  return { stdout: proc.stdout.toString() };
}

export function tempDir(): string {
  return mkdtempSync(join(tmpdir(), "pp-frontend-test-"));
}

export function readGridBuffer(path: string): GridBuffer {
  const grid = decodeSplg(new Uint8Array(readFileSync(path)));
  return {
    data: grid.data,
    view: {
      offset: 0,
      height: grid.height,
      width: grid.width,
      channels: grid.channels,
    },
  };
}

export function zeroGrid(h: number, w: number, c: number): GridBuffer {
  return {
    data: new Float32Array(h * w * c),
    view: { offset: 0, height: h, width: w, channels: c },
  };
}
