import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { ERR_CONFIG, ERR_INTERNAL, ERR_SHAPE } from "../src/buffers.js";
import { decodeV1 } from "../src/decode.js";
import { cli, readGridBuffer, tempDir, zeroGrid } from "./helpers.js";

function renderedBundle(seed: number) {
  const dir = tempDir();
  cli(["render", "--seed", String(seed), "--persons", String((seed % 4) + 1), "--out", dir]);
  return {
    dir,
    buffers: {
      pose: readGridBuffer(join(dir, "pose.splg")),
      center: readGridBuffer(join(dir, "center.splg")),
      topLeft: readGridBuffer(join(dir, "top_left.splg")),
      bottomRight: readGridBuffer(join(dir, "bottom_right.splg")),
    },
  };
}

describe("decodeV1", () => {
  it("returns an empty person list for an all-zero bundle", () => {
    const result = decodeV1({
      pose: zeroGrid(16, 16, 17),
      center: zeroGrid(16, 16, 1),
      topLeft: zeroGrid(16, 16, 1),
      bottomRight: zeroGrid(16, 16, 1),
    });
    expect(result.code).toBe(0);
    if (result.code === 0) {
      expect(JSON.parse(Buffer.from(result.json).toString())).toEqual([]);
    }
  });

  it("is byte-identical to the core CLI on 20 seeded bundles", () => {
    for (let seed = 0; seed < 20; seed++) {
      const { dir, buffers } = renderedBundle(seed);
      const out = join(dir, "cli-results.json");
      cli(["decode", "--bundle", dir, "--out", out]);
      const cliBytes = readFileSync(out);
      const result = decodeV1(buffers);
      expect(result.code).toBe(0);
      if (result.code === 0) {
        expect(Buffer.from(result.json).equals(cliBytes)).toBe(true);
      }
    }
  });

  it("honors decode options the same way the CLI flags do", () => {
    const { dir, buffers } = renderedBundle(33);
    const out = join(dir, "cli-results.json");
    cli([
      "decode", "--bundle", dir, "--phi-det", "0.3", "--phi-pose", "0.4",
      "--top-n", "8", "--no-subpixel", "--out", out,
    ]);
    const result = decodeV1(buffers, {
      phiDet: 0.3, phiPose: 0.4, topN: 8, subpixel: false,
    });
    expect(result.code).toBe(0);
    if (result.code === 0) {
      expect(Buffer.from(result.json).equals(readFileSync(out))).toBe(true);
    }
  });

  it("reports shape mismatches as error code 1 without throwing", () => {
    const result = decodeV1({
      pose: zeroGrid(16, 16, 17),
      center: zeroGrid(12, 16, 1),
      topLeft: zeroGrid(16, 16, 1),
      bottomRight: zeroGrid(16, 16, 1),
    });
    expect(result.code).toBe(ERR_SHAPE);
    expect(result.code === 0 ? "" : result.message).toMatch(/resolution/);
  });

  it("rejects views that exceed their buffer as error code 1", () => {
    const short = zeroGrid(16, 16, 1);
    short.view.height = 32;
    const result = decodeV1({
      pose: zeroGrid(16, 16, 17),
      center: short,
      topLeft: zeroGrid(16, 16, 1),
      bottomRight: zeroGrid(16, 16, 1),
    });
    expect(result.code).toBe(ERR_SHAPE);
  });

  it("rejects invalid config scalars as error code 2", () => {
    const result = decodeV1(
      {
        pose: zeroGrid(8, 8, 2),
        center: zeroGrid(8, 8, 1),
        topLeft: zeroGrid(8, 8, 1),
        bottomRight: zeroGrid(8, 8, 1),
      },
      { phiDet: 1.5 },
    );
    expect(result.code).toBe(ERR_CONFIG);
  });

  it("reports a broken core interpreter as error code 3, host survives", () => {
    const saved = process.env.POINTPOSE_PYTHON;
    process.env.POINTPOSE_PYTHON = "definitely-not-a-python";
    try {
      const result = decodeV1({
        pose: zeroGrid(8, 8, 2),
        center: zeroGrid(8, 8, 1),
        topLeft: zeroGrid(8, 8, 1),
        bottomRight: zeroGrid(8, 8, 1),
      });
      expect(result.code).toBe(ERR_INTERNAL);
    } finally {
      if (saved === undefined) delete process.env.POINTPOSE_PYTHON;
      else process.env.POINTPOSE_PYTHON = saved;
    }
  });
});
