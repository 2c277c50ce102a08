import { mkdtempSync, rmSync, writeFileSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import {
  BindingFailure,
  ERR_CONFIG,
  ERR_INTERNAL,
  ERR_SHAPE,
  GridBuffer,
  copyOut,
} from "./buffers.js";
import { runCore } from "./core.js";
import { encodeSplg } from "./splg.js";

export interface BundleBuffers {
  pose: GridBuffer;
  center: GridBuffer;
  topLeft: GridBuffer;
  bottomRight: GridBuffer;
}

export interface DecodeOptions {
  phiDet?: number;
  phiPose?: number;
  topN?: number;
  centralFraction?: number;
  maxBoxes?: number;
  subpixel?: boolean;
  stride?: number;
}

export interface DecodeSuccess {
  code: 0;
  /** results JSON bytes, byte-identical to the core CLI on equal inputs */
  json: Uint8Array;
}

const DEFAULTS: Required<DecodeOptions> = {
  phiDet: 0.1,
  phiPose: 0.2,
  topN: 32,
  centralFraction: 1 / 3,
  maxBoxes: 32,
  subpixel: true,
  stride: 4,
};

function inUnit(x: number): boolean {
  return Number.isFinite(x) && x >= 0 && x <= 1;
}

function validateOptions(opts: Required<DecodeOptions>): string | null {
  if (!inUnit(opts.phiDet) || !inUnit(opts.phiPose)) {
    return "thresholds must be in [0,1]";
  }
  if (!(opts.centralFraction > 0 && opts.centralFraction <= 1)) {
    return "central fraction must be in (0,1]";
  }
  if (!Number.isInteger(opts.topN) || opts.topN < 0) return "topN must be >= 0";
  if (!Number.isInteger(opts.maxBoxes) || opts.maxBoxes < 0) {
    return "maxBoxes must be >= 0";
  }
  if (!Number.isInteger(opts.stride) || opts.stride < 1) {
    return "stride must be >= 1";
  }
  return null;
}

/**
 * Decode a heatmap bundle supplied as raw buffers into results JSON.
 *
 * The four views must agree on height and width, and the detection maps
 * must be single-channel. Inputs are copied at the boundary, written in
 * the grid file format, and decoded by the core engine; the returned
 * bytes are exactly what the core CLI writes for the same grids.
 */
export function decodeV1(
  bundle: BundleBuffers,
  options: DecodeOptions = {},
): DecodeSuccess | BindingFailure {
  const opts = { ...DEFAULTS, ...options };
  const configError = validateOptions(opts);
  if (configError) return { code: ERR_CONFIG, message: configError };

  const names = ["pose", "center", "top_left", "bottom_right"] as const;
  const bufs = [bundle.pose, bundle.center, bundle.topLeft, bundle.bottomRight];
  const copies: Float32Array[] = [];
  for (let i = 0; i < bufs.length; i++) {
    const copy = copyOut(bufs[i]);
    if (copy === null) {
      return { code: ERR_SHAPE, message: `${names[i]}: view exceeds buffer` };
    }
    copies.push(copy);
  }
  const [pose, center, topLeft, bottomRight] = bufs.map((b) => b.view);
  for (const [name, v] of [
    ["center", center],
    ["top_left", topLeft],
    ["bottom_right", bottomRight],
  ] as const) {
    if (v.height !== pose.height || v.width !== pose.width) {
      return { code: ERR_SHAPE, message: `${name}: resolution differs from pose` };
    }
    if (v.channels !== 1) {
      return { code: ERR_SHAPE, message: `${name}: expected 1 channel` };
    }
  }

  let dir: string | null = null;
  try {
    dir = mkdtempSync(join(tmpdir(), "pointpose-ffi-"));
    for (let i = 0; i < names.length; i++) {
      const v = bufs[i].view;
      writeFileSync(
        join(dir, `${names[i]}.splg`),
        encodeSplg({
          height: v.height,
          width: v.width,
          channels: v.channels,
          data: copies[i],
        }),
      );
    }
    const out = join(dir, "results.json");
    const args = [
      "decode",
      "--bundle", dir,
      "--phi-det", String(opts.phiDet),
      "--phi-pose", String(opts.phiPose),
      "--top-n", String(opts.topN),
      "--central-fraction", String(opts.centralFraction),
      "--max-boxes", String(opts.maxBoxes),
      "--stride", String(opts.stride),
      "--out", out,
    ];
    if (!opts.subpixel) args.push("--no-subpixel");
    const result = runCore(args);
    if (!result.ok) return { code: ERR_INTERNAL, message: result.message };
    return { code: 0, json: new Uint8Array(readFileSync(out)) };
  } catch (err) {
    return { code: ERR_INTERNAL, message: String(err) };
  } finally {
    if (dir !== null) rmSync(dir, { recursive: true, force: true });
  }
}
