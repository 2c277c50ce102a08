import {
  BindingFailure,
  ERR_SHAPE,
  GridBuffer,
  copyOut,
} from "./buffers.js";

/**
 * Same-padding conv weights over K-channel crops. Kernel layout is
 * (ky, kx, cin, cout) row-major with cout fastest, matching the grid
 * file convention of (ksize, ksize, cin*cout) checkpoint sections.
 */
export interface AdapterWeights {
  ksize: number;
  kernel: Float32Array | Float64Array;
  bias: Float32Array | Float64Array;
}

export interface MimicLossSuccess {
  code: 0;
  lM1: number;
  lM2: number;
}

export function identityAdapter(ksize: number, channels: number): AdapterWeights {
  const kernel = new Float64Array(ksize * ksize * channels * channels);
  const mid = Math.floor(ksize / 2);
  for (let c = 0; c < channels; c++) {
    kernel[((mid * ksize + mid) * channels + c) * channels + c] = 1;
  }
  return { ksize, kernel, bias: new Float64Array(channels) };
}

function conv2dSame(
  x: Float64Array,
  h: number,
  w: number,
  channels: number,
  adapter: AdapterWeights,
): Float64Array {
  const k = adapter.ksize;
  const pad = (k - 1) / 2;
  const out = new Float64Array(h * w * channels);
  const kern = adapter.kernel;
  const bias = adapter.bias;
  for (let y = 0; y < h; y++) {
    for (let xo = 0; xo < w; xo++) {
      for (let d = 0; d < channels; d++) {
        let acc = bias[d];
        for (let u = 0; u < k; u++) {
          const sy = y + u - pad;
          if (sy < 0 || sy >= h) continue;
          for (let v = 0; v < k; v++) {
            const sx = xo + v - pad;
            if (sx < 0 || sx >= w) continue;
            const xBase = (sy * w + sx) * channels;
            const kBase = ((u * k + v) * channels) * channels + d;
            for (let c = 0; c < channels; c++) {
              acc += x[xBase + c] * kern[kBase + c * channels];
            }
          }
        }
        out[(y * w + xo) * channels + d] = acc;
      }
    }
  }
  return out;
}

function meanSquaredError(a: Float64Array, b: Float64Array): number {
  let acc = 0;
  for (let i = 0; i < a.length; i++) {
    const d = a[i] - b[i];
    acc += d * d;
  }
  return acc / a.length;
}

function toF64(a: Float32Array): Float64Array {
  const out = new Float64Array(a.length);
  out.set(a);
  return out;
}

function adapterShapeError(a: AdapterWeights, channels: number, name: string): string | null {
  if (!Number.isInteger(a.ksize) || a.ksize < 1 || a.ksize % 2 !== 1) {
    return `${name}: kernel side must be odd and >= 1`;
  }
  if (a.kernel.length !== a.ksize * a.ksize * channels * channels) {
    return `${name}: kernel length ${a.kernel.length} != ${a.ksize}^2*${channels}^2`;
  }
  if (a.bias.length !== channels) {
    return `${name}: bias length ${a.bias.length} != ${channels}`;
  }
  return null;
}

/**
 * Forward-only mimic losses on one person crop: element-mean MSE between
 * the student crop and each adapter-transformed teacher map. All math is
 * float64 over boundary copies; no gradients are exposed.
 */
export function mimicLossesV1(
  student: GridBuffer,
  teacherGt: GridBuffer,
  teacherPred: GridBuffer,
  adapter1: AdapterWeights,
  adapter2: AdapterWeights,
): MimicLossSuccess | BindingFailure {
  const views = [student.view, teacherGt.view, teacherPred.view];
  for (const v of views.slice(1)) {
    if (
      v.height !== views[0].height ||
      v.width !== views[0].width ||
      v.channels !== views[0].channels
    ) {
      return { code: ERR_SHAPE, message: "student and teacher crops must share shape" };
    }
  }
  const copies: Float64Array[] = [];
  for (const [name, buf] of [
    ["student", student],
    ["teacher gt", teacherGt],
    ["teacher pred", teacherPred],
  ] as const) {
    const copy = copyOut(buf);
    if (copy === null) {
      return { code: ERR_SHAPE, message: `${name}: view exceeds buffer` };
    }
    copies.push(toF64(copy));
  }
  const { height, width, channels } = student.view;
  for (const [a, name] of [
    [adapter1, "adapter1"],
    [adapter2, "adapter2"],
  ] as const) {
    const err = adapterShapeError(a, channels, name);
    if (err) return { code: ERR_SHAPE, message: err };
  }

  const [s, gt, pred] = copies;
  const lM1 = meanSquaredError(s, conv2dSame(gt, height, width, channels, adapter1));
  const lM2 = meanSquaredError(s, conv2dSame(pred, height, width, channels, adapter2));
  return { code: 0, lM1, lM2 };
}
