/**
 * Buffer-level bindings to the pointpose engine.
 *
 * Entry points are versioned; callers pin a version and get a stable
 * signature. All functions return numeric error codes instead of throwing
 * across the boundary: 0 ok, 1 shape, 2 config, 3 internal.
 */
export const ABI_VERSION = 1;

export {
  BufferView,
  GridBuffer,
  BindingFailure,
  ErrorCode,
  ERR_OK,
  ERR_SHAPE,
  ERR_CONFIG,
  ERR_INTERNAL,
} from "./buffers.js";
export { encodeSplg, decodeSplg, encodeContainer, SplgGrid } from "./splg.js";
export {
  decodeV1,
  BundleBuffers,
  DecodeOptions,
  DecodeSuccess,
} from "./decode.js";
export {
  mimicLossesV1,
  identityAdapter,
  AdapterWeights,
  MimicLossSuccess,
} from "./mimic.js";

export { decodeV1 as decode } from "./decode.js";
export { mimicLossesV1 as mimicLosses } from "./mimic.js";
