/** Pointer-free view descriptor into a caller-provided contiguous buffer. */
export interface BufferView {
  /** element offset into the buffer (not bytes) */
  offset: number;
  height: number;
  width: number;
  channels: number;
}

export interface GridBuffer {
  data: Float32Array;
  view: BufferView;
}

export const ERR_OK = 0;
export const ERR_SHAPE = 1;
export const ERR_CONFIG = 2;
export const ERR_INTERNAL = 3;

export type ErrorCode =
  | typeof ERR_OK
  | typeof ERR_SHAPE
  | typeof ERR_CONFIG
  | typeof ERR_INTERNAL;

export interface BindingFailure {
  code: Exclude<ErrorCode, typeof ERR_OK>;
  message: string;
}

function viewValid(v: BufferView): boolean {
  return (
    Number.isInteger(v.offset) &&
    Number.isInteger(v.height) &&
    Number.isInteger(v.width) &&
    Number.isInteger(v.channels) &&
    v.offset >= 0 &&
    v.height >= 1 &&
    v.width >= 1 &&
    v.channels >= 1
  );
}

/**
 * Validate a view against its buffer and copy the described region out.
 * The boundary always copies; callers keep ownership of their buffers.
 */
export function copyOut(buf: GridBuffer): Float32Array | null {
  const v = buf.view;
  if (!viewValid(v)) return null;
  const n = v.height * v.width * v.channels;
  if (buf.data.length < v.offset + n) return null;
  return buf.data.slice(v.offset, v.offset + n);
}
