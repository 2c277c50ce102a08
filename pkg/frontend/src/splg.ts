/** SPLG v1 grid serialization (little-endian, f32, rank 3). */

const MAGIC = [0x53, 0x50, 0x4c, 0x47];
const HEADER_BYTES = 20;

export interface SplgGrid {
  height: number;
  width: number;
  channels: number;
  /** height*width*channels values, row-major, channel-last */
  data: Float32Array;
}

export function encodeSplg(g: SplgGrid): Uint8Array {
  const n = g.height * g.width * g.channels;
  if (g.data.length !== n) {
    throw new Error(`data length ${g.data.length} != ${n}`);
  }
  const out = new Uint8Array(HEADER_BYTES + 4 * n);
  const dv = new DataView(out.buffer);
  out.set(MAGIC, 0);
  dv.setUint16(4, 1, true);
  dv.setUint8(6, 0); // dtype f32le
  dv.setUint8(7, 3); // rank
  dv.setUint32(8, g.height, true);
  dv.setUint32(12, g.width, true);
  dv.setUint32(16, g.channels, true);
  for (let i = 0; i < n; i++) {
    dv.setFloat32(HEADER_BYTES + 4 * i, g.data[i], true);
  }
  return out;
}

export function decodeSplg(bytes: Uint8Array): SplgGrid {
  if (bytes.length < HEADER_BYTES) throw new Error("short header");
  for (let i = 0; i < 4; i++) {
    if (bytes[i] !== MAGIC[i]) throw new Error("bad magic");
  }
  const dv = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (dv.getUint16(4, true) !== 1) throw new Error("unsupported version");
  if (dv.getUint8(6) !== 0) throw new Error("unsupported dtype");
  if (dv.getUint8(7) !== 3) throw new Error("unsupported rank");
  const height = dv.getUint32(8, true);
  const width = dv.getUint32(12, true);
  const channels = dv.getUint32(16, true);
  const n = height * width * channels;
  if (bytes.length !== HEADER_BYTES + 4 * n) {
    throw new Error("payload length mismatch");
  }
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = dv.getFloat32(HEADER_BYTES + 4 * i, true);
  }
  return { height, width, channels, data };
}

/** Checkpoint container: sections of u16 name length + UTF-8 name + SPLG blob. */
export function encodeContainer(sections: Array<[string, SplgGrid]>): Uint8Array {
  const parts: Uint8Array[] = [];
  const enc = new TextEncoder();
  for (const [name, grid] of sections) {
    const nameBytes = enc.encode(name);
    const head = new Uint8Array(2);
    new DataView(head.buffer).setUint16(0, nameBytes.length, true);
    parts.push(head, nameBytes, encodeSplg(grid));
  }
  let total = 0;
  for (const p of parts) total += p.length;
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}
