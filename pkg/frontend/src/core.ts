/** Process-boundary access to the core engine's CLI. */
import { spawnSync } from "node:child_process";

export interface CoreResult {
  ok: boolean;
  stdout: Buffer;
  message: string;
}

/** Interpreter used to reach the core package; override for odd layouts. */
export function corePython(): string {
  return process.env.POINTPOSE_PYTHON ?? "python3";
}

export function runCore(args: string[]): CoreResult {
  const proc = spawnSync(corePython(), ["-m", "pointpose", ...args], {
    maxBuffer: 64 * 1024 * 1024,
  });
  if (proc.error) {
    return { ok: false, stdout: Buffer.alloc(0), message: String(proc.error) };
  }
  if (proc.status !== 0) {
    return {
      ok: false,
      stdout: Buffer.alloc(0),
      message: `exit ${proc.status}: ${proc.stderr?.toString().slice(0, 500)}`,
    };
  }
  return { ok: true, stdout: proc.stdout, message: "" };
}
