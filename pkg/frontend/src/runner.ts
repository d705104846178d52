/** Subprocess driver for the native m3dkit CLI. */

import { spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Python interpreter used to run the native package; override with M3DKIT_PY. */
export function pythonInterpreter(): string {
  return process.env.M3DKIT_PY ?? "python3";
}

export class CliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
    this.name = "CliError";
  }
}

/** Run an m3dkit subcommand; throws CliError on nonzero exit. */
export function runCli(args: string[]): string {
  const result = spawnSync(pythonInterpreter(), ["-m", "m3dkit.cli", ...args], {
    encoding: "utf-8",
    maxBuffer: 64 * 1024 * 1024,
  });
  if (result.error) {
    throw new CliError(`failed to launch m3dkit CLI: ${result.error.message}`, null, "");
  }
  if (result.status !== 0) {
    const stderr = (result.stderr ?? "").trim();
    throw new CliError(
      `m3dkit ${args[0]} exited with code ${result.status}: ${stderr}`,
      result.status,
      stderr,
    );
  }
  return result.stdout;
}

/** Create a scratch directory, hand it to fn, and always clean it up. */
export function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "m3dkit-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}
