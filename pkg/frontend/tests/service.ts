// Shared test harness: boots the real Python study service in a child process.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

export const ADMIN_TOKEN = "test-admin";

export interface ServiceHandle {
  baseUrl: string;
  proc: ChildProcess;
  workdir: string;
  stop(): void;
}

export async function startService(port: number): Promise<ServiceHandle> {
  const here = dirname(fileURLToPath(import.meta.url));
  const script = join(here, "..", "scripts", "start_service.py");
  const workdir = mkdtempSync(join(tmpdir(), "study-e2e-"));
  const proc = spawn("python3", [script, "--port", String(port), "--workdir", workdir,
                                 "--admin-token", ADMIN_TOKEN], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  let stderr = "";
  proc.stderr?.on("data", (d) => (stderr += d.toString()));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 60_000;
  for (;;) {
    if (proc.exitCode !== null) throw new Error(`service exited early: ${stderr}`);
    try {
      const res = await fetch(`${baseUrl}/report`);
      if (res.status === 403) break; // service is up and gating the report
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`service did not come up within 60s: ${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  return {
    baseUrl,
    proc,
    workdir,
    stop() {
      proc.kill();
      rmSync(workdir, { recursive: true, force: true });
    },
  };
}

export async function fetchReport(baseUrl: string): Promise<{
  preference_pct: Record<string, number>;
  per_pair: Record<string, Record<string, number>>;
  participant_count: number;
}> {
  const res = await fetch(`${baseUrl}/report`, { headers: { "X-Admin-Token": ADMIN_TOKEN } });
  if (!res.ok) throw new Error(`report fetch failed: ${res.status}`);
  return res.json();
}
