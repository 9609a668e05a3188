// Boots the real backend as a subprocess; the UI under test talks to it
// over plain HTTP, the only interface the frontend is allowed to use.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath } from "node:url";

const HERE = dirname(fileURLToPath(import.meta.url));
const REPO_ROOT = resolve(HERE, "..", "..");

export const ADMIN_TOKEN = "frontend-test-admin";

export interface BackendHandle {
  baseUrl: string;
  stop(): void;
}

function freePort(): Promise<number> {
  return new Promise((resolveFn, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address && typeof address === "object") {
        const port = address.port;
        probe.close(() => resolveFn(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

export async function startBackend(): Promise<BackendHandle> {
  const port = await freePort();
  const dbDir = mkdtempSync(join(tmpdir(), "tutorkit-ui-"));
  const child: ChildProcess = spawn(
    "tutorkit",
    [
      "serve",
      "--pack", join(REPO_ROOT, "sample_pack"),
      "--db", join(dbDir, "events.db"),
      "--port", String(port),
      "--gateway", "scripted",
      "--script", join(HERE, "fixtures", "gateway_script.json"),
      "--admin-token", ADMIN_TOKEN,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  child.stderr?.on("data", (chunk) => (stderr += chunk));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30000;
  for (;;) {
    if (child.exitCode !== null) {
      throw new Error(`backend exited early (${child.exitCode}): ${stderr}`);
    }
    try {
      const response = await fetch(`${baseUrl}/assets/two_walkers.svg`);
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill();
      throw new Error(`backend did not come up: ${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  return {
    baseUrl,
    stop() {
      child.kill();
    },
  };
}

export async function adminExport(baseUrl: string): Promise<any[]> {
  const response = await fetch(`${baseUrl}/api/v1/admin/export`, {
    headers: { authorization: `Bearer ${ADMIN_TOKEN}` },
  });
  const text = await response.text();
  return text
    .split("\n")
    .filter((line) => line.trim())
    .map((line) => JSON.parse(line));
}
