/**
 * Client for the gridmat boundary protocol.
 *
 * The native engine runs as a child process serving line-delimited JSON on
 * stdio.  Every boundary symbol is a flat, type-suffixed name (for example
 * `maxnorm_d`); matrices stay on the native side and are addressed through
 * integer handles.  Errors come back as a nonzero status plus a message,
 * surfaced here as thrown `BoundaryError`s.
 */

import { type ChildProcessByStdio, spawn } from "node:child_process";
import { createInterface, type Interface } from "node:readline";
import { dirname, resolve } from "node:path";
import type { Readable, Writable } from "node:stream";
import { fileURLToPath } from "node:url";

export class BoundaryError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "BoundaryError";
  }
}

interface Pending {
  resolve: (value: unknown) => void;
  reject: (err: Error) => void;
}

interface Response {
  id: number;
  status: number;
  value?: unknown;
  error?: string;
}

function defaultPythonPath(): string {
  // repo layout: <root>/frontend/src/boundary.ts and <root>/src/gridmat
  const here = dirname(fileURLToPath(import.meta.url));
  return resolve(here, "..", "..", "src");
}

export class BoundaryClient {
  private proc: ChildProcessByStdio<Writable, Readable, null>;
  private lines: Interface;
  private pending = new Map<number, Pending>();
  private nextId = 0;
  private closed = false;

  constructor(options: { python?: string; pythonPath?: string } = {}) {
    const python = options.python ?? process.env.GRIDMAT_PYTHON ?? "python3";
    const pythonPath = options.pythonPath ?? defaultPythonPath();
    this.proc = spawn(python, ["-m", "gridmat.boundary_server"], {
      env: { ...process.env, PYTHONPATH: pythonPath },
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.lines = createInterface({ input: this.proc.stdout });
    this.lines.on("line", (line) => this.onLine(line));
    this.proc.on("exit", () => this.failAll(new BoundaryError("engine exited", -1)));
  }

  private onLine(line: string): void {
    let resp: Response;
    try {
      resp = JSON.parse(line) as Response;
    } catch {
      return; // stray output; matching request will eventually time out
    }
    const waiter = this.pending.get(resp.id);
    if (!waiter) return;
    this.pending.delete(resp.id);
    if (resp.status === 0) {
      waiter.resolve(resp.value);
    } else {
      waiter.reject(new BoundaryError(resp.error ?? "unknown failure", resp.status));
    }
  }

  private failAll(err: Error): void {
    for (const waiter of this.pending.values()) waiter.reject(err);
    this.pending.clear();
  }

  /** Invoke one boundary symbol; resolves with its value. */
  call<T = unknown>(fn: string, ...args: unknown[]): Promise<T> {
    if (this.closed) {
      return Promise.reject(new BoundaryError("client is closed", -1));
    }
    const id = ++this.nextId;
    const message = JSON.stringify({ id, fn, args }) + "\n";
    return new Promise<T>((resolvePromise, reject) => {
      this.pending.set(id, { resolve: resolvePromise as (v: unknown) => void, reject });
      this.proc.stdin.write(message);
    });
  }

  /** Current count of live native matrix objects (leak checks). */
  liveCount(): Promise<number> {
    return this.call<number>("live_count");
  }

  async close(): Promise<void> {
    if (this.closed) return;
    this.closed = true;
    try {
      await new Promise<void>((resolveDone) => {
        const id = ++this.nextId;
        this.pending.set(id, { resolve: () => resolveDone(), reject: () => resolveDone() });
        this.proc.stdin.write(JSON.stringify({ id, fn: "shutdown", args: [] }) + "\n");
      });
    } finally {
      this.proc.stdin.end();
    }
  }
}
