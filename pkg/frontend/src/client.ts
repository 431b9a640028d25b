import type { Pose } from "./pose.js";
import type { SessionInfo, StyleResult } from "./types.js";

export const MAX_STYLE_BYTES = 10 * 1024 * 1024;

export class ServiceError extends Error {
  constructor(message: string, readonly status: number, readonly body?: unknown) {
    super(message);
  }
}

/** Thin typed wrapper over the render service HTTP API. */
export class ServiceClient {
  constructor(readonly baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {}

  async session(): Promise<SessionInfo> {
    const resp = await this.fetchFn(`${this.baseUrl}/session`);
    if (!resp.ok) throw new ServiceError(`GET /session failed (${resp.status})`, resp.status);
    return (await resp.json()) as SessionInfo;
  }

  async render(pose: Pose, width: number, height: number): Promise<Blob> {
    const resp = await this.fetchFn(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ pose, width, height }),
    });
    if (!resp.ok) {
      let body: unknown;
      try {
        body = await resp.json();
      } catch {
        body = undefined;
      }
      throw new ServiceError(`POST /render failed (${resp.status})`, resp.status, body);
    }
    return await resp.blob();
  }

  async uploadStyle(file: Blob, name = "style.png"): Promise<StyleResult> {
    if (file.size > MAX_STYLE_BYTES) {
      throw new ServiceError(`style image exceeds ${MAX_STYLE_BYTES} bytes`, 0);
    }
    const form = new FormData();
    form.append("file", file, name);
    const resp = await this.fetchFn(`${this.baseUrl}/style`, { method: "POST", body: form });
    if (!resp.ok) throw new ServiceError(`POST /style failed (${resp.status})`, resp.status);
    return (await resp.json()) as StyleResult;
  }
}
