/** Thin REST client for the gateway's session endpoints. */

import type { RobotConfig } from "./config.js";

export interface SessionInfo {
  id: string;
  created_at: number;
  config: RobotConfig;
  config_version: number;
  status: "active" | "closed";
  robot_connected: boolean;
  control_connected: boolean;
}

export type PatchResult =
  | { ok: true; config: RobotConfig; version: number }
  | { ok: false; status: number; code: string; message: string; currentVersion?: number };

export class GatewayApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  async createSession(config: Partial<RobotConfig>): Promise<SessionInfo> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ config }),
    });
    const body = await resp.json();
    if (resp.status !== 201) {
      const err = body?.error ?? {};
      throw new Error(`${err.code ?? resp.status}: ${err.message ?? "session create failed"}`);
    }
    return body.session as SessionInfo;
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/sessions/${sessionId}`);
    const body = await resp.json();
    if (resp.status !== 200) {
      const err = body?.error ?? {};
      throw new Error(`${err.code ?? resp.status}: ${err.message ?? "session fetch failed"}`);
    }
    return body.session as SessionInfo;
  }

  async patchConfig(
    sessionId: string,
    patch: Partial<RobotConfig> | Record<string, unknown>,
    expectedVersion: number,
  ): Promise<PatchResult> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/sessions/${sessionId}/config`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ patch, expected_version: expectedVersion }),
    });
    const body = await resp.json();
    if (resp.status === 200) {
      return { ok: true, config: body.config as RobotConfig, version: body.config_version as number };
    }
    const err = body?.error ?? {};
    return {
      ok: false,
      status: resp.status,
      code: err.code ?? String(resp.status),
      message: err.message ?? "config update failed",
      currentVersion: err.current_version,
    };
  }

  async closeSession(sessionId: string): Promise<void> {
    await this.fetchImpl(`${this.baseUrl}/api/sessions/${sessionId}`, { method: "DELETE" });
  }

  async transcriptLines(sessionId: string): Promise<string[]> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/sessions/${sessionId}/transcript`);
    if (resp.status !== 200) {
      throw new Error(`transcript fetch failed: ${resp.status}`);
    }
    const text = await resp.text();
    return text.split("\n").filter((line) => line.trim().length > 0);
  }
}
