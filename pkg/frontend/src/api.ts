// Thin fetch wrappers over the backend HTTP API. Every displayed value comes
// from these responses or the event stream; nothing is computed client-side.

import type { RuleDiagnostics, Snapshot } from "./types.js";

export class ApiError extends Error {
  code: string;
  diagnostics?: RuleDiagnostics;

  constructor(code: string, message: string, diagnostics?: RuleDiagnostics) {
    super(message);
    this.code = code;
    this.diagnostics = diagnostics;
  }
}

async function asJson(res: Response): Promise<any> {
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    throw new ApiError(body.code ?? `HTTP${res.status}`, body.message ?? res.statusText, body);
  }
  return body;
}

export function makeApi(base = "") {
  return {
    async snapshot(): Promise<Snapshot> {
      return asJson(await fetch(`${base}/dashboard/snapshot`));
    },

    async sendCommand(
      deviceId: number,
      resourceId: number,
      value: unknown,
      userId: number,
    ): Promise<{ id: string; outcome: string }> {
      return asJson(
        await fetch(`${base}/devices/${deviceId}/commands`, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify({ resourceId, value, userId }),
        }),
      );
    },

    async submitRule(text: string): Promise<{ ruleId: string }> {
      return asJson(
        await fetch(`${base}/rules`, {
          method: "POST",
          headers: { "content-type": "text/plain" },
          body: text,
        }),
      );
    },

    async notifications(userId: number): Promise<any[]> {
      return asJson(await fetch(`${base}/notifications?userId=${userId}`));
    },

    async markRead(id: string): Promise<void> {
      await asJson(await fetch(`${base}/notifications/${id}/read`, { method: "POST" }));
    },
  };
}

export type Api = ReturnType<typeof makeApi>;

export function wsUrl(base: string, topic = ""): string {
  const root = base || window.location.origin;
  const ws = root.replace(/^http/, "ws");
  return topic ? `${ws}/events?topic=${encodeURIComponent(topic)}` : `${ws}/events`;
}
