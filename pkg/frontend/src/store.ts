// Client view-model: the latest snapshot plus a bounded ring of stream
// events (newest first). Command badges move pending -> acked/failed only
// when the matching ack or failure event arrives on the stream.

import type { BadgeState, Snapshot, StreamEvent } from "./types.js";

const RING_CAPACITY = 200;
const SERIES_CAPACITY = 60;

export class Store {
  snapshot: Snapshot | null = null;
  events: StreamEvent[] = []; // newest first
  badges = new Map<string, BadgeState>();
  failureReasons = new Map<string, string>();
  series = new Map<string, number[]>(); // "device/property" -> recent values
  private seen = new Set<string>(); // envelope ids already ingested

  applySnapshot(snapshot: Snapshot): void {
    this.snapshot = snapshot;
    // resolve badges the stream may have missed while disconnected
    for (const cmd of snapshot.commands) {
      if (this.badges.has(cmd.id) && cmd.outcome !== "pending") {
        this.badges.set(cmd.id, cmd.outcome as BadgeState);
        if (cmd.reason) this.failureReasons.set(cmd.id, cmd.reason);
      }
    }
  }

  trackCommand(commandId: string): void {
    this.badges.set(commandId, "pending");
  }

  /** Ingest one stream event; returns false for duplicates (e.g. after a
   * reconnect replayed something already seen). */
  applyEvent(event: StreamEvent): boolean {
    if (this.seen.has(event.envelopeId)) return false;
    this.seen.add(event.envelopeId);
    if (this.seen.size > 5000) {
      // drop roughly the oldest half; exact order is not important here
      const keep = Array.from(this.seen).slice(-2500);
      this.seen = new Set(keep);
    }
    this.events.unshift(event);
    if (this.events.length > RING_CAPACITY) this.events.length = RING_CAPACITY;

    if (event.schema === "telemetry/1") {
      const key = `${event.body.deviceId}/${event.body.property}`;
      const values = this.series.get(key) ?? [];
      if (typeof event.body.value === "number") {
        values.push(event.body.value);
        if (values.length > SERIES_CAPACITY) values.shift();
        this.series.set(key, values);
      }
    } else if (event.schema === "ack/1") {
      const id = event.body.commandId;
      if (id && this.badges.get(id) === "pending") {
        this.badges.set(id, "acked");
      }
    } else if (event.schema === "notify/1" && event.body.commandId) {
      const id = event.body.commandId;
      if (this.badges.get(id) === "pending") {
        this.badges.set(id, "failed");
        this.failureReasons.set(id, event.body.reason ?? "failed");
      }
    }
    return true;
  }

  badge(commandId: string): BadgeState | undefined {
    return this.badges.get(commandId);
  }
}

/** Reconnect backoff: 0.5s, 1s, 2s, 4s, capped at 8s. */
export function backoffMs(attempt: number): number {
  return Math.min(500 * 2 ** Math.max(0, attempt), 8000);
}
