import { describe, expect, it } from "vitest";

import { Store, backoffMs } from "../src/store.js";
import type { Snapshot, StreamEvent } from "../src/types.js";

function event(overrides: Partial<StreamEvent> = {}): StreamEvent {
  return {
    tick: 1,
    envelopeId: "e1",
    topic: "telemetry/r1/1/temp",
    schema: "telemetry/1",
    body: { deviceId: 1, property: "temp", value: 21.5 },
    ...overrides,
  };
}

function snapshot(commands: Snapshot["commands"] = []): Snapshot {
  return {
    run: { scenario: "s", seed: 1, mode: "centralized", horizon: 100, tick: 5 },
    devices: [],
    loops: [],
    plans: [],
    rules: [],
    users: [],
    commands,
    environment: {},
    messages: {},
    globalStore: {},
  };
}

describe("Store", () => {
  it("keeps events newest-first and bounded", () => {
    const store = new Store();
    for (let i = 0; i < 250; i++) {
      store.applyEvent(event({ envelopeId: `e${i}`, tick: i }));
    }
    expect(store.events.length).toBe(200);
    expect(store.events[0].tick).toBe(249);
  });

  it("drops duplicate envelopes after a reconnect replay", () => {
    const store = new Store();
    expect(store.applyEvent(event({ envelopeId: "dup" }))).toBe(true);
    expect(store.applyEvent(event({ envelopeId: "dup" }))).toBe(false);
    expect(store.events.length).toBe(1);
  });

  it("collects telemetry series per device/property", () => {
    const store = new Store();
    store.applyEvent(event({ envelopeId: "a", body: { deviceId: 1, property: "temp", value: 20 } }));
    store.applyEvent(event({ envelopeId: "b", body: { deviceId: 1, property: "temp", value: 21 } }));
    expect(store.series.get("1/temp")).toEqual([20, 21]);
  });

  it("badge moves pending -> acked only on the matching ack event", () => {
    const store = new Store();
    store.trackCommand("cmd-1");
    expect(store.badge("cmd-1")).toBe("pending");
    store.applyEvent(
      event({
        envelopeId: "x",
        schema: "ack/1",
        topic: "notify/acks/2",
        body: { commandId: "cmd-other", ok: true },
      }),
    );
    expect(store.badge("cmd-1")).toBe("pending"); // never optimistic
    store.applyEvent(
      event({
        envelopeId: "y",
        schema: "ack/1",
        topic: "notify/acks/2",
        body: { commandId: "cmd-1", ok: true },
      }),
    );
    expect(store.badge("cmd-1")).toBe("acked");
  });

  it("badge moves pending -> failed with the server reason", () => {
    const store = new Store();
    store.trackCommand("cmd-9");
    store.applyEvent(
      event({
        envelopeId: "z",
        schema: "notify/1",
        topic: "notify/command-failed/9",
        body: { message: "m", commandId: "cmd-9", reason: "UnattachedDevice" },
      }),
    );
    expect(store.badge("cmd-9")).toBe("failed");
    expect(store.failureReasons.get("cmd-9")).toBe("UnattachedDevice");
  });

  it("snapshot resync resolves badges missed while disconnected", () => {
    const store = new Store();
    store.trackCommand("cmd-5");
    store.applySnapshot(snapshot([{ id: "cmd-5", outcome: "acked", reason: "" }]));
    expect(store.badge("cmd-5")).toBe("acked");
  });
});

describe("backoffMs", () => {
  it("doubles and caps", () => {
    expect(backoffMs(0)).toBe(500);
    expect(backoffMs(1)).toBe(1000);
    expect(backoffMs(2)).toBe(2000);
    expect(backoffMs(10)).toBe(8000);
  });
});
