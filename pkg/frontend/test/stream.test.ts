import { describe, expect, it, vi } from "vitest";

import { EventStream } from "../src/stream.js";
import type { StreamEvent } from "../src/types.js";

class FakeSocket {
  onopen: (() => void) | null = null;
  onmessage: ((msg: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  closed = false;

  close() {
    this.closed = true;
    this.onclose?.();
  }
}

function harness() {
  const sockets: FakeSocket[] = [];
  const events: StreamEvent[] = [];
  let connects = 0;
  let drops = 0;
  const stream = new EventStream(
    "ws://test/events",
    {
      onEvent: (e) => events.push(e),
      onConnect: () => {
        connects += 1;
      },
      onDrop: () => {
        drops += 1;
      },
    },
    () => {
      const socket = new FakeSocket();
      sockets.push(socket);
      return socket as unknown as WebSocket;
    },
  );
  return {
    stream,
    sockets,
    events,
    connects: () => connects,
    drops: () => drops,
  };
}

describe("EventStream", () => {
  it("resyncs on every (re)connect and parses events", () => {
    const h = harness();
    h.stream.start();
    expect(h.sockets.length).toBe(1);
    h.sockets[0].onopen?.();
    expect(h.connects()).toBe(1);
    h.sockets[0].onmessage?.({
      data: JSON.stringify({ tick: 3, envelopeId: "e1", topic: "notify/x",
                             schema: "notify/1", body: { message: "m" } }),
    });
    expect(h.events.length).toBe(1);
    expect(h.events[0].tick).toBe(3);
  });

  it("reconnects with backoff after a drop and resyncs again", () => {
    vi.useFakeTimers();
    try {
      const h = harness();
      h.stream.start();
      h.sockets[0].onopen?.();
      h.sockets[0].close(); // dropped
      expect(h.drops()).toBe(1);
      expect(h.sockets.length).toBe(1);
      vi.advanceTimersByTime(500); // first backoff step
      expect(h.sockets.length).toBe(2);
      h.sockets[1].onopen?.();
      expect(h.connects()).toBe(2); // fresh snapshot fetched after reconnect
    } finally {
      vi.useRealTimers();
    }
  });

  it("ignores malformed frames", () => {
    const h = harness();
    h.stream.start();
    h.sockets[0].onopen?.();
    h.sockets[0].onmessage?.({ data: "{not json" });
    expect(h.events.length).toBe(0);
  });

  it("stop() prevents reconnect attempts", () => {
    vi.useFakeTimers();
    try {
      const h = harness();
      h.stream.start();
      h.sockets[0].onopen?.();
      h.stream.stop();
      vi.advanceTimersByTime(60_000);
      expect(h.sockets.length).toBe(1);
    } finally {
      vi.useRealTimers();
    }
  });
});
