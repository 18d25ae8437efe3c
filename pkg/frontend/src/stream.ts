// WebSocket event stream with automatic reconnect. On every (re)connect the
// owner is asked to resync from a fresh snapshot, so a dropped socket never
// leaves stale data rendered as live.

import { backoffMs } from "./store.js";
import type { StreamEvent } from "./types.js";

export interface StreamHooks {
  onEvent(event: StreamEvent): void;
  onConnect(): void; // triggers the snapshot resync
  onDrop(): void; // show the connection banner
}

type SocketFactory = (url: string) => WebSocket;

export class EventStream {
  private attempt = 0;
  private closed = false;
  private socket: WebSocket | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private url: string,
    private hooks: StreamHooks,
    private factory: SocketFactory = (u) => new WebSocket(u),
  ) {}

  start(): void {
    this.closed = false;
    this.connect();
  }

  stop(): void {
    this.closed = true;
    if (this.timer) clearTimeout(this.timer);
    this.socket?.close();
  }

  private connect(): void {
    if (this.closed) return;
    let socket: WebSocket;
    try {
      socket = this.factory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = socket;
    socket.onopen = () => {
      this.attempt = 0;
      this.hooks.onConnect();
    };
    socket.onmessage = (msg) => {
      try {
        this.hooks.onEvent(JSON.parse(msg.data as string));
      } catch {
        // a malformed frame is dropped, never rendered
      }
    };
    socket.onclose = () => {
      this.hooks.onDrop();
      this.scheduleReconnect();
    };
    socket.onerror = () => {
      socket.close();
    };
  }

  private scheduleReconnect(): void {
    if (this.closed) return;
    const delay = backoffMs(this.attempt);
    this.attempt += 1;
    this.timer = setTimeout(() => this.connect(), delay);
  }
}
