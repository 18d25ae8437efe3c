// Dashboard wiring: poll the snapshot at a fixed interval, stream deltas over
// the WebSocket, and send every mutation through the HTTP API.

import { ApiError, makeApi, wsUrl } from "./api.js";
import { Store } from "./store.js";
import { EventStream } from "./stream.js";
import type { BadgeState, PlanRow, Snapshot } from "./types.js";
import {
  renderDeviceTile,
  renderDiagnostics,
  renderEventRow,
  renderLoopPanel,
  renderRules,
  renderRunBar,
} from "./views.js";

const POLL_MS = 2000;
const API_BASE = ""; // same origin; override for a split dev setup

const api = makeApi(API_BASE);
const store = new Store();

// device id -> most recent command issued from this page
const lastCommand = new Map<number, string>();

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function banner(show: boolean): void {
  el("banner").style.display = show ? "block" : "none";
}

function render(): void {
  const snapshot = store.snapshot;
  if (!snapshot) return;
  el("run-bar").innerHTML = renderRunBar(snapshot);

  const badgeFor = (deviceId: number) => {
    const id = lastCommand.get(deviceId);
    if (!id) return null;
    const state = store.badge(id) ?? ("pending" as BadgeState);
    return { id, state, reason: store.failureReasons.get(id) };
  };
  el("devices").innerHTML = snapshot.devices
    .map((d) => renderDeviceTile(d, store.series, badgeFor))
    .join("");

  const plansById = new Map<string, PlanRow>(snapshot.plans.map((p) => [p.id, p]));
  el("loops").innerHTML = snapshot.loops
    .map((l) => renderLoopPanel(l, plansById.get(l.lastPlanId) ?? null))
    .join("");

  el("rules").innerHTML = renderRules(snapshot.rules);
  el("events").innerHTML = store.events.slice(0, 30).map(renderEventRow).join("");
}

async function resync(): Promise<void> {
  try {
    const snapshot: Snapshot = await api.snapshot();
    store.applySnapshot(snapshot);
    banner(false);
    render();
  } catch {
    banner(true);
  }
}

function wireCommands(): void {
  el("devices").addEventListener("click", async (event) => {
    const target = event.target as HTMLElement;
    const act = target.dataset.act;
    if (!act) return;
    const deviceId = Number(target.dataset.device);
    const device = store.snapshot?.devices.find((d) => d.id === deviceId);
    // convention: resource 1 is the device's primary actuator
    try {
      const res = await api.sendCommand(deviceId, 1, act === "on", 1);
      lastCommand.set(deviceId, res.id);
      store.trackCommand(res.id);
      render();
    } catch (err) {
      if (err instanceof ApiError) {
        el("command-error").textContent = `${err.code}: ${err.message}`;
      }
    }
  });
}

function wireRuleEditor(): void {
  const form = el("rule-form") as HTMLFormElement;
  const input = el("rule-input") as HTMLTextAreaElement;
  const out = el("rule-result");
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    out.innerHTML = "";
    try {
      const res = await api.submitRule(input.value);
      out.innerHTML = `<div class="ok">installed as <code>${res.ruleId}</code></div>`;
    } catch (err) {
      if (err instanceof ApiError && err.diagnostics) {
        out.innerHTML = renderDiagnostics(input.value, err.diagnostics);
      } else if (err instanceof Error) {
        out.textContent = err.message;
      }
    }
  });
}

function start(): void {
  wireCommands();
  wireRuleEditor();
  void resync();
  setInterval(() => void resync(), POLL_MS);
  const stream = new EventStream(wsUrl(API_BASE), {
    onEvent: (e) => {
      if (store.applyEvent(e)) render();
    },
    onConnect: () => void resync(),
    onDrop: () => banner(true),
  });
  stream.start();
}

start();
