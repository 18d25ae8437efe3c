// Shapes served by the backend (GET /dashboard/snapshot and /events stream).

export interface DeviceRow {
  id: number;
  name: string;
  region: string;
  status: "online" | "stale" | "offline";
  lastSeen: number;
  values: Record<string, number | boolean | string>;
}

export interface LoopRow {
  id: string;
  region: string;
  mode: string;
  counters: { monitor: number; analyse: number; plan: number; execute: number };
  lastPlanId: string;
}

export interface PlanRow {
  id: string;
  origin: string;
  actions: { id: string; kind: string; [k: string]: unknown }[];
  scope: string[];
  cause: string[];
  priority: number;
  createdAt: number;
}

export interface RuleRow {
  id: string;
  text: string;
  scope: string[];
  engine: string;
  enabled: boolean;
}

export interface Snapshot {
  run: { scenario: string; seed: number; mode: string; horizon: number; tick: number };
  devices: DeviceRow[];
  loops: LoopRow[];
  plans: PlanRow[];
  rules: RuleRow[];
  users: { id: number; name: string; unread: number }[];
  commands: { id: string; outcome: string; reason: string }[];
  environment: Record<string, number | boolean | string>;
  messages: Record<string, number>;
  globalStore: Record<string, number>;
}

export interface StreamEvent {
  tick: number;
  envelopeId: string;
  topic: string;
  schema: string;
  body: Record<string, any>;
}

export interface RuleDiagnostics {
  code: string;
  message: string;
  position?: { line: number; col: number };
  expected?: string[];
}

export type BadgeState = "pending" | "acked" | "failed";
