"""Autonomic control loops and their coordination.

Each region runs one loop whose monitor, analyse, plan and execute phases talk
only through the broker: monitor publishes symptoms onto kb/<loop>/symptoms,
analyse turns them into reports on kb/<loop>/reports, plan emits plans onto
plans/<region> (or escalates), and execute dispatches commands one tick after
a plan arrives. With one tick per hop this makes the local symptom-to-command
pipeline land its command publish exactly four ticks after the symptom.

Reports whose scope exceeds the loop's region (or whose rules say ESCALATE)
leave the loop: in centralized mode they go to the global controller on
plans/escalations, which merges overlapping reports, plans per region and
publishes onto plans/<region> (command publish lands at symptom + 8); in
decentralized mode the detecting loop publishes a shared plan on plans/shared
and the lexicographically smallest involved loop coordinates execution region
by region through grant/ack messages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from .analytics import SeriesWindow, zscore_values
from .broker import Broker, Envelope
from .devices import Registry
from .edge import DeviceManager, LinkedRule, RuleEngine, Symptom, make_resolver
from .kernel import Kernel, ScheduledEvent

SEVERITY_ORDER = {"info": 0, "warn": 1, "critical": 2}


@dataclass
class Limits:
    """Operational thresholds shared by the loops."""

    heartbeat_timeout: int = 15
    offline_timeout: int = 30
    ack_timeout: int = 10
    window_capacity: int = 64
    anomaly_window: int = 16
    z_threshold: float = 3.0
    anomaly_enabled: bool = True
    summary_interval: int = 0  # 0 = no region summaries


@dataclass
class KBEntry:
    key: str
    value: Any
    version: int
    written_at: int
    source: str


class KnowledgeBase:
    """Versioned, append-only store shared by the loop's phases."""

    def __init__(self, namespace: str):
        self.namespace = namespace
        self.entries: dict[str, list[KBEntry]] = {}

    def put(self, key: str, value: Any, written_at: int, source: str) -> KBEntry:
        chain = self.entries.setdefault(key, [])
        entry = KBEntry(key, value, len(chain) + 1, written_at, source)
        chain.append(entry)
        return entry

    def latest(self, key: str) -> Optional[KBEntry]:
        chain = self.entries.get(key)
        return chain[-1] if chain else None


class CloudStore:
    """Global data storage: escalations, merged reports, plans, summaries."""

    def __init__(self):
        self.records: list[dict] = []

    def record(self, kind: str, tick: int, body: dict) -> None:
        self.records.append({"kind": kind, "tick": tick, "body": body})

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r["kind"]] = out.get(r["kind"], 0) + 1
        return out

    def write(self, path) -> None:
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, separators=(",", ":")) + "\n")


class MapeLoop:
    """One region's control loop (monitor/analyse/plan/execute + KB)."""

    def __init__(
        self,
        kernel: Kernel,
        broker: Broker,
        registry: Registry,
        region: str,
        mode: str,
        limits: Limits,
    ):
        self.kernel = kernel
        self.broker = broker
        self.registry = registry
        self.region = region
        self.mode = mode
        self.limits = limits
        self.id = f"edge-{region}"
        self.kb = KnowledgeBase(self.id)
        self.engine = RuleEngine()
        devices = [d for d in registry.devices.values() if d.region == region]
        self.manager = DeviceManager(
            region, devices, limits.heartbeat_timeout, limits.offline_timeout
        )
        self.device_windows: dict[tuple[int, str], SeriesWindow] = {}
        self.thing_windows: dict[tuple[str, str], SeriesWindow] = {}
        self.anomaly_enabled = limits.anomaly_enabled
        self.counters = {"monitor": 0, "analyse": 0, "plan": 0, "execute": 0}
        self.last_plan: Optional[dict] = None
        self.seen_plans: set[str] = set()
        self.pending_shared: dict[str, dict] = {}
        self._coordinating: dict[str, dict] = {}
        self._telemetry: list[Envelope] = []
        self._symptoms: list[Envelope] = []
        self._reports: list[Envelope] = []
        self._counter = {"sym": 0, "rep": 0, "plan": 0, "esc": 0, "cmd": 0}

        self.monitor_id = f"{self.id}-monitor"
        self.analyse_id = f"{self.id}-analyse"
        self.plan_id = f"{self.id}-plan"
        self.execute_id = f"{self.id}-execute"
        kernel.register(self.monitor_id, self._on_monitor_event)
        kernel.register(self.analyse_id, self._on_analyse_event)
        kernel.register(self.plan_id, self._on_plan_event)
        kernel.register(self.execute_id, self._on_execute_event)
        broker.subscribe(self.monitor_id, f"telemetry/{region}/#")
        broker.subscribe(self.analyse_id, f"kb/{self.id}/symptoms")
        broker.subscribe(self.plan_id, f"kb/{self.id}/reports")
        broker.subscribe(self.execute_id, f"plans/{region}")
        if mode == "decentralized":
            broker.subscribe(self.execute_id, "plans/shared")
            broker.subscribe(self.execute_id, f"plans/grants/{self.id}")
            broker.subscribe(self.execute_id, "plans/acks")

    def install_hooks(self) -> None:
        self.kernel.add_tick_hook(f"{self.id}-monitor", self.monitor_hook)
        self.kernel.add_tick_hook(f"{self.id}-analyse", self.analyse_hook)
        self.kernel.add_tick_hook(f"{self.id}-plan", self.plan_hook)

    # -- event handlers (stash; the per-tick hooks do the work) ---------------

    def _on_monitor_event(self, event: ScheduledEvent) -> None:
        if event.kind == "dlv":
            self._telemetry.append(Envelope.from_delivery(event.body))

    def _on_analyse_event(self, event: ScheduledEvent) -> None:
        if event.kind == "dlv":
            self._symptoms.append(Envelope.from_delivery(event.body))

    def _on_plan_event(self, event: ScheduledEvent) -> None:
        if event.kind == "dlv":
            self._reports.append(Envelope.from_delivery(event.body))
        elif event.kind == "dispatch-escalation":
            self.counters["plan"] += 1
            self.broker.publish(
                "plans/escalations", "escalation/1", self.plan_id, event.body
            )

    # -- monitor ---------------------------------------------------------------

    def _next_id(self, kind: str) -> str:
        self._counter[kind] += 1
        return f"{kind}-{self.id}-{self._counter[kind]}"

    def monitor_hook(self, tick: int) -> None:
        symptoms: list[Symptom] = []
        for env in self._telemetry:
            body = env.body
            if env.schema == "telemetry/1":
                self.manager.seen(body["deviceId"], tick)
                value = body["value"]
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    continue
                value = float(value)
                dkey = (body["deviceId"], body["property"])
                dwin = self.device_windows.get(dkey)
                if dwin is None:
                    dwin = SeriesWindow(
                        (str(dkey[0]), dkey[1]), self.limits.window_capacity
                    )
                    self.device_windows[dkey] = dwin
                if self.anomaly_enabled:
                    z = zscore_values(dwin.values(self.limits.anomaly_window), value)
                    if z is not None and z > self.limits.z_threshold:
                        symptoms.append(
                            Symptom(
                                id=self._next_id("sym"),
                                kind="anomaly",
                                source=f"zscore/{body['deviceId']}/{body['property']}",
                                scope=[self.region],
                                evidence=[
                                    {
                                        "device": body["deviceId"],
                                        "property": body["property"],
                                        "value": value,
                                        "z": z,
                                        "tick": tick,
                                    }
                                ],
                                detected_at=tick,
                            )
                        )
                dwin.push(body["ts"], value)
                sensor_thing = self._thing_of(body["deviceId"], body["property"])
                if sensor_thing is not None:
                    tkey = (sensor_thing, body["property"])
                    twin = self.thing_windows.get(tkey)
                    if twin is None:
                        twin = SeriesWindow(tkey, self.limits.window_capacity)
                        self.thing_windows[tkey] = twin
                    twin.push(body["ts"], value)
                self.kb.put(
                    f"series/{body['deviceId']}/{body['property']}",
                    {"tick": body["ts"], "value": value},
                    tick,
                    self.monitor_id,
                )
            elif env.schema == "heartbeat/1":
                self.manager.seen(body["deviceId"], tick)
        self._telemetry.clear()

        for device_id in self.manager.offline_transitions(tick):
            symptoms.append(
                Symptom(
                    id=self._next_id("sym"),
                    kind="device-offline",
                    source="device-manager",
                    scope=[self.region],
                    evidence=[
                        {"device": device_id, "lastSeen": self.manager.last_seen[device_id],
                         "tick": tick}
                    ],
                    detected_at=tick,
                )
            )

        resolver = make_resolver(self.thing_windows)
        for rule, evidence in self.engine.evaluate(tick, resolver):
            symptoms.append(
                Symptom(
                    id=self._next_id("sym"),
                    kind="rule-violation",
                    source=rule.id,
                    scope=list(rule.scope),
                    evidence=evidence,
                    detected_at=tick,
                )
            )

        for symptom in symptoms:
            self.kb.put(f"symptoms/{symptom.id}", symptom.to_body(), tick, self.monitor_id)
            self.counters["monitor"] += 1
            self.broker.publish(
                f"kb/{self.id}/symptoms", "symptom/1", self.monitor_id, symptom.to_body()
            )

        interval = self.limits.summary_interval
        if interval and tick % interval == interval - 1:
            self.broker.publish(
                f"kb/{self.id}/summary",
                "summary/1",
                self.monitor_id,
                {
                    "loopId": self.id,
                    "tick": tick,
                    "regionId": self.region,
                    "counts": dict(self.counters),
                },
            )

    def _thing_of(self, device_id: int, prop: str) -> Optional[str]:
        device = self.registry.devices.get(device_id)
        if device is None:
            return None
        for s in device.sensors:
            if s.property == prop:
                return s.thing
        return None

    # -- analyse ----------------------------------------------------------------

    def analyse_hook(self, tick: int) -> None:
        if not self._symptoms:
            return
        bodies = [env.body for env in self._symptoms]
        self._symptoms.clear()
        severity = "warn"
        for b in bodies:
            if b["kind"] == "device-offline":
                severity = "critical"
            elif b["kind"] == "anomaly":
                for ev in b["evidence"]:
                    if ev.get("z", 0.0) > 2.0 * self.limits.z_threshold:
                        severity = "critical"
        scope = sorted({r for b in bodies for r in b["scope"]})
        matched = sorted(
            {b["source"] for b in bodies
             if b["kind"] == "rule-violation" and b["source"] in self.engine.rules}
        )
        report = {
            "id": self._next_id("rep"),
            "loopId": self.id,
            "tick": tick,
            "symptoms": [b["id"] for b in bodies],
            "rules": matched,
            "severity": severity,
            "scope": scope,
        }
        self.kb.put(f"reports/{report['id']}", report, tick, self.analyse_id)
        self.counters["analyse"] += 1
        self.broker.publish(f"kb/{self.id}/reports", "report/1", self.analyse_id, report)

    # -- plan --------------------------------------------------------------------

    def plan_hook(self, tick: int) -> None:
        reports, self._reports = self._reports, []
        for env in reports:
            self._plan_one(env.body, tick)

    def _matched_rules(self, report: dict) -> list[LinkedRule]:
        rules = [
            self.engine.rules[rid]
            for rid in report["rules"]
            if rid in self.engine.rules and self.engine.rules[rid].enabled
        ]
        rules.sort(key=lambda r: (-r.parsed.priority, r.id))
        return rules

    def _plan_one(self, report: dict, tick: int) -> None:
        matched = self._matched_rules(report)
        scope = report["scope"]
        wants_escalation = any(
            r.action_body()["kind"] == "escalate" for r in matched
        )
        local = set(scope) <= {self.region} and not wants_escalation
        if local:
            plan_id = self._next_id("plan")
            actions = []
            for i, rule in enumerate(matched):
                body = rule.action_body()
                if body["kind"] == "escalate":
                    continue
                body["id"] = f"{plan_id}/a{i}"
                body["region"] = self._action_region(body)
                actions.append(body)
            if not actions:
                actions = [
                    {
                        "kind": "notify",
                        "topic": "alerts",
                        "message": f"report {report['id']}: severity {report['severity']}",
                        "id": f"{plan_id}/a0",
                        "region": self.region,
                    }
                ]
            plan = {
                "id": plan_id,
                "origin": self.id,
                "actions": actions,
                "scope": [self.region],
                "cause": report["symptoms"],
                "priority": max((r.parsed.priority for r in matched), default=0),
                "createdAt": tick,
            }
            self.counters["plan"] += 1
            self.broker.publish(f"plans/{self.region}", "plan/1", self.plan_id, plan)
            return
        if self.mode == "centralized":
            escalation = {
                "id": self._next_id("esc"),
                "loopId": self.id,
                "report": report,
                "proposals": [
                    {
                        "ruleId": r.id,
                        "priority": r.parsed.priority,
                        "action": dict(r.action_body(),
                                       region=self._action_region(r.action_body())),
                    }
                    for r in matched
                ],
            }
            # crossing to the cloud costs a dispatch tick
            self.kernel.schedule(tick + 1, self.plan_id, "dispatch-escalation", escalation)
            return
        # decentralized: share the full plan with the involved peers
        plan_id = self._next_id("plan")
        actions = []
        for i, rule in enumerate(matched):
            body = rule.action_body()
            if body["kind"] == "escalate":
                continue
            body["id"] = f"{plan_id}/a{i}"
            body["region"] = self._action_region(body)
            actions.append(body)
        if not actions:
            actions = [
                {
                    "kind": "notify",
                    "topic": "alerts",
                    "message": f"report {report['id']}: severity {report['severity']}",
                    "id": f"{plan_id}/a0",
                    "region": self.region,
                }
            ]
        involved = sorted(f"edge-{r}" for r in scope)
        plan = {
            "id": plan_id,
            "origin": self.id,
            "actions": actions,
            "scope": sorted(scope),
            "cause": report["symptoms"],
            "priority": max((r.parsed.priority for r in matched), default=0),
            "createdAt": tick,
            "involved": involved,
            "coordinator": involved[0],
        }
        self.counters["plan"] += 1
        self.broker.publish("plans/shared", "plan/1", self.plan_id, plan)

    def _action_region(self, action_body: dict) -> str:
        if action_body["kind"] == "device-command":
            device = self.registry.devices.get(action_body["deviceId"])
            if device is not None:
                return device.region
        return self.region

    # -- execute ------------------------------------------------------------------

    def _on_execute_event(self, event: ScheduledEvent) -> None:
        tick = self.kernel.now()
        if event.kind == "dlv":
            env = Envelope.from_delivery(event.body)
            if env.schema == "plan/1":
                plan = env.body
                if "involved" in plan:
                    self._on_shared_plan(plan, tick)
                else:
                    if plan["id"] in self.seen_plans:
                        self.kernel.record(self.execute_id, "exec-dup", {"planId": plan["id"]})
                        return
                    self.seen_plans.add(plan["id"])
                    self.kernel.schedule(tick + 1, self.execute_id, "dispatch", {"plan": plan})
            elif env.schema == "plangrant/1" and env.body["loopId"] == self.id:
                plan = self.pending_shared.get(env.body["planId"])
                if plan is not None:
                    self.kernel.schedule(
                        tick + 1,
                        self.execute_id,
                        "dispatch-slice",
                        {"plan": plan, "region": env.body["region"]},
                    )
            elif env.schema == "planack/1":
                self._on_plan_ack(env.body, tick)
        elif event.kind == "dispatch":
            self._dispatch(event.body["plan"], tick, slice_region=None)
        elif event.kind == "dispatch-slice":
            self._dispatch(event.body["plan"], tick, slice_region=event.body["region"])
        elif event.kind == "ack-timeout":
            self._on_ack_timeout(event.body, tick)

    def _on_shared_plan(self, plan: dict, tick: int) -> None:
        if self.id not in plan["involved"]:
            return
        self.pending_shared[plan["id"]] = plan
        if plan["coordinator"] != self.id:
            return
        if plan["id"] in self._coordinating:
            return
        state = {
            "plan": plan,
            "regions": sorted(plan["scope"]),
            "next": 0,
            "acked": [],
            "partial": False,
        }
        self._coordinating[plan["id"]] = state
        self._grant_next(state, tick)

    def _grant_next(self, state: dict, tick: int) -> None:
        if state["next"] >= len(state["regions"]):
            plan = state["plan"]
            completion = {
                "planId": plan["id"],
                "regions": state["regions"],
                "acked": state["acked"],
                "partial": state["partial"],
            }
            self.kb.put(f"plans/{plan['id']}/completion", completion, tick, self.execute_id)
            self.kernel.record(self.execute_id, "exec-complete", completion)
            if state["partial"]:
                self.broker.publish(
                    "notify/alerts",
                    "notify/1",
                    self.execute_id,
                    {"message": f"plan {plan['id']} completed partially",
                     "planId": plan["id"]},
                )
            del self._coordinating[plan["id"]]
            return
        region = state["regions"][state["next"]]
        plan = state["plan"]
        self.broker.publish(
            f"plans/grants/edge-{region}",
            "plangrant/1",
            self.execute_id,
            {"planId": plan["id"], "loopId": f"edge-{region}", "region": region},
        )
        self.kernel.schedule(
            tick + self.limits.ack_timeout,
            self.execute_id,
            "ack-timeout",
            {"planId": plan["id"], "region": region},
        )

    def _on_plan_ack(self, body: dict, tick: int) -> None:
        state = self._coordinating.get(body["planId"])
        if state is None:
            return
        region = state["regions"][state["next"]] if state["next"] < len(state["regions"]) else None
        if body["region"] != region:
            return
        state["acked"].append(body["region"])
        state["next"] += 1
        self._grant_next(state, tick)

    def _on_ack_timeout(self, body: dict, tick: int) -> None:
        state = self._coordinating.get(body["planId"])
        if state is None:
            return
        pos = state["next"]
        if pos < len(state["regions"]) and state["regions"][pos] == body["region"]:
            state["partial"] = True
            self.kernel.record(
                self.execute_id,
                "ack-timeout",
                {"planId": body["planId"], "region": body["region"]},
            )
            state["next"] += 1
            self._grant_next(state, tick)

    def _dispatch(self, plan: dict, tick: int, slice_region: Optional[str]) -> None:
        outcomes = []
        for action in plan["actions"]:
            if slice_region is not None and action.get("region") != slice_region:
                continue
            outcomes.append(self._run_action(plan, action))
        completion = {"planId": plan["id"], "outcomes": outcomes}
        if slice_region is not None:
            completion["region"] = slice_region
        self.kb.put(f"plans/{plan['id']}/completion", completion, tick, self.execute_id)
        self.counters["execute"] += 1
        self.last_plan = dict(plan, outcomes=outcomes)
        self.kernel.record(self.execute_id, "exec", completion)
        if slice_region is not None:
            self.broker.publish(
                "plans/acks",
                "planack/1",
                self.execute_id,
                {
                    "planId": plan["id"],
                    "loopId": self.id,
                    "region": slice_region,
                    "outcomes": outcomes,
                },
            )

    def _run_action(self, plan: dict, action: dict) -> dict:
        outcome = {"actionId": action["id"], "ok": True}
        if action["kind"] == "device-command":
            device = self.registry.devices.get(action["deviceId"])
            if device is None:
                outcome.update(ok=False, reason="DispatchFailure: unknown device")
                return outcome
            self._counter["cmd"] += 1
            command_id = f"cmd-{self.id}-{self._counter['cmd']}"
            self.broker.publish(
                f"commands/{action['deviceId']}",
                "command/1",
                self.execute_id,
                {
                    "commandId": command_id,
                    "deviceId": action["deviceId"],
                    "resourceId": action["resourceId"],
                    "value": action["value"],
                    "origin": f"plan/{plan['id']}",
                },
            )
            outcome["commandId"] = command_id
        elif action["kind"] == "notify":
            self.broker.publish(
                f"notify/{action['topic']}",
                "notify/1",
                self.execute_id,
                {"message": action["message"], "planId": plan["id"]},
            )
        elif action["kind"] == "rule-toggle":
            if self.engine.toggle(action["ruleId"], bool(action["value"])):
                self.kernel.record(
                    "run",
                    "rule-toggle",
                    {"ruleId": action["ruleId"], "enabled": bool(action["value"]),
                     "engine": self.id},
                )
            else:
                outcome.update(ok=False, reason="DispatchFailure: unknown rule")
        else:
            outcome.update(ok=False, reason=f"DispatchFailure: unknown action {action['kind']}")
        return outcome


class GlobalController:
    """Cloud-side analyse+plan service fed by escalations (centralized mode)."""

    def __init__(self, kernel: Kernel, broker: Broker, registry: Registry, limits: Limits):
        self.kernel = kernel
        self.broker = broker
        self.registry = registry
        self.limits = limits
        self.kb = KnowledgeBase("global")
        self.store = CloudStore()
        self.engine = RuleEngine()  # multi-region rules, authoritative for planning
        self._escalations: list[dict] = []
        self._reports: list[dict] = []
        self._counter = {"grep": 0, "plan": 0}
        self.analyse_id = "global-analyse"
        self.plan_id = "global-plan"
        kernel.register(self.analyse_id, self._on_analyse_event)
        kernel.register(self.plan_id, self._on_plan_event)
        broker.subscribe(self.analyse_id, "plans/escalations")
        broker.subscribe(self.analyse_id, "kb/*/summary")
        broker.subscribe(self.plan_id, "kb/global/reports")

    def install_hooks(self) -> None:
        self.kernel.add_tick_hook("global-analyse", self.analyse_hook)
        self.kernel.add_tick_hook("global-plan", self.plan_hook)

    def _on_analyse_event(self, event: ScheduledEvent) -> None:
        if event.kind != "dlv":
            return
        env = Envelope.from_delivery(event.body)
        if env.schema == "escalation/1":
            self._escalations.append(env.body)
        elif env.schema == "summary/1":
            self.store.record("summary", self.kernel.now(), env.body)

    def _on_plan_event(self, event: ScheduledEvent) -> None:
        tick = self.kernel.now()
        if event.kind == "dlv":
            env = Envelope.from_delivery(event.body)
            if env.schema == "report/1":
                self._reports.append(env.body)
        elif event.kind == "dispatch-plans":
            for plan in event.body["plans"]:
                self.store.record("plan", tick, plan)
                self.broker.publish(
                    f"plans/{plan['scope'][0]}", "plan/1", self.plan_id, plan
                )

    # -- global analyse: merge escalations sharing scope --------------------------

    def analyse_hook(self, tick: int) -> None:
        escalations, self._escalations = self._escalations, []
        if not escalations:
            return
        for esc in escalations:
            self.store.record("escalation", tick, esc)
        groups = _merge_by_scope(escalations)
        for group in groups:
            self._counter["grep"] += 1
            symptoms: list[str] = []
            rules: list[str] = []
            proposals: list[dict] = []
            seen_rules: set[str] = set()
            severity = "warn"
            scope: set[str] = set()
            for esc in group:
                report = esc["report"]
                symptoms.extend(s for s in report["symptoms"] if s not in symptoms)
                scope.update(report["scope"])
                if SEVERITY_ORDER[report["severity"]] > SEVERITY_ORDER[severity]:
                    severity = report["severity"]
                for proposal in esc["proposals"]:
                    if proposal["ruleId"] not in seen_rules:
                        seen_rules.add(proposal["ruleId"])
                        proposals.append(proposal)
                        rules.append(proposal["ruleId"])
            merged = {
                "id": f"grep-{self._counter['grep']}",
                "loopId": "global",
                "tick": tick,
                "symptoms": symptoms,
                "rules": sorted(rules),
                "severity": severity,
                "scope": sorted(scope),
                "proposals": proposals,
            }
            self.kb.put(f"reports/{merged['id']}", merged, tick, self.analyse_id)
            self.store.record("report", tick, merged)
            self.broker.publish("kb/global/reports", "report/1", self.analyse_id, merged)

    # -- global plan: one plan per involved region ---------------------------------

    def plan_hook(self, tick: int) -> None:
        reports, self._reports = self._reports, []
        for report in reports:
            plans = self._split_plans(report, tick)
            if plans:
                # plans travel back down to the edge one tick later
                self.kernel.schedule(tick + 1, self.plan_id, "dispatch-plans", {"plans": plans})

    def _split_plans(self, report: dict, tick: int) -> list[dict]:
        proposals = sorted(
            report.get("proposals", ()), key=lambda p: (-p["priority"], p["ruleId"])
        )
        by_region: dict[str, list[dict]] = {}
        for proposal in proposals:
            action = proposal["action"]
            if action["kind"] == "escalate":
                # realized as a notification to the first involved region
                region = report["scope"][0] if report["scope"] else "global"
                action = {
                    "kind": "notify",
                    "topic": "alerts",
                    "message": f"escalation: {action.get('reason', '')}",
                    "region": region,
                }
            by_region.setdefault(action["region"], []).append(dict(action))
        plans = []
        for region in sorted(by_region):
            self._counter["plan"] += 1
            plan_id = f"plan-global-{self._counter['plan']}-{region}"
            actions = []
            for i, action in enumerate(by_region[region]):
                action["id"] = f"{plan_id}/a{i}"
                actions.append(action)
            plans.append(
                {
                    "id": plan_id,
                    "origin": "global",
                    "actions": actions,
                    "scope": [region],
                    "cause": report["symptoms"],
                    "priority": max((p["priority"] for p in proposals), default=0),
                    "createdAt": tick,
                }
            )
        if not plans:
            # nothing actionable: notify the first scope region
            self._counter["plan"] += 1
            region = report["scope"][0] if report["scope"] else "global"
            plan_id = f"plan-global-{self._counter['plan']}-{region}"
            plans.append(
                {
                    "id": plan_id,
                    "origin": "global",
                    "actions": [
                        {
                            "kind": "notify",
                            "topic": "alerts",
                            "message": f"report {report['id']}: severity {report['severity']}",
                            "id": f"{plan_id}/a0",
                            "region": region,
                        }
                    ],
                    "scope": [region],
                    "cause": report["symptoms"],
                    "priority": 0,
                    "createdAt": tick,
                }
            )
        return plans


def _merge_by_scope(escalations: list[dict]) -> list[list[dict]]:
    """Group escalations whose report scopes overlap (transitively)."""
    groups: list[tuple[set[str], list[dict]]] = []
    for esc in escalations:
        scope = set(esc["report"]["scope"])
        hits = [g for g in groups if g[0] & scope]
        if not hits:
            groups.append((scope, [esc]))
            continue
        merged_scope = set(scope)
        merged_list: list[dict] = []
        for g in hits:
            merged_scope |= g[0]
            merged_list.extend(g[1])
            groups.remove(g)
        merged_list.append(esc)
        groups.append((merged_scope, merged_list))
    return [g[1] for g in groups]
