"""Runtime assembly, scenario execution, invariant checkers, and log replay.

A run's JSONL log is self-contained: genesis entries describe the deployment
(things, devices, loops, rules, limits), and every state change that the
dashboard snapshot reflects is either a broker pub/dlv or an explicit record
(user, notif, command-req, rule-toggle, exec, env). replay() folds a log back
into the exact final snapshot of the live run.
"""

from __future__ import annotations

import dataclasses
import json
from collections import deque
from typing import Any, Optional

from .broker import Broker
from .config import ScenarioConfig, ServiceConfig
from .devices import DeviceHost, Environment
from .edge import link_rule
from .gateway import Gateway
from .kernel import Kernel, LogEntry, ScheduledEvent
from .orchestration import GlobalController, MapeLoop
from .rules import ParsedRule
from .service import AppService

SNAPSHOT_SOURCES = {
    "devices": "edge",
    "environment": "simulation",
    "rules": "engines",
    "loops": "edge",
    "plans": "broker",
    "users": "app",
    "commands": "app",
    "globalStore": "cloud",
    "messages": "broker",
}


class ReplayError(Exception):
    pass


class CorruptLog(ReplayError):
    def __init__(self, line: int, detail: str):
        self.line = line
        super().__init__(f"corrupt log at line {line}: {detail}")


class Runtime:
    """A fully wired simulation built from a validated scenario config."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.kernel = Kernel(config.seed)
        self.broker = Broker(self.kernel)
        self.registry = config.registry()
        self.environment = Environment(self.kernel, config.things)
        self._bp_counter = 0

        self.gateways: dict[str, Gateway] = {}
        for spec in sorted(config.gateways, key=lambda g: g.id):
            self.gateways[spec.id] = Gateway(self.kernel, self.broker, spec)

        self.hosts: dict[int, DeviceHost] = {}
        for spec in sorted(config.devices, key=lambda d: d.id):
            host = DeviceHost(self.kernel, spec, self.environment)
            self.hosts[spec.id] = host
            if spec.gateway in self.gateways:
                if spec.attached:
                    self.gateways[spec.gateway].attach(host)
                else:
                    self.gateways[spec.gateway].watch(spec.id)

        self.loops: dict[str, MapeLoop] = {}
        for region in sorted(config.regions):
            self.loops[region] = MapeLoop(
                self.kernel, self.broker, self.registry, region, config.mode, config.limits
            )

        self.global_controller: Optional[GlobalController] = None
        if config.mode == "centralized":
            self.global_controller = GlobalController(
                self.kernel, self.broker, self.registry, config.limits
            )

        meta = {
            "scenario": config.name,
            "seed": config.seed,
            "mode": config.mode,
            "horizon": config.horizon,
        }
        self.service = AppService(
            self.kernel,
            self.broker,
            self.registry,
            self.loops,
            self.global_controller,
            self.environment,
            meta,
            config.limits,
            rule_installer=self.install_rule,
        )

        self.kernel.register("bp", self._on_bp_event)

        # hook order fixes the intra-tick phase order: environment steps, then
        # sampling, then gateway window flushes, then the loop phases, then the
        # global controller, then the service snapshot.
        self.kernel.add_tick_hook("environment", self._env_hook)
        self.kernel.add_tick_hook("sampling", self._sampling_hook)
        for gw_id in sorted(self.gateways):
            self.kernel.add_tick_hook(f"gw-{gw_id}", self.gateways[gw_id].flush_windows)
        for region in sorted(self.loops):
            self.loops[region].install_hooks()
        if self.global_controller is not None:
            self.global_controller.install_hooks()
        self.kernel.add_tick_hook("service", self.service.tick_hook)

        self._write_genesis()
        self._install_config_rules()
        self._create_config_users()
        self._schedule_processes()

    # -- hooks -----------------------------------------------------------------

    def _env_hook(self, tick: int) -> None:
        for region in sorted(self.config.regions):
            self.environment.step_region(region, tick)

    def _sampling_hook(self, tick: int) -> None:
        for device_id in sorted(self.hosts):
            self.hosts[device_id].sample_tick(tick)

    # -- genesis ---------------------------------------------------------------

    def _write_genesis(self) -> None:
        cfg = self.config
        self.kernel.record(
            "run",
            "init",
            {
                "scenario": cfg.name,
                "seed": cfg.seed,
                "mode": cfg.mode,
                "horizon": cfg.horizon,
                "limits": dataclasses.asdict(cfg.limits),
                "tasks": [
                    {"name": t.name, "processes": [p.name for p in t.processes]}
                    for t in cfg.domain.tasks
                ],
            },
        )
        for thing in sorted(cfg.things, key=lambda t: t.id):
            self.kernel.record(
                "run",
                "init-thing",
                {
                    "id": thing.id,
                    "kind": thing.kind,
                    "region": thing.region,
                    "properties": [
                        {"name": p.name, "unit": p.unit, "kind": p.kind}
                        for p in thing.properties
                    ],
                },
            )
        for gw in sorted(cfg.gateways, key=lambda g: g.id):
            self.kernel.record(
                "run",
                "init-gateway",
                {"id": gw.id, "region": gw.region, "aggregation": gw.aggregation.kind},
            )
        for device in sorted(cfg.devices, key=lambda d: d.id):
            self.kernel.record(
                "run",
                "init-device",
                {
                    "id": device.id,
                    "name": device.name,
                    "region": device.region,
                    "gateway": device.gateway,
                    "heartbeat": device.heartbeat,
                    "sensors": [
                        {"id": s.id, "thing": s.thing, "property": s.property,
                         "period": s.period, "mode": s.mode}
                        for s in device.sensors
                    ],
                    "actuators": [
                        {"id": a.id, "name": a.name, "thing": a.thing,
                         "property": a.property, "effect": a.effect}
                        for a in device.actuators
                    ],
                },
            )
        for region in sorted(self.loops):
            loop = self.loops[region]
            self.kernel.record(
                "run",
                "init-loop",
                {"id": loop.id, "region": region, "mode": loop.mode},
            )

    def _install_config_rules(self) -> None:
        for rule in self.config.rules:
            if rule.parsed is not None:
                self.install_rule(rule.id, rule.parsed, rule.enabled)

    def _create_config_users(self) -> None:
        for user_cfg in self.config.users:
            user = self.service.create_user(
                user_cfg.name, user_cfg.email, user_cfg.preferences
            )
            for sub in user_cfg.subscriptions:
                self.service.subscribe_user(user.id, sub.pattern)

    def _schedule_processes(self) -> None:
        for task in self.config.domain.tasks:
            for process in task.processes:
                for step in process.steps:
                    self.kernel.schedule(
                        step.at,
                        "bp",
                        "bp-activate",
                        {"task": task.name, "process": process.name,
                         "service": step.service},
                    )

    # -- rule placement ----------------------------------------------------------

    def install_rule(self, rule_id: str, parsed: ParsedRule, enabled: bool) -> list[str]:
        """Install a rule at the scope-appropriate engines.

        Single-region rules live in that region's loop. Multi-region rules get
        detection copies at every involved loop; in centralized mode the global
        engine additionally holds the authoritative planning copy.
        """
        probe = link_rule(rule_id, parsed, self.registry, enabled)
        engines: list[tuple[str, Any]] = []
        if len(probe.scope) <= 1:
            region = probe.scope[0] if probe.scope else sorted(self.loops)[0]
            engines.append((self.loops[region].id, self.loops[region].engine))
        else:
            for region in probe.scope:
                engines.append((self.loops[region].id, self.loops[region].engine))
            if self.global_controller is not None:
                engines.append(("global", self.global_controller.engine))
        placed = []
        for engine_name, engine in engines:
            engine.add(link_rule(rule_id, parsed, self.registry, enabled))
            self.kernel.record(
                "run",
                "rule-add",
                {"id": rule_id, "text": parsed.text(), "scope": list(probe.scope),
                 "engine": engine_name, "enabled": enabled},
            )
            placed.append(engine_name)
        return placed

    # -- business processes ---------------------------------------------------------

    def _on_bp_event(self, event: ScheduledEvent) -> None:
        if event.kind != "bp-activate":
            return
        service = next(
            (s for s in self.config.services if s.name == event.body["service"]), None
        )
        if service is None:
            return
        self._activate_service(service, event.body["process"])

    def _activate_service(self, service: ServiceConfig, process: str) -> None:
        if service.kind == "rules":
            for rule_id in service.rules:
                self._toggle_rule_everywhere(rule_id, service.enabled)
        elif service.kind == "device":
            device = self.registry.device_by_name.get(service.device)
            if device is None:
                return
            actuator = next(
                (a for a in device.actuators if a.name == service.resource), None
            )
            if actuator is None:
                return
            self._bp_counter += 1
            self.broker.publish(
                f"commands/{device.id}",
                "command/1",
                "bp",
                {
                    "commandId": f"cmd-bp-{self._bp_counter}",
                    "deviceId": device.id,
                    "resourceId": actuator.id,
                    "value": service.value,
                    "origin": f"process/{process}",
                },
            )
        elif service.kind == "detector":
            for region in sorted(self.loops):
                self.loops[region].anomaly_enabled = bool(service.enabled)
            self.kernel.record(
                "bp", "detector-toggle", {"enabled": bool(service.enabled)}
            )

    def _toggle_rule_everywhere(self, rule_id: str, enabled: bool) -> None:
        for region in sorted(self.loops):
            loop = self.loops[region]
            if loop.engine.toggle(rule_id, enabled):
                self.kernel.record(
                    "run", "rule-toggle",
                    {"ruleId": rule_id, "enabled": enabled, "engine": loop.id},
                )
        if self.global_controller is not None:
            if self.global_controller.engine.toggle(rule_id, enabled):
                self.kernel.record(
                    "run", "rule-toggle",
                    {"ruleId": rule_id, "enabled": enabled, "engine": "global"},
                )

    # -- execution --------------------------------------------------------------------

    def run(self, until: Optional[int] = None):
        horizon = self.config.horizon if until is None else until
        return self.kernel.run(horizon)


# -- invariant checkers ----------------------------------------------------------------


def check_invariants(entries: list[LogEntry], mode: str, horizon: int) -> list[str]:
    violations: list[str] = []
    pubs = [e for e in entries if e.kind == "pub"]
    dlvs = [e for e in entries if e.kind == "dlv"]

    dlv_counts: dict[str, int] = {}
    for e in dlvs:
        eid = e.body["envelopeId"]
        dlv_counts[eid] = dlv_counts.get(eid, 0) + 1
    for e in pubs:
        eid = e.body["envelopeId"]
        expected = e.body["subs"] if e.tick < horizon else 0
        got = dlv_counts.get(eid, 0)
        if got != expected:
            violations.append(
                f"delivery count mismatch for {eid}: expected {expected}, got {got}"
            )

    plan_ids = set()
    symptom_ids = set()
    for e in pubs:
        if e.body["schema"] == "plan/1":
            plan_ids.add(e.body["body"]["id"])
        elif e.body["schema"] == "symptom/1":
            symptom_ids.add(e.body["body"]["id"])
    for e in pubs:
        if e.body["schema"] == "plan/1":
            plan = e.body["body"]
            if not plan["actions"]:
                violations.append(f"plan {plan['id']} has no actions")
            if not plan["cause"]:
                violations.append(f"plan {plan['id']} cites no symptoms")
            elif not set(plan["cause"]) <= symptom_ids:
                violations.append(f"plan {plan['id']} cites unknown symptoms")
            if mode == "centralized" and len(plan["scope"]) > 1 and plan["origin"] != "global":
                violations.append(
                    f"plan {plan['id']} with scope {plan['scope']} from local loop"
                )
        elif e.body["schema"] == "command/1":
            origin = e.body["body"]["origin"]
            if origin.startswith("plan/") and origin[len("plan/"):] not in plan_ids:
                violations.append(f"command cites unknown {origin}")

    # decentralized exactly-once: every shared-plan action executed exactly once
    shared_actions: dict[str, int] = {}
    shared_ids = {
        e.body["body"]["id"] for e in pubs
        if e.body["schema"] == "plan/1" and "involved" in e.body["body"]
    }
    for e in entries:
        if e.kind == "exec" and e.body["planId"] in shared_ids:
            for outcome in e.body["outcomes"]:
                aid = outcome["actionId"]
                shared_actions[aid] = shared_actions.get(aid, 0) + 1
    for aid, count in shared_actions.items():
        if count != 1:
            violations.append(f"shared action {aid} executed {count} times")

    return violations


# -- run + summary ------------------------------------------------------------------------


def build_summary(runtime: Runtime, violations: list[str]) -> dict:
    entries = runtime.kernel.log.entries
    messages: dict[str, int] = {}
    for e in entries:
        if e.kind == "pub":
            schema = e.body["schema"]
            messages[schema] = messages.get(schema, 0) + 1
    final_values = dict(sorted(runtime.environment.report_values().items()))
    cfg = runtime.config
    return {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "ticks": cfg.horizon,
        "messages": dict(sorted(messages.items())),
        "symptoms": messages.get("symptom/1", 0),
        "plans": messages.get("plan/1", 0),
        "commands": messages.get("command/1", 0),
        "escalations": messages.get("escalation/1", 0),
        "finalValues": final_values,
        "tasks": [
            {"name": t.name, "processes": [p.name for p in t.processes]}
            for t in cfg.domain.tasks
        ],
        "violations": violations,
    }


def run_scenario(
    config: ScenarioConfig,
    ticks: Optional[int] = None,
    seed: Optional[int] = None,
    mode: Optional[str] = None,
    out_dir: Optional[str] = None,
) -> dict:
    """Build and run a scenario; returns {runtime, summary, snapshot}.

    With out_dir set, writes run.jsonl, summary.json and (in centralized mode)
    cloud-store.jsonl there.
    """
    if ticks is not None or seed is not None or mode is not None:
        config = dataclasses.replace(
            config,
            horizon=config.horizon if ticks is None else ticks,
            seed=config.seed if seed is None else seed,
            mode=config.mode if mode is None else mode,
        )
    runtime = Runtime(config)
    runtime.run()
    violations = check_invariants(
        runtime.kernel.log.entries, config.mode, config.horizon
    )
    summary = build_summary(runtime, violations)
    snapshot = runtime.service.snapshot()
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        runtime.kernel.log.write(os.path.join(out_dir, "run.jsonl"))
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=False)
            fh.write("\n")
        if runtime.global_controller is not None:
            runtime.global_controller.store.write(os.path.join(out_dir, "cloud-store.jsonl"))
    return {"runtime": runtime, "summary": summary, "snapshot": snapshot}


# -- replay --------------------------------------------------------------------------------


def _device_status(age: int, heartbeat_timeout: int, offline_timeout: int) -> str:
    if age <= heartbeat_timeout:
        return "online"
    if age <= offline_timeout:
        return "stale"
    return "offline"


def replay_entries(entries: list[dict]) -> dict:
    """Fold parsed log entries into the final dashboard snapshot."""
    run_meta = {"scenario": "", "seed": 0, "mode": "", "horizon": 0, "tick": 0}
    limits = {"heartbeat_timeout": 15, "offline_timeout": 30}
    things: list[dict] = []
    devices: list[dict] = []
    loops: list[dict] = []
    rules: dict[tuple[str, str], dict] = {}
    last_seen: dict[int, int] = {}
    values: dict[int, dict[str, Any]] = {}
    environment: dict[str, Any] = {}
    plans: deque = deque(maxlen=50)
    messages: dict[str, int] = {}
    counters: dict[str, dict[str, int]] = {}
    last_plan: dict[str, str] = {}
    users: list[dict] = []
    notif_read: set[str] = set()
    notifs: list[dict] = []
    commands: dict[str, dict] = {}
    global_store: dict[str, int] = {}

    def bump(loop_id: str, phase: str) -> None:
        counters.setdefault(
            loop_id, {"monitor": 0, "analyse": 0, "plan": 0, "execute": 0}
        )[phase] += 1

    final_tick = 0
    for entry in entries:
        final_tick = max(final_tick, entry["tick"])
        kind = entry["kind"]
        body = entry["body"]
        target = entry["target"]
        if kind == "init":
            run_meta.update(
                scenario=body["scenario"], seed=body["seed"], mode=body["mode"],
                horizon=body["horizon"],
            )
            limits["heartbeat_timeout"] = body["limits"]["heartbeat_timeout"]
            limits["offline_timeout"] = body["limits"]["offline_timeout"]
        elif kind == "init-thing":
            things.append(body)
        elif kind == "init-device":
            devices.append(body)
            last_seen[body["id"]] = 0
            values[body["id"]] = {}
        elif kind == "init-loop":
            loops.append(body)
            counters.setdefault(
                body["id"], {"monitor": 0, "analyse": 0, "plan": 0, "execute": 0}
            )
        elif kind == "rule-add":
            rules[(body["engine"], body["id"])] = {
                "id": body["id"],
                "text": body["text"],
                "scope": body["scope"],
                "engine": body["engine"],
                "enabled": body["enabled"],
            }
        elif kind == "rule-toggle":
            key = (body["engine"], body["ruleId"])
            if key in rules:
                rules[key]["enabled"] = body["enabled"]
        elif kind == "env":
            environment.update(body["values"])
        elif kind == "pub":
            schema = body["schema"]
            messages[schema] = messages.get(schema, 0) + 1
            publisher = target
            if schema == "plan/1":
                plans.append(body["body"])
            if schema == "symptom/1" and publisher.endswith("-monitor"):
                bump(publisher[: -len("-monitor")], "monitor")
            elif schema == "report/1" and publisher.endswith("-analyse"):
                if publisher != "global-analyse":
                    bump(publisher[: -len("-analyse")], "analyse")
                else:
                    global_store["report"] = global_store.get("report", 0) + 1
            elif schema in ("plan/1", "escalation/1") and publisher.endswith("-plan"):
                if publisher != "global-plan":
                    bump(publisher[: -len("-plan")], "plan")
                else:
                    global_store["plan"] = global_store.get("plan", 0) + 1
        elif kind == "dlv":
            schema = body["schema"]
            if target.endswith("-monitor") and schema in ("telemetry/1", "heartbeat/1"):
                device_id = body["body"]["deviceId"]
                if device_id in last_seen:
                    last_seen[device_id] = entry["tick"]
            elif target == "app" and schema == "telemetry/1":
                prop = body["body"]["property"]
                device_id = body["body"]["deviceId"]
                if prop != "heartbeat" and device_id in values:
                    values[device_id][prop] = body["body"]["value"]
            elif target == "global-analyse" and schema == "escalation/1":
                global_store["escalation"] = global_store.get("escalation", 0) + 1
            elif target == "global-analyse" and schema == "summary/1":
                global_store["summary"] = global_store.get("summary", 0) + 1
        elif kind == "exec":
            loop_id = target[: -len("-execute")]
            bump(loop_id, "execute")
            last_plan[loop_id] = body["planId"]
        elif kind == "user":
            users.append({"id": body["id"], "name": body["name"], "unread": 0})
        elif kind == "notif":
            notifs.append(body)
        elif kind == "notif-read":
            notif_read.add(body["id"])
        elif kind == "command-req":
            commands[body["id"]] = {"id": body["id"], "outcome": "pending", "reason": ""}
        elif kind == "command-outcome":
            if body["id"] in commands:
                commands[body["id"]].update(
                    outcome=body["outcome"], reason=body.get("reason", "")
                )

    tick = run_meta["horizon"] if entries else 0
    run_meta["tick"] = tick

    region_of = {d["id"]: d["region"] for d in devices}
    device_rows = []
    for region in sorted({d["region"] for d in devices}):
        for device in sorted((d for d in devices if d["region"] == region),
                             key=lambda d: d["id"]):
            age = tick - last_seen[device["id"]]
            device_rows.append(
                {
                    "id": device["id"],
                    "name": device["name"],
                    "region": device["region"],
                    "status": _device_status(
                        age, limits["heartbeat_timeout"], limits["offline_timeout"]
                    ),
                    "lastSeen": last_seen[device["id"]],
                    "values": dict(sorted(values[device["id"]].items())),
                }
            )

    rule_rows = []
    loop_ids = sorted(c for c in counters if c != "global")
    for engine in loop_ids + ["global"]:
        for key in sorted(k for k in rules if k[0] == engine):
            rule_rows.append(rules[key])

    loop_rows = []
    for loop in sorted(loops, key=lambda l: l["id"]):
        loop_rows.append(
            {
                "id": loop["id"],
                "region": loop["region"],
                "mode": loop["mode"],
                "counters": counters.get(
                    loop["id"], {"monitor": 0, "analyse": 0, "plan": 0, "execute": 0}
                ),
                "lastPlanId": last_plan.get(loop["id"], ""),
            }
        )

    for user in users:
        user["unread"] = sum(
            1 for n in notifs if n["userId"] == user["id"] and n["id"] not in notif_read
        )

    return {
        "run": run_meta,
        "sources": dict(SNAPSHOT_SOURCES),
        "devices": device_rows,
        "environment": dict(sorted(environment.items())),
        "rules": rule_rows,
        "loops": loop_rows,
        "plans": list(plans),
        "users": users,
        "commands": list(commands.values()),
        "globalStore": dict(sorted(global_store.items())),
        "messages": dict(sorted(messages.items())),
    }


def replay(path: str) -> dict:
    """Rebuild the final dashboard snapshot purely from a run log."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                raise CorruptLog(lineno, "unterminated line")
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptLog(lineno, str(exc)) from exc
            if not all(k in entry for k in ("tick", "seq", "target", "kind", "body")):
                raise CorruptLog(lineno, "missing required fields")
            entries.append(entry)
    return replay_entries(entries)
