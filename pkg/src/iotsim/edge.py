"""Edge processing node internals: device manager, rule engine runtime, and
the symptom records the analytics layer hands to the control loops.

Rules are linked against the registry before use: property paths must name
existing thing properties and SET targets must name a device and one of its
actuator resources. A linked rule's scope is the sorted set of regions its
referenced properties are observed from; rules whose scope spans several
regions are handled by the orchestration layer, not locally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

from .analytics import SeriesWindow, ewma, window_stats
from .devices import DeviceSpec, Registry
from .rules import (
    AggRef,
    And,
    Comparison,
    NotifyAction,
    Or,
    ParsedRule,
    PropRef,
    SetAction,
    UnresolvedReference,
)


@dataclass
class Symptom:
    id: str
    kind: str  # rule-violation | anomaly | device-offline
    source: str  # rule id or detector name
    scope: list[str]  # sorted regions touched
    evidence: list[dict]
    detected_at: int

    def to_body(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "source": self.source,
            "scope": self.scope,
            "evidence": self.evidence,
            "detectedAt": self.detected_at,
        }


@dataclass
class DeviceRecord:
    device_id: int
    name: str
    region: str
    status: str  # online | stale | offline
    last_seen: int
    resources: dict


class DeviceManager:
    """Tracks liveness of the region's devices from telemetry and heartbeats."""

    def __init__(
        self,
        region: str,
        devices: list[DeviceSpec],
        heartbeat_timeout: int = 15,
        offline_timeout: int = 30,
    ):
        self.region = region
        self.devices = {d.id: d for d in devices}
        self.heartbeat_timeout = heartbeat_timeout
        self.offline_timeout = offline_timeout
        self.last_seen: dict[int, int] = {d.id: 0 for d in devices}
        self._offline: set[int] = set()

    def seen(self, device_id: int, tick: int) -> None:
        if device_id in self.last_seen:
            self.last_seen[device_id] = tick

    def status(self, device_id: int, tick: int) -> str:
        age = tick - self.last_seen[device_id]
        if age <= self.heartbeat_timeout:
            return "online"
        if age <= self.offline_timeout:
            return "stale"
        return "offline"

    def offline_transitions(self, tick: int) -> list[int]:
        """Device ids that crossed into offline since the last call; a device
        coming back re-arms its transition."""
        newly = []
        for device_id in sorted(self.last_seen):
            status = self.status(device_id, tick)
            if status == "offline":
                if device_id not in self._offline:
                    self._offline.add(device_id)
                    newly.append(device_id)
            else:
                self._offline.discard(device_id)
        return newly

    def records(self, tick: int) -> list[DeviceRecord]:
        out = []
        for device_id in sorted(self.devices):
            spec = self.devices[device_id]
            out.append(
                DeviceRecord(
                    device_id=device_id,
                    name=spec.name,
                    region=self.region,
                    status=self.status(device_id, tick),
                    last_seen=self.last_seen[device_id],
                    resources={
                        "sensors": [
                            {"id": s.id, "thing": s.thing, "property": s.property}
                            for s in spec.sensors
                        ],
                        "actuators": [
                            {"id": a.id, "name": a.name, "thing": a.thing,
                             "property": a.property}
                            for a in spec.actuators
                        ],
                    },
                )
            )
        return out


@dataclass
class LinkedRule:
    id: str
    parsed: ParsedRule
    scope: list[str]  # sorted regions the condition's properties live in
    enabled: bool = True
    # resolved SET target, if the action is a SET
    set_target: Optional[tuple[int, int, Union[bool, float, str]]] = None

    @property
    def text(self) -> str:
        return self.parsed.text()

    def action_body(self) -> dict:
        """Wire form of this rule's action, target region included."""
        act = self.parsed.action
        if isinstance(act, SetAction):
            device_id, resource_id, value = self.set_target
            return {
                "kind": "device-command",
                "deviceId": device_id,
                "resourceId": resource_id,
                "value": value,
            }
        if isinstance(act, NotifyAction):
            return {"kind": "notify", "topic": act.topic, "message": act.message}
        return {"kind": "escalate", "reason": act.reason}


def link_rule(rule_id: str, parsed: ParsedRule, registry: Registry,
              enabled: bool = True) -> LinkedRule:
    regions: set[str] = set()
    for operand in parsed.operands():
        ref = operand.ref if isinstance(operand, AggRef) else operand
        if not registry.property_exists(ref.thing, ref.prop):
            raise UnresolvedReference(f"rule {rule_id}: unknown property {ref.text()}")
        regions.update(registry.regions_of_property(ref.thing, ref.prop))
    linked = LinkedRule(rule_id, parsed, sorted(regions), enabled)
    act = parsed.action
    if isinstance(act, SetAction):
        device, actuator = registry.actuator_by_name(act.device, act.resource)
        if device is None:
            raise UnresolvedReference(f"rule {rule_id}: unknown device {act.device!r}")
        if actuator is None:
            raise UnresolvedReference(
                f"rule {rule_id}: device {act.device!r} has no resource {act.resource!r}"
            )
        linked.set_target = (device.id, actuator.id, act.value)
    return linked


def action_region(action_body: dict, registry: Registry, default: str) -> str:
    if action_body["kind"] == "device-command":
        device = registry.devices.get(action_body["deviceId"])
        if device is not None:
            return device.region
    return default


class MissingData(Exception):
    pass


Resolver = Callable[[Union[PropRef, AggRef]], float]


class RuleEngine:
    """Evaluates linked rules once per tick against the series windows."""

    def __init__(self):
        self.rules: dict[str, LinkedRule] = {}
        self._sustain: dict[str, int] = {}
        self.missing_skips = 0

    def add(self, rule: LinkedRule) -> None:
        self.rules[rule.id] = rule
        self._sustain[rule.id] = 0

    def toggle(self, rule_id: str, enabled: bool) -> bool:
        rule = self.rules.get(rule_id)
        if rule is None:
            return False
        rule.enabled = enabled
        if not enabled:
            self._sustain[rule_id] = 0
        return True

    def evaluate(self, tick: int, resolve: Resolver) -> list[tuple[LinkedRule, list[dict]]]:
        """Returns (rule, evidence) for every rule satisfied at this tick.

        A rule with FOR n TICKS fires only when its condition held at n
        consecutive evaluations ending now. Rules whose operands have no data
        yet are skipped and counted.
        """
        fired = []
        for rule_id in sorted(self.rules):
            rule = self.rules[rule_id]
            if not rule.enabled:
                continue
            evidence: list[dict] = []
            try:
                ok = self._eval_condition(rule.parsed.condition, resolve, evidence, tick)
            except MissingData:
                self.missing_skips += 1
                continue
            if ok:
                self._sustain[rule_id] += 1
            else:
                self._sustain[rule_id] = 0
            needed = rule.parsed.for_ticks or 1
            if self._sustain[rule_id] >= needed:
                fired.append((rule, evidence))
        return fired

    def _eval_condition(self, node, resolve: Resolver, evidence: list[dict],
                        tick: int) -> bool:
        if isinstance(node, Comparison):
            value = resolve(node.operand)
            if value is None:
                raise MissingData(node.operand.text())
            evidence.append({"operand": node.operand.text(), "value": value, "tick": tick})
            return _compare(value, node.op, node.value)
        if isinstance(node, And):
            # no short-circuit: every operand must have data for the rule to run
            results = [self._eval_condition(t, resolve, evidence, tick) for t in node.terms]
            return all(results)
        if isinstance(node, Or):
            results = [self._eval_condition(t, resolve, evidence, tick) for t in node.terms]
            return any(results)
        raise TypeError(f"not a condition node: {node!r}")


def _compare(value: float, op: str, rhs: float) -> bool:
    if op == ">":
        return value > rhs
    if op == ">=":
        return value >= rhs
    if op == "<":
        return value < rhs
    if op == "<=":
        return value <= rhs
    if op == "==":
        return value == rhs
    return value != rhs


def make_resolver(thing_windows: dict[tuple[str, str], SeriesWindow]) -> Resolver:
    """Operand resolver over per-(thing, property) windows.

    PROP_PATH yields the latest sample; aggregates run over the most recent n
    samples. EWMA's span n maps to alpha = 2 / (n + 1). Returns None when the
    series has no samples yet.
    """

    def resolve(operand):
        if isinstance(operand, AggRef):
            window = thing_windows.get((operand.ref.thing, operand.ref.prop))
            if window is None or len(window) == 0:
                return None
            if operand.fn == "EWMA":
                return ewma(window, 2.0 / (operand.window + 1), operand.window)
            return window_stats(window, operand.window)[operand.fn.lower()]
        window = thing_windows.get((operand.thing, operand.prop))
        if window is None or len(window) == 0:
            return None
        return window.latest()

    return resolve
