"""Scenario configuration: TOML parsing, total validation, spec construction.

A scenario describes the whole deployment: regions, things with their
properties and physics (initial value, drift, disturbance), gateways, devices
with sensors/actuators, rules, users, and the domain model (tasks whose
business processes activate named services at configured ticks).

Validation is total: parse_config reports every problem it can find in one
pass instead of stopping at the first.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .devices import (
    ActuatorSpec,
    DeviceSpec,
    PropertySpec,
    Registry,
    SensorSpec,
    SignalModel,
    ThingSpec,
)
from .gateway import AggregationSpec, GatewaySpec
from .orchestration import Limits
from .rules import ParsedRule, RuleError, parse_rule

_NAME_RE = re.compile(r"^[a-z0-9_-]+$")

MODES = ("centralized", "decentralized")


class ConfigError(Exception):
    pass


class ValidationErrors(ConfigError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class RuleConfig:
    id: str
    text: str
    enabled: bool = True
    parsed: Optional[ParsedRule] = None


@dataclass
class UserSubscriptionConfig:
    pattern: str


@dataclass
class UserConfig:
    name: str
    email: str
    preferences: dict = field(default_factory=dict)
    subscriptions: list[UserSubscriptionConfig] = field(default_factory=list)


@dataclass
class ServiceConfig:
    name: str
    kind: str  # rules | device | detector
    rules: list[str] = field(default_factory=list)
    device: str = ""
    resource: str = ""
    value: Union[bool, float, str, None] = None
    enabled: bool = True


@dataclass
class ProcessStep:
    at: int
    service: str


@dataclass
class BusinessProcessConfig:
    name: str
    steps: list[ProcessStep]


@dataclass
class TaskConfig:
    name: str
    processes: list[BusinessProcessConfig] = field(default_factory=list)


@dataclass
class DomainConfig:
    name: str = ""
    tasks: list[TaskConfig] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    horizon: int
    mode: str
    limits: Limits
    regions: list[str]
    things: list[ThingSpec]
    gateways: list[GatewaySpec]
    devices: list[DeviceSpec]
    rules: list[RuleConfig]
    users: list[UserConfig]
    services: list[ServiceConfig]
    domain: DomainConfig

    def registry(self) -> Registry:
        return Registry(self.things, self.devices)


def _signal_model(raw: Any, where: str, errors: list[str]) -> SignalModel:
    if raw is None:
        return SignalModel()
    if not isinstance(raw, dict):
        errors.append(f"{where}: signal model must be a table")
        return SignalModel()
    kind = raw.get("kind", "none")
    if kind not in ("none", "gauss", "uniform"):
        errors.append(f"{where}: unknown signal model kind {kind!r}")
        kind = "none"
    return SignalModel(kind, float(raw.get("sigma", 0.0)), float(raw.get("amp", 0.0)))


def _name_ok(value: Any) -> bool:
    return isinstance(value, str) and bool(_NAME_RE.match(value))


def parse_config_data(data: dict, base_dir: str = ".") -> ScenarioConfig:
    """Validate raw config data; raises ValidationErrors listing every fault.

    base_dir resolves relative rule_files paths (the config file's directory
    when loaded through parse_config).
    """
    errors: list[str] = []

    scenario = data.get("scenario", {})
    name = scenario.get("name", "unnamed")
    seed = scenario.get("seed", 0)
    horizon = scenario.get("horizon", 100)
    mode = scenario.get("mode", "centralized")
    if not isinstance(seed, int) or seed < 0:
        errors.append("scenario.seed: must be a non-negative integer")
        seed = 0
    if not isinstance(horizon, int) or horizon < 0:
        errors.append("scenario.horizon: must be a non-negative integer")
        horizon = 0
    if mode not in MODES:
        errors.append(f"scenario.mode: {mode!r} not one of {MODES}")
        mode = "centralized"

    raw_limits = data.get("limits", {})
    limits = Limits(
        heartbeat_timeout=raw_limits.get("heartbeat_timeout", 15),
        offline_timeout=raw_limits.get("offline_timeout", 30),
        ack_timeout=raw_limits.get("ack_timeout", 10),
        window_capacity=raw_limits.get("window_capacity", 64),
        anomaly_window=raw_limits.get("anomaly_window", 16),
        z_threshold=float(raw_limits.get("z_threshold", 3.0)),
        anomaly_enabled=raw_limits.get("anomaly_enabled", True),
        summary_interval=raw_limits.get("summary_interval", 0),
    )

    regions: list[str] = []
    for i, raw in enumerate(data.get("regions", [])):
        rid = raw.get("id")
        if not _name_ok(rid):
            errors.append(f"regions[{i}]: id must match [a-z0-9_-]+")
            continue
        if rid in regions:
            errors.append(f"regions[{i}]: duplicate region id {rid!r}")
            continue
        regions.append(rid)
    if not regions:
        errors.append("regions: at least one region is required")

    things: list[ThingSpec] = []
    thing_ids: set[str] = set()
    for i, raw in enumerate(data.get("things", [])):
        tid = raw.get("id")
        where = f"things[{i}]"
        if not _name_ok(tid):
            errors.append(f"{where}: id must match [a-z0-9_-]+")
            continue
        if tid in thing_ids:
            errors.append(f"{where}: duplicate thing id {tid!r}")
            continue
        thing_ids.add(tid)
        region = raw.get("region", "")
        if region not in regions:
            errors.append(f"{where}: unknown region {region!r}")
        props: list[PropertySpec] = []
        seen_props: set[str] = set()
        for j, p in enumerate(raw.get("properties", [])):
            pw = f"{where}.properties[{j}]"
            pname = p.get("name")
            if not _name_ok(pname):
                errors.append(f"{pw}: name must match [a-z0-9_-]+")
                continue
            if pname in seen_props:
                errors.append(f"{pw}: duplicate property {pname!r}")
                continue
            seen_props.add(pname)
            kind = p.get("kind", "float")
            if kind not in ("float", "bool", "text"):
                errors.append(f"{pw}: kind must be float|bool|text")
                kind = "float"
            initial = p.get("initial", 0.0 if kind == "float" else (False if kind == "bool" else ""))
            if kind == "float":
                if isinstance(initial, bool) or not isinstance(initial, (int, float)):
                    errors.append(f"{pw}: initial must be a number")
                    initial = 0.0
                initial = float(initial)
            elif kind == "bool" and not isinstance(initial, bool):
                errors.append(f"{pw}: initial must be a boolean")
                initial = False
            props.append(
                PropertySpec(
                    name=pname,
                    unit=p.get("unit", ""),
                    kind=kind,
                    initial=initial,
                    drift=float(p.get("drift", 0.0)),
                    disturbance=_signal_model(p.get("disturbance"), pw, errors),
                    composed_of=list(p.get("composed", [])),
                )
            )
        for p in props:
            for member in p.composed_of:
                if member not in seen_props:
                    errors.append(
                        f"{where}: property {p.name!r} composed of unknown {member!r}"
                    )
        things.append(ThingSpec(tid, raw.get("kind", "thing"), region, props))

    gateways: list[GatewaySpec] = []
    gateway_ids: set[str] = set()
    for i, raw in enumerate(data.get("gateways", [])):
        gid = raw.get("id")
        where = f"gateways[{i}]"
        if not _name_ok(gid):
            errors.append(f"{where}: id must match [a-z0-9_-]+")
            continue
        if gid in gateway_ids:
            errors.append(f"{where}: duplicate gateway id {gid!r}")
            continue
        gateway_ids.add(gid)
        region = raw.get("region", "")
        if region not in regions:
            errors.append(f"{where}: unknown region {region!r}")
        agg_raw = raw.get("aggregation", {}) or {}
        agg_kind = agg_raw.get("kind", "none")
        if agg_kind not in ("none", "batch", "window"):
            errors.append(f"{where}: aggregation kind must be none|batch|window")
            agg_kind = "none"
        n = agg_raw.get("n", 1)
        m = agg_raw.get("m", 1)
        if not isinstance(n, int) or n < 1:
            errors.append(f"{where}: aggregation n must be >= 1")
            n = 1
        if not isinstance(m, int) or m < 1:
            errors.append(f"{where}: aggregation m must be >= 1")
            m = 1
        gateways.append(GatewaySpec(gid, region, AggregationSpec(agg_kind, n, m)))

    devices: list[DeviceSpec] = []
    device_ids: set[int] = set()
    device_names: set[str] = set()
    things_by_id = {t.id: t for t in things}
    gateways_by_id = {g.id: g for g in gateways}
    for i, raw in enumerate(data.get("devices", [])):
        where = f"devices[{i}]"
        did = raw.get("id")
        if not isinstance(did, int) or not 0 <= did < 2**32:
            errors.append(f"{where}: id must be a 32-bit unsigned integer")
            continue
        if did in device_ids:
            errors.append(f"{where}: duplicate device id {did}")
            continue
        device_ids.add(did)
        dname = raw.get("name", f"dev{did}")
        if not _name_ok(dname):
            errors.append(f"{where}: name must match [a-z0-9_-]+")
            dname = f"dev{did}"
        if dname in device_names:
            errors.append(f"{where}: duplicate device name {dname!r}")
        device_names.add(dname)
        region = raw.get("region", "")
        if region not in regions:
            errors.append(f"{where}: unknown region {region!r}")
        gw = raw.get("gateway", "")
        if gw not in gateways_by_id:
            errors.append(f"{where}: unknown gateway {gw!r}")
        elif gateways_by_id[gw].region != region:
            errors.append(f"{where}: gateway {gw!r} is in another region")
        heartbeat = raw.get("heartbeat", 0)
        if not isinstance(heartbeat, int) or heartbeat < 0:
            errors.append(f"{where}: heartbeat must be >= 0")
            heartbeat = 0
        resource_ids: set[int] = set()
        sensors: list[SensorSpec] = []
        for j, s in enumerate(raw.get("sensors", [])):
            sw = f"{where}.sensors[{j}]"
            sid = s.get("id")
            if not isinstance(sid, int) or not 0 <= sid < 2**16:
                errors.append(f"{sw}: id must be a 16-bit unsigned integer")
                continue
            if sid in resource_ids:
                errors.append(f"{sw}: duplicate resource id {sid}")
                continue
            resource_ids.add(sid)
            thing = s.get("thing", "")
            prop = s.get("property", "")
            prop_spec = things_by_id[thing].property(prop) if thing in things_by_id else None
            if prop_spec is None:
                errors.append(f"{sw}: unknown property {thing}.{prop}")
            elif prop_spec.composed_of:
                errors.append(f"{sw}: composed property {thing}.{prop} is not observable")
            elif prop == "heartbeat":
                errors.append(f"{sw}: property name 'heartbeat' is reserved")
            period = s.get("period", 1)
            if not isinstance(period, int) or period < 1:
                errors.append(f"{sw}: period must be >= 1")
                period = 1
            smode = s.get("mode", "periodic")
            if smode not in ("periodic", "on-change"):
                errors.append(f"{sw}: mode must be periodic|on-change")
                smode = "periodic"
            delta = float(s.get("delta", 0.0))
            if smode == "on-change" and delta <= 0:
                errors.append(f"{sw}: on-change sensors need delta > 0")
                delta = 1.0
            sensors.append(
                SensorSpec(sid, thing, prop, period, smode, delta,
                           _signal_model(s.get("noise"), sw, errors))
            )
        actuators: list[ActuatorSpec] = []
        for j, a in enumerate(raw.get("actuators", [])):
            aw = f"{where}.actuators[{j}]"
            aid = a.get("id")
            if not isinstance(aid, int) or not 0 <= aid < 2**16:
                errors.append(f"{aw}: id must be a 16-bit unsigned integer")
                continue
            if aid in resource_ids:
                errors.append(f"{aw}: duplicate resource id {aid}")
                continue
            resource_ids.add(aid)
            aname = a.get("name", f"res{aid}")
            if not _name_ok(aname):
                errors.append(f"{aw}: name must match [a-z0-9_-]+")
                aname = f"res{aid}"
            thing = a.get("thing", "")
            prop = a.get("property", "")
            prop_spec = things_by_id[thing].property(prop) if thing in things_by_id else None
            if prop_spec is None:
                errors.append(f"{aw}: unknown property {thing}.{prop}")
            elif prop_spec.composed_of:
                errors.append(f"{aw}: composed property {thing}.{prop} is not actuatable")
            actuators.append(ActuatorSpec(aid, aname, thing, prop, float(a.get("effect", 0.0))))
        devices.append(
            DeviceSpec(did, dname, region, gw, sensors, actuators, heartbeat,
                       raw.get("offline_at"), raw.get("attached", True))
        )

    registry = Registry(things, devices)

    # link-check at parse time so every unresolved reference is reported here
    from .edge import link_rule  # local import to avoid a module cycle

    rules: list[RuleConfig] = []
    rule_ids: set[str] = set()

    def add_rule(where: str, rid, text: str, enabled: bool) -> None:
        if not _name_ok(rid):
            errors.append(f"{where}: id must match [a-z0-9_-]+")
            return
        if rid in rule_ids:
            errors.append(f"{where}: duplicate rule id {rid!r}")
            return
        rule_ids.add(rid)
        cfg = RuleConfig(rid, text, enabled)
        rules.append(cfg)
        try:
            cfg.parsed = parse_rule(text)
        except RuleError as exc:
            cfg.parsed = None
            errors.append(f"{where} ({rid}): {exc}")
            return
        try:
            link_rule(rid, cfg.parsed, registry)
        except RuleError as exc:
            errors.append(f"{where} ({rid}): {exc}")

    for i, raw in enumerate(data.get("rules", [])):
        add_rule(f"rules[{i}]", raw.get("id"), raw.get("text", ""),
                 raw.get("enabled", True))

    import os
    import re as _re

    from .rules import parse_rule_file

    for i, path in enumerate(data.get("rule_files", [])):
        where = f"rule_files[{i}]"
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        try:
            with open(full, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            errors.append(f"{where}: cannot read {path}: {exc}")
            continue
        stem = _re.sub(r"[^a-z0-9_-]", "-", os.path.splitext(os.path.basename(path))[0].lower())
        try:
            parsed_lines = parse_rule_file(text)
        except RuleError as exc:
            errors.append(f"{where} ({path}): {exc}")
            continue
        for lineno, parsed in parsed_lines:
            add_rule(f"{where} ({path} line {lineno})", f"{stem}-l{lineno}",
                     parsed.text(), True)

    users: list[UserConfig] = []
    emails: set[str] = set()
    for i, raw in enumerate(data.get("users", [])):
        where = f"users[{i}]"
        email = raw.get("email", "")
        if "@" not in email:
            errors.append(f"{where}: email must contain '@'")
        if email in emails:
            errors.append(f"{where}: duplicate email {email!r}")
        emails.add(email)
        subs = []
        for j, s in enumerate(raw.get("subscriptions", [])):
            pattern = s.get("pattern", "")
            from .broker import MalformedPattern, validate_pattern

            try:
                segments = validate_pattern(pattern)
                if segments[0] not in ("notify", "telemetry"):
                    errors.append(
                        f"{where}.subscriptions[{j}]: pattern must start with notify/ or telemetry/"
                    )
            except MalformedPattern as exc:
                errors.append(f"{where}.subscriptions[{j}]: {exc}")
            subs.append(UserSubscriptionConfig(pattern))
        users.append(UserConfig(raw.get("name", f"user{i}"), email,
                                dict(raw.get("preferences", {})), subs))

    services: list[ServiceConfig] = []
    service_names: set[str] = set()
    for i, raw in enumerate(data.get("services", [])):
        where = f"services[{i}]"
        sname = raw.get("name")
        if not _name_ok(sname):
            errors.append(f"{where}: name must match [a-z0-9_-]+")
            continue
        if sname in service_names:
            errors.append(f"{where}: duplicate service name {sname!r}")
            continue
        service_names.add(sname)
        kind = raw.get("kind", "rules")
        if kind not in ("rules", "device", "detector"):
            errors.append(f"{where}: kind must be rules|device|detector")
            kind = "rules"
        svc = ServiceConfig(
            name=sname,
            kind=kind,
            rules=list(raw.get("rules", [])),
            device=raw.get("device", ""),
            resource=raw.get("resource", ""),
            value=raw.get("value"),
            enabled=raw.get("enabled", True),
        )
        if kind == "rules":
            for rid in svc.rules:
                if rid not in rule_ids:
                    errors.append(f"{where}: unknown rule {rid!r}")
        elif kind == "device":
            device = registry.device_by_name.get(svc.device)
            if device is None:
                errors.append(f"{where}: unknown device {svc.device!r}")
            elif all(a.name != svc.resource for a in device.actuators):
                errors.append(f"{where}: device {svc.device!r} has no resource {svc.resource!r}")
        services.append(svc)

    raw_domain = data.get("domain", {})
    tasks: list[TaskConfig] = []
    for i, raw in enumerate(raw_domain.get("tasks", [])):
        where = f"domain.tasks[{i}]"
        processes = []
        for j, p in enumerate(raw.get("processes", [])):
            steps = []
            for k, s in enumerate(p.get("steps", [])):
                at = s.get("at", 0)
                svc = s.get("service", "")
                if not isinstance(at, int) or at < 0:
                    errors.append(f"{where}.processes[{j}].steps[{k}]: at must be >= 0")
                    at = 0
                if svc not in service_names:
                    errors.append(
                        f"{where}.processes[{j}].steps[{k}]: unknown service {svc!r}"
                    )
                steps.append(ProcessStep(at, svc))
            processes.append(BusinessProcessConfig(p.get("name", f"process{j}"), steps))
        tasks.append(TaskConfig(raw.get("name", f"task{i}"), processes))
    domain = DomainConfig(raw_domain.get("name", ""), tasks)

    if errors:
        raise ValidationErrors(errors)

    return ScenarioConfig(
        name=name,
        seed=seed,
        horizon=horizon,
        mode=mode,
        limits=limits,
        regions=regions,
        things=things,
        gateways=gateways,
        devices=devices,
        rules=rules,
        users=users,
        services=services,
        domain=domain,
    )


def parse_config(path: str) -> ScenarioConfig:
    """Load and validate a scenario file; IO and TOML errors pass through as
    ConfigError, validation problems as ValidationErrors (all of them)."""
    import os

    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error in {path}: {exc}") from exc
    return parse_config_data(data, base_dir=os.path.dirname(os.path.abspath(path)))
