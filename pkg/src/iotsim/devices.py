"""Sensing layer: things with observable properties, devices hosting sensors
and actuators, the physical-environment model, and the device runtime that
speaks the binary wire protocol.

Environment stepping is value += drift + sum(engaged actuator effects) +
disturbance, once per tick per region, before sensors sample. Disturbance and
sensor noise draw from named RNG streams ("disturbance/<thing>/<property>",
"noise/<device>/<resource>"); a "none" model draws nothing, keeping untouched
streams byte-stable. Gaussian draws use the Irwin-Hall sum of 12 uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import frames
from .kernel import Kernel, RngStream, ScheduledEvent


class DeviceError(Exception):
    pass


class UnknownResource(DeviceError):
    pass


class PayloadKindMismatch(DeviceError):
    pass


@dataclass
class SignalModel:
    kind: str = "none"  # none | gauss | uniform
    sigma: float = 0.0  # gauss
    amp: float = 0.0  # uniform

    def draw(self, rng: RngStream) -> float:
        if self.kind == "gauss":
            total = 0.0
            for _ in range(12):
                total += rng.next_float()
            return (total - 6.0) * self.sigma
        if self.kind == "uniform":
            return (2.0 * rng.next_float() - 1.0) * self.amp
        return 0.0


@dataclass
class PropertySpec:
    name: str
    unit: str = ""
    kind: str = "float"  # float | bool | text
    initial: Union[float, bool, str] = 0.0
    drift: float = 0.0
    disturbance: SignalModel = field(default_factory=SignalModel)
    composed_of: list[str] = field(default_factory=list)


@dataclass
class ThingSpec:
    id: str
    kind: str
    region: str
    properties: list[PropertySpec]

    def property(self, name: str) -> Optional[PropertySpec]:
        for p in self.properties:
            if p.name == name:
                return p
        return None


@dataclass
class SensorSpec:
    id: int  # u16 resource id
    thing: str
    property: str
    period: int = 1
    mode: str = "periodic"  # periodic | on-change
    delta: float = 0.0
    noise: SignalModel = field(default_factory=SignalModel)


@dataclass
class ActuatorSpec:
    id: int  # u16 resource id
    name: str
    thing: str
    property: str
    effect: float = 0.0  # additive rate while engaged (float properties)


@dataclass
class DeviceSpec:
    id: int  # u32
    name: str
    region: str
    gateway: str
    sensors: list[SensorSpec] = field(default_factory=list)
    actuators: list[ActuatorSpec] = field(default_factory=list)
    heartbeat: int = 0  # ticks between heartbeats; 0 = none
    offline_at: Optional[int] = None  # device goes silent from this tick
    attached: bool = True  # False: gateway watches its topic but won't bridge it

    def actuator(self, resource_id: int) -> Optional[ActuatorSpec]:
        for a in self.actuators:
            if a.id == resource_id:
                return a
        return None

    def sensor(self, resource_id: int) -> Optional[SensorSpec]:
        for s in self.sensors:
            if s.id == resource_id:
                return s
        return None


@dataclass
class ActuatorState:
    spec: ActuatorSpec
    engaged: bool = False
    rate: float = 0.0  # current effect while engaged

    def __post_init__(self):
        self.rate = self.spec.effect


class Registry:
    """Read-only index over the configured things and devices."""

    def __init__(self, things: list[ThingSpec], devices: list[DeviceSpec]):
        self.things = {t.id: t for t in things}
        self.devices = {d.id: d for d in devices}
        self.device_by_name = {d.name: d for d in devices}
        self.observers: dict[tuple[str, str], list[int]] = {}
        for d in devices:
            for s in d.sensors:
                self.observers.setdefault((s.thing, s.property), []).append(d.id)
        for key in self.observers:
            self.observers[key].sort()

    def property_exists(self, thing: str, prop: str) -> bool:
        t = self.things.get(thing)
        return t is not None and t.property(prop) is not None

    def regions_of_property(self, thing: str, prop: str) -> list[str]:
        """Regions the property is observed from; falls back to the thing's
        home region when nothing observes it."""
        regions = {
            self.devices[d].region for d in self.observers.get((thing, prop), ())
        }
        if not regions and thing in self.things:
            regions = {self.things[thing].region}
        return sorted(regions)

    def actuator_by_name(self, device_name: str, resource: str):
        device = self.device_by_name.get(device_name)
        if device is None:
            return None, None
        for a in device.actuators:
            if a.name == resource:
                return device, a
        return device, None


class Environment:
    """Ground-truth state of every thing, stepped once per tick per region."""

    def __init__(self, kernel: Kernel, things: list[ThingSpec]):
        self.kernel = kernel
        self.things = {t.id: t for t in things}
        self.values: dict[tuple[str, str], Union[float, bool, str]] = {}
        # (thing, property) -> actuator states that can affect it
        self._effects: dict[tuple[str, str], list[ActuatorState]] = {}
        for t in things:
            for p in t.properties:
                self.values[(t.id, p.name)] = p.initial

    def attach_actuator(self, state: ActuatorState) -> None:
        key = (state.spec.thing, state.spec.property)
        self._effects.setdefault(key, []).append(state)

    def value(self, thing: str, prop: str) -> Union[float, bool, str]:
        return self.values[(thing, prop)]

    def set_value(self, thing: str, prop: str, value: Union[float, bool, str]) -> None:
        self.values[(thing, prop)] = value

    def composed_value(self, thing: ThingSpec, prop: PropertySpec) -> list:
        """A composed property's value is the ordered list of its members'
        current values; no arithmetic is applied."""
        return [self.values[(thing.id, member)] for member in prop.composed_of]

    def report_values(self) -> dict[str, Union[float, bool, str, list]]:
        """Current state keyed "thing.property", composed properties included."""
        out: dict[str, Union[float, bool, str, list]] = {}
        for thing_id in sorted(self.things):
            thing = self.things[thing_id]
            for p in thing.properties:
                if p.composed_of:
                    out[f"{thing_id}.{p.name}"] = self.composed_value(thing, p)
                else:
                    out[f"{thing_id}.{p.name}"] = self.values[(thing_id, p.name)]
        return out

    def step_region(self, region: str, tick: int) -> None:
        report: dict[str, Union[float, bool, str, list]] = {}
        for thing_id in sorted(self.things):
            thing = self.things[thing_id]
            if thing.region != region:
                continue
            for p in thing.properties:
                key = (thing_id, p.name)
                if p.composed_of:
                    report[f"{thing_id}.{p.name}"] = self.composed_value(thing, p)
                    continue
                if p.kind == "float":
                    effects = 0.0
                    for st in self._effects.get(key, ()):
                        if st.engaged:
                            effects += st.rate
                    disturbance = 0.0
                    if p.disturbance.kind != "none":
                        rng = self.kernel.rng(f"disturbance/{thing_id}/{p.name}")
                        disturbance = p.disturbance.draw(rng)
                    self.values[key] = self.values[key] + (p.drift + effects + disturbance)
                report[f"{thing_id}.{p.name}"] = self.values[key]
        if report:
            self.kernel.record(f"env-{region}", "env", {"region": region, "values": report})


class DeviceHost:
    """Runtime for one device: sampling, heartbeats, command handling, acks."""

    def __init__(self, kernel: Kernel, spec: DeviceSpec, environment: Environment):
        self.kernel = kernel
        self.spec = spec
        self.environment = environment
        self.component_id = f"device-{spec.id}"
        self.actuators: dict[int, ActuatorState] = {}
        for a in spec.actuators:
            state = ActuatorState(a)
            self.actuators[a.id] = state
            environment.attach_actuator(state)
        self._last_reported: dict[int, Union[float, bool, str]] = {}
        self.uplink = None  # set by the gateway when attached
        self.gateway_component = ""  # set by the gateway when attached
        kernel.register(self.component_id, self.on_event)

    # -- liveness -------------------------------------------------------------

    def alive(self, tick: int) -> bool:
        return self.spec.offline_at is None or tick < self.spec.offline_at

    # -- sampling -------------------------------------------------------------

    def sample_tick(self, tick: int) -> None:
        if not self.alive(tick):
            return
        for sensor in sorted(self.spec.sensors, key=lambda s: s.id):
            frame = self.sample(sensor, tick)
            if frame is not None:
                self._emit(frame)
        if self.spec.heartbeat and tick % self.spec.heartbeat == 0:
            self._emit(
                frames.DeviceFrame(
                    frames.FT_HEARTBEAT, self.spec.id, 0, tick, frames.PK_BOOL, True
                )
            )

    def sample(self, sensor: SensorSpec, tick: int) -> Optional[frames.DeviceFrame]:
        """Periodic sensors report on their period; on-change sensors check
        every tick and report when the value moved by at least delta since the
        last report (the first observation is always reported)."""
        if sensor.mode == "periodic" and tick % sensor.period != 0:
            return None
        value = self.environment.value(sensor.thing, sensor.property)
        if isinstance(value, float) and sensor.noise.kind != "none":
            rng = self.kernel.rng(f"noise/{self.spec.id}/{sensor.id}")
            value = value + sensor.noise.draw(rng)
        if sensor.mode == "on-change":
            last = self._last_reported.get(sensor.id)
            if last is not None and isinstance(value, float):
                if abs(value - last) < sensor.delta:
                    return None
            elif last is not None and value == last:
                return None
            self._last_reported[sensor.id] = value
        if isinstance(value, bool):
            kind, payload = frames.PK_BOOL, value
        elif isinstance(value, float):
            kind, payload = frames.PK_FLOAT, value
        else:
            kind, payload = frames.PK_TEXT, str(value)
        return frames.DeviceFrame(
            frames.FT_TELEMETRY, self.spec.id, sensor.id, tick, kind, payload
        )

    def _emit(self, frame: frames.DeviceFrame) -> None:
        if self.uplink is not None:
            self.uplink(frames.encode_frame(frame))

    # -- command handling -------------------------------------------------------

    def on_event(self, event: ScheduledEvent) -> None:
        if event.kind != "frame":
            return
        tick = self.kernel.now()
        if not self.alive(tick):
            return
        frame = frames.decode_frame(bytes.fromhex(event.body["hex"]))
        if frame.frame_type != frames.FT_COMMAND:
            return
        try:
            changed = self.apply_command(frame)
        except (UnknownResource, PayloadKindMismatch) as exc:
            self.kernel.record(
                self.component_id,
                "device-error",
                {"error": type(exc).__name__, "detail": str(exc)},
            )
            return
        self.kernel.record(
            self.component_id,
            "cmd-apply",
            {
                "deviceId": self.spec.id,
                "resourceId": frame.resource_id,
                "value": frame.payload,
                "changed": changed,
            },
        )
        ack = frames.DeviceFrame(
            frames.FT_COMMAND_ACK,
            self.spec.id,
            frame.resource_id,
            tick,
            frame.payload_kind,
            frame.payload,
        )
        # the ack frame reaches the gateway one tick later (the uplink hop)
        self.kernel.schedule(
            tick + 1,
            self.gateway_component,
            "frame-up",
            {"deviceId": self.spec.id, "hex": frames.encode_frame(ack).hex()},
        )

    def apply_command(self, frame: frames.DeviceFrame) -> bool:
        """Apply a command frame to its actuator; returns whether state changed.

        Duplicate identical commands are idempotent (no state change) but are
        still acknowledged by the caller.
        """
        state = self.actuators.get(frame.resource_id)
        if state is None:
            raise UnknownResource(f"device {self.spec.id} resource {frame.resource_id}")
        target = self.environment.things[state.spec.thing].property(state.spec.property)
        if target.kind == "bool":
            if frame.payload_kind != frames.PK_BOOL:
                raise PayloadKindMismatch("bool property takes bool commands")
            before = self.environment.value(state.spec.thing, state.spec.property)
            self.environment.set_value(state.spec.thing, state.spec.property, frame.payload)
            return before != frame.payload
        if target.kind != "float":
            raise PayloadKindMismatch(f"{target.kind} property is not actuatable")
        if frame.payload_kind == frames.PK_BOOL:
            before = (state.engaged, state.rate)
            state.engaged = bool(frame.payload)
            return before != (state.engaged, state.rate)
        if frame.payload_kind == frames.PK_FLOAT:
            # float command sets the rate and engages when the rate is nonzero
            before = (state.engaged, state.rate)
            state.rate = float(frame.payload)
            state.engaged = state.rate != 0.0
            return before != (state.engaged, state.rate)
        raise PayloadKindMismatch("float property takes bool or float commands")
