"""Networking-layer bridge: decodes device frames, translates them into
canonical broker envelopes (aggregating if configured), and turns downlink
command envelopes back into frames.

Uplink frames arriving at the gateway are decoded and published in the same
tick; downlink frames reach the device one tick after the command envelope is
delivered here. Acks carry no correlation id on the wire, so the gateway
matches them FIFO against the commands it forwarded for that (device,
resource).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Union

from . import frames
from .broker import Broker, Envelope
from .devices import DeviceHost, DeviceSpec
from .kernel import Kernel, ScheduledEvent


class GatewayError(Exception):
    pass


class UnattachedDevice(GatewayError):
    pass


class ValueKindMismatch(GatewayError):
    pass


@dataclass
class AggregationSpec:
    kind: str = "none"  # none | batch | window
    n: int = 1  # batch size
    m: int = 1  # window length in ticks


@dataclass
class GatewaySpec:
    id: str
    region: str
    aggregation: AggregationSpec = field(default_factory=AggregationSpec)


class Gateway:
    def __init__(self, kernel: Kernel, broker: Broker, spec: GatewaySpec):
        self.kernel = kernel
        self.broker = broker
        self.spec = spec
        self.component_id = f"gateway-{spec.id}"
        self.devices: dict[int, DeviceSpec] = {}
        self.hosts: dict[int, DeviceHost] = {}
        # (device, resource) -> (property, unit); (device, resource) -> target kind
        self.sensor_info: dict[tuple[int, int], tuple[str, str]] = {}
        self.actuator_info: dict[tuple[int, int], str] = {}
        self.errors: dict[str, int] = {}
        self.translated: dict[tuple[int, str], int] = {}
        self.emitted: dict[tuple[int, str], int] = {}
        # (device, property) -> buffered (ts, value) pending aggregation
        self.buffers: dict[tuple[int, str], list[tuple[int, float]]] = {}
        self._resource_for: dict[tuple[int, str], int] = {}
        self._unit_for: dict[tuple[int, str], str] = {}
        # (device, resource) -> commandIds awaiting ack, oldest first
        self.pending_acks: dict[tuple[int, int], deque[str]] = {}
        kernel.register(self.component_id, self.on_event)

    def attach(self, host: DeviceHost) -> None:
        spec = host.spec
        self.devices[spec.id] = spec
        self.hosts[spec.id] = host
        for sensor in spec.sensors:
            thing = host.environment.things.get(sensor.thing)
            prop = thing.property(sensor.property) if thing is not None else None
            unit = prop.unit if prop is not None and prop.kind == "float" else ""
            self.sensor_info[(spec.id, sensor.id)] = (sensor.property, unit)
        for actuator in spec.actuators:
            thing = host.environment.things.get(actuator.thing)
            prop = thing.property(actuator.property) if thing is not None else None
            self.actuator_info[(spec.id, actuator.id)] = prop.kind if prop else "float"
        host.uplink = self.on_uplink
        host.gateway_component = self.component_id
        self.broker.subscribe(self.component_id, f"commands/{spec.id}")

    def watch(self, device_id: int) -> None:
        """Subscribe to a device's command topic without bridging it: commands
        for detached devices fail with UnattachedDevice instead of vanishing."""
        self.broker.subscribe(self.component_id, f"commands/{device_id}")

    # -- event plumbing -------------------------------------------------------

    def on_event(self, event: ScheduledEvent) -> None:
        if event.kind == "frame-up":
            self.on_uplink(bytes.fromhex(event.body["hex"]), recorded=True)
        elif event.kind == "dlv":
            env = Envelope.from_delivery(event.body)
            if env.schema == "command/1":
                self.downlink(env)

    def _error(self, name: str, detail: str) -> None:
        self.errors[name] = self.errors.get(name, 0) + 1
        self.kernel.record(self.component_id, "gateway-error", {"error": name, "detail": detail})

    # -- uplink ---------------------------------------------------------------

    def on_uplink(self, raw: bytes, recorded: bool = False) -> None:
        if not recorded:
            self.kernel.record(self.component_id, "frame-up", {"hex": raw.hex()})
        try:
            frame = frames.decode_frame(raw)
        except frames.FrameError as exc:
            self._error(type(exc).__name__, str(exc))
            return
        if frame.device_id not in self.devices:
            self._error("UnattachedDevice", f"device {frame.device_id}")
            return
        if frame.frame_type == frames.FT_TELEMETRY:
            self._uplink_telemetry(frame)
        elif frame.frame_type == frames.FT_HEARTBEAT:
            self._uplink_heartbeat(frame)
        elif frame.frame_type == frames.FT_COMMAND_ACK:
            self._uplink_ack(frame)

    def _uplink_telemetry(self, frame: frames.DeviceFrame) -> None:
        info = self.sensor_info.get((frame.device_id, frame.resource_id))
        if info is None:
            self._error(
                "UnknownResource", f"device {frame.device_id} resource {frame.resource_id}"
            )
            return
        prop, unit = info
        key = (frame.device_id, prop)
        self.translated[key] = self.translated.get(key, 0) + 1
        self._resource_for[key] = frame.resource_id
        self._unit_for[key] = unit
        agg = self.spec.aggregation
        if agg.kind == "none" or frame.payload_kind != frames.PK_FLOAT:
            self._publish_telemetry(
                frame.device_id, frame.resource_id, prop, frame.payload, unit,
                frame.timestamp, aggregated=False, count=1,
            )
            return
        self.buffers.setdefault(key, []).append((frame.timestamp, float(frame.payload)))
        if agg.kind == "batch" and len(self.buffers[key]) >= agg.n:
            self._flush(key)

    def _flush(self, key: tuple[int, str]) -> None:
        buffered = self.buffers.get(key) or []
        if not buffered:
            return
        self.buffers[key] = []
        mean = sum(v for _, v in buffered) / len(buffered)
        self._publish_telemetry(
            key[0], self._resource_for.get(key, 0), key[1], mean,
            self._unit_for.get(key, ""), buffered[-1][0],
            aggregated=True, count=len(buffered),
        )

    def flush_windows(self, tick: int) -> None:
        """End-of-tick hook: window aggregation emits every m ticks."""
        agg = self.spec.aggregation
        if agg.kind != "window" or tick % agg.m != agg.m - 1:
            return
        for key in sorted(self.buffers):
            self._flush(key)

    def _publish_telemetry(
        self,
        device_id: int,
        resource_id: int,
        prop: str,
        value: Union[float, bool, str],
        unit: str,
        ts: int,
        aggregated: bool,
        count: int,
    ) -> None:
        key = (device_id, prop)
        self.emitted[key] = self.emitted.get(key, 0) + count
        self.broker.publish(
            f"telemetry/{self.spec.region}/{device_id}/{prop}",
            "telemetry/1",
            self.component_id,
            {
                "deviceId": device_id,
                "resourceId": resource_id,
                "property": prop,
                "value": value,
                "unit": unit,
                "ts": ts,
                "regionId": self.spec.region,
                "gatewayId": self.spec.id,
                "aggregated": aggregated,
                "count": count,
            },
        )

    def _uplink_heartbeat(self, frame: frames.DeviceFrame) -> None:
        self.broker.publish(
            f"telemetry/{self.spec.region}/{frame.device_id}/heartbeat",
            "heartbeat/1",
            self.component_id,
            {
                "deviceId": frame.device_id,
                "ts": frame.timestamp,
                "regionId": self.spec.region,
                "gatewayId": self.spec.id,
            },
        )

    def _uplink_ack(self, frame: frames.DeviceFrame) -> None:
        pending = self.pending_acks.get((frame.device_id, frame.resource_id))
        command_id = pending.popleft() if pending else ""
        self.broker.publish(
            f"notify/acks/{frame.device_id}",
            "ack/1",
            self.component_id,
            {
                "commandId": command_id,
                "deviceId": frame.device_id,
                "resourceId": frame.resource_id,
                "value": frame.payload,
                "ok": True,
            },
        )

    # -- downlink -------------------------------------------------------------

    def _command_failed(self, body: dict, reason: str) -> None:
        self._error(reason, f"command {body.get('commandId')}")
        self.broker.publish(
            f"notify/command-failed/{body.get('deviceId')}",
            "notify/1",
            self.component_id,
            {
                "message": f"command {body.get('commandId')} failed: {reason}",
                "commandId": body.get("commandId"),
                "reason": reason,
            },
        )

    def downlink(self, env: Envelope) -> None:
        body = env.body
        device = self.devices.get(body["deviceId"])
        if device is None:
            self._command_failed(body, "UnattachedDevice")
            return
        target_kind = self.actuator_info.get((body["deviceId"], body["resourceId"]))
        if target_kind is None:
            self._command_failed(body, "UnknownResource")
            return
        value = body["value"]
        if isinstance(value, bool):
            kind, payload = frames.PK_BOOL, value
        elif isinstance(value, (int, float)) and target_kind == "float":
            kind, payload = frames.PK_FLOAT, float(value)
        else:
            self._command_failed(body, "ValueKindMismatch")
            return
        frame = frames.DeviceFrame(
            frames.FT_COMMAND, device.id, body["resourceId"], self.kernel.now(), kind, payload
        )
        self.pending_acks.setdefault((device.id, body["resourceId"]), deque()).append(
            body["commandId"]
        )
        self.kernel.record(
            self.component_id,
            "downlink",
            {"commandId": body["commandId"], "deviceId": device.id, "resourceId": body["resourceId"]},
        )
        self.kernel.schedule(
            self.kernel.now() + 1,
            self.hosts[device.id].component_id,
            "frame",
            {"hex": frames.encode_frame(frame).hex()},
        )
