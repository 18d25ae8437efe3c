import struct

import pytest

from iotsim import frames
from iotsim.broker import Broker
from iotsim.devices import (
    ActuatorSpec,
    DeviceHost,
    DeviceSpec,
    Environment,
    PropertySpec,
    SensorSpec,
    ThingSpec,
)
from iotsim.gateway import AggregationSpec, Gateway, GatewaySpec
from iotsim.kernel import Kernel


def make(aggregation=None):
    kernel = Kernel(seed=1)
    broker = Broker(kernel)
    thing = ThingSpec("room", "room", "r1", [
        PropertySpec("temp", "c", "float", 22.0),
        PropertySpec("lamp", "", "bool", False),
    ])
    env = Environment(kernel, [thing])
    gw = Gateway(kernel, broker, GatewaySpec("gw-r1", "r1",
                                             aggregation or AggregationSpec()))
    sensor_dev = DeviceSpec(42, "thermo", "r1", "gw-r1",
                            sensors=[SensorSpec(1, "room", "temp"),
                                     SensorSpec(2, "room", "lamp")])
    act_dev = DeviceSpec(7, "ac", "r1", "gw-r1",
                         actuators=[ActuatorSpec(1, "power", "room", "temp", -0.5),
                                    ActuatorSpec(2, "switch", "room", "lamp")])
    hosts = {}
    for spec in (sensor_dev, act_dev):
        host = DeviceHost(kernel, spec, env)
        hosts[spec.id] = host
        gw.attach(host)
    return kernel, broker, env, gw, hosts


def telemetry_frame(device=42, resource=1, ts=0, value=22.5):
    return frames.encode_frame(
        frames.DeviceFrame(frames.FT_TELEMETRY, device, resource, ts,
                           frames.PK_FLOAT, value))


def pubs(kernel, schema=None):
    out = [e for e in kernel.log.entries if e.kind == "pub"]
    if schema:
        out = [e for e in out if e.body["schema"] == schema]
    return out


def test_translate_field_mapping():
    kernel, broker, env, gw, _ = make()
    gw.on_uplink(telemetry_frame(value=22.5))
    [pub] = pubs(kernel, "telemetry/1")
    assert pub.body["topic"] == "telemetry/r1/42/temp"
    body = pub.body["body"]
    assert body["value"] == 22.5 and body["unit"] == "c"
    assert body["deviceId"] == 42 and body["property"] == "temp"
    assert body["aggregated"] is False and body["count"] == 1


def test_unattached_device_counted():
    kernel, broker, env, gw, _ = make()
    gw.on_uplink(telemetry_frame(device=999))
    assert gw.errors.get("UnattachedDevice") == 1
    assert pubs(kernel, "telemetry/1") == []


def test_bool_telemetry_has_empty_unit():
    kernel, broker, env, gw, _ = make()
    raw = frames.encode_frame(
        frames.DeviceFrame(frames.FT_TELEMETRY, 42, 2, 0, frames.PK_BOOL, True))
    gw.on_uplink(raw)
    [pub] = pubs(kernel, "telemetry/1")
    assert pub.body["body"]["value"] is True
    assert pub.body["body"]["unit"] == ""


def test_batch_aggregation_mean():
    kernel, broker, env, gw, _ = make(AggregationSpec("batch", n=3))
    for i, v in enumerate([20.0, 22.0, 24.0]):
        gw.on_uplink(telemetry_frame(ts=i, value=v))
    [pub] = pubs(kernel, "telemetry/1")
    body = pub.body["body"]
    assert body["value"] == pytest.approx(22.0)
    assert body["count"] == 3 and body["aggregated"] is True
    assert body["ts"] == 2  # last sample's timestamp


def test_batch_partial_buffer_holds():
    kernel, broker, env, gw, _ = make(AggregationSpec("batch", n=3))
    gw.on_uplink(telemetry_frame(ts=0, value=20.0))
    gw.on_uplink(telemetry_frame(ts=1, value=22.0))
    assert pubs(kernel, "telemetry/1") == []


def test_window_aggregation_flushes_every_m_ticks():
    kernel, broker, env, gw, _ = make(AggregationSpec("window", m=5))
    kernel.add_tick_hook("gw", gw.flush_windows)
    kernel.submit(lambda: gw.on_uplink(telemetry_frame(ts=0, value=21.0)))
    kernel.run(0)
    kernel.submit(lambda: gw.on_uplink(telemetry_frame(ts=1, value=21.5)))
    kernel.run(4)  # window [0..4] flushes at tick 4
    [pub] = pubs(kernel, "telemetry/1")
    assert pub.tick == 4
    assert pub.body["body"]["value"] == pytest.approx(21.25)
    assert pub.body["body"]["count"] == 2


def test_aggregation_conservation():
    kernel, broker, env, gw, _ = make(AggregationSpec("batch", n=3))
    for i in range(8):  # 2 full batches + 2 buffered
        gw.on_uplink(telemetry_frame(ts=i, value=20.0 + i))
    key = (42, "temp")
    buffered = len(gw.buffers.get(key, []))
    assert gw.translated[key] == gw.emitted.get(key, 0) + buffered == 8


def test_downlink_builds_command_frame():
    kernel, broker, env, gw, hosts = make()
    broker.publish("commands/7", "command/1", "test",
                   {"commandId": "c1", "deviceId": 7, "resourceId": 2,
                    "value": True, "origin": "user/1"})
    kernel.run(2)
    applied = [e for e in kernel.log.entries if e.kind == "cmd-apply"]
    assert len(applied) == 1 and applied[0].body["value"] is True
    assert env.value("room", "lamp") is True


def test_downlink_unattached_device_notifies_failure():
    kernel, broker, env, gw, _ = make()
    broker.publish("commands/7", "command/1", "test",
                   {"commandId": "c9", "deviceId": 999, "resourceId": 1,
                    "value": True, "origin": "user/1"})
    kernel.run(2)
    fails = pubs(kernel, "notify/1")
    assert len(fails) == 1
    assert fails[0].body["body"]["reason"] == "UnattachedDevice"
    assert fails[0].body["body"]["commandId"] == "c9"
    assert gw.errors.get("UnattachedDevice") == 1


def test_downlink_value_kind_mismatch():
    kernel, broker, env, gw, _ = make()
    broker.publish("commands/7", "command/1", "test",
                   {"commandId": "c2", "deviceId": 7, "resourceId": 2,
                    "value": 3.5, "origin": "user/1"})  # float to bool property
    kernel.run(2)
    fails = pubs(kernel, "notify/1")
    assert len(fails) == 1 and fails[0].body["body"]["reason"] == "ValueKindMismatch"


def test_float_command_round_trips_through_ack():
    kernel, broker, env, gw, _ = make()
    value = 0.1 + 0.2  # deliberately non-representable sum
    broker.publish("commands/7", "command/1", "test",
                   {"commandId": "c3", "deviceId": 7, "resourceId": 1,
                    "value": value, "origin": "user/1"})
    kernel.run(4)
    acks = pubs(kernel, "ack/1")
    assert len(acks) == 1
    body = acks[0].body["body"]
    assert body["commandId"] == "c3"
    assert struct.pack(">d", body["value"]) == struct.pack(">d", value)  # bit-equal


def test_uplink_value_bit_fidelity():
    kernel, broker, env, gw, _ = make()
    value = 22.1000000000000014  # any double must survive exactly
    gw.on_uplink(telemetry_frame(value=value))
    [pub] = pubs(kernel, "telemetry/1")
    assert struct.pack(">d", pub.body["body"]["value"]) == struct.pack(">d", value)


def test_corrupt_frame_counted_not_published():
    kernel, broker, env, gw, _ = make()
    raw = bytearray(telemetry_frame())
    raw[5] ^= 0xFF
    gw.on_uplink(bytes(raw))
    assert gw.errors.get("CrcMismatch") == 1
    assert pubs(kernel) == []


def test_heartbeat_published_on_telemetry_namespace():
    kernel, broker, env, gw, _ = make()
    raw = frames.encode_frame(
        frames.DeviceFrame(frames.FT_HEARTBEAT, 42, 0, 5, frames.PK_BOOL, True))
    gw.on_uplink(raw)
    [pub] = pubs(kernel, "heartbeat/1")
    assert pub.body["topic"] == "telemetry/r1/42/heartbeat"
