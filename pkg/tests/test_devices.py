import pytest

from iotsim import frames
from iotsim.devices import (
    ActuatorSpec,
    DeviceHost,
    DeviceSpec,
    Environment,
    PropertySpec,
    SensorSpec,
    SignalModel,
    ThingSpec,
)
from iotsim.kernel import Kernel


def make_world(drift=0.1, effect=-0.5, initial=28.0, sensor_mode="periodic",
               period=1, delta=0.0, disturbance=None, seed=1):
    kernel = Kernel(seed=seed)
    thing = ThingSpec("room", "room", "r1", [
        PropertySpec("temp", "c", "float", initial, drift,
                     disturbance or SignalModel()),
        PropertySpec("lamp", "", "bool", False),
    ])
    env = Environment(kernel, [thing])
    spec = DeviceSpec(
        1, "combo", "r1", "gw",
        sensors=[SensorSpec(1, "room", "temp", period, sensor_mode, delta)],
        actuators=[ActuatorSpec(2, "power", "room", "temp", effect),
                   ActuatorSpec(3, "switch", "room", "lamp")],
    )
    host = DeviceHost(kernel, spec, env)
    emitted = []
    host.uplink = lambda raw: emitted.append(frames.decode_frame(raw))
    host.gateway_component = "gw"
    return kernel, env, host, emitted


def command(resource, payload, kind=frames.PK_BOOL):
    return frames.DeviceFrame(frames.FT_COMMAND, 1, resource, 0, kind, payload)


def test_periodic_sample_passes_value_through():
    kernel, env, host, _ = make_world(period=5, drift=0.0, initial=22.5)
    frame = host.sample(host.spec.sensors[0], 10)
    assert frame is not None and frame.payload == 22.5
    assert host.sample(host.spec.sensors[0], 11) is None  # off-period


def test_on_change_below_threshold_suppressed():
    kernel, env, host, _ = make_world(sensor_mode="on-change", delta=0.5, initial=22.0)
    first = host.sample(host.spec.sensors[0], 0)  # first observation reports
    assert first is not None and first.payload == 22.0
    env.set_value("room", "temp", 22.3)
    assert host.sample(host.spec.sensors[0], 1) is None


def test_on_change_threshold_crossed_updates_last_reported():
    kernel, env, host, _ = make_world(sensor_mode="on-change", delta=0.5, initial=22.0)
    host.sample(host.spec.sensors[0], 0)
    env.set_value("room", "temp", 22.6)
    frame = host.sample(host.spec.sensors[0], 1)
    assert frame is not None and frame.payload == 22.6
    env.set_value("room", "temp", 22.9)
    assert host.sample(host.spec.sensors[0], 2) is None  # only 0.3 from 22.6


def test_apply_command_engages_rate_actuator():
    kernel, env, host, _ = make_world()
    host.apply_command(command(2, True))
    env.step_region("r1", 0)
    assert env.value("room", "temp") == pytest.approx(28.0 - 0.4)


def test_apply_command_unknown_resource():
    kernel, env, host, _ = make_world()
    from iotsim.devices import UnknownResource

    with pytest.raises(UnknownResource):
        host.apply_command(command(99, True))
    env.step_region("r1", 0)
    assert env.value("room", "temp") == pytest.approx(28.1)  # drift only


def test_bool_property_absolute_set_and_kind_mismatch():
    kernel, env, host, _ = make_world()
    assert host.apply_command(command(3, True)) is True
    assert env.value("room", "lamp") is True
    from iotsim.devices import PayloadKindMismatch

    with pytest.raises(PayloadKindMismatch):
        host.apply_command(command(3, 1.0, frames.PK_FLOAT))


def test_duplicate_command_idempotent_but_acked():
    kernel, env, host, _ = make_world()
    raw = frames.encode_frame(command(2, True)).hex()
    kernel.register("probe", lambda e: None)
    kernel.schedule(0, host.component_id, "frame", {"hex": raw})
    kernel.schedule(0, host.component_id, "frame", {"hex": raw})
    kernel.run(1)
    applies = [e for e in kernel.log.entries if e.kind == "cmd-apply"]
    assert [a.body["changed"] for a in applies] == [True, False]
    acks = [e for e in kernel.log.entries if e.kind == "frame-up"]
    assert len(acks) == 2  # every command is acknowledged


def test_environment_step_arithmetic():
    kernel, env, host, _ = make_world(drift=0.1, effect=-0.5, initial=28.0)
    host.apply_command(command(2, True))
    env.step_region("r1", 0)
    assert env.value("room", "temp") == pytest.approx(27.6)


def test_environment_fixed_point():
    kernel, env, host, _ = make_world(drift=0.0, initial=20.0)
    for t in range(10):
        env.step_region("r1", t)
    assert env.value("room", "temp") == 20.0


def test_environment_closed_form_30_steps():
    kernel, env, host, _ = make_world(drift=0.1, effect=-0.5, initial=28.0)
    host.apply_command(command(2, True))
    for t in range(30):
        env.step_region("r1", t)
    assert env.value("room", "temp") == pytest.approx(16.0, abs=1e-9)


def test_float_command_sets_rate():
    kernel, env, host, _ = make_world(drift=0.0)
    host.apply_command(command(2, -1.25, frames.PK_FLOAT))
    env.step_region("r1", 0)
    assert env.value("room", "temp") == pytest.approx(26.75)


def test_on_change_emission_bound():
    # emitted frames <= total variation / delta + 1
    kernel, env, host, _ = make_world(sensor_mode="on-change", delta=0.3, drift=0.0,
                                      initial=20.0)
    values = [20.0, 20.1, 20.5, 21.4, 21.3, 19.0, 19.05, 23.0, 23.0, 22.9]
    emitted = 0
    variation = 0.0
    prev = None
    for t, v in enumerate(values):
        env.set_value("room", "temp", v)
        if prev is not None:
            variation += abs(v - prev)
        prev = v
        if host.sample(host.spec.sensors[0], t) is not None:
            emitted += 1
    assert emitted <= variation / 0.3 + 1


def test_environment_determinism_with_disturbance():
    def trajectory():
        kernel, env, host, _ = make_world(
            disturbance=SignalModel("gauss", sigma=0.2), seed=99)
        out = []
        for t in range(50):
            env.step_region("r1", t)
            out.append(env.value("room", "temp"))
        return out

    assert trajectory() == trajectory()


def test_dead_device_ignores_commands_and_stops_sampling():
    kernel, env, host, _ = make_world()
    host.spec.offline_at = 5
    raw = frames.encode_frame(command(2, True)).hex()
    kernel.schedule(6, host.component_id, "frame", {"hex": raw})
    kernel.run(7)
    assert [e for e in kernel.log.entries if e.kind == "cmd-apply"] == []
    assert host.sample_tick(6) is None
