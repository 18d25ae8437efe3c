import pytest
from fastapi.testclient import TestClient

from iotsim.config import parse_config_data
from iotsim.scenario import Runtime
from iotsim.service import ServiceError
from iotsim.webapp import make_app

from test_config import valid_data


def make_runtime(extra=None):
    data = valid_data()
    data["scenario"]["horizon"] = 200
    data["users"] = []  # tests create their own
    if extra:
        data.update(extra)
    return Runtime(parse_config_data(data))


@pytest.fixture()
def rt():
    return make_runtime()


@pytest.fixture()
def client(rt):
    return TestClient(make_app(rt))


# -- users ---------------------------------------------------------------------

def test_create_user_ids_count_from_one(rt):
    user = rt.service.create_user("ada", "ada@x.io")
    assert user.id == 1
    assert rt.service.create_user("bob", "bob@x.io").id == 2


def test_duplicate_email_rejected(rt):
    rt.service.create_user("ada", "ada@x.io")
    with pytest.raises(ServiceError) as err:
        rt.service.create_user("ada2", "ada@x.io")
    assert err.value.code == "DuplicateEmail"


def test_invalid_email_rejected(rt):
    with pytest.raises(ServiceError) as err:
        rt.service.create_user("x", "no-at-sign")
    assert err.value.code == "InvalidEmail"


def test_user_endpoints(client):
    created = client.post("/users", json={"name": "ada", "email": "ada@x.io"})
    assert created.status_code == 200 and created.json()["id"] == 1
    dup = client.post("/users", json={"name": "b", "email": "ada@x.io"})
    assert dup.status_code == 400 and dup.json()["code"] == "DuplicateEmail"
    bad = client.post("/users", json={"name": "b", "email": "nope"})
    assert bad.status_code == 400 and bad.json()["code"] == "InvalidEmail"
    got = client.get("/users/1")
    assert got.json()["email"] == "ada@x.io"
    assert client.get("/users/9").status_code == 404


# -- notifications ----------------------------------------------------------------

def test_subscription_delivers_notification_next_tick(rt):
    user = rt.service.create_user("ada", "ada@x.io")
    rt.service.subscribe_user(user.id, "notify/alerts/#")
    rt.kernel.submit(lambda: rt.broker.publish(
        "notify/alerts/x", "notify/1", "test", {"message": "document me"}))
    rt.run(2)
    inbox = [n for n in rt.service.notifications if n.user_id == user.id]
    assert len(inbox) == 1
    assert inbox[0].message == "document me"


def test_two_users_same_topic_each_notified(rt):
    a = rt.service.create_user("a", "a@x.io")
    b = rt.service.create_user("b", "b@x.io")
    rt.service.subscribe_user(a.id, "notify/alerts/#")
    rt.service.subscribe_user(b.id, "notify/alerts/#")
    rt.kernel.submit(lambda: rt.broker.publish(
        "notify/alerts/x", "notify/1", "test", {"message": "m"}))
    rt.run(2)
    by_user = {n.user_id: n for n in rt.service.notifications}
    assert set(by_user) == {a.id, b.id}
    assert by_user[a.id].envelope_id == by_user[b.id].envelope_id


def test_unsubscribed_user_gets_nothing(rt):
    a = rt.service.create_user("a", "a@x.io")
    sub = rt.service.subscribe_user(a.id, "notify/alerts/#")
    rt.service.unsubscribe_user(sub.id)
    rt.kernel.submit(lambda: rt.broker.publish(
        "notify/alerts/x", "notify/1", "test", {"message": "m"}))
    rt.run(2)
    assert rt.service.notifications == []


def test_in_flight_envelope_still_notifies_after_unsubscribe(rt):
    a = rt.service.create_user("a", "a@x.io")
    sub = rt.service.subscribe_user(a.id, "notify/alerts/#")

    def publish_then_unsubscribe():
        rt.broker.publish("notify/alerts/x", "notify/1", "test", {"message": "m"})
        rt.service.unsubscribe_user(sub.id)  # same tick, after the publish

    rt.kernel.submit(publish_then_unsubscribe)
    rt.run(3)
    assert len(rt.service.notifications) == 1  # the in-flight delivery lands


def test_one_notification_per_user_envelope_pair(rt):
    a = rt.service.create_user("a", "a@x.io")
    rt.service.subscribe_user(a.id, "notify/#")
    rt.service.subscribe_user(a.id, "notify/alerts/#")  # overlapping patterns
    rt.kernel.submit(lambda: rt.broker.publish(
        "notify/alerts/x", "notify/1", "test", {"message": "m"}))
    rt.run(2)
    assert len(rt.service.notifications) == 1


def test_notifications_endpoint_and_read(rt, client):
    user = rt.service.create_user("ada", "ada@x.io")
    rt.service.subscribe_user(user.id, "notify/#")
    rt.kernel.submit(lambda: rt.broker.publish(
        "notify/alerts/x", "notify/1", "test", {"message": "m"}))
    rt.run(2)
    rows = client.get("/notifications", params={"userId": user.id}).json()
    assert len(rows) == 1 and rows[0]["read"] is False
    client.post(f"/notifications/{rows[0]['id']}/read")
    rows = client.get("/notifications", params={"userId": user.id}).json()
    assert rows[0]["read"] is True


# -- commands ------------------------------------------------------------------------

def test_command_acked_through_pipeline(rt):
    user = rt.service.create_user("ada", "ada@x.io")
    issued = {}
    rt.kernel.submit(lambda: issued.update(
        req=rt.service.issue_command(user.id, 2, 1, True)))
    rt.run(6)
    req = issued["req"]
    assert req.outcome == "acked"
    # ack/1 envelope appears at most 3 ticks after the command publish
    pubs = [e for e in rt.kernel.log.entries if e.kind == "pub"]
    cmd = next(e for e in pubs if e.body["schema"] == "command/1")
    acks = [e for e in pubs if e.body["schema"] == "ack/1"
            and e.body["body"]["commandId"] == req.id]
    assert len(acks) == 1  # audit: one device ack per acked request
    assert acks[0].tick - cmd.tick <= 3
    # and exactly one ack frame from the device backs it
    ack_frames = [e for e in rt.kernel.log.entries if e.kind == "frame-up"
                  and e.body.get("deviceId") == 2]
    assert len(ack_frames) == 1


def test_command_unknown_device(rt):
    user = rt.service.create_user("ada", "ada@x.io")
    with pytest.raises(ServiceError) as err:
        rt.service.issue_command(user.id, 999, 1, True)
    assert err.value.code == "UnknownDevice"
    pubs = [e for e in rt.kernel.log.entries
            if e.kind == "pub" and e.body["schema"] == "command/1"]
    assert pubs == []


def test_command_to_detached_device_fails(rt):
    data = valid_data()
    data["devices"].append(
        {"id": 9, "name": "rogue", "region": "r1", "gateway": "gw-r1",
         "attached": False,
         "actuators": [{"id": 1, "name": "power", "thing": "room",
                        "property": "temp", "effect": -0.1}]})
    rt = Runtime(parse_config_data(data))
    user = rt.service.create_user("ada", "ada@x.io")
    issued = {}
    rt.kernel.submit(lambda: issued.update(
        req=rt.service.issue_command(user.id, 9, 1, True)))
    rt.run(5)
    assert issued["req"].outcome == "failed"
    assert issued["req"].reason == "UnattachedDevice"


def test_command_endpoint(client, rt):
    client.post("/users", json={"name": "ada", "email": "ada@x.io"})
    posted = client.post("/devices/2/commands",
                         json={"resourceId": 1, "value": True, "userId": 1})
    assert posted.status_code == 200
    body = posted.json()
    assert body["outcome"] == "pending"
    rt.kernel.run(6)
    snap = client.get("/dashboard/snapshot").json()
    [cmd] = [c for c in snap["commands"] if c["id"] == body["id"]]
    assert cmd["outcome"] == "acked"


# -- snapshot ---------------------------------------------------------------------------

def test_fresh_snapshot_all_devices_online_zero_plans(rt):
    rt.run(0)
    snap = rt.service.snapshot()
    assert snap["run"]["tick"] == 0
    assert all(d["status"] == "online" for d in snap["devices"])
    assert snap["plans"] == []


def test_snapshot_purity(rt):
    rt.run(10)
    a = rt.service.snapshot()
    b = rt.service.snapshot()
    assert a == b
    a["devices"].clear()  # mutating a copy must not touch the service
    assert rt.service.snapshot() == b


def test_snapshot_regulation_shows_completed_plan():
    data = valid_data()
    data["scenario"]["horizon"] = 100
    data["things"][0]["properties"][0]["initial"] = 30.0  # rule fires immediately
    rt = Runtime(parse_config_data(data))
    rt.run(30)
    snap = rt.service.snapshot()
    [loop] = snap["loops"]
    assert loop["counters"]["execute"] >= 1
    assert loop["lastPlanId"]


# -- rules --------------------------------------------------------------------------------

def test_submit_rule_installed_next_snapshot(rt, client):
    resp = client.post("/rules", content="WHEN room.temp > 29 THEN SET(ac, power, on)")
    assert resp.status_code == 200
    rule_id = resp.json()["ruleId"]
    rt.kernel.run(1)
    rows = client.get("/rules").json()
    assert any(r["id"] == rule_id for r in rows)


def test_submit_rule_syntax_error_position(client):
    resp = client.post("/rules", content="WHEN  > 23 THEN SET(ac, power, on)")
    assert resp.status_code == 400
    body = resp.json()
    assert body["code"] == "SyntaxError"
    assert body["position"] == {"line": 1, "col": 7}


def test_submit_rule_unresolved_device(client):
    resp = client.post("/rules", content="WHEN room.temp > 1 THEN SET(ghost, power, on)")
    assert resp.status_code == 400
    body = resp.json()
    assert body["code"] == "UnresolvedReference"
    assert "ghost" in body["message"]
    assert all("ghost" not in r["text"] for r in client.get("/rules").json())


# -- misc endpoints --------------------------------------------------------------------------

def test_devices_and_telemetry_endpoints(rt, client):
    rt.kernel.run(5)
    rows = client.get("/devices").json()
    assert {d["id"] for d in rows} == {1, 2}
    one = client.get("/devices/1").json()
    assert one["values"].get("temp") == 20.0
    series = client.get("/telemetry",
                        params={"deviceId": 1, "property": "temp", "sinceTick": 2}).json()
    assert series and all(r["tick"] >= 2 for r in series)
    assert client.get("/devices/99").status_code == 404


def test_unit_preference_conversion(rt, client):
    client.post("/users", json={"name": "f", "email": "f@x.io",
                                "preferences": {"units": "imperial"}})
    rt.kernel.run(3)
    row = client.get("/devices/1", params={"userId": 1}).json()
    assert row["values"]["temp"] == pytest.approx(68.0)  # 20 C


def test_loops_and_plans_endpoints(rt, client):
    rt.kernel.run(3)
    loops = client.get("/loops").json()
    assert loops[0]["id"] == "edge-r1"
    assert client.get("/loops/edge-r1").json()["region"] == "r1"
    assert client.get("/loops/nope").status_code == 404
    assert client.get("/plans", params={"region": "r1"}).json() == []


def test_events_websocket_streams_pubs(rt, client):
    with client.websocket_connect("/events?topic=telemetry") as ws:
        rt.kernel.run(2)
        event = ws.receive_json()
        assert event["topic"].startswith("telemetry/")
        assert event["schema"] in ("telemetry/1", "heartbeat/1")


def test_subscription_endpoints(rt, client):
    client.post("/users", json={"name": "ada", "email": "ada@x.io"})
    sub = client.post("/subscriptions", json={"userId": 1, "pattern": "notify/#"})
    assert sub.status_code == 200
    bad = client.post("/subscriptions", json={"userId": 1, "pattern": "a/#/b"})
    assert bad.status_code == 400
    deleted = client.delete(f"/subscriptions/{sub.json()['id']}")
    assert deleted.json()["deleted"] is True
