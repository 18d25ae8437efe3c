import pytest

from iotsim.broker import (
    Broker,
    MalformedPattern,
    MalformedTopic,
    UnknownSchema,
    UnknownSubscription,
    topic_matches,
    validate_pattern,
    validate_topic,
)
from iotsim.kernel import Kernel


class Recorder:
    """Test component stashing every delivery it receives."""

    def __init__(self, kernel, name):
        self.name = name
        self.kernel = kernel
        self.deliveries = []
        kernel.register(name, self.on_event)

    def on_event(self, event):
        if event.kind == "dlv":
            self.deliveries.append((self.kernel.now(), event.body))


def make():
    k = Kernel(seed=1)
    return k, Broker(k)


def notify(body=None):
    return dict({"message": "m"}, **(body or {}))


def test_hash_wildcard_matches_rest():
    assert topic_matches("telemetry/r1/#", "telemetry/r1/dev42/temp")
    assert topic_matches("telemetry/r1/#", "telemetry/r1")
    assert not topic_matches("telemetry/r1/#", "telemetry/r2/dev42")


def test_star_wildcard_matches_one_segment():
    assert topic_matches("telemetry/*/dev42/temp", "telemetry/r9/dev42/temp")
    assert not topic_matches("telemetry/*/dev42/temp", "telemetry/r9/dev43/temp")
    assert not topic_matches("telemetry/*", "telemetry/a/b")


def test_hash_only_final():
    with pytest.raises(MalformedPattern):
        validate_pattern("a/#/b")


def test_topic_validation():
    validate_topic("a/b-c/d_1")
    with pytest.raises(MalformedTopic):
        validate_topic("a//b")
    with pytest.raises(MalformedTopic):
        validate_topic("a/B")
    with pytest.raises(MalformedTopic):
        validate_topic("/".join("abcdefghi"))


def test_publish_without_subscribers_still_logged():
    k, b = make()
    count = b.publish("notify/nobody", "notify/1", "p", notify())
    assert count == 0
    pubs = [e for e in k.log.entries if e.kind == "pub"]
    assert len(pubs) == 1 and pubs[0].body["topic"] == "notify/nobody"


def test_one_hop_one_tick():
    k, b = make()
    r = Recorder(k, "r")
    b.subscribe("r", "notify/#")
    k.run(9)
    # published while tick 10 runs -> handler runs at tick 11
    k.submit(lambda: b.publish("notify/x", "notify/1", "p", notify()))
    k.run(12)
    assert [t for t, _ in r.deliveries] == [11]
    pubs = [e for e in k.log.entries if e.kind == "pub"]
    assert pubs[0].tick == 10


def test_three_subscribers_each_get_one_copy():
    k, b = make()
    rs = [Recorder(k, f"r{i}") for i in range(3)]
    for r in rs:
        b.subscribe(r.name, "notify/x")
    count = b.publish("notify/x", "notify/1", "p", notify())
    assert count == 3
    k.run(1)
    assert all(len(r.deliveries) == 1 for r in rs)
    dlvs = [e for e in k.log.entries if e.kind == "dlv"]
    assert len(dlvs) == 3


def test_unsubscribe_stops_future_deliveries():
    k, b = make()
    r = Recorder(k, "r")
    sub = b.subscribe("r", "notify/#")
    k.run(5)
    b.unsubscribe(sub.id)
    b.publish("notify/x", "notify/1", "p", notify())
    k.run(8)
    assert r.deliveries == []


def test_unsubscribe_does_not_cancel_in_flight():
    k, b = make()
    r = Recorder(k, "r")
    sub = b.subscribe("r", "notify/#")
    k.run(5)
    b.publish("notify/x", "notify/1", "p", notify())
    b.unsubscribe(sub.id)  # same tick, after the publish
    k.run(7)
    assert [t for t, _ in r.deliveries] == [6]


def test_unknown_subscription():
    _, b = make()
    with pytest.raises(UnknownSubscription):
        b.unsubscribe("sub-999")


def test_unknown_schema():
    _, b = make()
    with pytest.raises(UnknownSchema):
        b.publish("notify/x", "bogus/9", "p", {})


def test_per_topic_fifo():
    k, b = make()
    r = Recorder(k, "r")
    b.subscribe("r", "notify/x")
    b.publish("notify/x", "notify/1", "p", notify({"n": 1}))
    b.publish("notify/x", "notify/1", "p", notify({"n": 2}))
    k.run(1)
    b.publish("notify/x", "notify/1", "p", notify({"n": 3}))
    k.run(3)
    assert [d["body"]["n"] for _, d in r.deliveries] == [1, 2, 3]


def test_removing_subscriber_does_not_change_others_envelopes():
    def run(with_second):
        k, b = make()
        r = Recorder(k, "keeper")
        b.subscribe("keeper", "notify/#")
        if with_second:
            Recorder(k, "other")
            b.subscribe("other", "notify/#")
        b.publish("notify/x", "notify/1", "p", notify({"n": 1}))
        k.run(2)
        return [d for _, d in r.deliveries]

    kept = run(with_second=True)
    alone = run(with_second=False)
    for a, b_ in zip(kept, alone):
        a = dict(a)
        b_ = dict(b_)
        a.pop("subscription")
        b_.pop("subscription")
        assert a == b_
