"""Topic-based publish-subscribe fabric; the only channel between layers.

Topics are slash-separated lowercase paths. Patterns may use `*` for exactly
one segment and a trailing `#` for any remaining segments (including none).
Delivery takes one tick per hop: an envelope published at tick t reaches every
matching live subscriber at t + 1. Every publish and every delivery is
mirrored to the kernel log with kinds "pub" and "dlv".

Topic namespace used by the platform:
    telemetry/<region>/<device>/<property>   device measurements (and heartbeats)
    commands/<device>                        downlink device commands
    kb/<loop>/symptoms | kb/<loop>/reports   control-loop phase notifications
    plans/<region> | plans/escalations | plans/shared | plans/grants/<loop> | plans/acks
    notify/<...>                             user-facing notifications and acks
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .kernel import Kernel

_SEGMENT_RE = re.compile(r"^[a-z0-9_-]+$")
MAX_SEGMENTS = 8


class BrokerError(Exception):
    pass


class MalformedTopic(BrokerError):
    pass


class MalformedPattern(BrokerError):
    pass


class UnknownSchema(BrokerError):
    pass


class SchemaViolation(BrokerError):
    pass


class UnknownSubscription(BrokerError):
    pass


# Required body fields per schema; publishing with any missing is an error.
SCHEMAS: dict[str, tuple[str, ...]] = {
    "telemetry/1": (
        "deviceId", "resourceId", "property", "value", "unit", "ts",
        "regionId", "gatewayId", "aggregated", "count",
    ),
    "heartbeat/1": ("deviceId", "ts", "regionId", "gatewayId"),
    "command/1": ("commandId", "deviceId", "resourceId", "value", "origin"),
    "ack/1": ("commandId", "deviceId", "resourceId", "value", "ok"),
    "symptom/1": ("id", "kind", "source", "scope", "evidence", "detectedAt"),
    "report/1": ("id", "loopId", "tick", "symptoms", "rules", "severity", "scope"),
    "escalation/1": ("id", "loopId", "report", "proposals"),
    "plan/1": ("id", "origin", "actions", "scope", "cause", "priority", "createdAt"),
    "plangrant/1": ("planId", "loopId", "region"),
    "planack/1": ("planId", "loopId", "region", "outcomes"),
    "notify/1": ("message",),
    "summary/1": ("loopId", "tick", "regionId", "counts"),
}


def validate_topic(path: str) -> list[str]:
    segments = path.split("/")
    if not 1 <= len(segments) <= MAX_SEGMENTS:
        raise MalformedTopic(f"topic must have 1..{MAX_SEGMENTS} segments: {path!r}")
    for seg in segments:
        if not _SEGMENT_RE.match(seg):
            raise MalformedTopic(f"bad topic segment {seg!r} in {path!r}")
    return segments


def validate_pattern(path: str) -> list[str]:
    segments = path.split("/")
    if not 1 <= len(segments) <= MAX_SEGMENTS:
        raise MalformedPattern(f"pattern must have 1..{MAX_SEGMENTS} segments: {path!r}")
    for i, seg in enumerate(segments):
        if seg == "#":
            if i != len(segments) - 1:
                raise MalformedPattern(f"'#' only allowed as final segment: {path!r}")
        elif seg != "*" and not _SEGMENT_RE.match(seg):
            raise MalformedPattern(f"bad pattern segment {seg!r} in {path!r}")
    return segments


def topic_matches(pattern: str, topic: str) -> bool:
    pat = pattern.split("/")
    top = topic.split("/")
    for i, pseg in enumerate(pat):
        if pseg == "#":
            return True  # matches the rest, including nothing
        if i >= len(top):
            return False
        if pseg != "*" and pseg != top[i]:
            return False
    return len(top) == len(pat)


@dataclass
class Envelope:
    schema: str
    topic: str
    publisher: str
    body: dict[str, Any]
    tick_published: int = -1
    envelope_id: str = ""

    def delivery_body(self, subscription_id: str) -> dict[str, Any]:
        return {
            "envelopeId": self.envelope_id,
            "schema": self.schema,
            "topic": self.topic,
            "publisher": self.publisher,
            "tickPublished": self.tick_published,
            "subscription": subscription_id,
            "body": self.body,
        }

    @classmethod
    def from_delivery(cls, body: dict[str, Any]) -> "Envelope":
        return cls(
            schema=body["schema"],
            topic=body["topic"],
            publisher=body["publisher"],
            body=body["body"],
            tick_published=body["tickPublished"],
            envelope_id=body["envelopeId"],
        )


@dataclass
class Subscription:
    id: str
    subscriber: str
    pattern: str
    created_at: int
    active: bool = field(default=True)


class Broker:
    """Routes envelopes between components via the kernel's event queue."""

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self._subs: dict[str, Subscription] = {}
        self._order: list[str] = []  # subscription ids in creation order
        self._eid = 0
        self._sid = 0

    def subscribe(self, subscriber: str, pattern: str) -> Subscription:
        validate_pattern(pattern)
        self._sid += 1
        sub = Subscription(f"sub-{self._sid}", subscriber, pattern, self.kernel.now())
        self._subs[sub.id] = sub
        self._order.append(sub.id)
        return sub

    def unsubscribe(self, subscription_id: str) -> None:
        sub = self._subs.get(subscription_id)
        if sub is None or not sub.active:
            raise UnknownSubscription(subscription_id)
        sub.active = False

    def publish(self, topic: str, schema: str, publisher: str, body: dict[str, Any]) -> int:
        validate_topic(topic)
        required = SCHEMAS.get(schema)
        if required is None:
            raise UnknownSchema(schema)
        missing = [f for f in required if f not in body]
        if missing:
            raise SchemaViolation(f"schema {schema} missing fields {missing} on {topic}")
        self._eid += 1
        env = Envelope(schema, topic, publisher, body, self.kernel.now(), f"e{self._eid}")
        matched = [
            self._subs[sid]
            for sid in self._order
            if self._subs[sid].active and topic_matches(self._subs[sid].pattern, topic)
        ]
        self.kernel.record(
            publisher,
            "pub",
            {
                "envelopeId": env.envelope_id,
                "schema": schema,
                "topic": topic,
                "subs": len(matched),
                "body": body,
            },
        )
        for sub in matched:
            self.kernel.schedule(
                env.tick_published + 1, sub.subscriber, "dlv", env.delivery_body(sub.id)
            )
        return len(matched)
