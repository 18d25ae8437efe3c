"""Application layer: user accounts, event subscriptions and notifications,
the device controller, dashboard snapshots, and the HTTP/WebSocket API.

HTTP handlers never touch simulation state directly: mutations either run
under the runtime lock between ticks or are submitted to the kernel's command
queue; reads come from the tick-boundary snapshot the service rebuilds at the
end of every tick.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from .broker import Broker, Envelope, MalformedPattern, validate_pattern
from .devices import Registry
from .kernel import Kernel, ScheduledEvent
from .orchestration import GlobalController, Limits, MapeLoop
from .rules import RuleError, RuleSyntaxError, UnknownAggregate, parse_rule


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


@dataclass
class User:
    id: int
    name: str
    email: str
    created_at: int
    preferences: dict = field(default_factory=dict)


@dataclass
class UserSubscription:
    id: str
    user_id: int
    pattern: str
    created_at: int
    broker_sub: str


@dataclass
class Notification:
    id: str
    user_id: int
    envelope_id: str
    message: str
    tick: int
    read: bool = False


@dataclass
class CommandRequest:
    id: str
    user_id: int
    device_id: int
    resource_id: int
    value: Any
    issued_at: int
    outcome: str = "pending"  # pending | acked | failed
    reason: str = ""


class AppService:
    """User-facing surface over the simulation; one per runtime."""

    def __init__(
        self,
        kernel: Kernel,
        broker: Broker,
        registry: Registry,
        loops: dict[str, MapeLoop],
        global_controller: Optional[GlobalController],
        environment,
        meta: dict,
        limits: Limits,
        rule_installer=None,
    ):
        self.kernel = kernel
        self.broker = broker
        self.registry = registry
        self.loops = loops
        self.global_controller = global_controller
        self.environment = environment
        self.meta = meta
        self.limits = limits
        self.rule_installer = rule_installer
        self.component_id = "app"

        self.users: dict[int, User] = {}
        self.subscriptions: dict[str, UserSubscription] = {}
        self.notifications: list[Notification] = []
        self.commands: dict[str, CommandRequest] = {}
        self._notified: set[tuple[int, str]] = set()
        self._emails: set[str] = set()
        self._counters = {"user": 0, "sub": 0, "notif": 0, "cmd": 0, "rule": 0}
        self._sub_index: dict[str, UserSubscription] = {}  # broker sub id -> user sub
        self._series: dict[tuple[int, str], list[tuple[int, Any]]] = {}
        self._plans: deque[dict] = deque(maxlen=50)
        self._messages: dict[str, int] = {}
        self._log_index = 0
        self._streams: list[tuple[str, deque]] = []
        self.latest_snapshot: dict = {}

        kernel.register(self.component_id, self.on_event)
        self._system_notify = broker.subscribe(self.component_id, "notify/#").id
        self._system_telemetry = broker.subscribe(self.component_id, "telemetry/#").id

    # -- users / subscriptions -------------------------------------------------

    def create_user(self, name: str, email: str, preferences: dict | None = None) -> User:
        if "@" not in email:
            raise ServiceError("InvalidEmail", f"email {email!r} must contain '@'")
        if email in self._emails:
            raise ServiceError("DuplicateEmail", f"email {email!r} already registered")
        self._counters["user"] += 1
        user = User(self._counters["user"], name, email, self.kernel.now(),
                    dict(preferences or {}))
        self.users[user.id] = user
        self._emails.add(email)
        self.kernel.record(
            self.component_id, "user",
            {"id": user.id, "name": name, "email": email, "preferences": user.preferences},
        )
        return user

    def subscribe_user(self, user_id: int, pattern: str) -> UserSubscription:
        if user_id not in self.users:
            raise ServiceError("UnknownUser", f"no user {user_id}")
        segments = validate_pattern(pattern)  # raises MalformedPattern
        if segments[0] not in ("notify", "telemetry"):
            raise MalformedPattern("user subscriptions cover notify/# and telemetry/# only")
        self._counters["sub"] += 1
        broker_sub = self.broker.subscribe(self.component_id, pattern)
        sub = UserSubscription(f"us-{self._counters['sub']}", user_id, pattern,
                               self.kernel.now(), broker_sub.id)
        self.subscriptions[sub.id] = sub
        self._sub_index[broker_sub.id] = sub
        self.kernel.record(
            self.component_id, "user-sub",
            {"id": sub.id, "userId": user_id, "pattern": pattern},
        )
        return sub

    def unsubscribe_user(self, sub_id: str) -> None:
        sub = self.subscriptions.pop(sub_id, None)
        if sub is None:
            raise ServiceError("UnknownSubscription", f"no subscription {sub_id}")
        self.broker.unsubscribe(sub.broker_sub)
        # _sub_index keeps the mapping: envelopes already in flight when the
        # user unsubscribed still become notifications (broker in-flight rule)
        self.kernel.record(self.component_id, "user-unsub", {"id": sub_id})

    # -- commands ----------------------------------------------------------------

    def issue_command(self, user_id: int, device_id: int, resource_id: int,
                      value: Any) -> CommandRequest:
        if user_id not in self.users:
            raise ServiceError("UnknownUser", f"no user {user_id}")
        if device_id not in self.registry.devices:
            raise ServiceError("UnknownDevice", f"no device {device_id}")
        self._counters["cmd"] += 1
        request = CommandRequest(
            f"cmd-user-{self._counters['cmd']}", user_id, device_id, resource_id,
            value, self.kernel.now(),
        )
        self.commands[request.id] = request
        self.kernel.record(
            self.component_id, "command-req",
            {"id": request.id, "userId": user_id, "deviceId": device_id,
             "resourceId": resource_id, "value": value},
        )
        self.broker.publish(
            f"commands/{device_id}", "command/1", self.component_id,
            {"commandId": request.id, "deviceId": device_id, "resourceId": resource_id,
             "value": value, "origin": f"user/{user_id}"},
        )
        return request

    def mark_read(self, notification_id: str) -> None:
        for n in self.notifications:
            if n.id == notification_id:
                if not n.read:
                    n.read = True
                    self.kernel.record(self.component_id, "notif-read", {"id": n.id})
                return
        raise ServiceError("UnknownNotification", f"no notification {notification_id}")

    # -- rules ---------------------------------------------------------------------

    def submit_rule(self, text: str, rule_id: str = "") -> dict:
        """Parse and install a rule; returns {"ruleId"} or verbatim diagnostics."""
        try:
            parsed = parse_rule(text.strip())
        except RuleSyntaxError as exc:
            return {
                "error": {
                    "code": "SyntaxError",
                    "message": str(exc),
                    "position": {"line": exc.line, "col": exc.col},
                    "expected": exc.expected,
                }
            }
        except UnknownAggregate as exc:
            return {
                "error": {
                    "code": "UnknownAggregate",
                    "message": str(exc),
                    "position": {"line": exc.line, "col": exc.col},
                }
            }
        if not rule_id:
            self._counters["rule"] += 1
            rule_id = f"rule-{self._counters['rule']}"
        try:
            self.rule_installer(rule_id, parsed, True)
        except RuleError as exc:
            return {"error": {"code": "UnresolvedReference", "message": str(exc)}}
        return {"ruleId": rule_id}

    # -- delivery handling ------------------------------------------------------------

    def on_event(self, event: ScheduledEvent) -> None:
        if event.kind != "dlv":
            return
        env = Envelope.from_delivery(event.body)
        sub_id = event.body["subscription"]
        if sub_id == self._system_notify:
            self._on_system_notify(env)
        elif sub_id == self._system_telemetry:
            key = (env.body["deviceId"], env.body.get("property", "heartbeat"))
            series = self._series.setdefault(key, [])
            series.append((self.kernel.now(), env.body.get("value", True)))
            if len(series) > 1000:
                del series[0 : len(series) - 1000]
        elif sub_id in self._sub_index:
            self._notify_user(self._sub_index[sub_id], env)

    def _on_system_notify(self, env: Envelope) -> None:
        body = env.body
        if env.schema == "ack/1":
            request = self.commands.get(body.get("commandId", ""))
            if request is not None and request.outcome == "pending":
                request.outcome = "acked"
                self.kernel.record(
                    self.component_id, "command-outcome",
                    {"id": request.id, "outcome": "acked", "reason": ""},
                )
        elif env.schema == "notify/1" and "commandId" in body:
            request = self.commands.get(body.get("commandId", ""))
            if request is not None and request.outcome == "pending":
                request.outcome = "failed"
                request.reason = body.get("reason", "")
                self.kernel.record(
                    self.component_id, "command-outcome",
                    {"id": request.id, "outcome": "failed", "reason": request.reason},
                )

    def _notify_user(self, sub: UserSubscription, env: Envelope) -> None:
        key = (sub.user_id, env.envelope_id)
        if key in self._notified:
            return
        self._notified.add(key)
        if env.schema == "notify/1":
            message = env.body.get("message", "")
        elif env.schema == "telemetry/1":
            message = f"{env.body['property']}={env.body['value']}"
        elif env.schema == "ack/1":
            message = f"command {env.body.get('commandId', '')} acknowledged"
        else:
            message = env.topic
        self._counters["notif"] += 1
        notification = Notification(
            f"n-{self._counters['notif']}", sub.user_id, env.envelope_id, message,
            self.kernel.now(),
        )
        self.notifications.append(notification)
        self.kernel.record(
            self.component_id, "notif",
            {"id": notification.id, "userId": sub.user_id,
             "envelopeId": env.envelope_id, "message": message},
        )

    # -- per-tick bookkeeping -----------------------------------------------------------

    def tick_hook(self, tick: int) -> None:
        new_pubs = []
        entries = self.kernel.log.entries
        while self._log_index < len(entries):
            entry = entries[self._log_index]
            self._log_index += 1
            if entry.kind != "pub":
                continue
            body = entry.body
            self._messages[body["schema"]] = self._messages.get(body["schema"], 0) + 1
            if body["schema"] == "plan/1":
                self._plans.append(body["body"])
            new_pubs.append(
                {"tick": entry.tick, "envelopeId": body["envelopeId"],
                 "topic": body["topic"], "schema": body["schema"], "body": body["body"]}
            )
        for prefix, queue in self._streams:
            for pub in new_pubs:
                if not prefix or pub["topic"].startswith(prefix):
                    queue.append(pub)
        self.latest_snapshot = self.build_snapshot(tick)

    def add_stream(self, topic_prefix: str = "") -> deque:
        queue: deque = deque(maxlen=1000)
        self._streams.append((topic_prefix, queue))
        return queue

    def remove_stream(self, queue: deque) -> None:
        self._streams = [(p, q) for p, q in self._streams if q is not queue]

    # -- snapshot ---------------------------------------------------------------------------

    def build_snapshot(self, tick: int) -> dict:
        devices = []
        for region in sorted(self.loops):
            loop = self.loops[region]
            for record in loop.manager.records(tick):
                values = {}
                for (device_id, prop), series in sorted(self._series.items()):
                    if device_id == record.device_id and prop != "heartbeat" and series:
                        values[prop] = series[-1][1]
                devices.append(
                    {
                        "id": record.device_id,
                        "name": record.name,
                        "region": record.region,
                        "status": record.status,
                        "lastSeen": record.last_seen,
                        "values": values,
                    }
                )
        environment = dict(sorted(self.environment.report_values().items()))
        rules = []
        for region in sorted(self.loops):
            loop = self.loops[region]
            for rule_id in sorted(loop.engine.rules):
                rule = loop.engine.rules[rule_id]
                rules.append(
                    {"id": rule.id, "text": rule.text, "scope": list(rule.scope),
                     "engine": loop.id, "enabled": rule.enabled}
                )
        if self.global_controller is not None:
            for rule_id in sorted(self.global_controller.engine.rules):
                rule = self.global_controller.engine.rules[rule_id]
                rules.append(
                    {"id": rule.id, "text": rule.text, "scope": list(rule.scope),
                     "engine": "global", "enabled": rule.enabled}
                )
        loops = []
        for region in sorted(self.loops):
            loop = self.loops[region]
            loops.append(
                {
                    "id": loop.id,
                    "region": loop.region,
                    "mode": loop.mode,
                    "counters": dict(loop.counters),
                    "lastPlanId": loop.last_plan["id"] if loop.last_plan else "",
                }
            )
        users = []
        for user_id in sorted(self.users):
            unread = sum(
                1 for n in self.notifications if n.user_id == user_id and not n.read
            )
            users.append({"id": user_id, "name": self.users[user_id].name, "unread": unread})
        commands = [
            {"id": c.id, "outcome": c.outcome, "reason": c.reason}
            for c in self.commands.values()
        ]
        global_store = (
            self.global_controller.store.counts() if self.global_controller else {}
        )
        return {
            "run": {
                "scenario": self.meta.get("scenario", ""),
                "seed": self.meta.get("seed", 0),
                "mode": self.meta.get("mode", ""),
                "horizon": self.meta.get("horizon", 0),
                "tick": tick,
            },
            "sources": {
                "devices": "edge",
                "environment": "simulation",
                "rules": "engines",
                "loops": "edge",
                "plans": "broker",
                "users": "app",
                "commands": "app",
                "globalStore": "cloud",
                "messages": "broker",
            },
            "devices": devices,
            "environment": environment,
            "rules": rules,
            "loops": loops,
            "plans": list(self._plans),
            "users": users,
            "commands": commands,
            "globalStore": dict(sorted(global_store.items())),
            "messages": dict(sorted(self._messages.items())),
        }

    def snapshot(self) -> dict:
        """Deep copy of the latest tick-boundary snapshot (never mutates state)."""
        return copy.deepcopy(self.latest_snapshot)
