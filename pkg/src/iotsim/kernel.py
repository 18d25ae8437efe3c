"""Deterministic discrete-event kernel: logical clock, event queue, log, RNG.

Time is a logical tick counter with no wall-clock meaning. Within a tick the
kernel first drains externally submitted commands, then dispatches scheduled
events in insertion order, then runs end-of-tick hooks in registration order.
Every dispatched event and every explicitly recorded entry lands in an
append-only log whose JSONL serialization is byte-stable across runs.

Randomness is exposed as named streams. A stream's state is derived from the
global seed and the stream id via SHA-256, and advanced with the splitmix64
generator, so the same (seed, stream id, draw index) yields the same value on
any platform.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Callable


class KernelError(Exception):
    pass


class SchedulingInPast(KernelError):
    """Raised when an event is scheduled at an already-closed tick."""


_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


class RngStream:
    """Deterministic 64-bit generator bound to a (seed, stream id) pair."""

    def __init__(self, seed: int, stream_id: str):
        self.stream_id = stream_id
        digest = hashlib.sha256(
            seed.to_bytes(8, "big", signed=False) + stream_id.encode("utf-8")
        ).digest()
        self._state = int.from_bytes(digest[:8], "big")
        self.draws = 0

    def next_u64(self) -> int:
        self._state, out = _splitmix64(self._state)
        self.draws += 1
        return out

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


@dataclass(order=True)
class ScheduledEvent:
    at: int
    seq: int
    target: str = field(compare=False)
    kind: str = field(compare=False)
    body: dict[str, Any] = field(compare=False, default_factory=dict)


@dataclass
class LogEntry:
    tick: int
    seq: int
    target: str
    kind: str
    body: dict[str, Any]

    def to_json(self) -> str:
        # Key order is fixed; body keys keep construction order.
        return json.dumps(
            {
                "tick": self.tick,
                "seq": self.seq,
                "target": self.target,
                "kind": self.kind,
                "body": self.body,
            },
            separators=(",", ":"),
        )


class EventLog:
    """Append-only record of everything observable in a run."""

    def __init__(self):
        self.entries: list[LogEntry] = []
        self._tick_seq: dict[int, int] = {}

    def append(self, tick: int, target: str, kind: str, body: dict[str, Any]) -> LogEntry:
        seq = self._tick_seq.get(tick, 0)
        self._tick_seq[tick] = seq + 1
        entry = LogEntry(tick, seq, target, kind, body)
        self.entries.append(entry)
        return entry

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


Handler = Callable[[ScheduledEvent], None]


class Kernel:
    """Single-threaded deterministic scheduler.

    Components register a handler under their component id and receive the
    events addressed to them. External threads (the HTTP service layer) must
    not touch simulation state directly; they enqueue closures via submit()
    which the kernel drains at the next tick boundary.

    A tick is closed once processed: events may be scheduled at the tick
    currently being processed (they run later the same tick, in insertion
    order), but not at closed ticks, and not at the current tick from within
    an end-of-tick hook.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._next = 0  # first unprocessed tick
        self._current: int | None = None  # tick being processed, if any
        self._queue: list[ScheduledEvent] = []
        self._tick_counters: dict[int, int] = {}
        self._handlers: dict[str, Handler] = {}
        self._hooks: list[tuple[str, Callable[[int], None]]] = []
        self._streams: dict[str, RngStream] = {}
        self._commands: list[Callable[[], None]] = []
        self._commands_lock = threading.Lock()
        self._in_hooks = False
        self.log = EventLog()

    # -- time ---------------------------------------------------------------

    def now(self) -> int:
        if self._current is not None:
            return self._current
        return max(self._next - 1, 0)

    # -- randomness ---------------------------------------------------------

    def rng(self, stream_id: str) -> RngStream:
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = RngStream(self.seed, stream_id)
            self._streams[stream_id] = stream
        return stream

    def rng_next(self, stream_id: str) -> int:
        return self.rng(stream_id).next_u64()

    # -- wiring -------------------------------------------------------------

    def register(self, component_id: str, handler: Handler) -> None:
        if component_id in self._handlers:
            raise KernelError(f"component already registered: {component_id}")
        self._handlers[component_id] = handler

    def add_tick_hook(self, name: str, fn: Callable[[int], None]) -> None:
        """Hooks run after all events of a tick, in registration order."""
        self._hooks.append((name, fn))

    # -- scheduling ---------------------------------------------------------

    def schedule(self, at: int, target: str, kind: str, body: dict[str, Any] | None = None) -> None:
        floor = self._current if self._current is not None else self._next
        if at < floor or (self._in_hooks and at == floor):
            raise SchedulingInPast(f"cannot schedule at tick {at} (now={self.now()})")
        seq = self._tick_counters.get(at, 0)
        self._tick_counters[at] = seq + 1
        heapq.heappush(self._queue, ScheduledEvent(at, seq, target, kind, body or {}))

    def record(self, target: str, kind: str, body: dict[str, Any]) -> LogEntry:
        """Append an informational entry to the log at the current tick."""
        return self.log.append(self.now(), target, kind, body)

    def submit(self, command: Callable[[], None]) -> None:
        """Thread-safe: queue a closure to run at the next tick boundary."""
        with self._commands_lock:
            self._commands.append(command)

    # -- execution ----------------------------------------------------------

    def _drain_commands(self) -> None:
        with self._commands_lock:
            commands, self._commands = self._commands, []
        for command in commands:
            command()

    def _dispatch(self, event: ScheduledEvent) -> None:
        self.log.append(event.at, event.target, event.kind, event.body)
        handler = self._handlers.get(event.target)
        if handler is not None:
            handler(event)

    def step(self) -> int:
        """Process the next tick fully; returns the tick that was processed."""
        tick = self._next
        self._current = tick
        try:
            self._drain_commands()
            while self._queue and self._queue[0].at == tick:
                self._dispatch(heapq.heappop(self._queue))
            self._tick_counters.pop(tick, None)
            self._in_hooks = True
            try:
                for _, hook in self._hooks:
                    hook(tick)
            finally:
                self._in_hooks = False
        finally:
            self._current = None
        self._next = tick + 1
        return tick

    def run(self, until: int) -> EventLog:
        """Process every tick ≤ until; afterwards now() reports until."""
        while self._next <= until:
            self.step()
        return self.log
