"""Windowed statistics over telemetry series.

All operators are exact, documented arithmetic so independent recomputation
matches to float precision: mean is a plain sum divided by count, stddev is
the population form (divide by k, not k-1), and EWMA uses s0 = x0,
s_i = alpha*x_i + (1-alpha)*s_{i-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class AnalyticsError(Exception):
    pass


class EmptyWindow(AnalyticsError):
    pass


class BadAlpha(AnalyticsError):
    pass


@dataclass
class SeriesWindow:
    """Ring of (tick, value) samples for one (device, property) series."""

    key: tuple[str, str]
    capacity: int = 64
    entries: list[tuple[int, float]] = field(default_factory=list)

    def push(self, tick: int, value: float) -> None:
        self.entries.append((tick, value))
        if len(self.entries) > self.capacity:
            del self.entries[0 : len(self.entries) - self.capacity]

    def __len__(self) -> int:
        return len(self.entries)

    def values(self, n: int | None = None) -> list[float]:
        """Most recent min(n, len) values, oldest first."""
        vals = [v for _, v in self.entries]
        if n is None or n >= len(vals):
            return vals
        return vals[len(vals) - n :]

    def latest(self) -> float:
        if not self.entries:
            raise EmptyWindow(str(self.key))
        return self.entries[-1][1]


def window_stats(window: SeriesWindow, n: int | None = None) -> dict[str, float]:
    vals = window.values(n)
    if not vals:
        raise EmptyWindow(str(window.key))
    k = len(vals)
    mean = sum(vals) / k
    var = sum((v - mean) ** 2 for v in vals) / k
    return {
        "mean": mean,
        "min": min(vals),
        "max": max(vals),
        "stddev": math.sqrt(var),
    }


def ewma(window: SeriesWindow, alpha: float, n: int | None = None) -> float:
    if not 0.0 < alpha <= 1.0:
        raise BadAlpha(str(alpha))
    vals = window.values(n)
    if not vals:
        raise EmptyWindow(str(window.key))
    s = vals[0]
    for v in vals[1:]:
        s = alpha * v + (1.0 - alpha) * s
    return s


def zscore_values(values: list[float], new_value: float) -> float | None:
    """|new - mean| / stddev over values (which exclude new_value).

    Returns None with fewer than 5 samples or zero spread.
    """
    k = len(values)
    if k < 5:
        return None
    mean = sum(values) / k
    std = math.sqrt(sum((v - mean) ** 2 for v in values) / k)
    if std == 0.0:
        return None
    return abs(new_value - mean) / std


def zscore(window: SeriesWindow, new_value: float, n: int | None = None) -> float | None:
    """zscore_values over the window's most recent min(n, len) samples."""
    return zscore_values(window.values(n), new_value)
