"""Injectable time sources and local-time schedule arithmetic.

All engines take their notion of "now" from a Clock so that simulations can
drive three-hour escalations and nightly jobs instantly and exactly.
"""
from __future__ import annotations

from datetime import datetime, time, timedelta, timezone
from typing import Iterable, Protocol
from zoneinfo import ZoneInfo


class Clock(Protocol):
    def now(self) -> datetime: ...


class RealClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class VirtualClock:
    """Manually advanced clock for simulation; never moves backwards."""

    def __init__(self, start: datetime):
        if start.tzinfo is None:
            raise ValueError("virtual clock start must be timezone-aware")
        self._now = start

    def now(self) -> datetime:
        return self._now

    def set(self, instant: datetime) -> None:
        if instant < self._now:
            raise ValueError(f"clock cannot move backwards: {instant} < {self._now}")
        self._now = instant

    def advance(self, delta: timedelta) -> datetime:
        self.set(self._now + delta)
        return self._now


def slot_instants_between(
    after: datetime,
    until: datetime,
    local_times: Iterable[time],
    tz: ZoneInfo,
) -> list[datetime]:
    """All wall-clock firings of `local_times` with after < instant <= until.

    Returned as UTC instants in chronological order.
    """
    if until <= after:
        return []
    instants: list[datetime] = []
    day = after.astimezone(tz).date() - timedelta(days=1)
    last_day = until.astimezone(tz).date() + timedelta(days=1)
    while day <= last_day:
        for t in local_times:
            local = datetime.combine(day, t, tzinfo=tz)
            instant = local.astimezone(timezone.utc)
            if after < instant <= until:
                instants.append(instant)
        day += timedelta(days=1)
    instants.sort()
    return instants


def next_slot_instant(
    after: datetime, local_times: Iterable[time], tz: ZoneInfo
) -> datetime:
    """Earliest firing of `local_times` strictly after `after` (UTC)."""
    day = after.astimezone(tz).date()
    for offset in range(3):
        candidates = [
            datetime.combine(day + timedelta(days=offset), t, tzinfo=tz).astimezone(
                timezone.utc
            )
            for t in local_times
        ]
        future = [c for c in candidates if c > after]
        if future:
            return min(future)
    raise RuntimeError("no slot found within 3 days")  # pragma: no cover
