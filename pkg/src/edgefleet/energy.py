"""Duty-cycle energy accounting.

Charges are integrated in exact arithmetic: currents become Fractions, all
durations are integer milliseconds, and a charge is a Fraction in mA*ms
(converted to mA*s only at the reporting surface). Sleep current fills
whatever part of a window is not covered by wake windows; sensor samples and
radio transmissions are drawn *inside* a wake window, so their charge is
additive on top of the MCU-active charge without displacing sleep again.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .model import EnergyProfile, MS_PER_S, ms_from_s, s_from_ms


class EnergyEventKind(str, Enum):
    wake_window = "wake_window"
    sensor_sample = "sensor_sample"
    radio_tx = "radio_tx"


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyEvent:
    device_id: str
    timestamp_ms: int
    kind: EnergyEventKind
    duration_ms: int
    current_mA: float
    attributed_service: Optional[str] = None

    @property
    def timestamp_s(self) -> float:
        return s_from_ms(self.timestamp_ms)

    @property
    def duration_s(self) -> float:
        return s_from_ms(self.duration_ms)

    def charge_mA_ms(self) -> Fraction:
        return Fraction(self.current_mA) * self.duration_ms


def check_wake_nesting(events: Sequence[EnergyEvent]) -> None:
    """Events sharing a timestamp form one wake; nested activity must fit it."""
    by_time: dict[int, list[EnergyEvent]] = {}
    for ev in events:
        by_time.setdefault(ev.timestamp_ms, []).append(ev)
    for t, group in by_time.items():
        wakes = [e for e in group if e.kind is EnergyEventKind.wake_window]
        nested = sum(e.duration_ms for e in group if e.kind is not EnergyEventKind.wake_window)
        if wakes and nested > sum(e.duration_ms for e in wakes):
            raise EnergyError(f"events at t={s_from_ms(t)}s exceed their wake window")


def interval_charge(
    profile: EnergyProfile, events: Iterable[EnergyEvent], interval_s: float
) -> Fraction:
    """Exact charge over one interval, in mA*s.

    Sleep covers the interval minus the summed wake-window durations; every
    event contributes current*duration on top. Wake windows that together
    exceed the interval are rejected.
    """
    interval_ms = ms_from_s(interval_s)
    if interval_ms <= 0:
        raise EnergyError("interval must be positive")
    active_ms = 0
    event_charge = Fraction(0)
    for ev in events:
        if ev.duration_ms < 0:
            raise EnergyError("negative event duration")
        if ev.kind is EnergyEventKind.wake_window:
            active_ms += ev.duration_ms
        event_charge += ev.charge_mA_ms()
    if active_ms > interval_ms:
        raise EnergyError(
            f"wake windows cover {s_from_ms(active_ms)}s, more than the {interval_s}s interval"
        )
    sleep_charge = Fraction(profile.sleep_current_mA) * (interval_ms - active_ms)
    return (sleep_charge + event_charge) / MS_PER_S


@dataclass(frozen=True)
class WindowCharge:
    start_ms: int
    end_ms: int
    charge_mA_s: Fraction

    @property
    def span_ms(self) -> int:
        return self.end_ms - self.start_ms

    def avg_current_mA(self) -> Fraction:
        return self.charge_mA_s * MS_PER_S / self.span_ms


@dataclass
class EnergyTrace:
    """Ordered energy events for one device plus windowed charge derivation.

    Windows are the half-open-left buckets ((k-1)*W, k*W]; an event belongs to
    the window containing its timestamp. The final window is clipped to the
    run duration when W does not divide it.
    """

    device_id: str
    profile: EnergyProfile
    window_ms: int
    duration_ms: int
    events: list[EnergyEvent] = field(default_factory=list)

    def add(self, event: EnergyEvent) -> None:
        if event.device_id != self.device_id:
            raise EnergyError("event belongs to another device")
        if self.events and event.timestamp_ms < self.events[-1].timestamp_ms:
            raise EnergyError("events must be appended in timestamp order")
        self.events.append(event)

    @property
    def window_count(self) -> int:
        return -(-self.duration_ms // self.window_ms)

    def window_bounds(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.window_count:
            raise EnergyError(f"window index {index} out of range")
        start = index * self.window_ms
        return start, min(start + self.window_ms, self.duration_ms)

    def _window_index(self, timestamp_ms: int) -> int:
        if timestamp_ms <= 0:
            return 0
        return (timestamp_ms - 1) // self.window_ms

    def window_charge(self, index: int) -> WindowCharge:
        start, end = self.window_bounds(index)
        active_ms = 0
        event_charge = Fraction(0)
        for ev in self.events:
            if self._window_index(ev.timestamp_ms) != index:
                continue
            if ev.kind is EnergyEventKind.wake_window:
                active_ms += ev.duration_ms
            event_charge += ev.charge_mA_ms()
        if active_ms > end - start:
            raise EnergyError(f"wake windows exceed window {index}")
        sleep = Fraction(self.profile.sleep_current_mA) * (end - start - active_ms)
        return WindowCharge(start, end, (sleep + event_charge) / MS_PER_S)

    def window_charges(self) -> list[WindowCharge]:
        return [self.window_charge(i) for i in range(self.window_count)]

    def total_charge_mA_s(self) -> Fraction:
        return sum((w.charge_mA_s for w in self.window_charges()), Fraction(0))

    def charge_between(self, from_ms: int, to_ms: int) -> Fraction:
        if from_ms >= to_ms:
            raise EnergyError("empty window")
        if from_ms < 0 or to_ms > self.duration_ms:
            raise EnergyError("window outside the run")
        for edge in (from_ms, to_ms):
            if edge % self.window_ms != 0 and edge != self.duration_ms:
                raise EnergyError(
                    f"boundary {s_from_ms(edge)}s is not aligned to the {s_from_ms(self.window_ms)}s window grid"
                )
        total = Fraction(0)
        for i in range(self.window_count):
            start, end = self.window_bounds(i)
            if start >= from_ms and end <= to_ms:
                total += self.window_charge(i).charge_mA_s
        return total


def average_current(trace: EnergyTrace, from_s: float, to_s: float) -> Fraction:
    """Average current in mA over [from_s, to_s]; bounds must sit on the
    trace's window grid."""
    from_ms, to_ms = ms_from_s(from_s), ms_from_s(to_s)
    charge = trace.charge_between(from_ms, to_ms)
    return charge * MS_PER_S / (to_ms - from_ms)
