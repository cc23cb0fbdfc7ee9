"""Shutter and rotator scheduling under the bench's mechanical limits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

SHUTTER_MIN_ON = "shutter_min_on"
SHUTTER_MAX_RATE = "shutter_max_rate"
ROTATOR_MAX_SPEED = "rotator_max_speed"

# homed position of every motorized mount at power-up
HOME_ANGLE = 0.0


class ConstraintViolation(ValueError):
    """A schedule breaks one of the named mechanical limits."""

    def __init__(self, limit: str, message: str):
        super().__init__(f"{limit}: {message}")
        self.limit = limit


@dataclass(frozen=True)
class Limits:
    shutter_max_rate: float = 25.0  # Hz
    shutter_min_on: float = 10.0  # ms
    rotator_max_speed: float = 25.0  # deg/s

    @classmethod
    def from_config(cls, config) -> Limits:
        return cls(config.shutter_max_rate, config.shutter_min_on, config.rotator_max_speed)

    @property
    def shutter_min_period(self) -> float:
        return 1000.0 / self.shutter_max_rate


@dataclass(frozen=True)
class TimingEvent:
    event_type: str
    t_start_ms: float
    t_end_ms: float
    detail: str = ""


@dataclass
class TimingReport:
    n_bits: int
    events: list = field(default_factory=list)
    duration_ms: float = 0.0

    @property
    def total_ms(self) -> float:
        return max(self.duration_ms, max((e.t_end_ms for e in self.events), default=0.0))

    @property
    def slot_times(self) -> list:
        return [(e.t_start_ms, e.t_end_ms) for e in self.events if e.event_type.startswith("shutter")]

    @property
    def rotator_times(self) -> list:
        return [e.t_end_ms - e.t_start_ms for e in self.events if e.event_type == "rotator"]

    @property
    def bits_per_second(self) -> float:
        total = self.total_ms
        return 0.0 if total <= 0 else self.n_bits / (total / 1000.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event_type", "t_start_ms", "t_end_ms", "detail"])
        for e in self.events:
            w.writerow([e.event_type, f"{e.t_start_ms:.3f}", f"{e.t_end_ms:.3f}", e.detail])
        return buf.getvalue()


def shortest_arc(from_deg: float, to_deg: float) -> float:
    """Signed rotation in (-180, 180] taking ``from_deg`` to ``to_deg``."""
    d = math.fmod(to_deg - from_deg, 360.0)
    if d > 180.0:
        d -= 360.0
    elif d <= -180.0:
        d += 360.0
    return d


def rotator_travel_ms(from_deg: float, to_deg: float, speed: float = 25.0) -> float:
    return abs(shortest_arc(from_deg, to_deg)) / speed * 1000.0


def check_rotator_move(from_deg: float, to_deg: float, duration_ms: float, limits: Limits = Limits()) -> None:
    needed = rotator_travel_ms(from_deg, to_deg, limits.rotator_max_speed)
    if needed > duration_ms + 1e-9:
        raise ConstraintViolation(
            ROTATOR_MAX_SPEED,
            f"moving {from_deg:g} -> {to_deg:g} deg in {duration_ms:g} ms needs "
            f"{abs(shortest_arc(from_deg, to_deg)) / (duration_ms / 1000.0) if duration_ms > 0 else math.inf:.3g} deg/s "
            f"(limit {limits.rotator_max_speed:g} deg/s)",
        )


def _check_slot(slot_ms: float, on_ms: float, limits: Limits) -> None:
    if not slot_ms > 0:
        raise ValueError("slot duration must be positive")
    if on_ms > slot_ms:
        raise ValueError("shutter on time cannot exceed the slot duration")
    if on_ms < limits.shutter_min_on:
        raise ConstraintViolation(
            SHUTTER_MIN_ON,
            f"shutter on time {on_ms:g} ms is below the minimum on time of {limits.shutter_min_on:g} ms",
        )


def _check_rate(events: Sequence[TimingEvent], limits: Limits) -> None:
    last: dict[str, float] = {}
    period = limits.shutter_min_period
    for e in events:
        if not e.event_type.startswith("shutter"):
            continue
        prev = last.get(e.event_type)
        if prev is not None and e.t_start_ms - prev < period - 1e-9:
            raise ConstraintViolation(
                SHUTTER_MAX_RATE,
                f"{e.event_type} reopens after {e.t_start_ms - prev:g} ms at t={e.t_start_ms:g} ms; "
                f"maximum rate {limits.shutter_max_rate:g} Hz needs {period:g} ms",
            )
        last[e.event_type] = e.t_start_ms


def _shutter_event(bit: int, t: float, on_ms: float, detail: str) -> TimingEvent:
    # upper shutter passes "1", lower shutter passes "0"
    return TimingEvent(f"shutter{bit}", t, t + on_ms, detail)


def shutter_plan(
    bits: Sequence[int],
    slot_ms: float,
    limits: Limits = Limits(),
    on_ms: Optional[float] = None,
) -> TimingReport:
    """One slot per bit; the shutter for that bit opens at the slot start."""
    on_ms = slot_ms if on_ms is None else on_ms
    _check_slot(slot_ms, on_ms, limits)
    report = TimingReport(len(bits))
    for i, b in enumerate(bits):
        report.events.append(_shutter_event(int(b), i * slot_ms, on_ms, f"bit {i}"))
    report.duration_ms = len(bits) * slot_ms
    _check_rate(report.events, limits)
    return report


def schedule_session(
    bits: Sequence[int],
    block_angles: Sequence[tuple],
    slot_ms: float,
    limits: Limits = Limits(),
    block_size: int = 8,
    rekey_gap_ms: Optional[float] = None,
    on_ms: Optional[float] = None,
    start_angles: tuple = (HOME_ANGLE, HOME_ANGLE),
) -> TimingReport:
    """Interleave rotator moves before each block with the block's shutter slots.

    ``block_angles[k]`` is the (Alice, Bob) plate angle pair for block k. Both
    pairs of plates move together, so a rekey takes as long as the longer
    shortest-arc move. With ``rekey_gap_ms`` set, every move has to fit in
    that gap; otherwise the schedule waits for the rotators.
    """
    on_ms = slot_ms if on_ms is None else on_ms
    _check_slot(slot_ms, on_ms, limits)
    n_blocks = -(-len(bits) // block_size)
    if len(block_angles) < n_blocks:
        raise ValueError(f"need {n_blocks} block angle pairs, got {len(block_angles)}")
    report = TimingReport(len(bits))
    t = 0.0
    prev = tuple(start_angles)
    for k in range(n_blocks):
        target = tuple(block_angles[k])
        travel = max(rotator_travel_ms(p, q, limits.rotator_max_speed) for p, q in zip(prev, target))
        if rekey_gap_ms is not None:
            for p, q in zip(prev, target):
                check_rotator_move(p, q, rekey_gap_ms, limits)
            travel = rekey_gap_ms
        if travel > 0:
            detail = f"block {k}: alice {prev[0]:.3f}->{target[0]:.3f} deg, bob {prev[1]:.3f}->{target[1]:.3f} deg"
            report.events.append(TimingEvent("rotator", t, t + travel, detail))
            t += travel
        prev = target
        for j, b in enumerate(bits[k * block_size : (k + 1) * block_size]):
            report.events.append(_shutter_event(int(b), t, on_ms, f"block {k} bit {j}"))
            t += slot_ms
    report.duration_ms = t
    _check_rate(report.events, limits)
    return report
