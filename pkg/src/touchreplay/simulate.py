"""Software touchscreen: replays a script and re-derives the action trace.

This closes the loop for end-to-end checks without hardware.  Pointer
position between events is linearly interpolated, sampled on the same 30 Hz
grid the generator used (so resampling is the identity on generated
scripts), and each contact is re-classified with the same spatial and span
thresholds as the action engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import SimulationError
from .types import (Action, DOWN, FRAME_MS, GESTURE, LONG_TAP, MOVE,
                    PointerEvent, ReplayScript, TAP, UP)

SPATIAL_RADIUS_PX = 20.0
TAP_MAX_FRAMES = 20


@dataclass
class DerivedAction:
    kind: str
    start_ms: float
    end_ms: float
    pointer: int
    path: list[tuple[float, float, float]]  # (x, y, t_ms) per sampled frame


@dataclass
class SimTrace:
    samples: dict[int, list[tuple[int, float, float]]] = field(default_factory=dict)
    actions: list[DerivedAction] = field(default_factory=list)


@dataclass
class _Contact:
    pointer: int
    events: list[PointerEvent]

    @property
    def t0(self) -> float:
        return self.events[0].t_ms

    @property
    def t1(self) -> float:
        return self.events[-1].t_ms

    @property
    def has_moves(self) -> bool:
        return any(e.kind == MOVE for e in self.events)

    def position_at(self, t: float) -> tuple[float, float]:
        evs = self.events
        if t <= evs[0].t_ms:
            return evs[0].x, evs[0].y
        for a, b in zip(evs, evs[1:]):
            if t <= b.t_ms:
                if b.t_ms <= a.t_ms:
                    return b.x, b.y
                u = (t - a.t_ms) / (b.t_ms - a.t_ms)
                return a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)
        return evs[-1].x, evs[-1].y


def _contacts(script: ReplayScript) -> list[_Contact]:
    per_pointer: dict[int, list[PointerEvent]] = {}
    for ev in script.events:
        per_pointer.setdefault(ev.pointer, []).append(ev)
    contacts = []
    for pointer, evs in per_pointer.items():
        open_events: list[PointerEvent] | None = None
        last_t = None
        for ev in evs:
            if last_t is not None and ev.t_ms < last_t - 1e-9:
                raise SimulationError(
                    f"pointer {pointer}: timestamps go backwards")
            last_t = ev.t_ms
            if ev.kind == DOWN:
                if open_events is not None:
                    raise SimulationError(
                        f"pointer {pointer}: press while already touching")
                open_events = [ev]
            elif ev.kind == MOVE:
                if open_events is None:
                    raise SimulationError(
                        f"pointer {pointer}: move without touching")
                open_events.append(ev)
            elif ev.kind == UP:
                if open_events is None:
                    raise SimulationError(
                        f"pointer {pointer}: release without touching")
                open_events.append(ev)
                contacts.append(_Contact(pointer, open_events))
                open_events = None
        if open_events is not None:
            raise SimulationError(f"pointer {pointer}: touch never released")
    contacts.sort(key=lambda c: (c.t0, c.pointer))
    return contacts


def simulate(script: ReplayScript,
             spatial_radius: float = SPATIAL_RADIUS_PX,
             tap_max_frames: int = TAP_MAX_FRAMES) -> SimTrace:
    """Replay a script against the virtual screen and derive its actions."""
    trace = SimTrace()
    for contact in _contacts(script):
        duration_frames = int(round((contact.t1 - contact.t0) / FRAME_MS))
        # A held point occupies its span of frames; a moving contact also
        # owns the frame of its final sample.
        n_samples = duration_frames + (1 if contact.has_moves else 0)
        n_samples = max(1, n_samples)
        k0 = int(round(contact.t0 / FRAME_MS))
        path = []
        pointer_samples = trace.samples.setdefault(contact.pointer, [])
        for j in range(n_samples):
            t = contact.t0 + j * FRAME_MS
            x, y = contact.position_at(t)
            path.append((x, y, (k0 + j) * FRAME_MS))
            pointer_samples.append((k0 + j, x, y))

        first = path[0]
        stationary = all(math.hypot(x - first[0], y - first[1]) <= spatial_radius
                         for x, y, _ in path)
        if not stationary:
            kind = GESTURE
        elif len(path) <= tap_max_frames:
            kind = TAP
        else:
            kind = LONG_TAP
        trace.actions.append(DerivedAction(
            kind=kind, start_ms=contact.t0, end_ms=contact.t1,
            pointer=contact.pointer, path=path))
    return trace


def derived_actions(trace: SimTrace) -> list[Action]:
    """The trace's actions in the shared action-trace shape."""
    return [Action(kind=a.kind, trajectory=list(a.path), source_group=i)
            for i, a in enumerate(trace.actions)]
