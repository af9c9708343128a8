"""Replay-script synthesis and the line-based low-level text format.

Timing model: the recording is normalized to 30 fps, so consecutive
trajectory samples sit one frame period apart and an action that starts at
frame ``f`` begins replaying at ``f * FRAME_MS``.  Taps and long-taps hold
one coordinate for their on-screen span; gestures replay every sampled
point.  Overlapping actions are carried on distinct pointer slots so they
replay concurrently.

The text format writes one kernel-style event per line::

    <t_sec.usec> <device> <type> <code> <value>

with type/code/value in hex, following the multi-touch protocol (slot,
tracking id, position axes, sync).  A leading comment line carries the
screen geometry so a script round-trips without side information.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import GenerationError, ScriptParseError
from .types import (Action, ActionSpan, DOWN, DeviceProfile, FRAME_MS,
                    GESTURE, LONG_TAP, MOVE, PointerEvent, ReplayScript, TAP,
                    UP, VideoMeta)

EV_SYN = 0x0000
EV_ABS = 0x0003
SYN_REPORT = 0x0000
ABS_MT_SLOT = 0x002F
ABS_MT_TRACKING_ID = 0x0039
ABS_MT_POSITION_X = 0x0035
ABS_MT_POSITION_Y = 0x0036
ABS_MT_PRESSURE = 0x003A
TRACKING_RELEASE = 0xFFFFFFFF

NEXUS5_LIKE = DeviceProfile(
    name="nexus5-like", device_path="/dev/input/event2",
    abs_x_max=1079, abs_y_max=1919, pressure_value=50)
NEXUS6P_LIKE = DeviceProfile(
    name="nexus6p-like", device_path="/dev/input/event3",
    abs_x_max=1439, abs_y_max=2559, pressure_value=50)
PROFILES = {p.name: p for p in (NEXUS5_LIKE, NEXUS6P_LIKE)}

_HEADER_RE = re.compile(
    r"^# touchreplay-script v1 width=(\d+) height=(\d+)")
_EVENT_RE = re.compile(
    r"^(\d+\.\d{6}) (\S+) ([0-9a-f]{4}) ([0-9a-f]{4}) ([0-9a-f]{8})$")

# At equal timestamps a release sorts before the next press so a pointer
# slot can be reused at the same instant.
_KIND_ORDER = {UP: 0, MOVE: 1, DOWN: 2}


def generate(actions: list[Action], meta: VideoMeta) -> ReplayScript:
    """Turn an ordered action list into a timed multi-pointer script."""
    width, height = meta.width, meta.height
    tagged: list[tuple[PointerEvent, int]] = []
    slot_free_at: list[float] = []
    spans_kind: list[tuple[str, int]] = []

    for idx, action in enumerate(actions):
        for x, y, _ in action.trajectory:
            if not (0 <= x < width and 0 <= y < height):
                raise GenerationError(
                    f"action {idx} ({action.kind}) has point ({x:.1f}, {y:.1f}) "
                    f"outside the {width}x{height} device")
        # all event times sit exactly on the frame grid so coincident
        # events of back-to-back actions compare equal
        f0 = action.start_frame
        t0 = f0 * FRAME_MS
        if action.kind in (TAP, LONG_TAP):
            x, y, _ = action.trajectory[0]
            t1 = (f0 + action.span) * FRAME_MS
            events = [PointerEvent(t0, DOWN, x, y),
                      PointerEvent(t1, UP, x, y)]
        elif action.kind == GESTURE:
            pts = action.trajectory
            events = [PointerEvent(t0, DOWN, pts[0][0], pts[0][1])]
            for i, (x, y, _) in enumerate(pts[1:-1], start=1):
                events.append(PointerEvent((f0 + i) * FRAME_MS, MOVE, x, y))
            t1 = (f0 + len(pts) - 1) * FRAME_MS
            events.append(PointerEvent(t1, UP, pts[-1][0], pts[-1][1]))
        else:
            raise GenerationError(f"action {idx}: unknown kind {action.kind!r}")

        slot = None
        for s, free_at in enumerate(slot_free_at):
            if free_at <= t0 + 1e-9:
                slot = s
                break
        if slot is None:
            slot = len(slot_free_at)
            slot_free_at.append(0.0)
        slot_free_at[slot] = t1
        tagged.extend((PointerEvent(e.t_ms, e.kind, e.x, e.y, slot), idx)
                      for e in events)
        spans_kind.append((action.kind, slot))

    order = sorted(range(len(tagged)),
                   key=lambda i: (tagged[i][0].t_ms,
                                  _KIND_ORDER[tagged[i][0].kind],
                                  tagged[i][0].pointer, i))
    events = [tagged[i][0] for i in order]
    first_last: dict[int, list[int]] = {}
    for pos, i in enumerate(order):
        _, action_idx = tagged[i]
        lo_hi = first_last.setdefault(action_idx, [pos, pos])
        lo_hi[0] = min(lo_hi[0], pos)
        lo_hi[1] = max(lo_hi[1], pos)
    spans = [ActionSpan(kind, slot, *first_last[i])
             for i, (kind, slot) in enumerate(spans_kind)]
    return ReplayScript(width=width, height=height, events=events,
                        actions=spans)


def _scale(value: float, px_range: int, axis_max: int) -> int:
    if px_range <= 1:
        return 0
    return int(round(value * axis_max / (px_range - 1)))


def _unscale(raw: int, px_range: int, axis_max: int) -> float:
    if axis_max <= 0:
        return 0.0
    return raw * (px_range - 1) / axis_max


def export_sendevent(script: ReplayScript,
                     profile: DeviceProfile = NEXUS5_LIKE) -> str:
    """Render a script in the low-level text format, byte-stable."""
    lines = [f"# touchreplay-script v1 width={script.width} "
             f"height={script.height} device={profile.device_path}"]
    lines.extend(profile.prologue)

    def emit(t: float, etype: int, code: int, value: int):
        lines.append(f"{t / 1000.0:.6f} {profile.device_path} "
                     f"{etype:04x} {code:04x} {value & 0xFFFFFFFF:08x}")

    tracking = 0
    slot_tracking: dict[int, int] = {}
    for ev in script.events:
        raw_x = _scale(ev.x, script.width, profile.abs_x_max)
        raw_y = _scale(ev.y, script.height, profile.abs_y_max)
        if not (0 <= raw_x <= profile.abs_x_max
                and 0 <= raw_y <= profile.abs_y_max):
            raise GenerationError(
                f"scaled coordinate ({raw_x}, {raw_y}) exceeds axis range "
                f"({profile.abs_x_max}, {profile.abs_y_max})")
        emit(ev.t_ms, EV_ABS, ABS_MT_SLOT, ev.pointer)
        if ev.kind == DOWN:
            emit(ev.t_ms, EV_ABS, ABS_MT_TRACKING_ID, tracking)
            slot_tracking[ev.pointer] = tracking
            tracking += 1
            emit(ev.t_ms, EV_ABS, ABS_MT_POSITION_X, raw_x)
            emit(ev.t_ms, EV_ABS, ABS_MT_POSITION_Y, raw_y)
            emit(ev.t_ms, EV_ABS, ABS_MT_PRESSURE, profile.pressure_value)
        elif ev.kind == MOVE:
            emit(ev.t_ms, EV_ABS, ABS_MT_POSITION_X, raw_x)
            emit(ev.t_ms, EV_ABS, ABS_MT_POSITION_Y, raw_y)
        elif ev.kind == UP:
            # release carries the final position so a gesture's last sample
            # survives the file round trip
            emit(ev.t_ms, EV_ABS, ABS_MT_POSITION_X, raw_x)
            emit(ev.t_ms, EV_ABS, ABS_MT_POSITION_Y, raw_y)
            emit(ev.t_ms, EV_ABS, ABS_MT_TRACKING_ID, TRACKING_RELEASE)
        emit(ev.t_ms, EV_SYN, SYN_REPORT, 0)
    lines.extend(profile.epilogue)
    return "\n".join(lines) + "\n"


def save_script(script: ReplayScript, path: str | Path,
                profile: DeviceProfile = NEXUS5_LIKE) -> None:
    Path(path).write_text(export_sendevent(script, profile))


@dataclass
class _SlotState:
    active: bool = False
    x: float = 0.0
    y: float = 0.0
    moves: int = 0
    down_t: float = 0.0
    first_event: int = -1


def parse_script(path: str | Path, profile: DeviceProfile = NEXUS5_LIKE,
                 tap_max_frames: int = 20) -> ReplayScript:
    """Parse the text format back into a script.

    Action spans are reconstructed structurally: a contact with position
    updates is a gesture, otherwise its duration in frame periods separates
    taps from long-taps.
    """
    text = Path(path).read_text()
    skip = set(profile.prologue) | set(profile.epilogue)
    width = height = None
    events: list[PointerEvent] = []
    spans: list[ActionSpan] = []
    slots: dict[int, _SlotState] = {}

    current_slot = 0
    packet: dict = {}
    last_t = None

    def fail(msg: str, line_no: int):
        raise ScriptParseError(msg, line_no)

    def flush_packet(t: float, line_no: int):
        if not packet:
            return
        slot = packet.get("slot", current_slot)
        state = slots.setdefault(slot, _SlotState())
        tracking = packet.get("tracking")
        has_pos = "x" in packet or "y" in packet
        if tracking == -1:
            if not state.active:
                fail("touch release without a preceding press", line_no)
            state.x = packet.get("x", state.x)
            state.y = packet.get("y", state.y)
            events.append(PointerEvent(t, UP, state.x, state.y, slot))
            dur = t - state.down_t
            if state.moves > 0:
                kind = GESTURE
            else:
                kind = TAP if round(dur / FRAME_MS) <= tap_max_frames else LONG_TAP
            spans.append(ActionSpan(kind, slot, state.first_event,
                                    len(events) - 1))
            slots[slot] = _SlotState()
        elif tracking is not None:
            if state.active:
                fail("second press on an already-active slot", line_no)
            if not has_pos:
                fail("press without position axes", line_no)
            state.active = True
            state.x = packet.get("x", 0.0)
            state.y = packet.get("y", 0.0)
            state.down_t = t
            state.first_event = len(events)
            events.append(PointerEvent(t, DOWN, state.x, state.y, slot))
        elif has_pos:
            if not state.active:
                fail("position update without an active touch", line_no)
            state.x = packet.get("x", state.x)
            state.y = packet.get("y", state.y)
            state.moves += 1
            events.append(PointerEvent(t, MOVE, state.x, state.y, slot))
        packet.clear()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line or line in skip:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m:
                width, height = int(m.group(1)), int(m.group(2))
            continue
        m = _EVENT_RE.match(line)
        if m is None:
            fail(f"unrecognized event line: {line!r}", line_no)
        if width is None:
            fail("event before the geometry header", line_no)
        t = float(m.group(1)) * 1000.0
        etype = int(m.group(3), 16)
        code = int(m.group(4), 16)
        value = int(m.group(5), 16)
        if last_t is not None and t < last_t - 1e-9:
            fail("timestamps must be non-decreasing", line_no)
        last_t = t

        if etype == EV_SYN and code == SYN_REPORT:
            flush_packet(t, line_no)
        elif etype == EV_ABS:
            if code == ABS_MT_SLOT:
                packet["slot"] = value
                current_slot = value
            elif code == ABS_MT_TRACKING_ID:
                packet["tracking"] = -1 if value == TRACKING_RELEASE else value
            elif code == ABS_MT_POSITION_X:
                if not (0 <= value <= profile.abs_x_max):
                    fail(f"x value {value} exceeds axis max "
                         f"{profile.abs_x_max}", line_no)
                packet["x"] = _unscale(value, width, profile.abs_x_max)
            elif code == ABS_MT_POSITION_Y:
                if not (0 <= value <= profile.abs_y_max):
                    fail(f"y value {value} exceeds axis max "
                         f"{profile.abs_y_max}", line_no)
                packet["y"] = _unscale(value, height, profile.abs_y_max)
            elif code == ABS_MT_PRESSURE:
                pass
            else:
                fail(f"unknown ABS code {code:#06x}", line_no)
        else:
            fail(f"unknown event type {etype:#06x}", line_no)

    if packet:
        raise ScriptParseError("trailing event packet without sync")
    for slot, state in slots.items():
        if state.active:
            raise ScriptParseError(f"pointer {slot} never released")
    if width is None:
        if events:
            raise ScriptParseError("missing geometry header")
        width = height = 0
    spans.sort(key=lambda s: (events[s.first_event].t_ms, s.pointer))
    return ReplayScript(width=width, height=height, events=events,
                        actions=spans)
