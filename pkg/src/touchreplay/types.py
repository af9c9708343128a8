"""Core value types shared by every pipeline stage.

Pixel coordinates follow image convention: x grows rightwards, y grows
downwards, bounding boxes are (left, top, width, height) in integer pixels.
All timestamps are milliseconds from the start of the recording.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FPS = 30.0
FRAME_MS = 1000.0 / FPS

TAP = "tap"
LONG_TAP = "long_tap"
GESTURE = "gesture"
ACTION_KINDS = (TAP, LONG_TAP, GESTURE)

OPACITY_HIGH = "high"
OPACITY_LOW = "low"

DOWN = "down"
MOVE = "move"
UP = "up"


@dataclass(frozen=True)
class VideoMeta:
    width: int
    height: int
    fps: float
    frame_count: int
    source_id: str = ""


@dataclass(eq=False)
class Frame:
    """One decoded video frame; ``pixels`` is (height, width, 3) uint8 RGB."""

    index: int
    timestamp_ms: float
    pixels: np.ndarray


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def area(self) -> int:
        return self.w * self.h

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    def clipped(self, width: int, height: int) -> "BoundingBox | None":
        """Intersection with the frame rectangle, or None if fully outside."""
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1 = min(self.x + self.w, width)
        y1 = min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def touches_border(self, width: int, height: int) -> bool:
        return (self.x <= 0 or self.y <= 0
                or self.x + self.w >= width or self.y + self.h >= height)

    def inside(self, width: int, height: int) -> bool:
        return (self.x >= 0 and self.y >= 0
                and self.x + self.w <= width and self.y + self.h <= height)


@dataclass(frozen=True)
class Detection:
    """One localized touch indicator in one frame."""

    frame_index: int
    bbox: BoundingBox
    confidence: float
    opacity_class: str = OPACITY_HIGH
    opacity_score: float = 1.0


@dataclass(eq=False)
class IndicatorTemplate:
    """The touch-indicator icon as an RGBA raster at native scale.

    The alpha channel is zero outside the indicator disc; compositing and
    opacity estimation both key off the opaque support.
    """

    pixels: np.ndarray  # (d, d, 4) uint8
    nominal_diameter: int

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class TouchGroup:
    """An ordered chain of detections, one per consecutive frame."""

    members: list[Detection]
    chain_id: int

    @property
    def start_frame(self) -> int:
        return self.members[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.members[-1].frame_index

    @property
    def span(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass
class Action:
    """A classified user action with a per-frame coordinate trajectory."""

    kind: str
    trajectory: list[tuple[float, float, float]]  # (x, y, t_ms), one per frame
    source_group: int = -1

    @property
    def start_frame(self) -> int:
        return int(round(self.trajectory[0][2] / FRAME_MS))

    @property
    def end_frame(self) -> int:
        return int(round(self.trajectory[-1][2] / FRAME_MS))

    @property
    def span(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class PointerEvent:
    t_ms: float
    kind: str  # DOWN | MOVE | UP
    x: float
    y: float
    pointer: int = 0


@dataclass(frozen=True)
class ActionSpan:
    """Range of a script's event list occupied by one action.

    Indices are inclusive; with overlapping actions the range may interleave
    events of other pointers, so the pointer slot disambiguates.
    """

    kind: str
    pointer: int
    first_event: int
    last_event: int


@dataclass
class ReplayScript:
    width: int
    height: int
    events: list[PointerEvent] = field(default_factory=list)
    actions: list[ActionSpan] = field(default_factory=list)

    @property
    def duration_ms(self) -> float:
        if not self.events:
            return 0.0
        return self.events[-1].t_ms - self.events[0].t_ms


@dataclass(frozen=True)
class DeviceProfile:
    """Target-device parameters for the low-level script format."""

    name: str
    device_path: str
    abs_x_max: int
    abs_y_max: int
    pressure_value: int = 50
    prologue: tuple[str, ...] = ()
    epilogue: tuple[str, ...] = ()
