"""touchreplay: screen recordings with a touch indicator in, replay scripts out."""

__version__ = "0.1.0"

from .types import (Action, ActionSpan, BoundingBox, Detection, DeviceProfile,
                    FPS, FRAME_MS, Frame, GESTURE, IndicatorTemplate,
                    LONG_TAP, OPACITY_HIGH, OPACITY_LOW, PointerEvent,
                    ReplayScript, TAP, TouchGroup, VideoMeta)
from .errors import (ConfigError, GenerationError, IngestError, PipelineError,
                     RenderError, ScriptParseError, SimulationError,
                     ValidationError)

__all__ = [
    "Action", "ActionSpan", "BoundingBox", "Detection", "DeviceProfile",
    "FPS", "FRAME_MS", "Frame", "GESTURE", "IndicatorTemplate", "LONG_TAP",
    "OPACITY_HIGH", "OPACITY_LOW", "PointerEvent", "ReplayScript", "TAP",
    "TouchGroup", "VideoMeta",
    "ConfigError", "GenerationError", "IngestError", "PipelineError",
    "RenderError", "ScriptParseError", "SimulationError", "ValidationError",
    "__version__",
]
