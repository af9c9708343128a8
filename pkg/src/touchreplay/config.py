"""Pipeline configuration: one declarative record, file-loadable.

Defaults are the constants the rest of the package is calibrated around;
every one of them can be overridden from a JSON config file or a CLI flag,
which is what the sensitivity experiments rely on.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .detect import DetectionConfig
from .errors import ConfigError
from .script import PROFILES
from .types import DeviceProfile


@dataclass
class PipelineConfig:
    # stage wiring
    frames: str | None = None          # frame manifest path
    detections: str | None = None      # external detection file (ingest backend)
    truth: str | None = None           # ground-truth action trace, if any
    output: str = "out"
    backend: str = "template"          # "template" | "ingest"
    jobs: int = 1
    seed: int = 0

    # detection backend
    template_diameter: int = 48
    min_confidence: float = 0.6
    coarse_threshold: float = 0.3
    max_per_frame: int = 10
    opacity_threshold: float = 0.9

    # action engine
    confidence_threshold: float = 0.7
    spatial_radius_px: float = 20.0
    tap_max_frames: int = 20
    min_span_frames: int = 3
    link_margin_px: float = 20.0
    low_opacity_min_fraction: float = 0.1

    # synthetic rendering
    fade_frames: int = 4

    # script export
    device_profile: str = "nexus5-like"

    def detection_config(self) -> DetectionConfig:
        return DetectionConfig(
            min_confidence=self.min_confidence,
            coarse_threshold=self.coarse_threshold,
            max_per_frame=self.max_per_frame,
            opacity_threshold=self.opacity_threshold,
        )

    def profile(self) -> DeviceProfile:
        if self.device_profile not in PROFILES:
            raise ConfigError(
                f"unknown device profile {self.device_profile!r}; "
                f"known: {sorted(PROFILES)}")
        return PROFILES[self.device_profile]


_FIELDS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> PipelineConfig:
    """Build a config from an optional JSON file plus flag overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(doc)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**values)
