"""Loading recordings as constant-rate frame sequences.

A recording is consumed as a directory of lossless image files plus a JSON
manifest (``width``, ``height``, ``fps``, optional ``timestamps_ms``,
``frames``).  Decoding the original video container is delegated to an
external tool via :func:`run_decoder`; everything downstream assumes the
manifest schema.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, IngestError
from .types import FPS, FRAME_MS, Frame, VideoMeta

# Two samples cannot distinguish an action from noise; three is the floor.
MIN_FRAMES = 3

# Timestamps this close (ms) count as a tie and resolve to the earlier frame.
_TIE_EPS = 1e-6


def read_manifest(manifest_path: str | Path) -> dict:
    path = Path(manifest_path)
    if not path.is_file():
        raise IngestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"manifest is not valid JSON: {path}: {exc}") from exc
    for key in ("width", "height", "fps", "frames"):
        if key not in doc:
            raise IngestError(f"manifest missing required field '{key}': {path}")
    return doc


def write_manifest(doc: dict, manifest_path: str | Path) -> None:
    Path(manifest_path).write_text(json.dumps(doc, indent=2) + "\n")


def _load_raster(path: Path, index: int, width: int, height: int) -> np.ndarray:
    if not path.is_file():
        raise IngestError(f"frame {index} missing: {path}")
    with Image.open(path) as img:
        rgb = img.convert("RGB")  # alpha carries nothing in a screen recording
        pixels = np.asarray(rgb, dtype=np.uint8)
    if pixels.shape[0] != height or pixels.shape[1] != width:
        raise IngestError(
            f"frame {index} is {pixels.shape[1]}x{pixels.shape[0]}, "
            f"manifest declares {width}x{height}: {path}")
    return pixels


def declared_timestamps(doc: dict) -> list[float]:
    """Per-frame timestamps in ms, synthesized from fps when not recorded."""
    n = len(doc["frames"])
    ts = doc.get("timestamps_ms")
    if ts is not None:
        if len(ts) != n:
            raise IngestError(
                f"manifest lists {n} frames but {len(ts)} timestamps")
        return [float(t) for t in ts]
    fps = float(doc["fps"])
    if fps <= 0:
        raise IngestError(f"declared fps must be positive, got {fps}")
    return [i * 1000.0 / fps for i in range(n)]


class FrameStore:
    """Lazy random access to the frames referenced by a manifest.

    Pixel data is decoded on access so long recordings never have to fit in
    memory at once.  Instances are immutable and safe to share across
    threads.
    """

    def __init__(self, manifest_path: str | Path):
        self.manifest_path = Path(manifest_path)
        doc = read_manifest(self.manifest_path)
        self.width = int(doc["width"])
        self.height = int(doc["height"])
        self.declared_fps = float(doc["fps"])
        self.paths = [self.manifest_path.parent / p for p in doc["frames"]]
        self.timestamps_ms = declared_timestamps(doc)
        if len(self.paths) < MIN_FRAMES:
            raise IngestError(
                f"recording too short: {len(self.paths)} frames, "
                f"need at least {MIN_FRAMES}")

    def __len__(self) -> int:
        return len(self.paths)

    def frame(self, index: int) -> Frame:
        pixels = _load_raster(self.paths[index], index, self.width, self.height)
        return Frame(index, self.timestamps_ms[index], pixels)

    def __iter__(self):
        for i in range(len(self)):
            yield self.frame(i)

    def meta(self) -> VideoMeta:
        return VideoMeta(self.width, self.height, self.declared_fps,
                         len(self), str(self.manifest_path))


def load_frames(manifest_path: str | Path) -> tuple[list[Frame], VideoMeta]:
    """Load every frame of a manifest eagerly, in index order."""
    store = FrameStore(manifest_path)
    return list(store), store.meta()


def resample_indices(timestamps_ms: list[float]) -> list[int]:
    """Source index chosen for each 30 fps output slot.

    Output slot k sits at ``k * FRAME_MS``; the source frame with the nearest
    timestamp wins, ties going to the earlier frame.  The slot count is
    ``duration / FRAME_MS`` rounded half-down, plus one, which keeps every
    slot within half an input gap of a real sample.
    """
    if not timestamps_ms:
        return []
    for a, b in zip(timestamps_ms, timestamps_ms[1:]):
        if b < a - _TIE_EPS:
            raise IngestError(
                f"timestamps not monotonically non-decreasing: {a} then {b}")
    t0 = timestamps_ms[0]
    rel = [t - t0 for t in timestamps_ms]
    duration = rel[-1]
    n_slots = max(1, math.ceil(duration / FRAME_MS - 0.5 - 1e-7) + 1)

    chosen = []
    src = 0
    for k in range(n_slots):
        slot_t = k * FRAME_MS
        # timestamps are sorted, so advance while the next one is closer
        while src + 1 < len(rel):
            if abs(rel[src + 1] - slot_t) < abs(rel[src] - slot_t) - _TIE_EPS:
                src += 1
            else:
                break
        chosen.append(src)
    return chosen


def normalize_rate(frames: list[Frame],
                   timestamps_ms: list[float] | None = None) -> list[Frame]:
    """Resample a frame sequence to exactly 30 fps.

    Frames are reused (never interpolated); output indices and timestamps are
    renumbered onto the uniform 30 fps grid.
    """
    if timestamps_ms is None:
        timestamps_ms = [f.timestamp_ms for f in frames]
    if len(timestamps_ms) != len(frames):
        raise IngestError(
            f"{len(frames)} frames but {len(timestamps_ms)} timestamps")
    picks = resample_indices(timestamps_ms)
    return [Frame(k, k * FRAME_MS, frames[src].pixels)
            for k, src in enumerate(picks)]


def normalize_manifest(doc: dict, source_id: str = "") -> dict:
    """Manifest-level counterpart of :func:`normalize_rate`.

    Produces a new manifest that references the chosen source images (paths
    may repeat when frames are duplicated); no pixel data is copied.
    """
    ts = declared_timestamps(doc)
    picks = resample_indices(ts)
    return {
        "width": doc["width"],
        "height": doc["height"],
        "fps": FPS,
        "frames": [doc["frames"][i] for i in picks],
        "source_id": source_id or doc.get("source_id", ""),
    }


def run_decoder(command_template: str, video_path: str | Path,
                out_dir: str | Path, fps: float = FPS) -> Path:
    """Invoke an external decoder to populate a frame directory.

    ``command_template`` is a shell-style command line with ``{video}``,
    ``{out_dir}`` and ``{fps}`` placeholders.  The invoked program must leave
    a manifest named ``meta.json`` in ``out_dir`` that satisfies the frame
    manifest schema; its path is returned.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = [part.format(video=str(video_path), out_dir=str(out_dir), fps=fps)
            for part in shlex.split(command_template)]
    if not argv:
        raise ConfigError("decoder command template is empty")
    result = subprocess.run(argv, capture_output=True, text=True)
    if result.returncode != 0:
        raise IngestError(
            f"decoder failed with status {result.returncode}: "
            f"{result.stderr.strip()[:500]}")
    manifest = out_dir / "meta.json"
    if not manifest.is_file():
        raise IngestError(f"decoder did not produce {manifest}")
    return manifest
