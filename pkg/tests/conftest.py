import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from touchreplay.frames import write_manifest
from touchreplay.synth import make_screenshots


@pytest.fixture(scope="session")
def screenshot_dir(tmp_path_factory):
    """A small shared corpus of procedural screenshots."""
    d = tmp_path_factory.mktemp("shots")
    make_screenshots(d, 10, 360, 640, seed=1234)
    return d


def write_frame_dir(root: Path, pixel_list, fps=30.0, timestamps=None,
                    name="meta.json", ext="png"):
    """Write frames + manifest; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, px in enumerate(pixel_list):
        fname = f"frame_{i:05d}.{ext}"
        Image.fromarray(px).save(root / fname)
        names.append(fname)
    h, w = pixel_list[0].shape[:2]
    doc = {"width": w, "height": h, "fps": fps, "frames": names}
    if timestamps is not None:
        doc["timestamps_ms"] = timestamps
    path = root / name
    write_manifest(doc, path)
    return path


def flat_frames(n, w=32, h=24, value=128):
    return [np.full((h, w, 3), value, dtype=np.uint8) for _ in range(n)]
