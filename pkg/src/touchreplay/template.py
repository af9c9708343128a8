"""The touch-indicator icon and raster compositing."""

from __future__ import annotations

import numpy as np

from .types import BoundingBox, IndicatorTemplate

DEFAULT_DIAMETER = 48


def bullseye_template(diameter: int = DEFAULT_DIAMETER) -> IndicatorTemplate:
    """High-contrast concentric indicator: bright core, dark ring, bright rim.

    The internal contrast makes the icon correlate strongly against any
    background, which is what lets a classical matcher stand in for a learned
    detector.  Alpha is fully opaque inside the disc and zero outside.
    """
    if diameter < 8:
        raise ValueError(f"indicator diameter too small: {diameter}")
    c = (diameter - 1) / 2.0
    yy, xx = np.mgrid[0:diameter, 0:diameter]
    dist = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
    r = diameter / 2.0

    rgba = np.zeros((diameter, diameter, 4), dtype=np.uint8)
    core = dist <= 0.45 * r
    ring = (dist > 0.45 * r) & (dist <= 0.75 * r)
    rim = (dist > 0.75 * r) & (dist <= r)
    rgba[core] = (245, 245, 245, 255)
    rgba[ring] = (20, 24, 28, 255)
    rgba[rim] = (235, 235, 235, 255)
    return IndicatorTemplate(pixels=rgba, nominal_diameter=diameter)


def composite(canvas: np.ndarray, template: IndicatorTemplate,
              x: int, y: int, alpha: float) -> BoundingBox | None:
    """Blend the indicator over ``canvas`` at top-left (x, y), in place.

    The placement may extend past any canvas edge; only the visible part is
    drawn.  Returns the clipped bounding box, or None when nothing is
    visible (including alpha = 0, where the canvas is untouched).
    """
    h, w = canvas.shape[:2]
    box = BoundingBox(x, y, template.width, template.height).clipped(w, h)
    if box is None or alpha <= 0.0:
        return box
    ty, tx = box.y - y, box.x - x
    sub = template.pixels[ty:ty + box.h, tx:tx + box.w]
    a = (sub[:, :, 3:4].astype(np.float64) / 255.0) * float(alpha)
    region = canvas[box.y:box.y + box.h, box.x:box.x + box.w]
    blended = (1.0 - a) * region.astype(np.float64) + a * sub[:, :, :3]
    region[:] = np.rint(blended).astype(np.uint8)
    return box


def opaque_mask(template: IndicatorTemplate) -> np.ndarray:
    """Boolean support of the indicator (alpha at least half)."""
    return template.pixels[:, :, 3] >= 128


def template_gray(template: IndicatorTemplate) -> np.ndarray:
    return rgb_to_gray(template.pixels[:, :, :3])


def rgb_to_gray(pixels: np.ndarray) -> np.ndarray:
    p = pixels.astype(np.float32)
    return 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]
