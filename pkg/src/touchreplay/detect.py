"""Touch-indicator localization and opacity scoring.

Two interchangeable backends feed the action engine: the built-in template
correlator below, or an externally produced detection file (see
:func:`ingest_detections`) using the same schema, so a learned detector can
be swapped in without code changes.

The correlator scores masked, normalized cross-correlation of the indicator
icon against each frame.  Normalization makes the score contrast-invariant,
so even strongly faded indicators peak high; how faded they are is measured
separately by :func:`classify_opacity`.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import irfft2, next_fast_len, rfft2
from scipy.ndimage import maximum_filter

from .errors import ConfigError, ValidationError
from .metrics import iou as iou_boxes
from .template import opaque_mask, rgb_to_gray, template_gray
from .types import (FPS, BoundingBox, Detection, Frame, IndicatorTemplate,
                    OPACITY_HIGH, OPACITY_LOW, VideoMeta)

# Image-side variance below this is flat (or float32 FFT noise); nothing
# with that little contrast can hold the high-contrast indicator.
_MIN_PATCH_VARIANCE = 16.0

OPACITY_THRESHOLD = 0.9


@dataclass(frozen=True)
class DetectionConfig:
    min_confidence: float = 0.6      # emit floor on the correlation score
    coarse_threshold: float = 0.3    # candidate floor at pyramid scale
    max_per_frame: int = 10
    nms_iou: float = 0.5
    min_visible_fraction: float = 0.45  # smallest usable clipped overlap
    pyramid_scale: int = 4
    max_candidates: int = 12
    opacity_threshold: float = OPACITY_THRESHOLD
    background_ring: int = 4


def _flip(kernel: np.ndarray) -> np.ndarray:
    return kernel[::-1, ::-1]


def _window_kernel_sums(kernel: np.ndarray, height: int, width: int) -> np.ndarray:
    """Sum of the kernel over its visible part, for every full-mode offset.

    Equivalent to convolving an all-ones image with the flipped kernel, but
    computed from the kernel's integral image instead of an FFT.
    """
    h, w = kernel.shape
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = np.cumsum(np.cumsum(kernel, axis=0), axis=1)
    dy = np.arange(-(h - 1), height)
    dx = np.arange(-(w - 1), width)
    r0 = np.clip(-dy, 0, h)
    r1 = np.clip(height - dy, 0, h)
    c0 = np.clip(-dx, 0, w)
    c1 = np.clip(width - dx, 0, w)
    return (ii[np.ix_(r1, c1)] - ii[np.ix_(r0, c1)]
            - ii[np.ix_(r1, c0)] + ii[np.ix_(r0, c0)])


class _MatchPlan:
    """Precomputed spectra and window normalizers for one image shape.

    The kernel FFTs and the placement-dependent template sums depend only on
    the template and the image dimensions, so consecutive frames of one
    recording reuse them.
    """

    def __init__(self, tmpl_gray: np.ndarray, mask: np.ndarray,
                 image_shape: tuple[int, int], min_visible_fraction: float,
                 dtype=np.float32):
        h, w = tmpl_gray.shape
        height, width = image_shape
        self.dtype = dtype
        self.image_shape = image_shape
        self.out_shape = (height + h - 1, width + w - 1)
        self.fshape = (next_fast_len(self.out_shape[0], real=True),
                       next_fast_len(self.out_shape[1], real=True))
        k_m = mask.astype(np.float64)
        k_mt = k_m * tmpl_gray
        k_mtt = k_mt * tmpl_gray
        self.f_km = rfft2(_flip(k_m).astype(dtype), s=self.fshape)
        self.f_kmt = rfft2(_flip(k_mt).astype(dtype), s=self.fshape)

        # normalizers are placement-exact, so build them in float64
        n = _window_kernel_sums(k_m, height, width)
        s_t = _window_kernel_sums(k_mt, height, width)
        s_tt = _window_kernel_sums(k_mtt, height, width)
        valid = n >= max(min_visible_fraction * k_m.sum(), 1e-9)
        self.n_safe = np.where(n > 1e-9, n, 1.0).astype(dtype)
        self.s_t = s_t.astype(dtype)
        var_t = np.maximum(s_tt - s_t * s_t / np.where(n > 1e-9, n, 1.0), 0.0)
        self.ok_t = valid & (var_t > 1e-9)
        self.var_t = var_t.astype(dtype)

    def ncc(self, gray: np.ndarray) -> np.ndarray:
        oh, ow = self.out_shape
        gray = gray.astype(self.dtype, copy=False)
        f_i = rfft2(gray, s=self.fshape)
        f_ii = rfft2(gray * gray, s=self.fshape)
        s_i = irfft2(f_i * self.f_km, s=self.fshape)[:oh, :ow]
        s_it = irfft2(f_i * self.f_kmt, s=self.fshape)[:oh, :ow]
        s_ii = irfft2(f_ii * self.f_km, s=self.fshape)[:oh, :ow]
        var_i = np.maximum(s_ii - s_i * s_i / self.n_safe, 0.0)
        num = s_it - s_i * self.s_t / self.n_safe
        den = np.sqrt(var_i * self.var_t)
        ok = self.ok_t & (var_i > _MIN_PATCH_VARIANCE)
        return np.where(ok, num / np.where(den > 0, den, 1.0), 0.0)


def masked_ncc_map(gray: np.ndarray, tmpl_gray: np.ndarray,
                   mask: np.ndarray, min_visible_fraction: float,
                   dtype=np.float64) -> np.ndarray:
    """Masked NCC for every placement, including edge-clipped ones.

    Index (i, j) of the result corresponds to template top-left offset
    ``(i - (h-1), j - (w-1))``; placements whose visible mask weight falls
    below the fraction floor score zero.
    """
    plan = _MatchPlan(tmpl_gray, mask, gray.shape, min_visible_fraction,
                      dtype=dtype)
    return plan.ncc(gray)


def masked_ncc_at(gray: np.ndarray, tmpl_gray: np.ndarray, mask: np.ndarray,
                  dy: int, dx: int, min_visible_fraction: float = 0.0) -> float:
    """Masked NCC of a single (possibly edge-clipped) placement."""
    h, w = tmpl_gray.shape
    height, width = gray.shape
    r0, r1 = max(0, -dy), min(h, height - dy)
    c0, c1 = max(0, -dx), min(w, width - dx)
    if r1 <= r0 or c1 <= c0:
        return 0.0
    m = mask[r0:r1, c0:c1].astype(np.float64)
    n = m.sum()
    if n < max(min_visible_fraction * float(mask.sum()), 1e-9):
        return 0.0
    t = tmpl_gray[r0:r1, c0:c1]
    patch = gray[dy + r0:dy + r1, dx + c0:dx + c1]
    s_i = float((m * patch).sum())
    s_ii = float((m * patch * patch).sum())
    s_t = float((m * t).sum())
    s_tt = float((m * t * t).sum())
    s_it = float((m * patch * t).sum())
    var_i = s_ii - s_i * s_i / n
    var_t = s_tt - s_t * s_t / n
    if var_i <= _MIN_PATCH_VARIANCE or var_t <= 1e-9:
        return 0.0
    return (s_it - s_i * s_t / n) / math.sqrt(var_i * var_t)


def _block_mean(arr: np.ndarray, scale: int, pad_mode: str) -> np.ndarray:
    h, w = arr.shape
    ph = (-h) % scale
    pw = (-w) % scale
    if ph or pw:
        if pad_mode == "edge":
            arr = np.pad(arr, ((0, ph), (0, pw)), mode="edge")
        else:
            arr = np.pad(arr, ((0, ph), (0, pw)))
    hh, ww = arr.shape
    return arr.reshape(hh // scale, scale, ww // scale, scale).mean(axis=(1, 3))


class TemplateMatcher:
    """Correlation search for one template, reusable across frames.

    A coarse pass on a block-averaged pyramid level proposes candidate
    regions; each is then refined at stride 1 on the full-resolution frame.
    Per-shape FFT plans are cached, so scanning a recording pays the kernel
    transform cost once.
    """

    # Below this many coarse pixels the reduced icon loses its structure.
    _MIN_COARSE_SIZE = 12

    def __init__(self, template: IndicatorTemplate,
                 config: DetectionConfig = DetectionConfig()):
        self.template = template
        self.config = config
        self.tgray = template_gray(template)
        self.mask = opaque_mask(template).astype(np.float64)
        if self.mask.sum() <= 0:
            raise ConfigError("indicator template has no opaque pixels")

        scale = max(1, config.pyramid_scale)
        while scale > 1 and (min(template.height, template.width) // scale
                             < self._MIN_COARSE_SIZE):
            scale //= 2
        self.scale = max(1, scale)
        if self.scale > 1:
            m = _block_mean(self.mask, self.scale, "zero")
            t_num = _block_mean(self.mask * self.tgray, self.scale, "zero")
            self.coarse_mask = m
            self.coarse_tgray = np.where(m > 1e-9,
                                         t_num / np.maximum(m, 1e-9), 0.0)
        # interior-refinement constants
        self.k_mt = self.mask * self.tgray
        self.mask_n = float(self.mask.sum())
        s_t = float(self.k_mt.sum())
        self.s_t_full = s_t
        self.var_t_full = float((self.k_mt * self.tgray).sum()
                                - s_t * s_t / self.mask_n)
        self._plans: dict[tuple, _MatchPlan] = {}

    def _plan(self, shape: tuple[int, int], coarse: bool) -> _MatchPlan:
        key = (shape, coarse)
        plan = self._plans.get(key)
        if plan is None:
            if coarse:
                plan = _MatchPlan(self.coarse_tgray, self.coarse_mask, shape,
                                  self.config.min_visible_fraction)
            else:
                plan = _MatchPlan(self.tgray, self.mask, shape,
                                  self.config.min_visible_fraction)
            self._plans[key] = plan
        return plan

    def _coarse_candidates(self, gray: np.ndarray) -> list[tuple[int, int]]:
        cfg = self.config
        if self.scale == 1:
            ncc = self._plan(gray.shape, coarse=False).ncc(gray)
            th, tw = self.tgray.shape
        else:
            coarse = _block_mean(gray, self.scale, "edge")
            ncc = self._plan(coarse.shape, coarse=True).ncc(coarse)
            th, tw = self.coarse_tgray.shape
        peak = (ncc >= cfg.coarse_threshold) & (ncc >= maximum_filter(ncc, size=3))
        ys, xs = np.nonzero(peak)
        if ys.size == 0:
            return []
        scores = ncc[ys, xs]
        order = np.lexsort((xs, ys, -scores))[:cfg.max_candidates]
        out = []
        for i in order:
            dy = int(ys[i]) - (th - 1)
            dx = int(xs[i]) - (tw - 1)
            out.append((dy * self.scale, dx * self.scale) if self.scale > 1
                       else (dy, dx))
        return out

    def _refine_interior(self, gray: np.ndarray, y_lo: int, x_lo: int,
                         pad: int) -> tuple[float, int, int]:
        h, w = self.tgray.shape
        side = 2 * pad + 1
        region = gray[y_lo:y_lo + side - 1 + h, x_lo:x_lo + side - 1 + w]
        win = sliding_window_view(region, (h, w))
        s_i = np.einsum("ijkl,kl->ij", win, self.mask)
        s_ii = np.einsum("ijkl,ijkl,kl->ij", win, win, self.mask)
        s_it = np.einsum("ijkl,kl->ij", win, self.k_mt)
        n = self.mask_n
        var_i = np.maximum(s_ii - s_i * s_i / n, 0.0)
        num = s_it - s_i * self.s_t_full / n
        den = np.sqrt(var_i * self.var_t_full)
        ncc = np.where(var_i > _MIN_PATCH_VARIANCE,
                       num / np.where(den > 0, den, 1.0), 0.0)
        flat = int(np.argmax(ncc))
        i, j = divmod(flat, ncc.shape[1])
        return float(ncc[i, j]), y_lo + i, x_lo + j

    def _refine_edge(self, gray: np.ndarray, dy0: int, dx0: int,
                     pad: int) -> tuple[float, int, int]:
        """Window search when some placements clip the image border.

        Runs the masked map over a crop clamped to the image; on clipped
        sides the crop border coincides with the image border, which is what
        keeps the partial-overlap normalization exact.
        """
        h, w = self.tgray.shape
        height, width = gray.shape
        y_lo, y_hi = dy0 - pad, dy0 + pad
        x_lo, x_hi = dx0 - pad, dx0 + pad
        cy0, cy1 = max(0, y_lo), min(height, y_hi + h)
        cx0, cx1 = max(0, x_lo), min(width, x_hi + w)
        if cy1 <= cy0 or cx1 <= cx0:
            return 0.0, dy0, dx0
        crop = gray[cy0:cy1, cx0:cx1]
        ncc = self._plan(crop.shape, coarse=False).ncc(crop)
        dys = np.arange(y_lo, y_hi + 1)
        dxs = np.arange(x_lo, x_hi + 1)
        us = dys - cy0 + (h - 1)
        vs = dxs - cx0 + (w - 1)
        uok = (us >= 0) & (us < ncc.shape[0])
        vok = (vs >= 0) & (vs < ncc.shape[1])
        if not uok.any() or not vok.any():
            return 0.0, dy0, dx0
        sub = ncc[np.ix_(us[uok], vs[vok])]
        flat = int(np.argmax(sub))
        i, j = divmod(flat, sub.shape[1])
        return (float(sub[i, j]), int(dys[uok][i]), int(dxs[vok][j]))

    def _refine(self, gray: np.ndarray, dy0: int, dx0: int
                ) -> tuple[float, int, int]:
        """Best stride-1 placement within a window around a coarse hit."""
        cfg = self.config
        h, w = self.tgray.shape
        height, width = gray.shape
        if self.scale == 1:
            score = masked_ncc_at(gray, self.tgray, self.mask, dy0, dx0,
                                  cfg.min_visible_fraction)
            return score, dy0, dx0
        pad = self.scale + 2
        y_lo, x_lo = dy0 - pad, dx0 - pad
        if (y_lo >= 0 and x_lo >= 0
                and y_lo + 2 * pad + h <= height and x_lo + 2 * pad + w <= width):
            return self._refine_interior(gray, y_lo, x_lo, pad)
        return self._refine_edge(gray, dy0, dx0, pad)

    def find(self, pixels: np.ndarray) -> list[tuple[float, int, int]]:
        """Scored placements (score, dy, dx), confidence-filtered and NMS'd."""
        cfg = self.config
        h, w = self.tgray.shape
        if h > pixels.shape[0] or w > pixels.shape[1]:
            raise ConfigError(
                f"template {w}x{h} larger than frame "
                f"{pixels.shape[1]}x{pixels.shape[0]}")
        gray = rgb_to_gray(pixels)
        seen: dict[tuple[int, int], float] = {}
        for dy0, dx0 in self._coarse_candidates(gray):
            score, dy, dx = self._refine(gray, dy0, dx0)
            if score >= cfg.min_confidence:
                key = (dy, dx)
                if score > seen.get(key, -1.0):
                    seen[key] = score
        ranked = sorted(((s, dy, dx) for (dy, dx), s in seen.items()),
                        key=lambda t: (-t[0], t[1], t[2]))
        kept: list[tuple[float, int, int]] = []
        for cand in ranked:
            _, dy, dx = cand
            box = BoundingBox(dx, dy, w, h)
            if any(iou_boxes(box, BoundingBox(kx, ky, w, h)) > cfg.nms_iou
                   for _, ky, kx in kept):
                continue
            kept.append(cand)
            if len(kept) >= cfg.max_per_frame:
                break
        return kept


def estimate_background(pixels: np.ndarray, bbox: BoundingBox,
                        ring: int = 4) -> np.ndarray:
    """Per-channel median of a thin ring just outside the box."""
    height, width = pixels.shape[:2]
    y0 = max(0, bbox.y - ring)
    y1 = min(height, bbox.y + bbox.h + ring)
    x0 = max(0, bbox.x - ring)
    x1 = min(width, bbox.x + bbox.w + ring)
    outer = pixels[y0:y1, x0:x1].astype(np.float64)
    keep = np.ones(outer.shape[:2], dtype=bool)
    keep[bbox.y - y0:bbox.y - y0 + bbox.h, bbox.x - x0:bbox.x - x0 + bbox.w] = False
    if not keep.any():
        return np.median(pixels.reshape(-1, 3).astype(np.float64), axis=0)
    return np.median(outer[keep], axis=0)


def classify_opacity(crop: np.ndarray, template: IndicatorTemplate,
                     background: np.ndarray | None = None,
                     template_origin: tuple[int, int] = (0, 0),
                     threshold: float = OPACITY_THRESHOLD) -> tuple[str, float]:
    """Estimate how faded the indicator in ``crop`` is.

    Fits crop = a * template + (1 - a) * background by least squares over the
    opaque support and returns (class, a) with a clamped to [0, 1].  For
    edge-clipped detections ``template_origin`` says where the crop's
    top-left sits inside the template.  A fit with no usable signal (no
    support, or template indistinguishable from background) is reported as
    fully faded.
    """
    ch, cw = crop.shape[:2]
    oy, ox = template_origin
    t_rgb = template.pixels[oy:oy + ch, ox:ox + cw, :3].astype(np.float64)
    m = (template.pixels[oy:oy + ch, ox:ox + cw, 3] >= 128)
    if t_rgb.shape[:2] != (ch, cw):
        raise ConfigError("crop extends past the template raster")

    crop_f = crop.astype(np.float64)
    if background is None:
        outside = ~m
        if outside.any():
            background = np.median(crop_f[outside], axis=0)
        else:
            background = np.median(crop_f.reshape(-1, 3), axis=0)
    bg = np.asarray(background, dtype=np.float64).reshape(1, 1, 3)

    mm = m[:, :, None]
    t_dev = np.where(mm, t_rgb - bg, 0.0)
    c_dev = np.where(mm, crop_f - bg, 0.0)
    den = float((t_dev * t_dev).sum())
    if not m.any() or den < 1e-9:
        return OPACITY_LOW, 0.0
    score = float((c_dev * t_dev).sum() / den)
    score = min(1.0, max(0.0, score))
    return (OPACITY_HIGH if score >= threshold else OPACITY_LOW), score


def detect_frame(frame: Frame, template: IndicatorTemplate,
                 config: DetectionConfig = DetectionConfig(),
                 matcher: TemplateMatcher | None = None) -> list[Detection]:
    """All indicator detections in one frame, strongest first."""
    if matcher is None:
        matcher = TemplateMatcher(template, config)
    height, width = frame.pixels.shape[:2]
    detections = []
    for score, dy, dx in matcher.find(frame.pixels):
        box = BoundingBox(dx, dy, template.width, template.height)
        clipped = box.clipped(width, height)
        if clipped is None:
            continue
        crop = frame.pixels[clipped.y:clipped.y + clipped.h,
                            clipped.x:clipped.x + clipped.w]
        bg = estimate_background(frame.pixels, clipped, config.background_ring)
        origin = (clipped.y - dy, clipped.x - dx)
        cls, alpha = classify_opacity(crop, template, bg, origin,
                                      config.opacity_threshold)
        detections.append(Detection(
            frame_index=frame.index,
            bbox=clipped,
            confidence=min(1.0, max(0.0, score)),
            opacity_class=cls,
            opacity_score=alpha,
        ))
    return detections


def detect_sequence(frames, template: IndicatorTemplate,
                    config: DetectionConfig = DetectionConfig(),
                    jobs: int = 1) -> list[list[Detection]]:
    """Run the template backend over a frame sequence.

    Frames are independent, so results are keyed by frame index and the
    output is identical for any ``jobs`` value.  A frame store (anything
    with ``frame(i)``) is loaded inside the workers with a bounded number
    of frames in flight, so long recordings never sit in memory whole.
    """
    matcher = TemplateMatcher(template, config)
    if jobs <= 1:
        return [detect_frame(f, template, config, matcher) for f in frames]

    if hasattr(frames, "frame") and hasattr(frames, "__len__"):
        count = len(frames)
        tasks = [(lambda i=i: detect_frame(frames.frame(i), template,
                                           config, matcher))
                 for i in range(count)]
    else:
        frames = list(frames)
        count = len(frames)
        tasks = [(lambda i=i: detect_frame(frames[i], template,
                                           config, matcher))
                 for i in range(count)]

    results: dict[int, list[Detection]] = {}
    window = max(jobs * 4, 8)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending: dict = {}
        for i in range(count):
            pending[pool.submit(tasks[i])] = i
            if len(pending) >= window:
                done = next(iter(wait(pending, return_when=FIRST_COMPLETED)))
                for fut in done:
                    results[pending.pop(fut)] = fut.result()
        for fut, i in pending.items():
            results[i] = fut.result()
    return [results[i] for i in range(count)]


# ---------------------------------------------------------------------------
# Detection file schema (shared export/ingest format)

def detections_to_doc(per_frame: list[list[Detection]],
                      meta: VideoMeta) -> dict:
    frames = []
    for index, dets in enumerate(per_frame):
        if not dets:
            continue
        frames.append({
            "index": index,
            "detections": [{
                "bbox": d.bbox.as_list(),
                "confidence": round(float(d.confidence), 6),
                "opacity": d.opacity_class,
                "opacity_score": round(float(d.opacity_score), 6),
            } for d in dets],
        })
    return {
        "meta": {"width": meta.width, "height": meta.height, "fps": FPS},
        "frames": frames,
    }


def export_detections(per_frame: list[list[Detection]], meta: VideoMeta,
                      path: str | Path) -> None:
    Path(path).write_text(json.dumps(detections_to_doc(per_frame, meta),
                                     indent=2) + "\n")


def _require(cond: bool, message: str):
    if not cond:
        raise ValidationError(message)


def doc_to_detections(doc: dict, meta: VideoMeta) -> list[list[Detection]]:
    """Validate a detection document against the video it describes."""
    _require(isinstance(doc, dict) and "frames" in doc,
             "detection file must be an object with a 'frames' array")
    file_meta = doc.get("meta", {})
    for key, expect in (("width", meta.width), ("height", meta.height)):
        if key in file_meta:
            _require(int(file_meta[key]) == expect,
                     f"detection file {key} {file_meta[key]} does not match "
                     f"video {key} {expect}")
    per_frame: list[list[Detection]] = [[] for _ in range(meta.frame_count)]
    for entry in doc["frames"]:
        _require("index" in entry, "frame entry missing 'index'")
        idx = int(entry["index"])
        _require(0 <= idx < meta.frame_count,
                 f"frame {idx}: index outside the {meta.frame_count}-frame video")
        for rec in entry.get("detections", []):
            _require("bbox" in rec and len(rec["bbox"]) == 4,
                     f"frame {idx}: detection needs bbox [x, y, w, h]")
            x, y, w, h = (int(round(float(v))) for v in rec["bbox"])
            _require(w > 0 and h > 0, f"frame {idx}: empty bbox")
            box = BoundingBox(x, y, w, h)
            _require(box.inside(meta.width, meta.height),
                     f"frame {idx}: bbox {box.as_list()} outside "
                     f"{meta.width}x{meta.height} frame")
            conf = float(rec.get("confidence", 1.0))
            _require(0.0 <= conf <= 1.0,
                     f"frame {idx}: confidence {conf} outside [0, 1]")
            cls = rec.get("opacity", OPACITY_HIGH)
            _require(cls in (OPACITY_HIGH, OPACITY_LOW),
                     f"frame {idx}: opacity must be 'high' or 'low', got {cls!r}")
            alpha = float(rec.get("opacity_score",
                                  1.0 if cls == OPACITY_HIGH else 0.0))
            _require(0.0 <= alpha <= 1.0,
                     f"frame {idx}: opacity_score {alpha} outside [0, 1]")
            per_frame[idx].append(Detection(idx, box, conf, cls, alpha))
    return per_frame


def ingest_detections(path: str | Path, meta: VideoMeta) -> list[list[Detection]]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"detection file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"detection file is not valid JSON: {exc}") from exc
    return doc_to_detections(doc, meta)
