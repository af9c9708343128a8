"""Synthetic data generation: screenshots, annotated datasets, scenarios.

Everything here is a pure function of its spec and seed.  Per-output RNG
streams are derived from the master seed, so parallel and serial generation
agree and reruns are byte-identical.

Screenshots are procedural GUI-like rasters (bars, cards, text lines,
blocky image regions) so the whole pipeline can be exercised hermetically,
without an external screenshot corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .detect import OPACITY_THRESHOLD
from .errors import ConfigError, RenderError
from .template import DEFAULT_DIAMETER, bullseye_template, composite
from .types import (Action, BoundingBox, FRAME_MS, Frame, GESTURE,
                    IndicatorTemplate, LONG_TAP, OPACITY_HIGH, OPACITY_LOW,
                    TAP, VideoMeta)

LOW_ALPHA_RANGE = (0.20, 0.80)
DEFAULT_FADE_FRAMES = 4


@dataclass(frozen=True)
class DatasetSpec:
    screenshot_dir: Path
    samples_per_screenshot: int = 3
    opacity_range: tuple[float, float] = (0.40, 1.00)
    edge_fraction: float = 0.15
    train_fraction: float = 0.7
    seed: int = 0
    diameter: int = DEFAULT_DIAMETER

    @property
    def test_fraction(self) -> float:
        return 1.0 - self.train_fraction


@dataclass
class GroundTruthScenario:
    actions: list[Action]
    frames: list[Frame]
    annotations: list[list[tuple[BoundingBox, float]]]  # per frame: (bbox, alpha)

    @property
    def meta(self) -> VideoMeta:
        h, w = self.frames[0].pixels.shape[:2]
        return VideoMeta(w, h, 30.0, len(self.frames), "synthetic")


# ---------------------------------------------------------------------------
# Procedural screenshots

_ACCENTS = np.array([
    (33, 150, 243), (233, 30, 99), (76, 175, 80), (255, 152, 0),
    (103, 58, 183), (0, 150, 136), (244, 67, 54), (63, 81, 181),
], dtype=np.int64)


def _fill_disc(img: np.ndarray, cx: int, cy: int, r: int, color) -> None:
    h, w = img.shape[:2]
    y0, y1 = max(0, cy - r), min(h, cy + r + 1)
    x0, x1 = max(0, cx - r), min(w, cx + r + 1)
    if y1 <= y0 or x1 <= x0:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[y0:y1, x0:x1][mask] = color


def random_screenshot(width: int, height: int,
                      rng: np.random.Generator) -> np.ndarray:
    """A GUI-looking raster: bars, list rows, icons, text, image blocks."""
    light = rng.random() < 0.7
    base = (rng.integers(226, 252, 3) if light
            else rng.integers(12, 42, 3)).astype(np.int64)
    img = np.full((height, width, 3), base, dtype=np.int64)
    fg = np.array((40, 44, 48) if light else (215, 218, 222), dtype=np.int64)
    accent = _ACCENTS[rng.integers(len(_ACCENTS))]

    sb_h = max(6, height // 42)
    img[:sb_h] = np.clip(base - 18, 0, 255)
    ab_h = max(16, height // 14)
    img[sb_h:sb_h + ab_h] = accent
    ty = sb_h + ab_h // 3
    img[ty:ty + max(3, ab_h // 5), width // 18:width // 18 + width // 3] = 245

    y = sb_h + ab_h + max(3, height // 90)
    pad = max(3, width // 48)
    while y < height - height // 10:
        row_h = int(rng.integers(height // 20, height // 8))
        if y + row_h > height - height // 16:
            break
        roll = rng.random()
        if roll < 0.45:  # list row: icon plus text lines
            img[y:y + row_h, pad:width - pad] = np.clip(
                base + (8 if light else 10), 0, 255)
            r = max(4, row_h // 3)
            if rng.random() < 0.5:
                _fill_disc(img, pad + r + 4, y + row_h // 2, r, accent)
            else:
                img[y + row_h // 2 - r:y + row_h // 2 + r,
                    pad + 4:pad + 4 + 2 * r] = accent
            tx = pad + 2 * r + 14
            line_h = max(2, row_h // 7)
            for li in range(int(rng.integers(1, 4))):
                ly = y + 4 + li * (line_h + 4)
                lw = int(rng.integers(width // 4, max(width // 3,
                                                      width - tx - pad)))
                if ly + line_h < y + row_h:
                    img[ly:ly + line_h, tx:min(tx + lw, width - pad)] = fg
        elif roll < 0.7:  # paragraph of text lines
            line_h = max(2, height // 160)
            ly = y
            while ly + line_h < y + row_h:
                lw = int(rng.integers(width // 3, width - 2 * pad))
                img[ly:ly + line_h, pad:pad + lw] = fg
                ly += line_h + max(2, line_h)
        elif roll < 0.88:  # blocky image region
            cell = max(4, width // int(rng.integers(18, 40)))
            gh = -(-row_h // cell)
            gw = -(-(width - 2 * pad) // cell)
            tile = rng.integers(0, 255, (gh, gw, 3))
            block = np.repeat(np.repeat(tile, cell, 0), cell, 1)
            img[y:y + row_h, pad:width - pad] = \
                block[:row_h, :width - 2 * pad]
        else:  # button bar
            bw = int(rng.integers(width // 4, width // 2))
            bx = int(rng.integers(pad, width - pad - bw))
            img[y:y + row_h, bx:bx + bw] = accent
        y += row_h + max(3, height // 70)

    nav_h = max(10, height // 22)
    img[height - nav_h:] = np.clip(base - (14 if light else -14), 0, 255)
    r = max(3, nav_h // 4)
    for i in range(4):
        cx = (2 * i + 1) * width // 8
        _fill_disc(img, cx, height - nav_h // 2, r, fg)
    return np.clip(img, 0, 255).astype(np.uint8)


def make_screenshots(out_dir: str | Path, count: int, width: int, height: int,
                     seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.default_rng([seed, 101, i])
        img = random_screenshot(width, height, rng)
        path = out_dir / f"shot_{i:04d}.png"
        Image.fromarray(img).save(path)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Annotated dataset generation

def _list_screenshots(spec: DatasetSpec) -> list[Path]:
    d = Path(spec.screenshot_dir)
    shots = sorted(p for p in d.glob("*.png")) if d.is_dir() else []
    if not shots:
        raise ConfigError(f"no screenshots found in {d}")
    return shots


def _screenshot_split(shots: list[Path], train_fraction: float,
                      seed: int, stream: int) -> dict[Path, str]:
    """Disjoint-by-screenshot split assignment."""
    rng = np.random.default_rng([seed, stream])
    perm = rng.permutation(len(shots))
    n_train = int(round(train_fraction * len(shots)))
    assignment = {}
    for rank, idx in enumerate(perm):
        assignment[shots[idx]] = "train" if rank < n_train else "test"
    return assignment


def _edge_placement(rng: np.random.Generator, width: int, height: int,
                    d: int) -> tuple[int, int]:
    """Top-left placement clipped by one border, at most half hidden."""
    hide = int(rng.integers(1, d // 2 + 1))
    side = int(rng.integers(4))
    lo, hi_x, hi_y = 2, width - d - 2, height - d - 2
    if side == 0:
        return -hide, int(rng.integers(lo, hi_y + 1))
    if side == 1:
        return width - d + hide, int(rng.integers(lo, hi_y + 1))
    if side == 2:
        return int(rng.integers(lo, hi_x + 1)), -hide
    return int(rng.integers(lo, hi_x + 1)), height - d + hide


def generate_detection_dataset(spec: DatasetSpec, out_dir: str | Path) -> list[dict]:
    """Composite the indicator over screenshots at random places and fades.

    Writes the images, a JSONL annotation manifest (one record per image:
    path, bbox, alpha, split) and a split summary.  Returns the records.
    """
    shots = _list_screenshots(spec)
    template = bullseye_template(spec.diameter)
    split_of = _screenshot_split(shots, spec.train_fraction, spec.seed, 1)
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for si, shot in enumerate(shots):
        base = np.asarray(Image.open(shot).convert("RGB"), dtype=np.uint8)
        height, width = base.shape[:2]
        d = spec.diameter
        if width < d + 8 or height < d + 8:
            raise ConfigError(f"screenshot {shot} too small for the indicator")
        for k in range(spec.samples_per_screenshot):
            rng = np.random.default_rng([spec.seed, 2, si, k])
            alpha = float(rng.uniform(*spec.opacity_range))
            if rng.random() < spec.edge_fraction:
                x, y = _edge_placement(rng, width, height, d)
            else:
                x = int(rng.integers(2, width - d - 1))
                y = int(rng.integers(2, height - d - 1))
            canvas = base.copy()
            bbox = composite(canvas, template, x, y, alpha)
            name = f"det_{si:04d}_{k}.png"
            Image.fromarray(canvas).save(img_dir / name)
            records.append({
                "path": f"images/{name}",
                "bbox": bbox.as_list(),
                "alpha": round(alpha, 6),
                "split": split_of[shot],
            })
    _write_annotations(out_dir, records)
    return records


def generate_opacity_dataset(spec: DatasetSpec, out_dir: str | Path,
                             count: int) -> list[dict]:
    """Balanced fully-opaque / faded crops at indicator size.

    Labels alternate so High and Low come out exactly balanced; faded crops
    draw their alpha uniformly from the low range.
    """
    if count % 2:
        raise ConfigError("crop count must be even to balance the classes")
    shots = _list_screenshots(spec)
    template = bullseye_template(spec.diameter)
    split_of = _screenshot_split(shots, spec.train_fraction, spec.seed, 3)
    pools = {name: [s for s in shots if split_of[s] == name]
             for name in ("train", "test")}
    for name, pool in pools.items():
        if not pool:
            pools[name] = shots
    n_train = int(round(spec.train_fraction * count))

    out_dir = Path(out_dir)
    crop_dir = out_dir / "crops"
    crop_dir.mkdir(parents=True, exist_ok=True)
    d = spec.diameter
    records = []
    cache: dict[Path, np.ndarray] = {}
    for i in range(count):
        rng = np.random.default_rng([spec.seed, 4, i])
        split = "train" if i < n_train else "test"
        pool = pools[split]
        shot = pool[int(rng.integers(len(pool)))]
        if shot not in cache:
            cache[shot] = np.asarray(Image.open(shot).convert("RGB"),
                                     dtype=np.uint8)
        base = cache[shot]
        height, width = base.shape[:2]
        x = int(rng.integers(0, width - d + 1))
        y = int(rng.integers(0, height - d + 1))
        label = OPACITY_HIGH if i % 2 == 0 else OPACITY_LOW
        alpha = 1.0 if label == OPACITY_HIGH else float(
            rng.uniform(*LOW_ALPHA_RANGE))
        crop = base[y:y + d, x:x + d].copy()
        composite(crop, template, 0, 0, alpha)
        name = f"opa_{i:05d}.png"
        Image.fromarray(crop).save(crop_dir / name)
        records.append({
            "path": f"crops/{name}",
            "label": label,
            "alpha": round(alpha, 6),
            "split": split,
        })
    _write_labels(out_dir, records)
    return records


def _write_annotations(out_dir: Path, records: list[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    (out_dir / "annotations.jsonl").write_text("\n".join(lines) + "\n")
    splits = {name: [r["path"] for r in records if r["split"] == name]
              for name in ("train", "test")}
    (out_dir / "splits.json").write_text(json.dumps(splits, indent=2) + "\n")


def _write_labels(out_dir: Path, records: list[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    (out_dir / "labels.jsonl").write_text("\n".join(lines) + "\n")


def load_annotations(path: str | Path) -> list[dict]:
    return [json.loads(line)
            for line in Path(path).read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Scenario rendering

def render_scenario(actions: list[Action], background: np.ndarray | Frame,
                    fade_frames: int = DEFAULT_FADE_FRAMES,
                    template: IndicatorTemplate | None = None
                    ) -> GroundTruthScenario:
    """Render an action list into frames plus exact per-frame ground truth.

    While pressed the indicator draws fully solid at the action's sampled
    position; after release it stays at the final position and fades
    linearly to zero over ``fade_frames`` frames, which is also recorded in
    the annotations (the final annotation has alpha exactly 0).
    """
    if template is None:
        template = bullseye_template()
    pixels = background.pixels if isinstance(background, Frame) else background
    height, width = pixels.shape[:2]
    for idx, action in enumerate(actions):
        for x, y, _ in action.trajectory:
            if not (0 <= x < width and 0 <= y < height):
                raise RenderError(
                    f"action {idx} trajectory point ({x:.1f}, {y:.1f}) "
                    f"outside the {width}x{height} frame")

    n_frames = max((a.end_frame for a in actions), default=-1) + fade_frames + 1
    n_frames = max(n_frames, 1)
    frames: list[Frame] = []
    annotations: list[list[tuple[BoundingBox, float]]] = []
    half_w = template.width / 2.0
    half_h = template.height / 2.0
    for f in range(n_frames):
        canvas = pixels.copy()
        marks: list[tuple[BoundingBox, float]] = []
        for action in actions:
            start, end = action.start_frame, action.end_frame
            if start <= f <= end:
                cx, cy, _ = action.trajectory[f - start]
                alpha = 1.0
            elif end < f <= end + fade_frames:
                cx, cy, _ = action.trajectory[-1]
                alpha = max(0.0, 1.0 - (f - end) / fade_frames)
            else:
                continue
            x = int(round(cx - half_w))
            y = int(round(cy - half_h))
            bbox = composite(canvas, template, x, y, alpha)
            if bbox is not None:
                marks.append((bbox, alpha))
        frames.append(Frame(f, f * FRAME_MS, canvas))
        annotations.append(marks)
    return GroundTruthScenario(actions=list(actions), frames=frames,
                               annotations=annotations)


def annotation_boxes(scenario: GroundTruthScenario,
                     min_alpha: float = 0.0) -> list[list[BoundingBox]]:
    """Per-frame ground-truth boxes, optionally dropping faint ones."""
    return [[box for box, alpha in marks if alpha >= min_alpha]
            for marks in scenario.annotations]


def scenario_truth_doc(scenario: GroundTruthScenario,
                       opacity_threshold: float = OPACITY_THRESHOLD) -> dict:
    """Ground truth in the detection-file schema plus the action list."""
    from .actions import actions_to_doc  # local import to avoid a cycle
    meta = scenario.meta
    frames = []
    for index, marks in enumerate(scenario.annotations):
        if not marks:
            continue
        frames.append({
            "index": index,
            "detections": [{
                "bbox": box.as_list(),
                "confidence": 1.0,
                "opacity": (OPACITY_HIGH if alpha >= opacity_threshold
                            else OPACITY_LOW),
                "opacity_score": round(alpha, 6),
            } for box, alpha in marks],
        })
    doc = {
        "meta": {"width": meta.width, "height": meta.height, "fps": 30.0},
        "frames": frames,
    }
    doc.update(actions_to_doc(scenario.actions))
    return doc


def write_scenario(scenario: GroundTruthScenario, out_dir: str | Path) -> None:
    """Frames as PNGs plus manifest and ground truth, CLI-consumable."""
    out_dir = Path(out_dir)
    frame_dir = out_dir / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for frame in scenario.frames:
        name = f"frame_{frame.index:05d}.png"
        Image.fromarray(frame.pixels).save(frame_dir / name)
        names.append(f"frames/{name}")
    meta = scenario.meta
    manifest = {"width": meta.width, "height": meta.height, "fps": 30.0,
                "frames": names}
    (out_dir / "meta.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out_dir / "truth.json").write_text(
        json.dumps(scenario_truth_doc(scenario), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Random scenario construction

@dataclass(frozen=True)
class ScenarioSpec:
    width: int = 360
    height: int = 640
    diameter: int = 32
    fade_frames: int = DEFAULT_FADE_FRAMES
    min_actions: int = 3
    max_actions: int = 15
    overlap_fraction: float = 0.25   # actions starting during the prior fade
    double_tap_fraction: float = 0.1


def random_actions(spec: ScenarioSpec,
                   rng: np.random.Generator) -> list[Action]:
    """A recoverable random action schedule.

    Spans and spacings keep each ground-truth kind stable under the fade
    tail the renderer will add: taps stay short enough that detected fade
    frames cannot push them over the long-tap boundary, gestures move far
    beyond the stationary radius, and overlapping actions start far from
    the fading indicator they coexist with.
    """
    d = spec.diameter
    margin = d // 2 + 4
    width, height = spec.width, spec.height
    half = d / 2.0

    def random_tl() -> tuple[int, int]:
        return (int(rng.integers(margin, width - d - margin)),
                int(rng.integers(margin, height - d - margin)))

    n_actions = int(rng.integers(spec.min_actions, spec.max_actions + 1))
    actions: list[Action] = []
    frame = int(rng.integers(0, 4))
    prev_fade_center: tuple[float, float] | None = None
    prev_end = None
    prev_kind = None

    for i in range(n_actions):
        kind = rng.choice([TAP, LONG_TAP, GESTURE], p=[0.45, 0.2, 0.35])
        overlap = False
        double_tap = False
        if prev_end is not None:
            roll = rng.random()
            if roll < spec.overlap_fraction:
                overlap = True
                frame = prev_end + int(rng.integers(1, spec.fade_frames))
            elif (roll < spec.overlap_fraction + spec.double_tap_fraction
                    and prev_kind in (TAP, LONG_TAP) and kind == TAP):
                double_tap = True
                frame = prev_end + spec.fade_frames
            else:
                frame = prev_end + spec.fade_frames + 2 + int(rng.integers(0, 8))

        if kind == TAP:
            span = int(rng.integers(5, 21 - spec.fade_frames))
        elif kind == LONG_TAP:
            span = int(rng.integers(21, 41))
        else:
            span = int(rng.integers(6, 23))

        for _ in range(200):
            if double_tap and prev_fade_center is not None:
                tl0 = (int(round(prev_fade_center[0] - half)),
                       int(round(prev_fade_center[1] - half)))
            else:
                tl0 = random_tl()
            if kind == GESTURE:
                tl1 = random_tl()
                travel = np.hypot(tl1[0] - tl0[0], tl1[1] - tl0[1])
                if travel < 80:
                    continue
            else:
                tl1 = tl0
            if overlap and prev_fade_center is not None:
                # stay clear of the fading indicator while it is visible
                ok = True
                for j in range(min(span, spec.fade_frames + 1)):
                    u = j / max(span - 1, 1)
                    px = tl0[0] + u * (tl1[0] - tl0[0]) + half
                    py = tl0[1] + u * (tl1[1] - tl0[1]) + half
                    if np.hypot(px - prev_fade_center[0],
                                py - prev_fade_center[1]) < 80:
                        ok = False
                        break
                if not ok:
                    continue
            break
        else:
            raise RenderError("could not place a scenario action")

        trajectory = []
        for j in range(span):
            u = j / max(span - 1, 1)
            x = int(round(tl0[0] + u * (tl1[0] - tl0[0])))
            y = int(round(tl0[1] + u * (tl1[1] - tl0[1])))
            trajectory.append((x + half, y + half, (frame + j) * FRAME_MS))
        actions.append(Action(kind=kind, trajectory=trajectory, source_group=i))

        prev_end = frame + span - 1
        prev_fade_center = trajectory[-1][:2]
        prev_kind = kind
    return actions


def random_scenario(spec: ScenarioSpec, seed: int,
                    template: IndicatorTemplate | None = None
                    ) -> GroundTruthScenario:
    if template is None:
        template = bullseye_template(spec.diameter)
    rng = np.random.default_rng([seed, 11])
    background = random_screenshot(spec.width, spec.height,
                                   np.random.default_rng([seed, 12]))
    actions = random_actions(spec, rng)
    return render_scenario(actions, background, spec.fade_frames, template)


# ---------------------------------------------------------------------------
# Declarative synth specs (CLI entry)

def run_synth_spec(doc: dict, out_dir: str | Path,
                   seed: int | None = None) -> dict:
    """Execute a JSON synth spec; returns a summary of what was written.

    ``kind`` selects the product: "screenshots", "detection", "opacity" or
    "scenarios".  Dataset kinds auto-generate a screenshot corpus under the
    output directory when no ``screenshot_dir`` is given.
    """
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("synth spec must be an object with a 'kind'")
    kind = doc["kind"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    used_seed = int(doc.get("seed", 0) if seed is None else seed)
    width = int(doc.get("width", 360))
    height = int(doc.get("height", 640))
    diameter = int(doc.get("diameter", 32))

    if kind == "screenshots":
        paths = make_screenshots(out_dir, int(doc.get("count", 20)),
                                 width, height, used_seed)
        return {"kind": kind, "written": len(paths), "out": str(out_dir)}

    if kind in ("detection", "opacity"):
        shot_dir = doc.get("screenshot_dir")
        if shot_dir is None:
            shot_dir = out_dir / "screenshots"
            make_screenshots(shot_dir, int(doc.get("screenshots", 20)),
                             width, height, used_seed)
        spec = DatasetSpec(
            screenshot_dir=Path(shot_dir),
            samples_per_screenshot=int(doc.get("samples_per_screenshot", 3)),
            opacity_range=tuple(doc.get("opacity_range", (0.40, 1.00))),
            edge_fraction=float(doc.get("edge_fraction", 0.15)),
            train_fraction=float(doc.get("train_fraction", 0.7)),
            seed=used_seed,
            diameter=diameter,
        )
        if kind == "detection":
            records = generate_detection_dataset(spec, out_dir)
        else:
            records = generate_opacity_dataset(spec, out_dir,
                                               int(doc.get("count", 100)))
        return {"kind": kind, "written": len(records), "out": str(out_dir)}

    if kind == "scenarios":
        spec = ScenarioSpec(
            width=width, height=height, diameter=diameter,
            fade_frames=int(doc.get("fade_frames", DEFAULT_FADE_FRAMES)),
            min_actions=int(doc.get("min_actions", 3)),
            max_actions=int(doc.get("max_actions", 15)),
            overlap_fraction=float(doc.get("overlap_fraction", 0.25)),
            double_tap_fraction=float(doc.get("double_tap_fraction", 0.1)),
        )
        count = int(doc.get("count", 1))
        for i in range(count):
            scenario = random_scenario(spec, used_seed + i)
            write_scenario(scenario, out_dir / f"scenario_{i:03d}")
        return {"kind": kind, "written": count, "out": str(out_dir)}

    raise ConfigError(f"unknown synth kind {kind!r}")
