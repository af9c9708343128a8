"""Grouping per-frame detections into discrete, classified user actions.

The stage runs as a fixed composition: confidence filtering, grouping of
consecutive non-empty frames into runs, per-run chain segmentation, group
filtering, and finally classification into tap / long-tap / gesture.

Chain segmentation treats a run as a layered graph: detections are nodes,
frame boundaries separate layers, and each chain is a path taking exactly
one node per frame.  Links prefer the nearest neighbour; when several
placements are too close to call (within the margin), the node's opacity
decides, because a fading indicator belongs to the action that is ending
while a solid one belongs to the action that just started.  A chain is
additionally cut wherever a fading stretch is followed by a solid node,
since that pattern is two back-to-back actions with no empty frame between
them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .types import (ACTION_KINDS, Action, Detection, FRAME_MS, GESTURE,
                    LONG_TAP, OPACITY_HIGH, OPACITY_LOW, TAP, TouchGroup)

CONFIDENCE_THRESHOLD = 0.7
SPATIAL_RADIUS_PX = 20.0
TAP_MAX_FRAMES = 20
MIN_SPAN_FRAMES = 3          # anything spanning two or fewer frames is noise
LINK_MARGIN_PX = 20.0        # distances this close count as "similar"
LOW_OPACITY_MIN_FRACTION = 0.1


def filter_confidence(per_frame: list[list[Detection]],
                      threshold: float = CONFIDENCE_THRESHOLD
                      ) -> list[list[Detection]]:
    """Drop detections below the confidence floor, preserving order."""
    return [[d for d in dets if d.confidence >= threshold]
            for dets in per_frame]


@dataclass
class Run:
    """A maximal span of consecutive frames that all hold detections."""

    start_frame: int
    frames: list[list[Detection]]

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.frames) - 1

    @property
    def span(self) -> int:
        return len(self.frames)


def build_runs(per_frame: list[list[Detection]],
               min_span: int = MIN_SPAN_FRAMES) -> list[Run]:
    runs: list[Run] = []
    current: Run | None = None
    for index, dets in enumerate(per_frame):
        if dets:
            if current is None:
                current = Run(index, [])
            current.frames.append(list(dets))
        elif current is not None:
            runs.append(current)
            current = None
    if current is not None:
        runs.append(current)
    return [r for r in runs if r.span >= min_span]


def _center(d: Detection) -> tuple[float, float]:
    return d.bbox.center()


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class _Chain:
    __slots__ = ("uid", "start_frame", "nodes")

    def __init__(self, uid: int, node: Detection):
        self.uid = uid
        self.start_frame = node.frame_index
        self.nodes = [node]

    @property
    def last(self) -> Detection:
        return self.nodes[-1]

    def order_key(self) -> tuple[int, int]:
        return (self.start_frame, self.uid)


def _link_frame(active: list[_Chain], nodes: list[Detection],
                margin: float) -> dict[int, _Chain]:
    """Match this frame's nodes to the chains that ended one frame earlier.

    Repeatedly commits the globally closest free (chain, node) pair; when
    other chains or nodes sit within ``margin`` of that minimum the pair is
    ambiguous and opacity arbitrates: a fading node goes to the oldest
    candidate chain, a solid node to the newest (or to none, starting a
    fresh chain, once the solid candidates outnumber the old chains).
    Returns node-index -> chain; unmatched nodes start new chains.
    """
    links: dict[int, _Chain] = {}
    free_c = sorted(active, key=_Chain.order_key)
    free_n = list(range(len(nodes)))

    def d(chain: _Chain, ni: int) -> float:
        return _dist(_center(chain.last), _center(nodes[ni]))

    def node_key(ni: int) -> tuple[float, float]:
        return _center(nodes[ni])

    while free_c and free_n:
        best = min(((d(c, ni), c.order_key(), node_key(ni), c, ni)
                    for c in free_c for ni in free_n),
                   key=lambda t: t[:3])
        d0, _, _, c0, n0 = best
        chain_cands = [c for c in free_c if d(c, n0) <= d0 + margin]
        node_cands = [ni for ni in free_n if d(c0, ni) <= d0 + margin]

        if len(chain_cands) > 1:
            # Several chains end near this node; its opacity says whether it
            # continues the old action or the one that just started.
            if nodes[n0].opacity_class == OPACITY_LOW:
                chain = min(chain_cands,
                            key=lambda c: (c.start_frame, d(c, n0), c.uid))
            else:
                chain = max(chain_cands,
                            key=lambda c: (c.start_frame, -d(c, n0), -c.uid))
            pair = (chain, n0)
        elif len(node_cands) > 1:
            lows = [ni for ni in node_cands
                    if nodes[ni].opacity_class == OPACITY_LOW]
            highs = [ni for ni in node_cands
                     if nodes[ni].opacity_class == OPACITY_HIGH]
            oldest = min(free_c, key=_Chain.order_key)
            newest = max(free_c, key=_Chain.order_key)
            if c0 is oldest and lows:
                node = min(lows, key=lambda ni: (d(c0, ni), node_key(ni)))
            elif c0 is newest and highs:
                node = min(highs, key=lambda ni: (d(c0, ni), node_key(ni)))
            else:
                node = min(node_cands, key=lambda ni: (d(c0, ni), node_key(ni)))
            pair = (c0, node)
        else:
            pair = (c0, n0)

        chain, node = pair
        links[node] = chain
        free_c.remove(chain)
        free_n.remove(node)
    return links


def _split_on_opacity(nodes: list[Detection]) -> list[list[Detection]]:
    """Cut a chain wherever a fading stretch is followed by a solid node."""
    parts: list[list[Detection]] = []
    current = [nodes[0]]
    for prev, node in zip(nodes, nodes[1:]):
        if (prev.opacity_class == OPACITY_LOW
                and node.opacity_class == OPACITY_HIGH):
            parts.append(current)
            current = [node]
        else:
            current.append(node)
    parts.append(current)
    return parts


def segment_run(run: Run, margin: float = LINK_MARGIN_PX) -> list[TouchGroup]:
    """Partition one run's detections into single-finger chains."""
    chains: list[_Chain] = []
    active: list[_Chain] = []
    uid = 0
    for offset, dets in enumerate(run.frames):
        if not dets:
            raise ValueError("runs may not contain empty frames")
        nodes = sorted(dets, key=_center)
        links = _link_frame(active, nodes, margin) if active else {}
        next_active = []
        for ni, node in enumerate(nodes):
            chain = links.get(ni)
            if chain is None:
                chain = _Chain(uid, node)
                uid += 1
                chains.append(chain)
            else:
                chain.nodes.append(node)
            next_active.append(chain)
        active = next_active

    pieces: list[list[Detection]] = []
    for chain in chains:
        pieces.extend(_split_on_opacity(chain.nodes))
    pieces.sort(key=lambda ns: (ns[0].frame_index, _center(ns[0])))
    return [TouchGroup(members=ns, chain_id=i)
            for i, ns in enumerate(pieces)]


def filter_groups(groups: list[TouchGroup],
                  min_span: int = MIN_SPAN_FRAMES,
                  low_opacity_min_fraction: float = LOW_OPACITY_MIN_FRACTION
                  ) -> list[TouchGroup]:
    """Drop groups that are too short or almost entirely faded."""
    kept = []
    for g in groups:
        if g.span < min_span:
            continue
        high = sum(1 for d in g.members if d.opacity_class == OPACITY_HIGH)
        if high / len(g.members) < low_opacity_min_fraction:
            continue
        kept.append(g)
    return kept


def classify_group(group: TouchGroup,
                   spatial_radius: float = SPATIAL_RADIUS_PX,
                   tap_max_frames: int = TAP_MAX_FRAMES) -> Action:
    """Name a chain tap, long-tap or gesture from its footprint and span.

    The whole chain must stay within the radius of its first sample to count
    as stationary, so a stroke that returns to its origin still reads as a
    gesture.
    """
    centers = [_center(d) for d in group.members]
    first = centers[0]
    stationary = all(_dist(first, c) <= spatial_radius for c in centers)
    if stationary:
        kind = TAP if group.span <= tap_max_frames else LONG_TAP
    else:
        kind = GESTURE
    trajectory = [(cx, cy, d.frame_index * FRAME_MS)
                  for (cx, cy), d in zip(centers, group.members)]
    return Action(kind=kind, trajectory=trajectory, source_group=group.chain_id)


def classify_all(per_frame: list[list[Detection]],
                 confidence: float = CONFIDENCE_THRESHOLD,
                 min_span: int = MIN_SPAN_FRAMES,
                 margin: float = LINK_MARGIN_PX,
                 spatial_radius: float = SPATIAL_RADIUS_PX,
                 tap_max_frames: int = TAP_MAX_FRAMES,
                 low_opacity_min_fraction: float = LOW_OPACITY_MIN_FRACTION
                 ) -> list[Action]:
    """Full detection-to-action stage, actions ordered by start frame."""
    filtered = filter_confidence(per_frame, confidence)
    groups: list[TouchGroup] = []
    for run in build_runs(filtered, min_span):
        groups.extend(segment_run(run, margin))
    groups = filter_groups(groups, min_span, low_opacity_min_fraction)
    actions = [classify_group(g, spatial_radius, tap_max_frames)
               for g in groups]
    actions.sort(key=lambda a: (a.start_frame, a.trajectory[0][:2]))
    for i, action in enumerate(actions):
        action.source_group = i
    return actions


# ---------------------------------------------------------------------------
# Action trace files

def actions_to_doc(actions: list[Action]) -> dict:
    return {"actions": [{
        "kind": a.kind,
        "start_frame": a.start_frame,
        "end_frame": a.end_frame,
        "trajectory": [[round(x, 3), round(y, 3), round(t, 3)]
                       for x, y, t in a.trajectory],
    } for a in actions]}


def save_actions(actions: list[Action], path: str | Path) -> None:
    Path(path).write_text(json.dumps(actions_to_doc(actions), indent=2) + "\n")


def doc_to_actions(doc: dict) -> list[Action]:
    if not isinstance(doc, dict) or "actions" not in doc:
        raise ValidationError("action trace must be an object with 'actions'")
    actions = []
    for i, rec in enumerate(doc["actions"]):
        kind = rec.get("kind")
        if kind not in ACTION_KINDS:
            raise ValidationError(f"action {i}: unknown kind {kind!r}")
        traj = rec.get("trajectory") or []
        if not traj:
            raise ValidationError(f"action {i}: empty trajectory")
        actions.append(Action(
            kind=kind,
            trajectory=[(float(x), float(y), float(t)) for x, y, t in traj],
            source_group=i,
        ))
    return actions


def load_actions(path: str | Path) -> list[Action]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"action trace not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"action trace is not valid JSON: {exc}") from exc
    return doc_to_actions(doc)


def groups_to_doc(groups: list[TouchGroup]) -> dict:
    return {"groups": [{
        "chain_id": g.chain_id,
        "start_frame": g.start_frame,
        "end_frame": g.end_frame,
        "members": [{
            "frame": d.frame_index,
            "bbox": d.bbox.as_list(),
            "confidence": round(float(d.confidence), 6),
            "opacity": d.opacity_class,
            "opacity_score": round(float(d.opacity_score), 6),
        } for d in g.members],
    } for g in groups]}
