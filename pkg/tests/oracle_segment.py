"""Brute-force chain grouper used to cross-check the production segmenter.

Enumerates every partition of a run's detections into one-node-per-frame
paths (as a DFS over maximal injective matchings at each frame boundary),
keeps the partitions consistent with the linking rules, and requires that
exactly one survives.  Rule consistency is re-derived here with an
independent decision procedure over plain tuples; prefix-inconsistent
branches are pruned, which filters the same set as full enumeration because
consistency is checked transition by transition.
"""

from __future__ import annotations

import itertools
import math

from touchreplay.types import Detection, OPACITY_LOW

Node = tuple[int, int]  # (frame offset within the run, index within frame)


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _mandated_matching(chains, nodes, margin):
    """The link set the rules dictate for one frame boundary.

    ``chains``: list of (uid, start_frame, last_center); ``nodes``: list of
    (idx, center, opacity).  Returns a set of (uid, idx) pairs.
    """
    free_c = sorted(chains, key=lambda c: (c[1], c[0]))
    free_n = sorted(nodes, key=lambda n: n[1])
    chosen = set()
    while free_c and free_n:
        ranked = sorted(
            ((_dist(c[2], n[1]), (c[1], c[0]), n[1], c, n)
             for c in free_c for n in free_n),
            key=lambda row: row[:3])
        d0, _, _, c0, n0 = ranked[0]
        close_c = [c for c in free_c if _dist(c[2], n0[1]) <= d0 + margin]
        close_n = [n for n in free_n if _dist(c0[2], n[1]) <= d0 + margin]
        if len(close_c) > 1:
            if n0[2] == OPACITY_LOW:
                pick = sorted(close_c, key=lambda c: (c[1], _dist(c[2], n0[1]),
                                                      c[0]))[0]
            else:
                pick = sorted(close_c, key=lambda c: (-c[1], _dist(c[2], n0[1]),
                                                      c[0]))[0]
            pair = (pick, n0)
        elif len(close_n) > 1:
            lows = [n for n in close_n if n[2] == OPACITY_LOW]
            highs = [n for n in close_n if n[2] != OPACITY_LOW]
            oldest = min(free_c, key=lambda c: (c[1], c[0]))
            newest = max(free_c, key=lambda c: (c[1], c[0]))
            if c0 == oldest and lows:
                node = sorted(lows, key=lambda n: (_dist(c0[2], n[1]), n[1]))[0]
            elif c0 == newest and highs:
                node = sorted(highs, key=lambda n: (_dist(c0[2], n[1]), n[1]))[0]
            else:
                node = sorted(close_n, key=lambda n: (_dist(c0[2], n[1]), n[1]))[0]
            pair = (c0, node)
        else:
            pair = (c0, n0)
        chosen.add((pair[0][0], pair[1][0]))
        free_c.remove(pair[0])
        free_n.remove(pair[1])
    return chosen


def _sanity_clauses(chains, nodes, matching, margin):
    """Order-free necessary conditions every rule-consistent link set obeys."""
    assert len(matching) == min(len(chains), len(nodes)), "matching not maximal"
    linked_nodes = {idx for _, idx in matching}
    if len(nodes) == 1 and chains:
        assert nodes[0][0] in linked_nodes, "lone node must link"
    # mutually unambiguous nearest pairs are forced
    for c in chains:
        dists = sorted(_dist(c[2], n[1]) for n in nodes)
        if len(dists) > 1 and dists[1] - dists[0] <= margin:
            continue
        nearest = min(nodes, key=lambda n: (_dist(c[2], n[1]), n[1]))
        back = sorted(_dist(cc[2], nearest[1]) for cc in chains)
        if len(back) > 1 and back[1] - back[0] <= margin:
            continue
        if min(chains, key=lambda cc: (_dist(cc[2], nearest[1]),
                                       cc[1], cc[0])) == c:
            assert (c[0], nearest[0]) in matching, \
                "mutual unambiguous nearest pair must be linked"


def _all_maximal_matchings(chain_uids, node_idxs):
    k = min(len(chain_uids), len(node_idxs))
    if len(chain_uids) <= len(node_idxs):
        for perm in itertools.permutations(node_idxs, k):
            yield set(zip(chain_uids, perm))
    else:
        for combo in itertools.permutations(chain_uids, k):
            yield set(zip(combo, node_idxs))


def brute_force_segment(run_frames: list[list[Detection]],
                        margin: float) -> list[list[Node]]:
    """The unique rule-consistent path partition of a run, split included."""
    solutions: list[list[dict]] = []

    def recurse(frame_i, chains):
        # chains: list of dicts {uid, start, center, nodes: [Node], opacity_last}
        if frame_i == len(run_frames):
            solutions.append([dict(c) for c in chains])
            return
        dets = run_frames[frame_i]
        nodes = [(j, dets[j].bbox.center(), dets[j].opacity_class)
                 for j in range(len(dets))]
        active = [c for c in chains if c["end_frame"] == frame_i - 1]
        summary = [(c["uid"], c["start"], c["center"]) for c in active]
        mandated = _mandated_matching(summary, nodes, margin)
        if active and nodes:
            _sanity_clauses(summary, nodes, mandated, margin)
        found = []
        if active and nodes:
            for matching in _all_maximal_matchings(
                    [c["uid"] for c in active], [n[0] for n in nodes]):
                if matching == mandated:
                    found.append(matching)
        else:
            found.append(set())
        assert len(found) == 1, "linking rules must admit exactly one matching"
        matching = found[0]

        next_chains = [dict(c) for c in chains]
        by_uid = {c["uid"]: c for c in next_chains}
        linked_nodes = set()
        for uid, j in matching:
            c = by_uid[uid]
            c["nodes"] = c["nodes"] + [(frame_i, j)]
            c["center"] = nodes[j][1]
            c["end_frame"] = frame_i
            linked_nodes.add(j)
        next_uid = max((c["uid"] for c in next_chains), default=-1) + 1
        fresh = sorted((nodes[j][1], j) for j in range(len(nodes))
                       if j not in linked_nodes)
        for center, j in fresh:
            next_chains.append({
                "uid": next_uid, "start": frame_i, "center": center,
                "nodes": [(frame_i, j)], "end_frame": frame_i,
            })
            next_uid += 1
        recurse(frame_i + 1, next_chains)

    recurse(0, [])
    assert len(solutions) == 1
    groups: list[list[Node]] = []
    for chain in solutions[0]:
        nodes = chain["nodes"]
        piece = [nodes[0]]
        for prev, cur in zip(nodes, nodes[1:]):
            p_op = run_frames[prev[0]][prev[1]].opacity_class
            c_op = run_frames[cur[0]][cur[1]].opacity_class
            if p_op == OPACITY_LOW and c_op != OPACITY_LOW:
                groups.append(piece)
                piece = [cur]
            else:
                piece.append(cur)
        groups.append(piece)
    groups.sort(key=lambda g: (g[0][0],
                               run_frames[g[0][0]][g[0][1]].bbox.center()))
    return groups
