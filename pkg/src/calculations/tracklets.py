"""
Tracklet stitching within a camera and label handoff across cameras.

Stitching links a newly started tracklet to a recently ended one when their
boundary boxes overlap. Handoff projects auxiliary tracklets into the
primary image plane, pairs temporally overlapping tracklets by Hausdorff
distance between their centers, and gives every connected group the
smallest label it contains.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import depth_first_order

from ..data.config import HandoffConfig, StitchConfig
from ..data.models import Homography, ObjectClass, Tracklet
from .assignment import solve
from .geometry import hausdorff, iou, project_box

logger = logging.getLogger(__name__)

INF = float("inf")


def stitch_cost(tau_m: Tracklet, tau_n: Tracklet, t_th: int) -> float:
    """
    Cost of continuing tau_n (ended earlier) with tau_m (started later).

    Finite only when 0 < start(tau_m) - end(tau_n) <= t_th.
    """
    if tau_m.camera != tau_n.camera or tau_m.cls != tau_n.cls:
        return INF
    gap = tau_m.first_frame - tau_n.last_frame
    if not (0 < gap <= t_th):
        return INF
    return 1.0 - iou(tau_m.first_box, tau_n.last_box)


def _merge(older: Tracklet, newer: Tracklet) -> Tracklet:
    return Tracklet(older.label, older.camera, older.cls, older.entries + newer.entries)


def _stitch_round(ts: List[Tracklet], t_th: int) -> Optional[List[Tracklet]]:
    """One assignment round; None when no finite pair is left."""
    n = len(ts)
    cost = np.array([[stitch_cost(m, o, t_th) for o in ts] for m in ts]).reshape(n, n)
    if not np.isfinite(cost).any():
        return None
    result = solve(cost)
    pairs = sorted(result.pairs, key=lambda p: (ts[p[1]].last_frame, ts[p[1]].label))

    merged: Dict[int, Tracklet] = {}
    consumed = set()
    for new_idx, old_idx in pairs:
        if new_idx in consumed or old_idx in consumed:
            continue
        merged[old_idx] = _merge(ts[old_idx], ts[new_idx])
        consumed.update((new_idx, old_idx))
        logger.debug("Stitched %s tracklet %d onto %d", ts[new_idx].camera,
                     ts[new_idx].label, ts[old_idx].label)
    return [merged[i] for i in sorted(merged)] + [t for i, t in enumerate(ts) if i not in consumed]


def _ordered(ts: Iterable[Tracklet]) -> List[Tracklet]:
    return sorted(ts, key=lambda t: (t.first_frame, t.cls.value, t.label))


def stitch(ts: Iterable[Tracklet], cfg: StitchConfig) -> List[Tracklet]:
    """
    Merge fragments of one camera until no stitchable pair remains.

    Each merge keeps the older tracklet's label.
    """
    current = _ordered(ts)
    cameras = {t.camera for t in current}
    if len(cameras) > 1:
        raise ValueError(f"stitch expects a single camera, got {sorted(cameras)}")
    before = len(current)
    rounds = 0
    while True:
        nxt = _stitch_round(current, cfg.t_th)
        if nxt is None:
            break
        current = _ordered(nxt)
        rounds += 1
    if rounds:
        logger.info("Stitched %d tracklets into %d over %d rounds", before, len(current), rounds)
    return current


def project_tracklet(t: Tracklet, h: Homography) -> Tracklet:
    """Tracklet with every box mapped through h."""
    return Tracklet(t.label, t.camera, t.cls, tuple((f, project_box(h, b)) for f, b in t.entries))


def handoff_cost(tau_a_proj: Tracklet, tau_p: Tracklet, d_max: float) -> float:
    """Hausdorff distance of box centers over common frames, +inf past d_max."""
    a = tau_a_proj.by_frame()
    p = tau_p.by_frame()
    common = sorted(set(a) & set(p))
    if not common:
        return INF
    d = hausdorff([a[f].center for f in common], [p[f].center for f in common])
    return d if d < d_max else INF


@dataclass(frozen=True)
class HandoffResult:
    """Relabelled tracklets of both cameras and the association edges."""
    primary: Tuple[Tracklet, ...]
    auxiliary: Tuple[Tracklet, ...]
    edges: Tuple[Tuple[int, int], ...]

    def edge_labels(self) -> List[Tuple[int, int]]:
        return [(self.auxiliary[a].label, self.primary[p].label) for a, p in self.edges]


def match_cameras(primary: Sequence[Tracklet], auxiliary: Sequence[Tracklet],
                  cfg: HandoffConfig) -> List[Tuple[int, int]]:
    """
    Repeated assignment rounds over handoff costs.

    For every matched (a, p), p is closed to each auxiliary tracklet that
    overlaps a in time and a is closed to each primary tracklet that
    overlaps p in time. A tracklet can still pick up partners that are
    disjoint in time from its current ones in a later round.
    Returns (auxiliary index, primary index) edges.
    """
    if not primary or not auxiliary:
        return []
    projected = [project_tracklet(t, cfg.homography) for t in auxiliary]
    cost = np.array([
        [handoff_cost(a, p, cfg.d_max) if a.cls == p.cls else INF for p in primary]
        for a in projected
    ])
    aux_overlap = _overlap_matrix(auxiliary)
    prim_overlap = _overlap_matrix(primary)
    edges: List[Tuple[int, int]] = []
    while np.isfinite(cost).any():
        result = solve(cost)
        if not result.pairs:
            break
        for a, p in result.pairs:
            edges.append((a, p))
            cost[aux_overlap[a], p] = INF
            cost[a, prim_overlap[p]] = INF
    return edges


def overlaps(t1: Tracklet, t2: Tracklet) -> bool:
    """True when the frame spans of t1 and t2 intersect."""
    return t1.first_frame <= t2.last_frame and t2.first_frame <= t1.last_frame


def _overlap_matrix(ts: Sequence[Tracklet]) -> np.ndarray:
    return np.array([[overlaps(x, y) for y in ts] for x in ts], dtype=bool)


def _propagate(primary: Sequence[Tracklet], auxiliary: Sequence[Tracklet],
               edges: Sequence[Tuple[int, int]]) -> Tuple[List[Tracklet], List[Tracklet]]:
    """Depth-first search from each primary tracklet; its group takes the minimum label."""
    n_aux = len(auxiliary)
    nodes = list(auxiliary) + list(primary)
    labels = [t.label for t in nodes]
    if edges:
        rows = [a for a, _ in edges] + [n_aux + p for _, p in edges]
        cols = [n_aux + p for _, p in edges] + [a for a, _ in edges]
        graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(nodes), len(nodes)))
        visited = np.zeros(len(nodes), dtype=bool)
        for start in range(n_aux, len(nodes)):
            if visited[start]:
                continue
            reach = depth_first_order(graph, start, directed=False, return_predecessors=False)
            visited[reach] = True
            target = min(labels[i] for i in reach)
            for i in reach:
                labels[i] = target
    relabel = [t.relabel(l) if t.label != l else t for t, l in zip(nodes, labels)]
    return relabel[n_aux:], relabel[:n_aux]


def associate_cameras(primary: Iterable[Tracklet], auxiliary: Iterable[Tracklet],
                      cfg: HandoffConfig) -> HandoffResult:
    """Associate auxiliary tracklets with primary ones and propagate labels."""
    prim = list(primary)
    aux = list(auxiliary)
    edges = match_cameras(prim, aux, cfg)
    new_prim, new_aux = _propagate(prim, aux, edges)
    changed = sum(1 for a, b in zip(prim, new_prim) if a.label != b.label)
    logger.info("Handoff: %d edges, %d primary tracklets relabelled", len(edges), changed)
    return HandoffResult(tuple(new_prim), tuple(new_aux), tuple(edges))


class LabelRegistry:
    """
    Global labels for per-camera track labels.

    Labels are allocated from 1 in order of first frame, then camera id,
    then class, then local label, so the smallest label in a group is the
    identity seen first.
    """

    def __init__(self, tracklets: Iterable[Tracklet] = ()):
        self._forward: Dict[Tuple[str, ObjectClass, int], int] = {}
        self._backward: Dict[int, Tuple[str, ObjectClass, int]] = {}
        ordered = sorted(tracklets, key=lambda t: (t.first_frame, t.camera, t.cls.value, t.label))
        for t in ordered:
            self.register(t.camera, t.cls, t.label)

    def __len__(self) -> int:
        return len(self._forward)

    def register(self, camera: str, cls: ObjectClass, local: int) -> int:
        key = (camera, cls, local)
        if key not in self._forward:
            label = len(self._forward) + 1
            self._forward[key] = label
            self._backward[label] = key
        return self._forward[key]

    def global_label(self, camera: str, cls: ObjectClass, local: int) -> int:
        try:
            return self._forward[(camera, cls, local)]
        except KeyError:
            raise KeyError(f"No global label for {cls.value} {local} in camera {camera}") from None

    def local_of(self, label: int) -> Tuple[str, ObjectClass, int]:
        return self._backward[label]

    def to_global(self, tracklets: Iterable[Tracklet]) -> List[Tracklet]:
        return [t.relabel(self.global_label(t.camera, t.cls, t.label)) for t in tracklets]
