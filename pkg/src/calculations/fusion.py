"""
Rotation-augmented detection fusion.

Per-angle detections are remapped into the original frame, pooled per
class, clustered with an adaptive-bandwidth Gaussian mean-shift over
(cx, cy, w, h), filtered by normalized cluster score, and reduced to one
representative detection per surviving cluster.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from ..data.config import FusionConfig
from ..data.models import AugmentedFrame, Cluster, Detection, ObjectClass, Polygon, Roi
from .geometry import iou_matrix, polygon_bbox, roi_to_image, rotate_polygon

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = (4.0, 4.0, 4.0, 4.0)


def angle_for(index: int, n: int) -> float:
    """Uniform rotation grid: theta_i = i * 2pi / n."""
    return index * 2.0 * math.pi / n


def remap_detections(dets: Sequence[Detection], theta: float, roi: Roi) -> List[Detection]:
    """
    Map rotated-ROI detections back into original-image coordinates.

    Footprints (or the box outline when no footprint is present) are moved
    out of ROI-local coordinates, rotated by -theta about the ROI center and
    re-boxed.
    """
    center = roi.center
    out = []
    for det in dets:
        poly = det.footprint if det.footprint is not None else Polygon.from_box(det.box)
        poly = rotate_polygon(roi_to_image(poly, roi), -theta, center)
        out.append(replace(det, box=polygon_bbox(poly), footprint=poly))
    return out


def _check_single_class(dets: Sequence[Detection]) -> None:
    if not dets:
        raise ValueError("Bandwidth needs at least one detection")
    classes = {d.cls for d in dets}
    if len(classes) > 1:
        raise ValueError(f"Bandwidth needs a single class, got {sorted(c.value for c in classes)}")


def _vectors(dets: Sequence[Detection]) -> np.ndarray:
    return np.array([d.box.as_vector() for d in dets], dtype=float).reshape(-1, 4)


def bandwidth(dets: Sequence[Detection], floor: Sequence[float] = DEFAULT_FLOOR) -> np.ndarray:
    """
    Diagonal kernel bandwidth: per-axis sample variance of (cx, cy, w, h),
    floored component-wise.
    """
    _check_single_class(dets)
    c = _vectors(dets)
    var = c.var(axis=0, ddof=1) if len(c) > 1 else np.zeros(4)
    return np.maximum(var, np.asarray(floor, dtype=float))


def overlap_groups(dets: Sequence[Detection], min_iou: float) -> np.ndarray:
    """Single-linkage groups of detections overlapping by at least min_iou."""
    if not dets:
        return np.zeros(0, dtype=int)
    adj = iou_matrix([d.box for d in dets], [d.box for d in dets]) >= min_iou
    _, labels = connected_components(csr_matrix(adj), directed=False)
    return labels


def pooled_bandwidth(dets: Sequence[Detection], groups: np.ndarray,
                     floor: Sequence[float] = DEFAULT_FLOOR) -> np.ndarray:
    """
    Sample variance taken about each overlap group's own mean, normalized
    by m - k. Equals bandwidth() when all detections share one group.
    """
    _check_single_class(dets)
    c = _vectors(dets)
    groups = np.asarray(groups, dtype=int)
    k = len(np.unique(groups))
    dof = len(c) - k
    if dof <= 0:
        return np.asarray(floor, dtype=float).copy()
    means = np.zeros((groups.max() + 1, 4))
    for g in np.unique(groups):
        means[g] = c[groups == g].mean(axis=0)
    resid = c - means[groups]
    var = (resid ** 2).sum(axis=0) / dof
    return np.maximum(var, np.asarray(floor, dtype=float))


def cluster_score(q: Cluster, n: int) -> float:
    """Total member score divided by the rotation count."""
    if n < 1:
        raise ValueError(f"Rotation count must be >= 1, got {n}")
    return sum(d.score for d in q.members) / n


def _pick_mode(members: Sequence[Tuple[int, Detection]]) -> Detection:
    """Highest score; ties go to the lower angle index, then input order."""
    def key(item):
        idx, det = item
        angle = det.angle_index if det.angle_index is not None else -1
        return (-det.score, angle, idx)
    return min(members, key=key)[1]


def _seek_modes(x: np.ndarray, eps: float, max_iters: int) -> np.ndarray:
    """Gaussian mean-shift in scaled coordinates (unit bandwidth per axis)."""
    y = x.copy()
    for it in range(max_iters):
        w = np.exp(-0.5 * cdist(y, x, "sqeuclidean"))
        y_new = (w @ x) / w.sum(axis=1, keepdims=True)
        shift = np.abs(y_new - y).max() if len(y) else 0.0
        y = y_new
        if shift < eps:
            logger.debug("Mean-shift converged after %d iterations", it + 1)
            break
    return y


def mean_shift(dets: Sequence[Detection], h: Sequence[float], n: int = 1,
               convergence_eps: float = 1e-3, max_iters: int = 100,
               merge_radius: float = 1.0) -> List[Cluster]:
    """
    Cluster detections by the modes their (cx, cy, w, h) vectors converge to.

    Modes closer than merge_radius (in per-axis sqrt(h) units) share a
    cluster. Clusters come back ordered by their first member.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (4,) or (h <= 0).any():
        raise ValueError(f"Bandwidth must be 4 positive values, got {h.tolist()}")
    if not dets:
        return []
    scale = np.sqrt(h)
    x = _vectors(dets) / scale
    # convergence_eps is in pixels; compare in scaled units per the tightest axis
    modes = _seek_modes(x, convergence_eps / scale.max(), max_iters)
    adj = cdist(modes, modes) <= merge_radius
    _, labels = connected_components(csr_matrix(adj), directed=False)

    grouped: Dict[int, List[Tuple[int, Detection]]] = {}
    for idx, (label, det) in enumerate(zip(labels, dets)):
        grouped.setdefault(int(label), []).append((idx, det))

    clusters = []
    for label in sorted(grouped, key=lambda g: grouped[g][0][0]):
        items = grouped[label]
        members = tuple(d for _, d in items)
        mode = _pick_mode(items)
        clusters.append(Cluster(members, mode, sum(d.score for d in members) / n))
    return clusters


@dataclass(frozen=True)
class FrameClustering:
    """Intermediate result of clustering one class in one frame."""
    pooled: Tuple[Detection, ...]
    clusters: Tuple[Cluster, ...]
    bandwidth: Optional[Tuple[float, ...]]


def pool_frame(af: AugmentedFrame, cls: ObjectClass, cfg: FusionConfig) -> List[Detection]:
    """Remap every angle slot and pool detections of one class."""
    pooled: List[Detection] = []
    for i, slot in enumerate(af.per_angle):
        chosen = [
            d if d.angle_index is not None else replace(d, angle_index=i)
            for d in slot if d.cls == cls and d.score >= cfg.eta_det
        ]
        pooled.extend(remap_detections(chosen, angle_for(i, af.n), af.roi))
    return pooled


def cluster_frame(af: AugmentedFrame, cls: ObjectClass, cfg: FusionConfig) -> FrameClustering:
    if af.n != cfg.n:
        raise ValueError(f"Frame {af.frame} has {af.n} angle slots, config expects n={cfg.n}")
    pooled = pool_frame(af, cls, cfg)
    if not pooled:
        return FrameClustering((), (), None)
    h = pooled_bandwidth(pooled, overlap_groups(pooled, cfg.group_iou), cfg.bandwidth_floor)
    clusters = mean_shift(
        pooled, h, n=af.n,
        convergence_eps=cfg.convergence_eps,
        max_iters=cfg.max_iters,
        merge_radius=cfg.merge_radius,
    )
    return FrameClustering(tuple(pooled), tuple(clusters), tuple(float(v) for v in h))


def fuse_frame(af: AugmentedFrame, cls: ObjectClass, cfg: FusionConfig) -> Tuple[Detection, ...]:
    """One representative detection per cluster whose score reaches lambda."""
    result = cluster_frame(af, cls, cfg)
    kept = [q for q in result.clusters if q.score_bar >= cfg.lam]
    logger.debug(
        "Frame %d %s: %d pooled, %d clusters, %d kept",
        af.frame, cls.value, len(result.pooled), len(result.clusters), len(kept),
    )
    return tuple(replace(q.mode, angle_index=None) for q in kept)


def fuse_stream(frames: Sequence[AugmentedFrame], cls: ObjectClass,
                cfg: FusionConfig) -> List[Tuple[Detection, ...]]:
    return [fuse_frame(af, cls, cfg) for af in frames]


def occupancy_records(af: AugmentedFrame, cls: ObjectClass, cfg: FusionConfig) -> List[dict]:
    """Pooled detections with their cluster membership, ready for plotting."""
    result = cluster_frame(af, cls, cfg)
    records = []
    for cid, q in enumerate(result.clusters):
        retained = q.score_bar >= cfg.lam
        for det in q.members:
            records.append({
                "frame": af.frame,
                "cls": cls.value,
                "cx": det.box.cx,
                "cy": det.box.cy,
                "w": det.box.w,
                "h": det.box.h,
                "score": det.score,
                "angle_index": det.angle_index,
                "cluster": cid,
                "cluster_score": q.score_bar,
                "retained": retained,
                "is_mode": det is q.mode,
            })
    return records
