"""
Pure planar geometry: rotations, ROI translation, footprints, IoU,
homography projection and Hausdorff distance.
"""

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..data.models import BBox, Homography, Point2, Polygon, Roi


class ProjectionError(ValueError):
    """Point maps onto the line at infinity."""


def rotate_point(p: Point2, theta: float, center: Point2) -> Point2:
    """
    Rotate p by theta radians about center.

    Standard 2D rotation matrix applied to (p - center).
    """
    if not math.isfinite(theta):
        raise ValueError(f"Rotation angle must be finite, got {theta}")
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = p.x - center.x, p.y - center.y
    return Point2(center.x + c * dx - s * dy, center.y + s * dx + c * dy)


def translate_point(p: Point2, dx: float, dy: float) -> Point2:
    return Point2(p.x + dx, p.y + dy)


def rotate_polygon(poly: Polygon, theta: float, center: Point2) -> Polygon:
    return Polygon(tuple(rotate_point(v, theta, center) for v in poly.vertices))


def translate_polygon(poly: Polygon, dx: float, dy: float) -> Polygon:
    return Polygon(tuple(translate_point(v, dx, dy) for v in poly.vertices))


def roi_to_image(poly: Polygon, roi: Roi) -> Polygon:
    """Move ROI-local coordinates (origin at ROI top-left) into the image frame."""
    o = roi.origin
    return translate_polygon(poly, o.x, o.y)


def image_to_roi(poly: Polygon, roi: Roi) -> Polygon:
    o = roi.origin
    return translate_polygon(poly, -o.x, -o.y)


def polygon_bbox(poly: Polygon) -> BBox:
    """Tightest axis-aligned box containing all vertices."""
    xs = [v.x for v in poly.vertices]
    ys = [v.y for v in poly.vertices]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise ValueError("Degenerate polygon: zero extent on one axis")
    return BBox((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two axis-aligned boxes."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    ca = np.array([[x.x0, x.y0, x.x1, x.y1] for x in a])
    cb = np.array([[x.x0, x.y0, x.x1, x.y1] for x in b])
    iw = np.minimum(ca[:, None, 2], cb[None, :, 2]) - np.maximum(ca[:, None, 0], cb[None, :, 0])
    ih = np.minimum(ca[:, None, 3], cb[None, :, 3]) - np.maximum(ca[:, None, 1], cb[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (ca[:, 2] - ca[:, 0]) * (ca[:, 3] - ca[:, 1])
    area_b = (cb[:, 2] - cb[:, 0]) * (cb[:, 3] - cb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0)


def project_point(h: Homography, p: Point2) -> Point2:
    """Apply h to p and dehomogenize."""
    m = h.as_array()
    x, y, w = m @ np.array([p.x, p.y, 1.0])
    if abs(w) < 1e-12:
        raise ProjectionError(f"Point ({p.x}, {p.y}) maps to the line at infinity")
    return Point2(float(x / w), float(y / w))


def project_box(h: Homography, box: BBox) -> BBox:
    """
    Project a box: the center maps exactly, the size is the extent of the
    projected corners.
    """
    center = project_point(h, box.center)
    corners = [
        project_point(h, Point2(x, y))
        for x, y in ((box.x0, box.y0), (box.x1, box.y0), (box.x1, box.y1), (box.x0, box.y1))
    ]
    xs = [c.x for c in corners]
    ys = [c.y for c in corners]
    return BBox(center.x, center.y, max(xs) - min(xs), max(ys) - min(ys))


def _as_array(points: Iterable[Point2]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)


def hausdorff(a: Iterable[Point2], b: Iterable[Point2]) -> float:
    """Symmetric Hausdorff distance under the Euclidean metric."""
    pa, pb = _as_array(a), _as_array(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("Hausdorff distance needs two non-empty point sets")
    d = cdist(pa, pb)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
