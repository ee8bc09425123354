import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.calculations.geometry import (ProjectionError, hausdorff, image_to_roi, iou, iou_matrix,
                                       polygon_bbox, project_box, project_point, roi_to_image,
                                       rotate_point, rotate_polygon)
from src.data.models import BBox, Homography, Point2, Polygon, Roi

coords = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)
sizes = st.floats(min_value=0.5, max_value=500, allow_nan=False, allow_infinity=False)
angles = st.floats(min_value=-4 * math.pi, max_value=4 * math.pi, allow_nan=False)
boxes = st.builds(BBox, coords, coords, sizes, sizes)


class TestRotation:
    def test_quarter_turn(self):
        p = rotate_point(Point2(1, 0), math.pi / 2, Point2(0, 0))
        assert p.x == pytest.approx(0.0, abs=1e-12)
        assert p.y == pytest.approx(1.0)

    def test_about_center(self):
        p = rotate_point(Point2(12, 10), math.pi, Point2(10, 10))
        assert (p.x, p.y) == pytest.approx((8.0, 10.0))

    def test_rejects_non_finite_angle(self):
        with pytest.raises(ValueError):
            rotate_point(Point2(0, 0), float("nan"), Point2(0, 0))

    @given(coords, coords, angles, coords, coords)
    def test_round_trip(self, x, y, theta, cx, cy):
        center = Point2(cx, cy)
        back = rotate_point(rotate_point(Point2(x, y), theta, center), -theta, center)
        assert math.hypot(back.x - x, back.y - y) < 1e-9

    def test_round_trip_oracle(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(1000):
            x, y, cx, cy = rng.uniform(-2000, 2000, 4)
            theta = rng.uniform(-2 * math.pi, 2 * math.pi)
            back = rotate_point(rotate_point(Point2(x, y), theta, Point2(cx, cy)), -theta, Point2(cx, cy))
            worst = max(worst, math.hypot(back.x - x, back.y - y))
        assert worst < 1e-9


class TestRoiFrames:
    def test_roi_translation(self):
        roi = Roi(320, 240, 200, 100)
        poly = Polygon.from_box(BBox(10, 10, 4, 4))
        moved = roi_to_image(poly, roi)
        assert polygon_bbox(moved).center.as_tuple() == pytest.approx((230.0, 200.0))
        back = image_to_roi(moved, roi)
        assert polygon_bbox(back).center.as_tuple() == pytest.approx((10.0, 10.0))

    def test_rotated_square_bbox_grows(self):
        poly = Polygon.from_box(BBox(0, 0, 2, 2))
        box = polygon_bbox(rotate_polygon(poly, math.pi / 4, Point2(0, 0)))
        assert box.w == pytest.approx(2 * math.sqrt(2))
        assert box.h == pytest.approx(2 * math.sqrt(2))

    def test_polygon_bbox_degenerate(self):
        with pytest.raises(ValueError):
            Polygon((Point2(0, 0), Point2(1, 1), Point2(2, 2)))


class TestIoU:
    def test_identical(self):
        b = BBox(5, 5, 10, 10)
        assert iou(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert iou(BBox(0, 0, 2, 2), BBox(10, 10, 2, 2)) == 0.0

    def test_half_overlap(self):
        # 10x10 boxes shifted by 5: intersection 50, union 150
        assert iou(BBox(5, 5, 10, 10), BBox(10, 5, 10, 10)) == pytest.approx(1 / 3)

    @given(boxes, boxes)
    def test_bounds_and_symmetry(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou(b, a))

    @given(st.lists(boxes, min_size=1, max_size=5), st.lists(boxes, min_size=1, max_size=5))
    @settings(max_examples=50)
    def test_matrix_matches_pairwise(self, a, b):
        m = iou_matrix(a, b)
        assert m.shape == (len(a), len(b))
        for i, x in enumerate(a):
            for j, y in enumerate(b):
                assert m[i, j] == pytest.approx(iou(x, y), abs=1e-9)

    def test_matrix_empty(self):
        assert iou_matrix([], [BBox(0, 0, 1, 1)]).shape == (0, 1)



class TestProjection:
    def test_identity(self):
        p = project_point(Homography.identity(), Point2(3, 4))
        assert (p.x, p.y) == (3.0, 4.0)

    def test_translation(self):
        h = Homography(((1, 0, 5), (0, 1, -2), (0, 0, 1)))
        p = project_point(h, Point2(1, 1))
        assert (p.x, p.y) == pytest.approx((6.0, -1.0))

    def test_line_at_infinity(self):
        h = Homography(((1, 0, 0), (0, 1, 0), (1, 0, 1)))
        with pytest.raises(ProjectionError):
            project_point(h, Point2(-1, 0))

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            Homography(((1, 2, 3), (2, 4, 6), (0, 0, 1)))

    def test_normalized(self):
        h = Homography(((2, 0, 0), (0, 2, 0), (0, 0, 2)))
        assert h.m[2][2] == 1.0
        assert h.m[0][0] == 1.0

    def test_project_box_translation_keeps_size(self):
        h = Homography(((1, 0, 400), (0, 1, 0), (0, 0, 1)))
        box = project_box(h, BBox(100, 100, 60, 40))
        assert (box.cx, box.cy, box.w, box.h) == pytest.approx((500, 100, 60, 40))

    def test_forward_inverse_oracle(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            m = np.eye(3) + rng.normal(0, 0.1, (3, 3))
            m[2, :2] = rng.normal(0, 1e-4, 2)
            h = Homography.from_array(m)
            p = Point2(*rng.uniform(0, 640, 2))
            try:
                q = project_point(h.inverse(), project_point(h, p))
            except ProjectionError:
                continue
            worst = max(worst, math.hypot(q.x - p.x, q.y - p.y))
        assert worst < 1e-6


def _brute_hausdorff(a, b):
    def directed(x, y):
        return max(min(math.hypot(p.x - q.x, p.y - q.y) for q in y) for p in x)
    return max(directed(a, b), directed(b, a))


class TestHausdorff:
    def test_single_pair(self):
        assert hausdorff([Point2(0, 0)], [Point2(3, 4)]) == pytest.approx(5.0)

    def test_self_is_zero(self):
        pts = [Point2(0, 0), Point2(1, 2), Point2(5, 5)]
        assert hausdorff(pts, pts) == 0.0

    def test_uniform_translation_without_overlap(self):
        a = [Point2(0, 0), Point2(0, 1)]
        b = [Point2(30, 40), Point2(30, 41)]
        assert hausdorff(a, b) == pytest.approx(50.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            hausdorff([], [Point2(0, 0)])

    def test_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            a = [Point2(*p) for p in rng.uniform(-100, 100, (rng.integers(1, 21), 2))]
            b = [Point2(*p) for p in rng.uniform(-100, 100, (rng.integers(1, 21), 2))]
            assert hausdorff(a, b) == pytest.approx(_brute_hausdorff(a, b), abs=1e-9)

    @given(st.lists(st.tuples(coords, coords), min_size=1, max_size=8),
           st.lists(st.tuples(coords, coords), min_size=1, max_size=8))
    @settings(max_examples=50)
    def test_symmetric(self, a, b):
        pa = [Point2(*p) for p in a]
        pb = [Point2(*p) for p in b]
        assert hausdorff(pa, pb) == pytest.approx(hausdorff(pb, pa))
