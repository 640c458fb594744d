from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raster_oracle import random_polygon_pair, raster_iou
from rsinstruct.geometry import (
    DIRECTION_NAMES,
    REGION_NAMES,
    Box,
    GeometryError,
    bbox_of,
    ciou,
    dedup_vertices,
    enlarge_box,
    iou,
    nine_region,
    obb_dims,
    opposite,
    polygon_area,
    relative_direction,
)

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


class TestPolygonArea:
    def test_unit_square(self):
        assert polygon_area(UNIT_SQUARE) == 1.0

    def test_clockwise_orientation_invariant(self):
        assert polygon_area(list(reversed(UNIT_SQUARE))) == 1.0

    def test_right_triangle(self):
        assert polygon_area([(0, 0), (4, 0), (0, 3)]) == 6.0

    def test_too_few_vertices(self):
        with pytest.raises(GeometryError):
            polygon_area([(0, 0), (1, 1)])


class TestIou:
    def test_identical(self):
        assert iou(UNIT_SQUARE, UNIT_SQUARE) == 1.0

    def test_disjoint_boxes(self):
        assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0

    def test_half_overlap_boxes(self):
        # intersection 0.5, union 1.5
        assert iou(Box(0, 0, 1, 1), Box(0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)

    def test_symmetry(self):
        rng = random.Random(5)
        for _ in range(50):
            a, b = random_polygon_pair(rng)
            assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-12)

    def test_degenerate_both_sides(self):
        line = [(0, 0), (1, 0), (2, 0)]
        assert iou(line, line) == 0.0


class TestCiou:
    def test_identical_squares(self):
        assert ciou(UNIT_SQUARE, UNIT_SQUARE) == 1.0

    def test_edge_split_discount(self):
        sq4 = [(0, 0), (2, 0), (2, 2), (0, 2)]
        sq8 = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
        assert ciou(sq8, sq4) == pytest.approx(2 / 3, abs=1e-9)

    def test_disjoint_is_zero(self):
        a = [(0, 0), (1, 0), (1, 1), (0, 1)]
        b = [(5, 5), (6, 5), (6, 6), (5, 6)]
        assert ciou(a, b) == 0.0

    def test_bounded_by_iou(self):
        rng = random.Random(17)
        for _ in range(100):
            a, b = random_polygon_pair(rng)
            c = ciou(a, b)
            i = iou(a, b)
            assert 0.0 <= c <= i + 1e-12 <= 1.0 + 1e-12

    def test_consecutive_duplicates_removed(self):
        dup = [(0, 0), (0, 0), (1, 0), (1, 1), (0, 1), (0, 1)]
        assert dedup_vertices(dup) == [(0, 0), (1, 0), (1, 1), (0, 1)]
        assert ciou(dup, UNIT_SQUARE) == 1.0


class TestRasterOracleAgreement:
    def test_sample_pairs_modest_grid(self):
        # full 2048-cell sweep lives in the acceptance suite
        rng = random.Random(99)
        for _ in range(25):
            a, b = random_polygon_pair(rng)
            assert iou(a, b) == pytest.approx(raster_iou(a, b, resolution=1024), abs=2e-3)


class TestNineRegion:
    def test_center(self):
        assert nine_region(Box(140, 140, 160, 160), 300, 300) == "center"

    def test_top_left(self):
        assert nine_region(Box(5, 5, 15, 15), 300, 300) == "top left corner"

    def test_right_side(self):
        assert nine_region(Box(285, 145, 295, 155), 300, 300) == "right side"

    def test_boundary_belongs_to_higher_cell(self):
        # centroid exactly on the first grid line starts the middle cell
        assert nine_region(Box(90, 0, 110, 10), 300, 300) == "top side"

    def test_partition_tiles_image(self):
        rng = random.Random(3)
        seen = set()
        for _ in range(4000):
            x = rng.uniform(0, 299.999)
            y = rng.uniform(0, 299.999)
            region = nine_region(Box(x, y, x, y), 300, 300)
            assert region in REGION_NAMES
            seen.add(region)
        assert seen == set(REGION_NAMES)

    def test_zero_area_image(self):
        with pytest.raises(GeometryError):
            nine_region(Box(0, 0, 1, 1), 0, 100)


class TestRelativeDirection:
    def test_axis_aligned_right(self):
        assert relative_direction((200, 100), (100, 100)) == "right"

    def test_screen_up_is_above(self):
        assert relative_direction((100, 0), (100, 100)) == "above"

    def test_diagonal_names(self):
        assert relative_direction((200, 0), (100, 100)) == "top right corner"
        assert relative_direction((0, 200), (100, 100)) == "bottom left corner"

    def test_coincident_raises(self):
        with pytest.raises(GeometryError):
            relative_direction((5, 5), (5, 5))

    def test_opposite_is_involution(self):
        for d in DIRECTION_NAMES:
            assert opposite(opposite(d)) == d

    def test_antisymmetry_random_pairs(self):
        rng = random.Random(42)
        for _ in range(1000):
            a = (rng.uniform(-500, 500), rng.uniform(-500, 500))
            b = (rng.uniform(-500, 500), rng.uniform(-500, 500))
            if a == b:
                continue
            assert relative_direction(a, b) == opposite(relative_direction(b, a))

    @given(
        st.integers(-1000, 1000),
        st.integers(-1000, 1000),
        st.integers(-1000, 1000),
        st.integers(-1000, 1000),
    )
    @settings(max_examples=300)
    def test_antisymmetry_integer_grid(self, ax, ay, bx, by):
        # integer grids hit exact 45-degree diagonals, the nasty boundary family
        if (ax, ay) == (bx, by):
            return
        a, b = (float(ax), float(ay)), (float(bx), float(by))
        assert relative_direction(a, b) == opposite(relative_direction(b, a))


class TestEnlargeBox:
    def test_centered_scaling(self):
        assert enlarge_box(Box(10, 10, 20, 20), 1.2, 100, 100) == Box(9, 9, 21, 21)

    def test_clamp_at_origin(self):
        assert enlarge_box(Box(0, 0, 10, 10), 2, 100, 100) == Box(0, 0, 15, 15)

    def test_identity_factor(self):
        box = Box(3, 4, 8, 9)
        assert enlarge_box(box, 1, 100, 100) == box

    def test_factor_below_one_rejected(self):
        with pytest.raises(GeometryError):
            enlarge_box(Box(0, 0, 1, 1), 0.9, 10, 10)


class TestObbDims:
    def test_axis_aligned(self):
        box = [(0, 0), (100, 0), (100, 40), (0, 40)]
        assert obb_dims(box, 0.5) == pytest.approx((50.0, 20.0))

    def test_square_symmetry(self):
        sq = [(0, 0), (10, 0), (10, 10), (0, 10)]
        length, width = obb_dims(sq, 1.0)
        assert length == pytest.approx(width) == pytest.approx(10.0)

    @pytest.mark.parametrize("angle_deg", [37, 5, 90, 133])
    def test_rotation_invariance(self, angle_deg):
        base = [(0, 0), (100, 0), (100, 40), (0, 40)]
        t = math.radians(angle_deg)
        rot = [(x * math.cos(t) - y * math.sin(t), x * math.sin(t) + y * math.cos(t)) for x, y in base]
        ref = obb_dims(base, 0.5)
        got = obb_dims(rot, 0.5)
        assert got[0] == pytest.approx(ref[0], rel=1e-6)
        assert got[1] == pytest.approx(ref[1], rel=1e-6)

    def test_non_quad_rejected(self):
        with pytest.raises(GeometryError):
            obb_dims([(0, 0), (1, 0), (1, 1)], 1.0)
        with pytest.raises(GeometryError):
            obb_dims([(0, 0), (1, 0), (1, 1), (0, 1)], 0.0)


class TestBoxHelpers:
    def test_bbox_of_footprint(self):
        assert bbox_of([(1, 2), (5, -1), (3, 4)]) == Box(1, -1, 5, 4)

    def test_inverted_box_rejected(self):
        with pytest.raises(GeometryError):
            Box(5, 0, 1, 1)
