"""Spatial primitives: polygon metrics, region/direction assignment, box math.

All functions are pure; everything works in pixel coordinates with the
screen convention (x grows right, y grows down).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

from shapely.geometry import Polygon as _ShapelyPolygon

Point = Tuple[float, float]


class GeometryError(ValueError):
    """Raised when an input violates a geometric precondition."""


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> Point:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def vertices(self) -> list[Point]:
        return [
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        ]

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


# 3x3 grid cells, row-major from the top-left.
REGION_NAMES = (
    "top left corner", "top side", "top right corner",
    "left side", "center", "right side",
    "bottom left corner", "bottom side", "bottom right corner",
)

# Eight compass octants, counterclockwise from screen-right.
DIRECTION_NAMES = (
    "right", "top right corner", "above", "top left corner",
    "left", "bottom left corner", "below", "bottom right corner",
)

_OPPOSITE = {d: DIRECTION_NAMES[(i + 4) % 8] for i, d in enumerate(DIRECTION_NAMES)}

PolygonLike = Union[Box, Sequence[Point]]


def _as_vertices(shape: PolygonLike) -> list[Point]:
    if isinstance(shape, Box):
        return shape.vertices()
    verts = [(float(x), float(y)) for x, y in shape]
    if len(verts) < 3:
        raise GeometryError(f"polygon needs >=3 vertices, got {len(verts)}")
    return verts


def dedup_vertices(footprint: Sequence[Point]) -> list[Point]:
    """Drop consecutive duplicate vertices (and a closing copy of the first)."""
    verts = [(float(x), float(y)) for x, y in footprint]
    out: list[Point] = []
    for v in verts:
        if not out or v != out[-1]:
            out.append(v)
    if len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def polygon_area(footprint: PolygonLike) -> float:
    """Unsigned area by the shoelace formula."""
    verts = _as_vertices(footprint)
    acc = 0.0
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def bbox_of(footprint: PolygonLike) -> Box:
    verts = _as_vertices(footprint)
    xs = [v[0] for v in verts]
    ys = [v[1] for v in verts]
    return Box(min(xs), min(ys), max(xs), max(ys))


def _to_shapely(shape: PolygonLike) -> _ShapelyPolygon:
    poly = _ShapelyPolygon(_as_vertices(shape))
    if not poly.is_valid:
        # Non-simple input is out of contract; buffer(0) repairs the common
        # bow-tie cases instead of returning garbage areas.
        poly = poly.buffer(0)
    return poly


def iou(a: PolygonLike, b: PolygonLike) -> float:
    """Intersection over union of two simple polygons (or boxes), in [0, 1]."""
    pa = _to_shapely(a)
    pb = _to_shapely(b)
    if pa.area == 0.0 and pb.area == 0.0:
        return 0.0
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def ciou(pred: PolygonLike, gold: PolygonLike) -> float:
    """IoU discounted by relative vertex-count mismatch.

    The complexity factor is 1 - |Np - Ng| / (Np + Ng) with vertex counts
    taken after consecutive-duplicate removal, so over-segmented rings are
    penalised even when the covered area matches exactly.
    """
    n_pred = len(dedup_vertices(_as_vertices(pred)))
    n_gold = len(dedup_vertices(_as_vertices(gold)))
    base = iou(pred, gold)
    if base == 0.0:
        return 0.0
    return base * (1.0 - abs(n_pred - n_gold) / (n_pred + n_gold))


def _third_index(value: float, extent: float) -> int:
    # Cells are [k*extent/3, (k+1)*extent/3) with the last cell closed.
    if value >= extent:
        return 2
    idx = int((3.0 * value) / extent)
    return min(2, max(0, idx))


def nine_region(instance_box: Box, width: float, height: float) -> str:
    """Name of the 3x3 equal-grid cell containing the box centroid."""
    if width <= 0 or height <= 0:
        raise GeometryError("zero-area image")
    cx, cy = instance_box.center
    col = _third_index(cx, width)
    row = _third_index(cy, height)
    return REGION_NAMES[row * 3 + col]


_COS = math.cos(math.pi / 8)
_SIN = math.sin(math.pi / 8)


def _octant(a: float, b: float) -> int:
    # Octant k of a nonzero vector, [k*45deg, (k+1)*45deg) in math orientation.
    # Built from comparisons only, so negating the vector shifts the result
    # by exactly 4: boundary cases cannot break antisymmetry.
    if b > 0 or (b == 0 and a > 0):
        if a > 0 and b < a:
            return 0
        if a > 0:
            return 1
        if -a < b:
            return 2
        return 3
    if a < 0 and b > a:
        return 4
    if a < 0:
        return 5
    if -a > b:
        return 6
    return 7


def relative_direction(subject_centroid: Point, reference_centroid: Point) -> str:
    """Compass octant of the subject as seen from the reference.

    Sectors are half-open 45-degree wedges centred on the eight compass
    directions; the counterclockwise edge of each wedge is excluded.
    """
    dx = subject_centroid[0] - reference_centroid[0]
    dy = subject_centroid[1] - reference_centroid[1]
    if dx == 0 and dy == 0:
        raise GeometryError("co-located centroids")
    u, v = dx, -dy  # flip to y-up so octant 2 means screen-above
    # Rotating by +22.5deg moves sector boundaries onto the octant grid.
    a = _COS * u - _SIN * v
    b = _SIN * u + _COS * v
    return DIRECTION_NAMES[_octant(a, b)]


def opposite(direction: str) -> str:
    try:
        return _OPPOSITE[direction]
    except KeyError:
        raise GeometryError(f"unknown direction {direction!r}") from None


def enlarge_box(box: Box, factor: float, width: float, height: float) -> Box:
    """Scale a box about its center, then clamp to the image bounds."""
    if factor < 1:
        raise GeometryError(f"enlargement factor must be >= 1, got {factor}")
    cx, cy = box.center
    half_w = box.width * factor / 2.0
    half_h = box.height * factor / 2.0
    return Box(
        max(0.0, cx - half_w),
        max(0.0, cy - half_h),
        min(float(width), cx + half_w),
        min(float(height), cy + half_h),
    )


def obb_dims(footprint: Sequence[Point], gsd: float) -> Tuple[float, float]:
    """Physical (length_m, width_m) of a 4-vertex rotated box.

    Opposite edges are averaged; the longer mean becomes the length.
    """
    if gsd <= 0:
        raise GeometryError(f"gsd must be positive, got {gsd}")
    verts = dedup_vertices(footprint)
    if len(verts) != 4:
        raise GeometryError(f"expected quadrilateral, got {len(verts)} vertices")
    edges = []
    for i in range(4):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % 4]
        edges.append(math.hypot(x2 - x1, y2 - y1))
    mean_a = (edges[0] + edges[2]) / 2.0
    mean_b = (edges[1] + edges[3]) / 2.0
    length = max(mean_a, mean_b) * gsd
    width = min(mean_a, mean_b) * gsd
    return (length, width)


def clamp_footprint(footprint: Iterable[Point], width: float, height: float) -> Tuple[list[Point], bool]:
    """Clamp vertices into [0,width]x[0,height]; report whether any moved."""
    clamped = []
    moved = False
    for x, y in footprint:
        cx = min(max(float(x), 0.0), float(width))
        cy = min(max(float(y), 0.0), float(height))
        if cx != x or cy != y:
            moved = True
        clamped.append((cx, cy))
    return clamped, moved
