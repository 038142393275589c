"""Planar geometry for quadrilateral ground truth and detections.

All coordinates are image coordinates: x grows right, y grows down.  A
canonical quad starts at the corner minimizing x+y (ties broken by smaller
y, then smaller x) and proceeds clockwise as seen on screen, which makes
its shoelace sum positive.  Everything here is pure and operates on
immutable values, so it is safe to call from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]

# Absolute tolerance for geometric comparisons at pixel scale.
EPS = 1e-9


class GeometryError(ValueError):
    """Base class for quad validation and homography failures."""


class NonConvex(GeometryError):
    def __init__(self, vertex_indices: Sequence[int]):
        self.vertex_indices = tuple(vertex_indices)
        super().__init__(f"quad is not convex at vertex indices {self.vertex_indices}")


class SelfIntersecting(GeometryError):
    def __init__(self, vertex_indices: Sequence[int]):
        self.vertex_indices = tuple(vertex_indices)
        super().__init__(
            f"quad edges cross (edge start indices {self.vertex_indices})"
        )


class ZeroArea(GeometryError):
    def __init__(self, vertex_indices: Sequence[int] = (0, 1, 2, 3)):
        self.vertex_indices = tuple(vertex_indices)
        super().__init__("quad has zero area")


class DegenerateQuad(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


@dataclass(frozen=True)
class Quad:
    """Convex quadrilateral with corners in canonical order.

    Construct via :func:`canonicalize_quad` (or :meth:`from_rect`); the
    constructor itself does not validate.
    """

    corners: tuple[Point, Point, Point, Point]

    @classmethod
    def from_rect(cls, x1: float, y1: float, x2: float, y2: float) -> "Quad":
        """Axis-rect sugar: two opposite corners to a canonical 4-point quad."""
        xa, xb = sorted((float(x1), float(x2)))
        ya, yb = sorted((float(y1), float(y2)))
        return canonicalize_quad((xa, ya, xb, ya, xb, yb, xa, yb))

    def flat(self) -> tuple[float, ...]:
        """Corners as (x1, y1, ..., x4, y4)."""
        return tuple(v for p in self.corners for v in p)

    def __iter__(self):
        return iter(self.corners)


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon with 0 (empty) or 3..8 vertices, canonical winding."""

    vertices: tuple[Point, ...]

    @property
    def empty(self) -> bool:
        return not self.vertices

    def __iter__(self):
        return iter(self.vertices)


EMPTY_POLYGON = ConvexPolygon(())


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(pts: Sequence[Point]) -> float:
    n = len(pts)
    acc = 0.0
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return acc / 2.0


def _segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool:
    """Proper (interior) crossing of segments ab and cd."""
    d1 = _cross(c, d, a)
    d2 = _cross(c, d, b)
    d3 = _cross(a, b, c)
    d4 = _cross(a, b, d)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def canonicalize_quad(raw: Sequence[float]) -> Quad:
    """Validate 8 reals (x1,y1,...,x4,y4) and return the canonical Quad.

    The input order defines the polygon; only rotation of the vertex list
    and winding are normalized.  Raises SelfIntersecting, ZeroArea or
    NonConvex (each carrying offending input vertex indices) for polygons
    that are not strictly convex with positive area.
    """
    vals = [float(v) for v in raw]
    if len(vals) != 8:
        raise GeometryError(f"expected 8 coordinates, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise GeometryError("coordinates must be finite")
    pts: list[Point] = [(vals[i], vals[i + 1]) for i in range(0, 8, 2)]

    # Bow-ties first: a symmetric bow-tie has zero shoelace sum, so the
    # crossing test must run before the area test.
    if _segments_cross(pts[0], pts[1], pts[2], pts[3]):
        raise SelfIntersecting((0, 2))
    if _segments_cross(pts[1], pts[2], pts[3], pts[0]):
        raise SelfIntersecting((1, 3))

    area2 = _signed_area(pts)
    if abs(area2) <= EPS:
        raise ZeroArea()

    # Winding: canonical quads are clockwise on screen (positive shoelace
    # with y down).  Reversal keeps index 0 in place so error indices and
    # the canonical start rule stay stable.
    order = list(range(4))
    if area2 < 0:
        pts = [pts[0], pts[3], pts[2], pts[1]]
        order = [0, 3, 2, 1]

    bad = [
        order[i]
        for i in range(4)
        if _cross(pts[i - 1], pts[i], pts[(i + 1) % 4]) <= EPS
    ]
    if bad:
        raise NonConvex(sorted(bad))

    start = min(range(4), key=lambda i: (pts[i][0] + pts[i][1], pts[i][1], pts[i][0]))
    ordered = tuple(pts[(start + i) % 4] for i in range(4))
    return Quad(ordered)  # type: ignore[arg-type]


def area(shape: Quad | ConvexPolygon) -> float:
    """Shoelace area in pixels², always >= 0; empty polygon -> 0."""
    pts = shape.corners if isinstance(shape, Quad) else shape.vertices
    if len(pts) < 3:
        return 0.0
    return abs(_signed_area(pts))


def _line_intersection(p1: Point, p2: Point, p3: Point, p4: Point) -> Point:
    dc = (p1[0] - p2[0], p1[1] - p2[1])
    dp = (p3[0] - p4[0], p3[1] - p4[1])
    n1 = p1[0] * p2[1] - p1[1] * p2[0]
    n2 = p3[0] * p4[1] - p3[1] * p4[0]
    denom = dc[0] * dp[1] - dc[1] * dp[0]
    return ((n1 * dp[0] - n2 * dc[0]) / denom, (n1 * dp[1] - n2 * dc[1]) / denom)


def intersect(a: Quad, b: Quad) -> ConvexPolygon:
    """Sutherland-Hodgman clip of a by b; disjoint quads give the empty polygon."""
    output: list[Point] = list(a.corners)
    clip = b.corners
    for i in range(4):
        if not output:
            return EMPTY_POLYGON
        cp1, cp2 = clip[i], clip[(i + 1) % 4]
        inputs = output
        output = []
        s = inputs[-1]
        # Inside test is boundary-inclusive so that intersect(a, a) returns
        # a's vertices bit-exact.
        s_in = _cross(cp1, cp2, s) >= 0.0
        for e in inputs:
            e_in = _cross(cp1, cp2, e) >= 0.0
            if e_in:
                if not s_in:
                    output.append(_line_intersection(cp1, cp2, s, e))
                output.append(e)
            elif s_in:
                output.append(_line_intersection(cp1, cp2, s, e))
            s, s_in = e, e_in
    cleaned: list[Point] = []
    for p in output:
        if not cleaned or (
            abs(p[0] - cleaned[-1][0]) > 1e-12 or abs(p[1] - cleaned[-1][1]) > 1e-12
        ):
            cleaned.append(p)
    while len(cleaned) > 1 and (
        abs(cleaned[0][0] - cleaned[-1][0]) <= 1e-12
        and abs(cleaned[0][1] - cleaned[-1][1]) <= 1e-12
    ):
        cleaned.pop()
    if len(cleaned) < 3:
        return EMPTY_POLYGON
    return ConvexPolygon(tuple(cleaned))


def intersection_area(a: Quad, b: Quad) -> float:
    return area(intersect(a, b))


def iou(a: Quad, b: Quad) -> float:
    """Intersection over union in [0, 1], exactly symmetric in its arguments."""
    # Evaluate in a canonical argument order so iou(a, b) == iou(b, a)
    # bit-exact despite float clipping.
    if b.corners < a.corners:
        a, b = b, a
    inter = area(intersect(a, b))
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, normalized so the bottom-right entry is 1."""

    m: tuple[tuple[float, float, float], ...]

    @classmethod
    def from_matrix(cls, mat: np.ndarray | Sequence[Sequence[float]]) -> "Homography":
        arr = np.asarray(mat, dtype=float)
        if arr.shape != (3, 3):
            raise GeometryError("homography must be 3x3")
        if abs(arr[2, 2]) < 1e-12:
            raise DegenerateQuad("cannot normalize homography: h33 ~ 0")
        arr = arr / arr[2, 2]
        if abs(np.linalg.det(arr)) <= 1e-12:
            raise DegenerateQuad("homography is not invertible")
        return cls(tuple(tuple(float(v) for v in row) for row in arr))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))

    def as_array(self) -> np.ndarray:
        return np.array(self.m, dtype=float)

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.as_array()))


def warp_sample(h: Homography, p: Point) -> Point:
    """Apply the projective map to one point with homogeneous divide."""
    m = h.m
    x, y = p
    w = m[2][0] * x + m[2][1] * y + m[2][2]
    if abs(w) < 1e-12:
        raise PointAtInfinity(f"point {p} maps to infinity")
    return (
        (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
        (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
    )


def _normalizing_transform(pts: Sequence[Point]) -> np.ndarray:
    """Similarity moving the centroid to the origin at RMS radius sqrt(2)."""
    arr = np.asarray(pts, dtype=float)
    centroid = arr.mean(axis=0)
    rms = float(np.sqrt(((arr - centroid) ** 2).sum(axis=1).mean()))
    scale = math.sqrt(2.0) / rms if rms > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def rectification_homography(q: Quad, out_w: float, out_h: float) -> Homography:
    """Homography sending quad corner i to rectangle corner i.

    Target corners are (0,0), (out_w,0), (out_w,out_h), (0,out_h); the
    eight unknowns are solved from the direct linear system.  Points are
    Hartley-normalized first so the singularity tolerance is independent
    of coordinate scale.
    """
    if out_w <= 0 or out_h <= 0:
        raise GeometryError("output size must be positive")
    targets = ((0.0, 0.0), (float(out_w), 0.0), (float(out_w), float(out_h)), (0.0, float(out_h)))
    t_in = _normalizing_transform(q.corners)
    t_out = _normalizing_transform(targets)

    def apply(t: np.ndarray, p: Point) -> Point:
        return (t[0, 0] * p[0] + t[0, 2], t[1, 1] * p[1] + t[1, 2])

    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, (src, dst) in enumerate(zip(q.corners, targets)):
        x, y = apply(t_in, src)
        u, v = apply(t_out, dst)
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]
        rhs[2 * i] = u
        rhs[2 * i + 1] = v
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] <= 0.0 or sv[-1] / sv[0] < 1e-9:
        raise DegenerateQuad("rectification system is singular")
    h = np.linalg.solve(a, rhs)
    norm = np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]], dtype=float
    )
    mat = np.linalg.inv(t_out) @ norm @ t_in
    return Homography.from_matrix(mat)


def quad_aspect(q: Quad) -> float:
    """Width/height ratio of the rectified quad (mean opposite edge lengths)."""
    c = q.corners

    def d(p1: Point, p2: Point) -> float:
        return math.hypot(p2[0] - p1[0], p2[1] - p1[1])

    w = (d(c[0], c[1]) + d(c[3], c[2])) / 2.0
    h = (d(c[0], c[3]) + d(c[1], c[2])) / 2.0
    if h <= 0:
        raise DegenerateQuad("quad has zero height")
    return w / h


def parse_points_attr(text: str) -> Quad:
    """Parse the canonical `x1,y1 x2,y2 x3,y3 x4,y4` form."""
    parts = text.split()
    if len(parts) != 4:
        raise GeometryError(f"expected 4 corner pairs, got {len(parts)}")
    flat: list[float] = []
    for part in parts:
        xy = part.split(",")
        if len(xy) != 2:
            raise GeometryError(f"bad corner {part!r}")
        flat.extend(float(v) for v in xy)
    return canonicalize_quad(flat)


def format_coord(v: float) -> str:
    """Canonical decimal with at most 2 fraction digits, no trailing zeros."""
    s = f"{v:.2f}"
    s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


def points_attr(q: Quad) -> str:
    return " ".join(f"{format_coord(x)},{format_coord(y)}" for x, y in q.corners)


def bounding_box(pts: Iterable[Point]) -> tuple[float, float, float, float]:
    xs, ys = zip(*pts)
    return min(xs), min(ys), max(xs), max(ys)
