"""2-D primitives shared by every stage: polygons, rectangles, rasterization,
boolean clipping, and boundary projection.

Conventions:
  * Image axes: x grows right, y grows down.  Raster grids are indexed
    ``grid[row, col] == grid[y, x]`` and the center of pixel ``(row i, col j)``
    is the continuous point ``(j + 0.5, i + 0.5)``.
  * Polygons are (N, 2) float arrays of vertices ordered clockwise as seen on
    screen (positive shoelace value under the image-axis convention), closed
    implicitly.
  * A "region" is a list of disjoint simple polygons (possibly empty).

Boolean operations are delegated to shapely/GEOS; rasterization, containment
tests, and boundary projection are implemented here so that boundary tie rules
(pixel center on an edge counts as inside, projection ties go to the lowest
edge index) are exact and deterministic.
"""

from __future__ import annotations

import numpy as np
from shapely.geometry import GeometryCollection, MultiPolygon
from shapely.geometry import Point as ShPoint
from shapely.geometry import Polygon as ShPolygon
from shapely.geometry import box as sh_box

CANVAS = 256

# tolerance (px) for "point lies on an edge" tests
EDGE_EPS = 1e-9

Region = list  # list of (N, 2) float arrays


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# polygons
# ---------------------------------------------------------------------------

def as_vertices(poly) -> np.ndarray:
    v = np.asarray(poly, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise GeometryError("polygon needs at least 3 (x, y) vertices")
    return v


def signed_area(poly) -> float:
    """Shoelace area; positive for clockwise order under image axes."""
    v = np.asarray(poly, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_area(poly) -> float:
    return abs(signed_area(poly))


def ensure_clockwise(poly) -> np.ndarray:
    v = as_vertices(poly)
    return v if signed_area(v) >= 0 else v[::-1].copy()


def validate_polygon(poly, min_area: float = 1.0) -> np.ndarray:
    """Clockwise-normalized vertices; raises on degenerate or self-intersecting."""
    v = ensure_clockwise(poly)
    if not np.all(np.isfinite(v)):
        raise GeometryError("polygon has non-finite vertices")
    if polygon_area(v) < min_area:
        raise GeometryError("degenerate polygon")
    if not ShPolygon(v).is_valid:
        raise GeometryError("polygon is self-intersecting")
    return v


def polygon_perimeter(poly) -> float:
    v = as_vertices(poly)
    return float(np.sum(np.hypot(*(np.roll(v, -1, axis=0) - v).T)))


def polygon_centroid(poly) -> np.ndarray:
    c = ShPolygon(as_vertices(poly)).centroid
    return np.array([c.x, c.y])


# ---------------------------------------------------------------------------
# rectangles
# ---------------------------------------------------------------------------

def normalize_rect(x1: float, y1: float, x2: float, y2: float) -> tuple:
    """Sort each coordinate pair so x1 < x2 and y1 < y2."""
    if x1 > x2:
        x1, x2 = x2, x1
    if y1 > y2:
        y1, y2 = y2, y1
    return (x1, y1, x2, y2)


def rect_polygon(rect) -> np.ndarray:
    x1, y1, x2, y2 = rect
    return np.array([(x1, y1), (x2, y1), (x2, y2), (x1, y2)], dtype=float)


def rect_area(rect) -> float:
    x1, y1, x2, y2 = rect
    return (x2 - x1) * (y2 - y1)


def rect_center(rect) -> np.ndarray:
    x1, y1, x2, y2 = rect
    return np.array([(x1 + x2) / 2.0, (y1 + y2) / 2.0])


# ---------------------------------------------------------------------------
# containment / rasterization
# ---------------------------------------------------------------------------

def points_in_polygon(points: np.ndarray, poly) -> np.ndarray:
    """Vectorized point-in-polygon with boundary points counted as inside."""
    v = as_vertices(poly)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    b = np.roll(v, -1, axis=0)
    for (ax, ay), (bx, by) in zip(v, b):
        # ray cast toward +x
        cond = (ay > py) != (by > py)
        if np.any(cond):
            xint = ax + (py[cond] - ay) * (bx - ax) / (by - ay)
            upd = inside[cond]
            upd ^= px[cond] < xint
            inside[cond] = upd
        # boundary test: distance from point to segment ~ 0
        ex, ey = bx - ax, by - ay
        seg_len2 = ex * ex + ey * ey
        if seg_len2 == 0.0:
            continue
        cross = ex * (py - ay) - ey * (px - ax)
        t = (ex * (px - ax) + ey * (py - ay)) / seg_len2
        on_edge |= (np.abs(cross) <= EDGE_EPS * np.sqrt(seg_len2)) & (t >= 0.0) & (t <= 1.0)
    return inside | on_edge


def _pixel_centers(x_lo: int, x_hi: int, y_lo: int, y_hi: int):
    xs = np.arange(x_lo, x_hi) + 0.5
    ys = np.arange(y_lo, y_hi) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def rasterize_polygon(poly, size: int = CANVAS) -> np.ndarray:
    """Binary mask of pixels whose centers lie inside (or on) the polygon."""
    v = validate_polygon(poly)
    mask = np.zeros((size, size), dtype=np.uint8)
    x_lo = max(int(np.floor(v[:, 0].min())), 0)
    x_hi = min(int(np.ceil(v[:, 0].max())), size)
    y_lo = max(int(np.floor(v[:, 1].min())), 0)
    y_hi = min(int(np.ceil(v[:, 1].max())), size)
    if x_lo >= x_hi or y_lo >= y_hi:
        return mask
    pts = _pixel_centers(x_lo, x_hi, y_lo, y_hi)
    hit = points_in_polygon(pts, v).reshape(y_hi - y_lo, x_hi - x_lo)
    mask[y_lo:y_hi, x_lo:x_hi] = hit.astype(np.uint8)
    return mask


def rasterize_disc(center, radius: float, size: int = CANVAS) -> np.ndarray:
    """Binary mask of pixels whose centers lie within ``radius`` of ``center``."""
    if radius < 0:
        raise GeometryError("negative radius")
    cx, cy = float(center[0]), float(center[1])
    mask = np.zeros((size, size), dtype=np.uint8)
    x_lo = max(int(np.floor(cx - radius - 1)), 0)
    x_hi = min(int(np.ceil(cx + radius + 1)), size)
    y_lo = max(int(np.floor(cy - radius - 1)), 0)
    y_hi = min(int(np.ceil(cy + radius + 1)), size)
    if x_lo >= x_hi or y_lo >= y_hi:
        return mask
    xs = np.arange(x_lo, x_hi) + 0.5
    ys = np.arange(y_lo, y_hi) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    hit = (gx - cx) ** 2 + (gy - cy) ** 2 <= radius * radius
    mask[y_lo:y_hi, x_lo:x_hi] = hit.astype(np.uint8)
    return mask


# ---------------------------------------------------------------------------
# boolean clipping (shapely-backed)
# ---------------------------------------------------------------------------

def to_shapely(poly) -> ShPolygon:
    return ShPolygon(as_vertices(poly))


def region_to_shapely(region: Region):
    if not region:
        return ShPolygon()
    geom = ShPolygon(region[0])
    for p in region[1:]:
        geom = geom.union(ShPolygon(p))
    return geom


def _split_holes(geom):
    """Cut polygons-with-holes into hole-free pieces along a vertical line."""
    if geom.is_empty:
        return []
    if isinstance(geom, (MultiPolygon, GeometryCollection)):
        out = []
        for g in geom.geoms:
            out.extend(_split_holes(g))
        return out
    if not isinstance(geom, ShPolygon):
        return []  # drop lines/points from boolean output
    if not geom.interiors:
        return [geom]
    cx = geom.interiors[0].centroid.x
    minx, miny, maxx, maxy = geom.bounds
    left = geom.intersection(sh_box(minx - 1, miny - 1, cx, maxy + 1))
    right = geom.intersection(sh_box(cx, miny - 1, maxx + 1, maxy + 1))
    return _split_holes(left) + _split_holes(right)


def from_shapely(geom, min_area: float = 1e-9) -> Region:
    """Shapely geometry -> list of simple clockwise polygons."""
    out = []
    for piece in _split_holes(geom):
        if piece.area <= min_area:
            continue
        coords = np.asarray(piece.exterior.coords[:-1], dtype=float)
        out.append(ensure_clockwise(coords))
    return out


def rect_intersect_polygon(rect, poly) -> Region:
    """Part of the rectangle inside the polygon, as exact polygon pieces."""
    x1, y1, x2, y2 = rect
    return from_shapely(sh_box(x1, y1, x2, y2).intersection(to_shapely(poly)))


def rect_subtract_polygon(rect, poly) -> Region:
    """Part of the rectangle strictly outside the polygon."""
    x1, y1, x2, y2 = rect
    return from_shapely(sh_box(x1, y1, x2, y2).difference(to_shapely(poly)))


def region_area(region: Region) -> float:
    return sum(polygon_area(p) for p in region)


def region_subtract(region: Region, other: Region) -> Region:
    if not other:
        return [np.array(p, dtype=float) for p in region]
    return from_shapely(region_to_shapely(region).difference(region_to_shapely(other)))


def region_intersect(region: Region, other: Region) -> Region:
    return from_shapely(region_to_shapely(region).intersection(region_to_shapely(other)))


def region_iou(a: Region, b: Region) -> float:
    ga, gb = region_to_shapely(a), region_to_shapely(b)
    union = ga.union(gb).area
    if union == 0.0:
        return 1.0
    return ga.intersection(gb).area / union


def region_bbox(region: Region):
    pts = np.vstack(region)
    return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())


def region_centroid(region: Region) -> np.ndarray:
    c = region_to_shapely(region).centroid
    return np.array([c.x, c.y])


def region_contains_point(region: Region, p) -> bool:
    return any(bool(points_in_polygon(np.asarray([p], dtype=float), poly)[0]) for poly in region)


# ---------------------------------------------------------------------------
# boundary projection
# ---------------------------------------------------------------------------

def project_to_boundary(p, poly) -> tuple[int, np.ndarray, float]:
    """Closest point on the polygon boundary.

    Returns (edge_index, foot, distance); exact ties go to the lowest edge
    index.  Edge i runs from vertex i to vertex (i + 1) % N.
    """
    v = as_vertices(poly)
    q = np.asarray(p, dtype=float)
    best = (0, v[0].copy(), float(np.hypot(*(q - v[0]))))
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        e = b - a
        seg_len2 = float(e @ e)
        t = 0.0 if seg_len2 == 0.0 else float(np.clip((q - a) @ e / seg_len2, 0.0, 1.0))
        foot = a + t * e
        d = float(np.hypot(*(q - foot)))
        if d < best[2]:
            best = (i, foot, d)
    return best


def boundary_distance(p, poly) -> float:
    return project_to_boundary(p, poly)[2]


def edge_outward_normal(poly, edge_index: int) -> np.ndarray:
    """Unit normal of an edge pointing away from the polygon interior."""
    v = as_vertices(poly)
    a, b = v[edge_index], v[(edge_index + 1) % len(v)]
    e = b - a
    ln = float(np.hypot(*e))
    if ln == 0.0:
        raise GeometryError("zero-length edge")
    n = np.array([-e[1], e[0]]) / ln
    mid = (a + b) / 2.0
    probe = mid + n * max(1e-3, 1e-6 * ln)
    if points_in_polygon(probe[None, :], v)[0]:
        n = -n
    return n


def perimeter_point(poly, fraction: float) -> tuple[np.ndarray, int]:
    """Point at an arc-length fraction of the perimeter, measured from vertex 0.

    Returns (point, edge_index).
    """
    v = as_vertices(poly)
    n = len(v)
    lens = [float(np.hypot(*(v[(i + 1) % n] - v[i]))) for i in range(n)]
    total = sum(lens)
    target = (fraction % 1.0) * total
    acc = 0.0
    for i in range(n):
        if acc + lens[i] >= target or i == n - 1:
            t = 0.0 if lens[i] == 0.0 else (target - acc) / lens[i]
            return v[i] + t * (v[(i + 1) % n] - v[i]), i
        acc += lens[i]
    return v[0].copy(), 0


def polygon_contains_rect(poly, rect) -> bool:
    x1, y1, x2, y2 = rect
    return to_shapely(poly).contains(sh_box(x1, y1, x2, y2))


def shapely_point_on_boundary(p, poly, tol: float = 2.0) -> bool:
    return to_shapely(poly).exterior.distance(ShPoint(float(p[0]), float(p[1]))) <= tol
