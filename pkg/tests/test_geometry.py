import numpy as np
import pytest
from shapely.geometry import Point as ShPoint
from shapely.geometry import Polygon as ShPolygon

from planforge import geometry as geo

SQUARE = [(10, 10), (20, 10), (20, 20), (10, 20)]
L_SHAPE = [(0, 0), (20, 0), (20, 10), (10, 10), (10, 20), (0, 20)]


def rect_clip_raster_area(rect, poly, kind, res=4):
    """Brute-force area oracle on a sub-pixel grid (res^2 samples per px).

    Uses the ray-cast containment test, independent of the GEOS boolean path.
    """
    x1, y1, x2, y2 = rect
    xs = x1 + (np.arange(int(np.ceil((x2 - x1) * res))) + 0.5) / res
    ys = y1 + (np.arange(int(np.ceil((y2 - y1) * res))) + 0.5) / res
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[(pts[:, 0] < x2) & (pts[:, 1] < y2)]
    in_poly = geo.points_in_polygon(pts, poly)
    count = int(in_poly.sum()) if kind == "intersect" else int((~in_poly).sum())
    return count / (res * res)


def random_rectilinear_envelope(rng):
    """Rectangle with one random notch (L/T-ish), well inside the canvas."""
    x0, y0 = rng.uniform(15, 50, 2)
    w, h = rng.uniform(120, 200 - max(0, x0 - 15)), rng.uniform(120, 200)
    x1, y1 = min(x0 + w, 245), min(y0 + h, 245)
    nx = rng.uniform(x0 + 25, x1 - 25)
    ny = rng.uniform(y0 + 25, y1 - 25)
    return np.array(
        [(x0, y0), (x1, y0), (x1, ny), (nx, ny), (nx, y1), (x0, y1)], dtype=float
    )


class TestRasterizePolygon:
    def test_square_100_pixels(self):
        mask = geo.rasterize_polygon(SQUARE)
        assert int(mask.sum()) == 100

    def test_square_matches_brute_force_scan(self):
        # oracle: per-pixel center-in test via shapely covers (boundary inclusive)
        mask = geo.rasterize_polygon(L_SHAPE)
        sh = ShPolygon(L_SHAPE)
        ys, xs = np.nonzero(np.ones((30, 30), dtype=bool))
        for y, x in zip(ys, xs):
            expected = sh.covers(ShPoint(x + 0.5, y + 0.5))
            assert bool(mask[y, x]) == expected, (x, y)

    def test_full_canvas(self):
        mask = geo.rasterize_polygon([(0, 0), (256, 0), (256, 256), (0, 256)])
        assert int(mask.sum()) == 256 * 256

    def test_degenerate_polygon_raises(self):
        with pytest.raises(geo.GeometryError, match="degenerate"):
            geo.rasterize_polygon([(0, 0), (10, 0), (5, 0.1)])

    def test_convex_pixel_count_bounds(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            pts = rng.uniform(30, 220, (8, 2))
            hull = ShPolygon(pts).convex_hull
            v = np.asarray(hull.exterior.coords[:-1])
            area = geo.polygon_area(v)
            perim = geo.polygon_perimeter(v)
            count = int(geo.rasterize_polygon(v).sum())
            assert area - perim <= count <= area + perim


class TestRasterizeDisc:
    def test_pixel_centered_radius5(self):
        # oracle: lattice offsets with du^2 + dv^2 <= 25 -> 81
        expected = sum(
            1 for du in range(-6, 7) for dv in range(-6, 7) if du * du + dv * dv <= 25
        )
        mask = geo.rasterize_disc((100.5, 80.5), 5.0)
        assert int(mask.sum()) == expected == 81

    def test_off_canvas(self):
        assert int(geo.rasterize_disc((-10, -10), 5.0).sum()) == 0

    def test_radius_zero_single_pixel(self):
        mask = geo.rasterize_disc((12.5, 30.5), 0.0)
        assert int(mask.sum()) == 1
        assert mask[30, 12] == 1


class TestClipping:
    def test_rect_inside_envelope(self):
        region = geo.rect_intersect_polygon((50, 50, 80, 90), [(0, 0), (256, 0), (256, 256), (0, 256)])
        assert len(region) == 1
        assert geo.region_area(region) == pytest.approx(30 * 40)

    def test_rect_outside_envelope(self):
        assert geo.rect_intersect_polygon((300, 300, 340, 340), SQUARE) == []

    def test_rect_straddling_notch_vs_raster_oracle(self):
        poly = np.array(L_SHAPE, dtype=float) * 10  # scale to 200x200
        rect = (80, 50, 180, 150)  # straddles the notch corner at (100, 100)
        area = geo.region_area(geo.rect_intersect_polygon(rect, poly))
        oracle = rect_clip_raster_area(rect, poly, "intersect")
        assert area == pytest.approx(oracle, rel=0.015)

    def test_subtract_fully_inside(self):
        assert geo.rect_subtract_polygon((60, 60, 80, 80), [(0, 0), (200, 0), (200, 200), (0, 200)]) == []

    def test_subtract_fully_outside(self):
        region = geo.rect_subtract_polygon((150, 150, 170, 180), SQUARE)
        assert geo.region_area(region) == pytest.approx(20 * 30)

    def test_subtract_half_inside_vs_raster_oracle(self):
        poly = [(0, 0), (100, 0), (100, 100), (0, 100)]
        rect = (50, 40, 150, 60)
        region = geo.rect_subtract_polygon(rect, poly)
        assert geo.region_area(region) == pytest.approx(50 * 20, rel=1e-9)
        oracle = rect_clip_raster_area(rect, poly, "subtract")
        assert geo.region_area(region) == pytest.approx(oracle, rel=0.015)

    def test_partition_property_1000_random_cases(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            poly = random_rectilinear_envelope(rng)
            rx, ry = rng.uniform(0, 200, 2)
            rw, rh = rng.uniform(10, 120, 2)
            rect = (rx, ry, rx + rw, ry + rh)
            a_in = geo.region_area(geo.rect_intersect_polygon(rect, poly))
            a_out = geo.region_area(geo.rect_subtract_polygon(rect, poly))
            assert abs(a_in + a_out - geo.rect_area(rect)) < 1e-6
            assert a_in <= min(geo.rect_area(rect), geo.polygon_area(poly)) + 1e-9

    def test_subtract_creates_hole_free_pieces(self):
        # polygon strictly inside the rect: difference would have a hole
        region = geo.rect_subtract_polygon((0, 0, 100, 100), [(40, 40), (60, 40), (60, 60), (40, 60)])
        assert geo.region_area(region) == pytest.approx(100 * 100 - 400, rel=1e-9)
        shp = geo.region_to_shapely(region)
        assert abs(shp.area - (10000 - 400)) < 1e-6
        for p in region:
            assert ShPolygon(p).is_valid


class TestProjection:
    def test_point_at_vertex(self):
        edge, foot, dist = geo.project_to_boundary((10, 10), SQUARE)
        assert dist == 0.0
        assert np.allclose(foot, (10, 10))

    def test_interior_point_analytic(self):
        # oracle: enumerate the 4 edges of (0,0)-(100,100) analytically
        poly = [(0, 0), (100, 0), (100, 100), (0, 100)]
        edge, foot, dist = geo.project_to_boundary((50, 40), poly)
        assert edge == 0
        assert np.allclose(foot, (50, 0))
        assert dist == pytest.approx(40.0)

    def test_tie_goes_to_lowest_edge_index(self):
        poly = [(0, 0), (100, 0), (100, 100), (0, 100)]
        edge, foot, dist = geo.project_to_boundary((50, 50), poly)
        assert edge == 0
        assert np.allclose(foot, (50, 0))

    def test_foot_on_edge_and_dist_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            poly = random_rectilinear_envelope(rng)
            p = rng.uniform(0, 256, 2)
            edge, foot, dist = geo.project_to_boundary(p, poly)
            a = poly[edge]
            b = poly[(edge + 1) % len(poly)]
            e = b - a
            t = (foot - a) @ e / (e @ e)
            assert -1e-9 <= t <= 1 + 1e-9
            assert np.hypot(*(foot - (a + t * e))) < 1e-6
            for v in poly:
                assert dist <= np.hypot(*(p - v)) + 1e-9


class TestRegionArea:
    def test_empty(self):
        assert geo.region_area([]) == 0.0

    def test_square(self):
        assert geo.region_area([np.array(SQUARE, dtype=float)]) == pytest.approx(100.0)

    def test_l_shape_by_hand(self):
        # 20x20 minus the 10x10 corner -> 300 (shoelace by hand)
        assert geo.polygon_area(L_SHAPE) == pytest.approx(300.0)


class TestHelpers:
    def test_outward_normal_rect(self):
        poly = [(0, 0), (100, 0), (100, 100), (0, 100)]
        n = geo.edge_outward_normal(poly, 0)  # top edge, outward is -y
        assert np.allclose(n, (0, -1))
        n = geo.edge_outward_normal(poly, 1)  # right edge, outward is +x
        assert np.allclose(n, (1, 0))

    def test_perimeter_point_fractions(self):
        poly = [(0, 0), (100, 0), (100, 100), (0, 100)]
        p, e = geo.perimeter_point(poly, 0.0)
        assert np.allclose(p, (0, 0)) and e == 0
        p, e = geo.perimeter_point(poly, 0.25)
        assert np.allclose(p, (100, 0)) and e in (0, 1)
        p, _ = geo.perimeter_point(poly, 0.125)
        assert np.allclose(p, (50, 0))

    def test_normalize_rect(self):
        assert geo.normalize_rect(5, 7, 2, 3) == (2, 3, 5, 7)
