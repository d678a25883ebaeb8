import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrtfnp.errors import ContainmentError, DomainError, GeometryError
from hrtfnp.sphere import (
    SphericalTriangle,
    angle_between,
    approx_uniform_grid,
    barycentric_coords,
    enclosing_triangle,
    mirror_median,
    nearest_index,
    random_rotation,
    rotate,
    spherical_triangle_area,
    unit,
    unit_from_spherical,
)

E1, E2, E3 = np.eye(3)


def random_units(rng, n):
    return unit(rng.standard_normal((n, 3)))


def lhuilier_area(a, b, c):
    """Independent oracle: L'Huilier's theorem from the three side arcs."""
    sa = angle_between(b, c)
    sb = angle_between(c, a)
    sc = angle_between(a, b)
    s = 0.5 * (sa + sb + sc)
    t = (
        math.tan(s / 2)
        * math.tan((s - sa) / 2)
        * math.tan((s - sb) / 2)
        * math.tan((s - sc) / 2)
    )
    return 4.0 * math.atan(math.sqrt(max(0.0, t)))


def contains_oracle(a, b, c, x, tol=1e-12):
    """Independent containment check via consistently-signed triple products."""
    orient = np.dot(a, np.cross(b, c))
    s = math.copysign(1.0, orient)
    return all(
        s * np.dot(u, np.cross(v, x)) >= -tol
        for u, v in ((a, b), (b, c), (c, a))
    )


# ---------------------------------------------------------------------------
# coordinates and mirroring


def test_unit_from_spherical_conventions():
    assert np.allclose(unit_from_spherical(0, 0), E1, atol=1e-15)
    assert np.allclose(unit_from_spherical(math.pi / 2, 0), E2, atol=1e-15)
    assert np.allclose(unit_from_spherical(0, math.pi / 2), E3, atol=1e-15)


def test_unit_from_spherical_rejects_bad_elevation():
    with pytest.raises(DomainError):
        unit_from_spherical(0.0, 2.0)


def test_mirror_median_basics():
    assert np.array_equal(mirror_median(np.array([0.0, 1.0, 0.0])), [0.0, -1.0, 0.0])
    assert np.array_equal(mirror_median(E1), E1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mirror_median_involution_and_isometry(seed):
    rng = np.random.default_rng(seed)
    p, q = random_units(rng, 2)
    assert np.array_equal(mirror_median(mirror_median(p)), p)
    assert abs(np.dot(mirror_median(p), mirror_median(q)) - np.dot(p, q)) < 1e-15


# ---------------------------------------------------------------------------
# rotations


def test_random_rotation_deterministic_and_special_orthogonal():
    r1 = random_rotation(np.random.default_rng(7))
    r2 = random_rotation(np.random.default_rng(7))
    assert np.array_equal(r1, r2)
    assert np.abs(r1 @ r1.T - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(r1) - 1.0) < 1e-12


def test_random_rotation_uniformity_monte_carlo():
    rng = np.random.default_rng(123)
    acc = np.zeros(3)
    n = 10**5
    for _ in range(n):
        acc += random_rotation(rng)[:, 2]  # image of e_z
    assert np.linalg.norm(acc / n) < 0.02


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rotation_preserves_dot_products(seed):
    rng = np.random.default_rng(seed)
    r = random_rotation(rng)
    x, y = random_units(rng, 2)
    assert abs(np.dot(rotate(r, x), rotate(r, y)) - np.dot(x, y)) < 1e-12


# ---------------------------------------------------------------------------
# near-uniform grids


def test_grid_edge_counts():
    assert approx_uniform_grid(0).shape == (0, 3)
    assert np.array_equal(approx_uniform_grid(1), [[0.0, 0.0, 1.0]])


def test_grid_is_deterministic_and_unit():
    for n in (2, 17, 100):
        g1 = approx_uniform_grid(n)
        g2 = approx_uniform_grid(n)
        assert np.array_equal(g1, g2)
        assert np.abs(np.linalg.norm(g1, axis=1) - 1.0).max() < 1e-12


def test_grid_spacing_is_near_uniform():
    # Oracle: brute-force pairwise scan; the realized minimum separation must
    # be within 25% of the ideal-packing estimate for 100 points.
    pts = approx_uniform_grid(100)
    dots = np.clip(pts @ pts.T, -1, 1)
    np.fill_diagonal(dots, -1.0)
    min_sep = np.arccos(dots.max())
    ideal = math.sqrt(4.0 * math.pi / 100 * 2.0 / math.sqrt(3.0))  # hex packing
    assert abs(min_sep - ideal) / ideal < 0.25


# ---------------------------------------------------------------------------
# triangles and barycentric coordinates


def test_octant_triangle_area():
    tri = SphericalTriangle(E1, E2, E3)
    assert abs(spherical_triangle_area(tri) - math.pi / 2) < 1e-12


def test_sliver_triangle_area_positive():
    b = unit(np.array([1.0, 1e-3, 0.0]))
    c = unit(np.array([1.0, 0.5e-3, 1e-3]))
    area = spherical_triangle_area(SphericalTriangle(E1, b, c))
    assert 0.0 < area < 1e-5


def test_degenerate_triangle_rejected():
    with pytest.raises(GeometryError):
        SphericalTriangle(E1, E1, E2)  # coincident
    with pytest.raises(GeometryError):
        SphericalTriangle(E1, -E1, E2)  # antipodal
    # collinear but separated vertices: zero excess
    mid = unit(E1 + E2)
    with pytest.raises(DomainError):
        spherical_triangle_area(SphericalTriangle(E1, mid, E2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_area_matches_lhuilier_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = random_units(rng, 3)
    try:
        tri = SphericalTriangle(a, b, c)
        area = spherical_triangle_area(tri)
    except (GeometryError, DomainError):
        return
    assert abs(area - lhuilier_area(a, b, c)) < 1e-10


def test_barycentric_at_vertex_and_center():
    tri = SphericalTriangle(E1, E2, E3)
    assert np.allclose(barycentric_coords(E1, tri), [1.0, 0.0, 0.0], atol=1e-12)
    center = unit(np.ones(3))
    assert np.allclose(barycentric_coords(center, tri), np.ones(3) / 3, atol=1e-12)


def test_barycentric_matches_area_ratio_oracle():
    tri = SphericalTriangle(E1, E2, E3)
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = unit(rng.uniform(0.05, 1.0, size=3))  # interior of the octant
        w = barycentric_coords(x, tri)
        sub = np.array(
            [
                lhuilier_area(x, E2, E3),
                lhuilier_area(E1, x, E3),
                lhuilier_area(E1, E2, x),
            ]
        )
        assert np.abs(w - sub / sub.sum()).max() < 1e-9
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w >= 0)


def test_barycentric_outside_raises():
    tri = SphericalTriangle(E1, E2, E3)
    with pytest.raises(ContainmentError):
        barycentric_coords(unit(np.array([-1.0, -1.0, 0.2])), tri)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_barycentric_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    tri = SphericalTriangle(E1, E2, E3)
    x = unit(rng.uniform(0.05, 1.0, size=3))
    w = barycentric_coords(x, tri)
    r = random_rotation(rng)
    tri_r = SphericalTriangle(rotate(r, E1), rotate(r, E2), rotate(r, E3))
    w_r = barycentric_coords(rotate(r, x), tri_r)
    assert np.abs(w - w_r).max() < 1e-9


def test_mirror_preserves_triangle_area():
    rng = np.random.default_rng(11)
    a, b, c = random_units(rng, 3)
    tri = SphericalTriangle(a, b, c)
    tri_m = SphericalTriangle(mirror_median(a), mirror_median(b), mirror_median(c))
    assert abs(
        spherical_triangle_area(tri) - spherical_triangle_area(tri_m)
    ) < 1e-12


# ---------------------------------------------------------------------------
# enclosing triangle


def test_enclosing_triangle_octahedron():
    pts = np.array([E1, -E1, E2, -E2, E3, -E3])
    x = unit(np.ones(3))
    face = enclosing_triangle(x, pts)
    assert set(face) == {0, 2, 4}


def test_enclosing_triangle_at_a_data_point():
    rng = np.random.default_rng(3)
    pts = random_units(rng, 30)
    face = enclosing_triangle(pts[12], pts)
    assert 12 in face
    tri = SphericalTriangle(*pts[list(face)])
    w = barycentric_coords(pts[12], tri)
    assert abs(w[list(face).index(12)] - 1.0) < 1e-9


def test_enclosing_triangle_containment_scan_oracle():
    rng = np.random.default_rng(17)
    pts = random_units(rng, 200)
    queries = random_units(rng, 1000)
    from scipy.spatial import ConvexHull

    from hrtfnp.sphere import SphereTriangulation

    hull = ConvexHull(pts, qhull_options="Qt")
    tri = SphereTriangulation(pts)
    # oracle: per-query exhaustive scan of every hull face with an independent
    # containment predicate
    a = pts[hull.simplices[:, 0]]
    b = pts[hull.simplices[:, 1]]
    c = pts[hull.simplices[:, 2]]
    sgn = np.sign(np.einsum("ij,ij->i", a, np.cross(b, c)))
    for x in queries:
        face = tri.locate(x)
        assert contains_oracle(*pts[list(face)], x)
        inside = (
            (sgn * (np.cross(a, b) @ x) >= -1e-12)
            & (sgn * (np.cross(b, c) @ x) >= -1e-12)
            & (sgn * (np.cross(c, a) @ x) >= -1e-12)
        )
        containing = {
            tuple(sorted(int(v) for v in s)) for s in hull.simplices[inside]
        }
        assert tuple(sorted(face)) in containing


def test_enclosing_triangle_degenerate_hull():
    pts = np.array([E1, -E1, E2, -E2])  # coplanar through the origin
    with pytest.raises(GeometryError):
        enclosing_triangle(E3, pts)


# ---------------------------------------------------------------------------
# nearest index


def test_nearest_index_basics():
    rng = np.random.default_rng(23)
    pts = random_units(rng, 40)
    assert nearest_index(pts[5], pts) == 5
    assert nearest_index(-pts[0], pts[:1]) == 0
    with pytest.raises(ValueError):
        nearest_index(E1, np.zeros((0, 3)))


def test_nearest_index_matches_linear_scan():
    rng = np.random.default_rng(29)
    pts = random_units(rng, 1730)
    for x in random_units(rng, 100):
        best = max(range(len(pts)), key=lambda i: (pts[i] @ x, -i))
        assert nearest_index(x, pts) == best
