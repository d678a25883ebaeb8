"""Unit-sphere geometry: coordinates, rotations, median-plane mirroring,
near-uniform grids, spherical triangles and barycentric coordinates.

Conventions: positions are cartesian unit vectors, shape (3,) or (P, 3).
The median plane is the x-z plane (y = 0); the left ear sits at +y, so
mirroring about the median plane negates the y component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial._qhull import QhullError

from .errors import ContainmentError, DomainError, GeometryError

_CONTAIN_TOL = 1e-12  # signed-volume slack for "on boundary"


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize to unit length; raises on (near-)zero vectors."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-300):
        raise GeometryError("cannot normalize zero vector")
    return v / n


def unit_from_spherical(azimuth: float, elevation: float) -> np.ndarray:
    """Unit vector from azimuth (about +z from +x) and elevation (from x-y plane)."""
    if not -math.pi / 2 <= elevation <= math.pi / 2:
        raise DomainError(f"elevation {elevation} outside [-pi/2, pi/2]")
    ce = math.cos(elevation)
    return np.array([ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)])


def mirror_median(p: np.ndarray) -> np.ndarray:
    """Reflect about the median (x-z) plane: negate the y component. Involution."""
    p = np.asarray(p, dtype=float)
    out = p.copy()
    out[..., 1] = -out[..., 1]
    return out


def rotate(rotation: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Apply a 3x3 rotation to one point or a stack of points."""
    return np.asarray(p, dtype=float) @ np.asarray(rotation, dtype=float).T


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix drawn uniformly from SO(3) via a uniform unit quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def approx_uniform_grid(count: int) -> np.ndarray:
    """Deterministic Fibonacci-lattice points, shape (count, 3).

    One fixed grid per count; count 0 gives an empty array and count 1 the
    north pole (0, 0, 1).
    """
    if count < 0:
        raise DomainError("count must be nonnegative")
    if count == 0:
        return np.zeros((0, 3))
    if count == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(count, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / count
    phi = i * (math.pi * (3.0 - math.sqrt(5.0)))  # golden angle
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@dataclass(frozen=True)
class SphericalTriangle:
    """Three pairwise non-coincident, non-antipodal unit vertices."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name, v in (("a", self.a), ("b", self.b), ("c", self.c)):
            v = np.asarray(v, dtype=float)
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise GeometryError(f"vertex {name} is not unit length")
            object.__setattr__(self, name, v)
        for u, v in ((self.a, self.b), (self.b, self.c), (self.c, self.a)):
            sep = angle_between(u, v)
            if sep < 1e-9 or sep > math.pi - 1e-9:
                raise GeometryError("triangle vertices coincident or antipodal")

    def vertices(self) -> np.ndarray:
        return np.stack([self.a, self.b, self.c])


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in [0, pi] between two unit vectors, stable near 0 and pi."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def _vertex_angle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Spherical angle at vertex a between arcs a->b and a->c."""
    u = b - np.dot(a, b) * a
    v = c - np.dot(a, c) * a
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    # tangent projections scale with sin(separation); anything below 1e-12 is
    # coincident/antipodal up to float noise (valid triangles sit above 1e-9)
    if nu < 1e-12 or nv < 1e-12:
        raise DomainError("degenerate spherical triangle (coincident or antipodal arc)")
    u = u / nu
    v = v / nv
    return math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v)))


def spherical_triangle_area(tri: SphericalTriangle) -> float:
    """Spherical excess: sum of the three vertex angles minus pi, in steradians."""
    area = (
        _vertex_angle(tri.a, tri.b, tri.c)
        + _vertex_angle(tri.b, tri.c, tri.a)
        + _vertex_angle(tri.c, tri.a, tri.b)
        - math.pi
    )
    if not 0.0 < area < 2.0 * math.pi:
        raise DomainError(f"degenerate spherical triangle (excess {area})")
    return area


def _area_or_zero(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Excess area with degenerate sub-triangles collapsing to 0 (for ratios)."""
    try:
        return (
            _vertex_angle(a, b, c)
            + _vertex_angle(b, c, a)
            + _vertex_angle(c, a, b)
            - math.pi
        )
    except DomainError:
        return 0.0


def _contains(a: np.ndarray, b: np.ndarray, c: np.ndarray, x: np.ndarray) -> bool:
    orient = float(np.dot(a, np.cross(b, c)))
    if abs(orient) < 1e-300:
        return False
    s = 1.0 if orient > 0 else -1.0
    return (
        s * float(np.dot(a, np.cross(b, x))) >= -_CONTAIN_TOL
        and s * float(np.dot(b, np.cross(c, x))) >= -_CONTAIN_TOL
        and s * float(np.dot(c, np.cross(a, x))) >= -_CONTAIN_TOL
    )


def barycentric_coords(x: np.ndarray, tri: SphericalTriangle) -> np.ndarray:
    """Barycentric weights of x in tri as ratios of spherical sub-triangle areas.

    Weights are nonnegative and sum to 1; raises ContainmentError when x lies
    outside the triangle.
    """
    x = np.asarray(x, dtype=float)
    if not _contains(tri.a, tri.b, tri.c, x):
        raise ContainmentError("query point outside spherical triangle")
    sub = np.array(
        [
            max(0.0, _area_or_zero(x, tri.b, tri.c)),
            max(0.0, _area_or_zero(tri.a, x, tri.c)),
            max(0.0, _area_or_zero(tri.a, tri.b, x)),
        ]
    )
    total = sub.sum()
    if total < 1e-300:
        raise DomainError("degenerate spherical triangle")
    return sub / total


class SphereTriangulation:
    """Spherical Delaunay faces (3-D convex hull) with fast point location."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if len(points) < 4:
            raise GeometryError("need at least 4 points for a triangulation")
        try:
            hull = ConvexHull(points, qhull_options="Qt")
        except QhullError as exc:
            raise GeometryError(f"degenerate convex hull: {exc}") from exc
        if hull.simplices.shape[1] != 3:
            raise GeometryError("convex hull is not three-dimensional")
        self.points = points
        self.faces = hull.simplices.astype(int)
        a = points[self.faces[:, 0]]
        b = points[self.faces[:, 1]]
        c = points[self.faces[:, 2]]
        # per-face orientation sign and the three edge normals for containment
        self._sign = np.sign(np.einsum("ij,ij->i", a, np.cross(b, c)))[:, None]
        self._edge_normals = self._sign[:, :, None] * np.stack(
            [np.cross(a, b), np.cross(b, c), np.cross(c, a)], axis=1
        )  # (nf, 3, 3)
        self._areas = np.array(
            [_area_or_zero(points[i], points[j], points[k]) for i, j, k in self.faces]
        )

    def locate(self, x: np.ndarray) -> tuple[int, int, int]:
        """Indices of the face containing direction x.

        Ties on shared edges/vertices are broken by smaller spherical area,
        then by lexicographic vertex indices.
        """
        x = np.asarray(x, dtype=float)
        inside = np.all(self._edge_normals @ x >= -_CONTAIN_TOL, axis=1)
        hits = np.nonzero(inside)[0]
        if len(hits) == 0:
            raise ContainmentError("no hull face contains the query direction")
        best = min(hits, key=lambda f: (self._areas[f], tuple(sorted(self.faces[f]))))
        return tuple(sorted(int(v) for v in self.faces[best]))


def enclosing_triangle(x: np.ndarray, points: np.ndarray) -> tuple[int, int, int]:
    """Face of the spherical Delaunay triangulation (3-D convex hull) containing x.

    Builds the hull per call; use SphereTriangulation directly for many queries.
    """
    return SphereTriangulation(points).locate(x)


def nearest_index(q: np.ndarray, points: np.ndarray) -> int:
    """Index of the point with maximal dot product with q; first index wins ties."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        raise ValueError("empty point list")
    return int(np.argmax(points @ np.asarray(q, dtype=float)))
