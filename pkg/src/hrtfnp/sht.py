"""Spherical-harmonic analysis/synthesis on an equiangular grid, zonal-filter
convolution, and coefficient-space rotation.

Grid layout: G x G row-major samples with uniform colatitudes
theta_j = pi (j + 1/2) / G and longitudes phi_k = 2 pi k / G. The longitude
set is closed under phi -> -phi, so reflection about the median plane maps
grid nodes to grid nodes: (j, k) -> (j, (G - k) mod G).

Quadrature weights are solved from Legendre moment conditions, which makes
analysis exact for bandwidths L <= G/2 - 1; that bound is enforced.

Complex basis: orthonormal Y_l^m with Condon-Shortley phase, so a constant
field of 1 has coefficient sqrt(4 pi) at (0, 0). The real orthonormal basis
(used for the model's precomputed linear maps) pairs cos/sin longitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BandwidthError, DomainError

# ---------------------------------------------------------------------------
# coefficient bookkeeping


def num_coeffs(bandwidth: int) -> int:
    return (bandwidth + 1) ** 2


def lm_index(l: int, m: int) -> int:
    """Packed index of (l, m), m = -l..l, in the (L+1)^2 layout."""
    return l * l + l + m


@dataclass
class ShCoeffs:
    """Complex spherical-harmonic coefficients up to degree `bandwidth`."""

    bandwidth: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (num_coeffs(self.bandwidth),):
            raise BandwidthError(
                f"expected {num_coeffs(self.bandwidth)} coefficients, "
                f"got {self.values.shape}"
            )

    def __getitem__(self, lm: tuple[int, int]) -> complex:
        l, m = lm
        return self.values[lm_index(l, m)]


@dataclass
class ZonalFilter:
    """Per-degree real filter coefficients k_l, l = 0..bandwidth."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 1 or not np.all(np.isfinite(self.coeffs)):
            raise ValueError("zonal filter coefficients must be a finite 1-D array")

    @property
    def bandwidth(self) -> int:
        return len(self.coeffs) - 1


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class EquiangularGrid:
    """Equiangular G x G sampling with quadrature weights (G even)."""

    size: int
    colat: np.ndarray = field(init=False, repr=False)
    lon: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.size
        if g < 2 or g % 2 != 0:
            raise ValueError("grid size must be even and >= 2")
        j = np.arange(g)
        object.__setattr__(self, "colat", math.pi * (j + 0.5) / g)
        object.__setattr__(self, "lon", 2.0 * math.pi * j / g)
        object.__setattr__(self, "weights", _quadrature_weights(g))

    @property
    def max_bandwidth(self) -> int:
        return self.size // 2 - 1

    def node_vectors(self) -> np.ndarray:
        """Unit vectors of all G*G nodes, row-major (colat-major), shape (G*G, 3)."""
        st = np.sin(self.colat)[:, None]
        ct = np.cos(self.colat)[:, None]
        cp = np.cos(self.lon)[None, :]
        sp = np.sin(self.lon)[None, :]
        xyz = np.stack(
            [st * cp, st * sp, np.broadcast_to(ct, (self.size, self.size))], axis=-1
        )
        return xyz.reshape(-1, 3)

    def reflect_indices(self) -> np.ndarray:
        """Flat index permutation realizing the median-plane reflection."""
        g = self.size
        j, k = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        return (j * g + (g - k) % g).reshape(-1)


@lru_cache(maxsize=16)
def _quadrature_weights(g: int) -> np.ndarray:
    """Colatitude weights making sum_j w_j P_n(cos theta_j) = 2 delta_{n0}
    hold for n < G, hence exact analysis up to bandwidth G/2 - 1."""
    x = np.cos(math.pi * (np.arange(g) + 0.5) / g)
    vander = np.polynomial.legendre.legvander(x, g - 1)  # (g, n)
    rhs = np.zeros(g)
    rhs[0] = 2.0
    w = np.linalg.solve(vander.T, rhs)
    w.setflags(write=False)
    return w


def _check_bandwidth(grid: EquiangularGrid, bandwidth: int) -> None:
    if bandwidth < 0 or bandwidth > grid.max_bandwidth:
        raise BandwidthError(
            f"bandwidth {bandwidth} outside [0, {grid.max_bandwidth}] for G={grid.size}"
        )


# ---------------------------------------------------------------------------
# Legendre machinery


def legendre_poly(l: int, t: float) -> float:
    """Legendre polynomial P_l(t) by the stable three-term recurrence."""
    if not -1.0 <= t <= 1.0:
        raise DomainError(f"argument {t} outside [-1, 1]")
    if l < 0:
        raise DomainError("degree must be nonnegative")
    p_prev, p = 1.0, t
    if l == 0:
        return 1.0
    for n in range(2, l + 1):
        p_prev, p = p, ((2 * n - 1) * t * p - (n - 1) * p_prev) / n
    return p


def _nalf_table(x: np.ndarray, bandwidth: int) -> np.ndarray:
    """Orthonormalized associated Legendre functions with Condon-Shortley phase.

    Returns table[i, l, m] = Pbar_l^m(x_i) for m >= 0 (zeros where m > l),
    normalized so that int Pbar^2 d(cos theta) = 1/(2 pi).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    L = bandwidth
    tab = np.zeros((n, L + 1, L + 1))
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    tab[:, 0, 0] = math.sqrt(1.0 / (4.0 * math.pi))
    for m in range(1, L + 1):
        tab[:, m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * s * tab[:, m - 1, m - 1]
    for m in range(L):
        tab[:, m + 1, m] = math.sqrt(2 * m + 3) * x * tab[:, m, m]
    for m in range(L + 1):
        for l in range(m + 2, L + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            tab[:, l, m] = a * (x * tab[:, l - 1, m] - b * tab[:, l - 2, m])
    return tab


# ---------------------------------------------------------------------------
# transforms


def forward_sht(field: np.ndarray, bandwidth: int, grid: EquiangularGrid) -> ShCoeffs:
    """Analysis: quadrature projection of a G x G field onto Y_l^m, l <= bandwidth."""
    _check_bandwidth(grid, bandwidth)
    g = grid.size
    field = np.asarray(field)
    if field.shape != (g, g):
        field = field.reshape(g, g)
    fm = (2.0 * math.pi / g) * np.fft.fft(field.astype(complex), axis=1)
    tab = _nalf_table(np.cos(grid.colat), bandwidth)  # (g, L+1, L+1)
    wfm = grid.weights[:, None] * fm
    out = np.zeros(num_coeffs(bandwidth), dtype=complex)
    for m in range(bandwidth + 1):
        proj_pos = tab[:, :, m].T @ wfm[:, m]  # sum_j w_j Pbar_l^m F_m[j]
        for l in range(m, bandwidth + 1):
            out[lm_index(l, m)] = proj_pos[l]
        if m > 0:
            proj_neg = tab[:, :, m].T @ wfm[:, (g - m) % g]
            sign = (-1) ** m
            for l in range(m, bandwidth + 1):
                out[lm_index(l, -m)] = sign * proj_neg[l]
    return ShCoeffs(bandwidth, out)


def inverse_sht(coeffs: ShCoeffs, grid: EquiangularGrid) -> np.ndarray:
    """Synthesis: pointwise sum of coefficients times Y_l^m on the grid nodes."""
    _check_bandwidth(grid, coeffs.bandwidth)
    g = grid.size
    L = coeffs.bandwidth
    tab = _nalf_table(np.cos(grid.colat), L)
    gfull = np.zeros((g, g), dtype=complex)
    for m in range(L + 1):
        ls = np.arange(m, L + 1)
        pos = np.array([coeffs.values[lm_index(l, m)] for l in ls])
        gfull[:, m] += tab[:, ls, m] @ pos
        if m > 0:
            neg = np.array([coeffs.values[lm_index(l, -m)] for l in ls])
            gfull[:, (g - m) % g] += (-1) ** m * (tab[:, ls, m] @ neg)
    return np.fft.ifft(gfull, axis=1) * g


def zonal_convolve(coeffs: ShCoeffs, filt: ZonalFilter) -> ShCoeffs:
    """Spherical convolution with a zonal filter: per-degree scaling of
    coefficients by sqrt(4 pi / (2l + 1)) k_l."""
    if filt.bandwidth != coeffs.bandwidth:
        raise BandwidthError(
            f"filter bandwidth {filt.bandwidth} != coefficients {coeffs.bandwidth}"
        )
    gains = degree_expand(
        np.sqrt(4.0 * math.pi / (2.0 * np.arange(coeffs.bandwidth + 1) + 1.0))
        * filt.coeffs,
        coeffs.bandwidth,
    )
    return ShCoeffs(coeffs.bandwidth, coeffs.values * gains)


def degree_expand(per_degree: np.ndarray, bandwidth: int) -> np.ndarray:
    """Replicate per-degree values across m, giving a per-coefficient vector."""
    out = np.empty(num_coeffs(bandwidth), dtype=np.asarray(per_degree).dtype)
    for l in range(bandwidth + 1):
        out[l * l : (l + 1) ** 2] = per_degree[l]
    return out


def anchor_degrees(bandwidth: int, anchors: int) -> list[int]:
    """Anchor placement for zonal-filter interpolation: uniform in degree."""
    if anchors < 2:
        raise ValueError("need at least 2 anchors")
    degs = [round(i * bandwidth / (anchors - 1)) for i in range(anchors)]
    seen: list[int] = []
    for d in degs:  # collapse duplicates when anchors > bandwidth + 1
        if d not in seen:
            seen.append(d)
    return seen


def anchor_interp_matrix(bandwidth: int, anchors: int) -> np.ndarray:
    """Matrix P with k_l = (P @ anchor_values)_l by piecewise-linear interpolation."""
    degs = anchor_degrees(bandwidth, anchors)
    P = np.zeros((bandwidth + 1, anchors))
    for l in range(bandwidth + 1):
        if l <= degs[0]:
            P[l, 0] = 1.0
            continue
        if l >= degs[-1]:
            P[l, len(degs) - 1] = 1.0
            continue
        hi = next(i for i, d in enumerate(degs) if d >= l)
        lo = hi - 1
        t = (l - degs[lo]) / (degs[hi] - degs[lo])
        P[l, lo] = 1.0 - t
        P[l, hi] = t
    return P


def interpolate_zonal_filter(anchor_values: np.ndarray, bandwidth: int) -> ZonalFilter:
    """Zonal filter from a few anchor values, piecewise-linear across degrees."""
    anchor_values = np.asarray(anchor_values, dtype=float)
    P = anchor_interp_matrix(bandwidth, len(anchor_values))
    return ZonalFilter(P @ anchor_values)


# ---------------------------------------------------------------------------
# pointwise evaluation (off-grid synthesis, field sampling)


def sh_basis(dirs: np.ndarray, bandwidth: int) -> np.ndarray:
    """Complex basis values Y_l^m at unit directions, shape (n, (L+1)^2)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    x = np.clip(dirs[:, 2], -1.0, 1.0)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    tab = _nalf_table(x, bandwidth)
    out = np.zeros((len(dirs), num_coeffs(bandwidth)), dtype=complex)
    for m in range(bandwidth + 1):
        e = np.exp(1j * m * phi)
        for l in range(m, bandwidth + 1):
            out[:, lm_index(l, m)] = tab[:, l, m] * e
            if m > 0:
                out[:, lm_index(l, -m)] = (-1) ** m * tab[:, l, m] * np.conj(e)
    return out


def real_sh_basis(dirs: np.ndarray, bandwidth: int) -> np.ndarray:
    """Real orthonormal basis at unit directions, shape (n, (L+1)^2).

    Layout matches lm_index with m > 0 the cosine branch and m < 0 the sine
    branch; zonal convolution scales both branches of a degree identically.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    x = np.clip(dirs[:, 2], -1.0, 1.0)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    tab = _nalf_table(x, bandwidth)
    out = np.zeros((len(dirs), num_coeffs(bandwidth)))
    rt2 = math.sqrt(2.0)
    for m in range(bandwidth + 1):
        c = np.cos(m * phi)
        s = np.sin(m * phi)
        for l in range(m, bandwidth + 1):
            if m == 0:
                out[:, lm_index(l, 0)] = tab[:, l, 0]
            else:
                out[:, lm_index(l, m)] = rt2 * tab[:, l, m] * c
                out[:, lm_index(l, -m)] = rt2 * tab[:, l, m] * s
    return out


def synthesize_at(coeffs: ShCoeffs, dirs: np.ndarray) -> np.ndarray:
    """Evaluate the band-limited function at arbitrary unit directions."""
    return sh_basis(dirs, coeffs.bandwidth) @ coeffs.values


def analysis_matrix(grid: EquiangularGrid, bandwidth: int) -> np.ndarray:
    """Real-basis analysis as a dense ((L+1)^2, G^2) linear map (with weights)."""
    _check_bandwidth(grid, bandwidth)
    basis = real_sh_basis(grid.node_vectors(), bandwidth)  # (G^2, n_lm)
    w = np.repeat(grid.weights, grid.size) * (2.0 * math.pi / grid.size)
    return (basis * w[:, None]).T


def synthesis_matrix(grid: EquiangularGrid, bandwidth: int) -> np.ndarray:
    """Real-basis synthesis as a dense (G^2, (L+1)^2) linear map."""
    _check_bandwidth(grid, bandwidth)
    return real_sh_basis(grid.node_vectors(), bandwidth)


# ---------------------------------------------------------------------------
# rotation of coefficients (Wigner-D); primarily equivariance-test machinery

def _zyz_euler(rotation: np.ndarray) -> tuple[float, float, float]:
    """ZYZ Euler angles with R = Rz(alpha) Ry(beta) Rz(gamma)."""
    r = np.asarray(rotation, dtype=float)
    beta = math.acos(max(-1.0, min(1.0, r[2, 2])))
    if math.sin(beta) > 1e-12:
        alpha = math.atan2(r[1, 2], r[0, 2])
        gamma = math.atan2(r[2, 1], -r[2, 0])
    elif r[2, 2] > 0.0:  # beta ~ 0
        alpha = math.atan2(r[1, 0], r[0, 0])
        gamma = 0.0
    else:  # beta ~ pi
        alpha = math.atan2(-r[1, 0], -r[0, 0])
        gamma = 0.0
    return alpha, beta, gamma


@lru_cache(maxsize=None)
def _wigner_d_coeffs(l: int) -> list[list[list[tuple[int, float]]]]:
    """Exact expansion terms of d^l_{m'm}: list over (m', m) of (s, factor)."""
    fact = math.factorial
    terms: list[list[list[tuple[int, float]]]] = []
    for mp in range(-l, l + 1):
        row: list[list[tuple[int, float]]] = []
        for m in range(-l, l + 1):
            pre = math.sqrt(
                fact(l + mp) * fact(l - mp) * fact(l + m) * fact(l - m)
            )
            entry: list[tuple[int, float]] = []
            for s in range(max(0, m - mp), min(l + m, l - mp) + 1):
                denom = (
                    fact(l + m - s) * fact(s) * fact(mp - m + s) * fact(l - mp - s)
                )
                entry.append((s, (-1) ** (mp - m + s) * pre / denom))
            row.append(entry)
        terms.append(row)
    return terms


def wigner_d(l: int, beta: float) -> np.ndarray:
    """Wigner small-d matrix d^l_{m'm}(beta), indexed [m'+l, m+l]."""
    c = math.cos(beta / 2.0)
    s = math.sin(beta / 2.0)
    terms = _wigner_d_coeffs(l)
    out = np.zeros((2 * l + 1, 2 * l + 1))
    for i, mp in enumerate(range(-l, l + 1)):
        for j, m in enumerate(range(-l, l + 1)):
            acc = 0.0
            for k, factor in terms[i][j]:
                acc += factor * c ** (2 * l + m - mp - 2 * k) * s ** (mp - m + 2 * k)
            out[i, j] = acc
    return out


def rotate_coeffs(coeffs: ShCoeffs, rotation: np.ndarray) -> ShCoeffs:
    """Coefficients of the rotated function x -> f(R^-1 x)."""
    alpha, beta, gamma = _zyz_euler(rotation)
    L = coeffs.bandwidth
    out = np.zeros_like(coeffs.values)
    for l in range(L + 1):
        ms = np.arange(-l, l + 1)
        block = coeffs.values[l * l : (l + 1) ** 2]
        d = wigner_d(l, beta)
        dmat = (
            np.exp(-1j * ms[:, None] * alpha) * d * np.exp(-1j * ms[None, :] * gamma)
        )
        out[l * l : (l + 1) ** 2] = dmat @ block
    return ShCoeffs(L, out)
