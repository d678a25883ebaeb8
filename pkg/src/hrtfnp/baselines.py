"""Classical interpolation baselines operating on the same residual features
as the neural interpolator: barycentric weighting over spherical Delaunay
faces, second-order thin-plate spherical splines, and per-frequency Gaussian
process regression with a spherical Gaussian kernel

    K(x1, x2) = exp(-2 beta (1 - x1 . x2)).

All three reproduce their context values at context locations (the GP up to
its fixed observation-noise ratio) and, since the features are scalars tied
to locations, are rotation-equivariant by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConditioningError, NumericError
from .sphere import SphereTriangulation, barycentric_coords, SphericalTriangle

GP_NOISE_VARIANCE = 1e-4
# Series tail decays ~ L^-2 through the solve; 800 keeps the doubled-truncation
# certification error below 1e-4 even for dense 100-point contexts.
SPLINE_TRUNCATION = 800


@dataclass
class KernelParams:
    beta: float

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError("precision beta must be positive and finite")


def spherical_gaussian(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """Kernel value exp(-2 beta (1 - x1 . x2)) for unit vectors."""
    return float(np.exp(-2.0 * params.beta * (1.0 - np.dot(x1, x2))))


def kernel_matrix(a: np.ndarray, b: np.ndarray, beta: float) -> np.ndarray:
    """Pairwise spherical Gaussian kernel, shape (len(a), len(b))."""
    return np.exp(-2.0 * beta * (1.0 - a @ b.T))


# ---------------------------------------------------------------------------
# barycentric


def barycentric_interpolate(
    locations: np.ndarray, features: np.ndarray, queries: np.ndarray
) -> np.ndarray:
    """Barycentric combination of the enclosing Delaunay face's vertex features.

    features has shape (C, ...); the output is (Q, ...) with the feature
    trailing shape preserved.
    """
    locations = np.asarray(locations, dtype=float)
    features = np.asarray(features)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    tri = SphereTriangulation(locations)
    out = np.empty((len(queries),) + features.shape[1:], dtype=features.dtype)
    for qi, x in enumerate(queries):
        i, j, k = tri.locate(x)
        w = barycentric_coords(
            x, SphericalTriangle(locations[i], locations[j], locations[k])
        )
        out[qi] = w[0] * features[i] + w[1] * features[j] + w[2] * features[k]
    return out


# ---------------------------------------------------------------------------
# thin-plate spherical spline


def spline_kernel(dots: np.ndarray, truncation: int = SPLINE_TRUNCATION) -> np.ndarray:
    """Second-order spherical spline kernel as a truncated Legendre series,

        R(t) = sum_{l=1}^{L} (2l+1) / (4 pi (l (l+1))^2) P_l(t),

    Kahan-compensated so doubling the truncation shifts values only at the
    certified 1e-4 level.
    """
    t = np.asarray(dots, dtype=float)
    acc = np.zeros_like(t)
    comp = np.zeros_like(t)
    p_prev = np.ones_like(t)
    p = t.copy()
    for l in range(1, truncation + 1):
        coef = (2.0 * l + 1.0) / (4.0 * math.pi * (l * (l + 1.0)) ** 2)
        term = coef * p
        y = term - comp
        s = acc + y
        comp = (s - acc) - y
        acc = s
        p_prev, p = p, ((2 * l + 1) * t * p - l * p_prev) / (l + 1)
    return acc


@dataclass
class SplineSystem:
    """Solved interpolation system: kernel weights plus a free constant."""

    locations: np.ndarray
    weights: np.ndarray  # (C, n_dims)
    constant: np.ndarray  # (n_dims,)
    feature_shape: tuple[int, ...]
    truncation: int = SPLINE_TRUNCATION


def spline_fit(
    locations: np.ndarray,
    features: np.ndarray,
    truncation: int = SPLINE_TRUNCATION,
) -> SplineSystem:
    """Fit an exact (no smoothing) spline interpolant to complex features."""
    locations = np.asarray(locations, dtype=float)
    features = np.asarray(features)
    c = len(locations)
    if c < 2:
        raise ValueError("need at least 2 context points")
    dots = np.clip(locations @ locations.T, -1.0, 1.0)
    off_diag = dots[~np.eye(c, dtype=bool)]
    if off_diag.size and off_diag.max() > 1.0 - 1e-12:
        raise ConditioningError("duplicate context locations make the system singular")
    gram = spline_kernel(dots, truncation)
    system = np.zeros((c + 1, c + 1))
    system[:c, :c] = gram
    system[:c, c] = 1.0
    system[c, :c] = 1.0
    rhs = np.concatenate(
        [features.reshape(c, -1), np.zeros((1,) + features.reshape(c, -1).shape[1:])]
    )
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > 1e12:
        raise ConditioningError(f"spline system ill-conditioned (cond ~ {cond:.3e})")
    solution = np.linalg.solve(system, rhs)
    weights, constant = solution[:c], solution[c]
    residual = gram @ weights + constant[None, :] - features.reshape(c, -1)
    scale = max(np.abs(features).max(), 1e-30)
    if np.abs(residual).max() / scale > 1e-8:
        raise ConditioningError(
            f"spline solve residual too large (cond ~ {cond:.3e})"
        )
    return SplineSystem(locations, weights, constant, features.shape[1:], truncation)


def spline_eval(system: SplineSystem, queries: np.ndarray) -> np.ndarray:
    """Evaluate the interpolant at queries, shape (Q,) + feature shape."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    dots = np.clip(queries @ system.locations.T, -1.0, 1.0)
    flat = spline_kernel(dots, system.truncation) @ system.weights + system.constant
    return flat.reshape((len(queries),) + system.feature_shape)


def spline_interpolate(
    locations: np.ndarray, features: np.ndarray, queries: np.ndarray
) -> np.ndarray:
    return spline_eval(spline_fit(locations, features), queries)


# ---------------------------------------------------------------------------
# per-frequency Gaussian process


@dataclass
class GpHyper:
    """Kernel precisions per (ear, part, bin); observation noise is fixed."""

    beta: np.ndarray  # (2, 2, bins)
    noise: float = GP_NOISE_VARIANCE

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.ndim != 3 or self.beta.shape[:2] != (2, 2):
            raise ValueError("beta must have shape (2, 2, bins)")
        if not np.all(self.beta > 0):
            raise ValueError("beta must be positive")
        if self.noise != GP_NOISE_VARIANCE:
            raise ValueError("observation noise is fixed at 1e-4")

    @property
    def n_bins(self) -> int:
        return self.beta.shape[2]

    def to_json(self) -> str:
        return json.dumps({"noise": self.noise, "beta": self.beta.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GpHyper":
        raw = json.loads(text)
        return cls(np.asarray(raw["beta"], dtype=float))

    @classmethod
    def default(cls, n_bins: int, beta: float = 5.0) -> "GpHyper":
        return cls(np.full((2, 2, n_bins), beta))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GpHyper":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _features_to_dims(features: np.ndarray) -> np.ndarray:
    """(C, 2, B) complex -> (2*2*B, C) real rows ordered (ear, part, bin)."""
    parts = np.stack([features.real, features.imag], axis=2)  # (C, 2, 2, B)
    return parts.reshape(len(features), -1).T.copy()


def _chol_with_jitter(k: np.ndarray) -> np.ndarray:
    """Batched PD check with one jitter retry, per the conditioning contract."""
    try:
        np.linalg.cholesky(k)
        return k
    except np.linalg.LinAlgError:
        jittered = k + 1e-10 * np.eye(k.shape[-1])
        try:
            np.linalg.cholesky(jittered)
            return jittered
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("GP kernel matrix not positive definite") from exc


def gp_predict(
    locations: np.ndarray,
    features: np.ndarray,
    queries: np.ndarray,
    hyper: GpHyper,
) -> tuple[np.ndarray, np.ndarray]:
    """GP posterior per (ear, part, bin) with fixed observation noise.

    Returns (mean, variance): mean is complex (Q, 2, B); variance is the
    latent posterior variance (Q, 2, 2, B) indexed (query, ear, part, bin).
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    q = len(queries)
    bins = hyper.n_bins
    betas = hyper.beta.reshape(-1)  # (ndim,), ordered (ear, part, bin)
    ndim = len(betas)
    if len(locations) == 0:
        mean_parts = np.zeros((ndim, q))
        var = np.ones((ndim, q))
    else:
        locations = np.asarray(locations, dtype=float)
        y = _features_to_dims(np.asarray(features))  # (ndim, C)
        d_cc = 1.0 - locations @ locations.T
        d_cq = 1.0 - locations @ queries.T
        k_cc = np.exp(-2.0 * betas[:, None, None] * d_cc[None])
        k_cc += hyper.noise * np.eye(len(locations))
        k_cc = _chol_with_jitter(k_cc)
        k_cq = np.exp(-2.0 * betas[:, None, None] * d_cq[None])  # (ndim, C, Q)
        solved = np.linalg.solve(k_cc, np.concatenate([y[:, :, None], k_cq], axis=2))
        alpha, v = solved[:, :, 0], solved[:, :, 1:]
        mean_parts = np.einsum("dcq,dc->dq", k_cq, alpha)  # k_q^T K^-1 y
        var = 1.0 - np.einsum("dcq,dcq->dq", k_cq, v)
        var = np.maximum(var, 0.0)
    mean_re = mean_parts.reshape(2, 2, bins, q)[:, 0]
    mean_im = mean_parts.reshape(2, 2, bins, q)[:, 1]
    mean = (mean_re + 1j * mean_im).transpose(2, 0, 1)  # (Q, 2, B)
    variance = var.reshape(2, 2, bins, q).transpose(3, 0, 1, 2)
    return mean, variance


def _dim_label(dim: int, bins: int) -> str:
    ear, rest = divmod(dim, 2 * bins)
    part, b = divmod(rest, bins)
    return f"ear={'LR'[ear]} part={'re im'.split()[part]} bin={b}"


def gp_log_marginal_likelihood(
    locations: np.ndarray, features: np.ndarray, hyper: GpHyper
) -> np.ndarray:
    """Per-dimension log marginal likelihood of a context set, shape (2,2,B)."""
    betas = hyper.beta.reshape(-1)
    y = _features_to_dims(np.asarray(features))
    c = len(locations)
    d = 1.0 - np.asarray(locations, float) @ np.asarray(locations, float).T
    k = np.exp(-2.0 * betas[:, None, None] * d[None]) + hyper.noise * np.eye(c)
    alpha = np.linalg.solve(k, y[:, :, None])[:, :, 0]
    _, logdet = np.linalg.slogdet(k)
    lml = -0.5 * np.einsum("dc,dc->d", y, alpha) - 0.5 * logdet
    lml -= 0.5 * c * math.log(2.0 * math.pi)
    return lml.reshape(2, 2, -1)


def gp_fit_beta(
    tasks,
    init: GpHyper,
    iterations: int = 200,
    step: float = 0.1,
) -> GpHyper:
    """Fit per-(ear, part, bin) precisions by gradient ascent on log beta.

    The objective is the log marginal likelihood summed over the tasks'
    context sets; the raw gradient is normalized by the total context point
    count so the fixed step size is scale-free. The best iterate per
    dimension is returned, which guarantees the final likelihood is at least
    the initial one.
    """
    if not tasks:
        raise ValueError("need at least one task")
    bins = init.n_bins
    ndim = 4 * bins
    prepared = []
    total_points = 0
    for task in tasks:
        c = task.context_size
        if c == 0:
            continue
        locs = np.asarray(task.context_locations, dtype=float)
        prepared.append(
            (1.0 - locs @ locs.T, _features_to_dims(task.context_features))
        )
        total_points += c
    if not prepared:
        return GpHyper(init.beta.copy())

    log_beta = np.log(init.beta.reshape(-1)).copy()
    best_lml = np.full(ndim, -np.inf)
    best_log_beta = log_beta.copy()

    for _ in range(iterations + 1):  # final iterate is evaluated too
        beta = np.exp(log_beta)
        lml = np.zeros(ndim)
        grad = np.zeros(ndim)
        for d, y in prepared:
            c = d.shape[0]
            k_f = np.exp(-2.0 * beta[:, None, None] * d[None])
            k = k_f + GP_NOISE_VARIANCE * np.eye(c)
            alpha = np.linalg.solve(k, y[:, :, None])[:, :, 0]
            k_inv = np.linalg.inv(k)
            _, logdet = np.linalg.slogdet(k)
            lml += (
                -0.5 * np.einsum("dc,dc->d", y, alpha)
                - 0.5 * logdet
                - 0.5 * c * math.log(2.0 * math.pi)
            )
            dk = (-2.0 * beta[:, None, None]) * d[None] * k_f  # d k / d log beta
            grad += 0.5 * np.einsum("dc,dce,de->d", alpha, dk, alpha)
            grad -= 0.5 * np.einsum("dce,dce->d", k_inv, dk)
        if not np.all(np.isfinite(lml)):
            bad = int(np.nonzero(~np.isfinite(lml))[0][0])
            raise NumericError(
                f"non-finite GP likelihood at {_dim_label(bad, bins)}"
            )
        improved = lml > best_lml
        best_lml[improved] = lml[improved]
        best_log_beta[improved] = log_beta[improved]
        log_beta = log_beta + step * grad / total_points

    return GpHyper(np.exp(best_log_beta).reshape(2, 2, bins))
