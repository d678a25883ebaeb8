"""Accuracy and calibration metrics.

Per-feature accuracy compares a complex estimate against a complex truth:
relative error in dB, absolute log-magnitude distance in dB, and a per-filter
log-spectral distortion (mean over ears of the RMS log-magnitude ratio).
Features with zero truth magnitude are excluded and counted rather than
propagated as infinities; an exact match floors the relative error at
-300 dB.

Calibration follows the variance-vs-squared-error protocol: pairs are sorted
by predicted variance, split into equal-size contiguous groups, and each
group contributes its mean predicted variance (MPV) and mean squared error
(MSE). The mean calibration distance is the average absolute dB ratio
between the two columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

LRE_FLOOR_DB = -300.0


def lre(truth: complex, estimate: complex) -> float | None:
    """Relative error 20 log10 |(est - truth) / truth| in dB.

    Returns None when the truth magnitude is zero (excluded feature); exact
    matches are floored at -300 dB.
    """
    if abs(truth) == 0.0:
        return None
    if estimate == truth:
        return LRE_FLOOR_DB
    return max(LRE_FLOOR_DB, float(20.0 * np.log10(abs(estimate - truth) / abs(truth))))


def lmd(truth: complex, estimate: complex) -> float | None:
    """Log-magnitude distance |20 log10 |est / truth|| in dB; None if either
    magnitude is zero."""
    if abs(truth) == 0.0 or abs(estimate) == 0.0:
        return None
    return float(abs(20.0 * np.log10(abs(estimate) / abs(truth))))


def lsd(truth: np.ndarray, estimate: np.ndarray) -> tuple[float | None, int]:
    """Log-spectral distortion of one binaural filter, plus excluded-bin count.

    truth and estimate have shape (2, F); the value is the mean over ears of
    the RMS of 20 log10 |est/truth| across usable bins.
    """
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape or truth.ndim != 2 or truth.shape[0] != 2:
        raise ValueError("expected (2, F) filters")
    excluded = 0
    per_ear = []
    for ear in range(2):
        valid = (np.abs(truth[ear]) > 0) & (np.abs(estimate[ear]) > 0)
        excluded += int((~valid).sum())
        if not valid.any():
            return None, excluded
        ratios = 20.0 * np.log10(np.abs(estimate[ear, valid]) / np.abs(truth[ear, valid]))
        per_ear.append(np.sqrt(np.mean(ratios**2)))
    return float(0.5 * (per_ear[0] + per_ear[1])), excluded


@dataclass
class CalibrationCurve:
    mpv: np.ndarray  # mean predicted variance per division, nondecreasing
    mse: np.ndarray  # mean squared error per division
    group_sizes: np.ndarray


def calibration_curve(
    variances: np.ndarray, sq_errors: np.ndarray, divisions: int
) -> CalibrationCurve:
    """Equal-size contiguous grouping along the sorted predicted-variance axis.

    The remainder of len(pairs) / divisions is spread one pair at a time over
    the first groups, so sizes differ by at most one.
    """
    variances = np.asarray(variances, dtype=float)
    sq_errors = np.asarray(sq_errors, dtype=float)
    if variances.shape != sq_errors.shape or variances.ndim != 1:
        raise ValueError("variances and sq_errors must be equal-length vectors")
    if np.any(variances < 0) or np.any(sq_errors < 0):
        raise ValueError("calibration pairs must be nonnegative")
    n = len(variances)
    if divisions < 1 or divisions > n:
        raise ValueError(f"divisions must lie in [1, {n}]")
    order = np.argsort(variances, kind="stable")
    base, extra = divmod(n, divisions)
    sizes = np.full(divisions, base)
    sizes[:extra] += 1
    mpv = np.empty(divisions)
    mse = np.empty(divisions)
    start = 0
    for i, size in enumerate(sizes):
        group = order[start : start + size]
        mpv[i] = variances[group].mean()
        mse[i] = sq_errors[group].mean()
        start += size
    return CalibrationCurve(mpv, mse, sizes)


def mcd(curve: CalibrationCurve) -> float:
    """Mean calibration distance: (1/D) sum |10 log10(MSE_i / MPV_i)| in dB."""
    if np.any(curve.mpv <= 0):
        raise DomainError("MPV must be positive in every division")
    return float(np.mean(np.abs(10.0 * np.log10(curve.mse / curve.mpv))))


def calibration_pairs(
    truth: np.ndarray, mu: np.ndarray, sigma: np.ndarray
) -> dict[str, np.ndarray]:
    """Per-component (variance, squared error) pairs with ear/part/bin labels.

    truth, mu, sigma are (T, 2, F) complex; each real component contributes
    one pair: variance sigma_part^2 against (y_part - mu_part)^2.
    """
    if truth.shape != mu.shape or mu.shape != sigma.shape:
        raise ValueError("truth, mu, sigma shapes must match")
    t, ears, bins = truth.shape
    comp_truth = np.stack([truth.real, truth.imag], axis=2)  # (T, 2, 2, F)
    comp_mu = np.stack([mu.real, mu.imag], axis=2)
    comp_sd = np.stack([sigma.real, sigma.imag], axis=2)
    grid = np.indices((t, ears, 2, bins))
    return {
        "variance": (comp_sd**2).reshape(-1),
        "sq_error": ((comp_truth - comp_mu) ** 2).reshape(-1),
        "target": grid[0].reshape(-1),
        "ear": grid[1].reshape(-1),
        "part": grid[2].reshape(-1),
        "bin": grid[3].reshape(-1),
    }
