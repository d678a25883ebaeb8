"""Synthetic benchmark data: band-limited random fields standing in for real
HRTF residuals, so the full pipeline (tasks, baselines, training, metrics)
runs at desk scale without any external dataset.

Each subject is a pair of complex fields on a shared near-uniform grid. The
left ear is a random band-limited field with per-degree variance
(1 + l)^-2; the right ear is the left field read at mirrored locations plus
a small independent asymmetry; bins are correlated across frequency by an
AR(1) coefficient process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sht import num_coeffs, real_sh_basis
from .sphere import approx_uniform_grid, mirror_median
from .store import AlignedSet, DatasetSplit


@dataclass
class SynthConfig:
    subjects: int = 12
    positions: int = 220
    freq_bins: int = 5
    degree: int = 6
    freq_corr: float = 0.7  # AR(1) coefficient across bins
    asymmetry: float = 0.1  # relative right-ear deviation from mirror symmetry
    amplitude: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 3:
            raise ValueError("need at least 3 subjects to form a split")
        if not 0.0 <= self.freq_corr < 1.0:
            raise ValueError("freq_corr must lie in [0, 1)")


def _coeff_process(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Complex coefficients (n_lm, F): N(0, (1+l)^-2) per degree, AR(1) in f."""
    n_lm = num_coeffs(cfg.degree)
    scale = np.concatenate(
        [np.full(2 * l + 1, 1.0 / (1.0 + l)) for l in range(cfg.degree + 1)]
    )
    rho = cfg.freq_corr
    innov = np.sqrt(1.0 - rho * rho)
    draws = rng.standard_normal((n_lm, cfg.freq_bins, 2))
    coeffs = np.empty((n_lm, cfg.freq_bins), dtype=complex)
    coeffs[:, 0] = draws[:, 0, 0] + 1j * draws[:, 0, 1]
    for f in range(1, cfg.freq_bins):
        coeffs[:, f] = rho * coeffs[:, f - 1] + innov * (
            draws[:, f, 0] + 1j * draws[:, f, 1]
        )
    return coeffs * scale[:, None] * cfg.amplitude


def synth_subject(
    rng: np.random.Generator, positions: np.ndarray, cfg: SynthConfig, subject_id: str
) -> AlignedSet:
    """One subject's residual-style set (zero delays, complex spectra)."""
    basis = real_sh_basis(positions, cfg.degree)  # (P, n_lm)
    basis_mirror = real_sh_basis(mirror_median(positions), cfg.degree)
    main = _coeff_process(rng, cfg)
    asym = _coeff_process(rng, cfg)
    left = basis @ main  # (P, F)
    right = basis_mirror @ main + cfg.asymmetry * (basis @ asym)
    spectra = np.stack([left, right], axis=1)  # (P, 2, F)
    delays = np.zeros((len(positions), 2))
    n_taps = 2 * (cfg.freq_bins - 1)
    return AlignedSet(subject_id, positions, delays, spectra, 33075.0, n_taps)


def synth_dataset(cfg: SynthConfig) -> tuple[list[AlignedSet], DatasetSplit]:
    """Deterministic subject list plus a train/validate/test split.

    The last four subjects form the validation (2) and test (2) sets.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    positions = approx_uniform_grid(cfg.positions)
    subjects = [
        synth_subject(rng, positions, cfg, subject_id=str(i + 1))
        for i in range(cfg.subjects)
    ]
    ids = list(range(1, cfg.subjects + 1))
    split = DatasetSplit(
        train=ids[:-4] if cfg.subjects >= 5 else ids[:-2],
        validate=ids[-4:-2] if cfg.subjects >= 5 else ids[-2:-1],
        test=ids[-2:] if cfg.subjects >= 5 else ids[-1:],
        discarded=[],
    )
    return subjects, split
