"""HRIR resampling, excess-group-delay analysis, pure-delay estimation and
time alignment.

The HRTF spectrum factors into a pure-delay exponential and a time-aligned
remainder. With the DFT convention where a causal delay of tau samples
multiplies bin n by exp(-i 2 pi n tau / N), alignment removes the delay:

    aligned_n = exp(+i 2 pi n tau / N) * raw_n,   n = 0 .. N/2,

so a pure delay of tau aligns to an all-ones spectrum. Pure delays are estimated as the power-weighted average
of excess group delay (group delay minus that of the minimum-phase
counterpart) over the bins at or below 1.1 kHz, which stays clear of group
delay jumps around spectral zeros higher up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

DELAY_BAND_HZ = 1100.0
RESAMPLE_UP = 3
RESAMPLE_DOWN = 4


class DegenerateSpectrumError(DomainError):
    """A spectrum magnitude vanished where the analysis needs it nonzero."""


@dataclass
class Hrir:
    """One direction's impulse-response pair: taps shape (2, N), left first."""

    taps: np.ndarray
    fs: float

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.ndim != 2 or self.taps.shape[0] != 2:
            raise ValueError("taps must have shape (2, N)")
        if self.taps.shape[1] % 2 != 0:
            raise ValueError("tap count must be even")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be finite")

    @property
    def n_taps(self) -> int:
        return self.taps.shape[1]


@dataclass
class HalfSpectrum:
    """Positive-frequency DFT bins, shape (2, N/2 + 1), plus original N."""

    bins: np.ndarray
    fs: float
    n_taps: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=complex)
        if self.bins.ndim != 2 or self.bins.shape[0] != 2:
            raise ValueError("bins must have shape (2, N/2 + 1)")
        if self.bins.shape[1] != self.n_taps // 2 + 1:
            raise ValueError("bin count inconsistent with tap count")

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.fs / self.n_taps


@dataclass
class PureDelay:
    """Broadband arrival times per ear, in samples."""

    tau: np.ndarray  # (2,), left first

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.tau.shape != (2,):
            raise ValueError("tau must have shape (2,)")
        if not np.all(np.isfinite(self.tau)) or np.any(self.tau < 0):
            raise ValueError("delays must be finite and nonnegative")


# ---------------------------------------------------------------------------
# resampling


@lru_cache(maxsize=1)
def _resample_filter() -> np.ndarray:
    """Kaiser-windowed sinc low-pass for the 3/4 resampler.

    32 taps per polyphase branch (97 total, symmetric), beta = 8, transition
    centered at the output Nyquist. Each branch is normalized to unit sum so
    DC passes with exactly unit gain.
    """
    half = 48  # 16 input-rate taps per side * up factor
    n = np.arange(-half, half + 1)
    cutoff = 1.0 / (2.0 * RESAMPLE_DOWN)  # cycles per intermediate-rate sample
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * n) * np.kaiser(2 * half + 1, 8.0)
    for r in range(RESAMPLE_UP):
        idx = np.nonzero((np.arange(len(h)) % RESAMPLE_UP) == r)[0]
        h[idx] /= h[idx].sum()
    h.setflags(write=False)
    return h


def resample_3_4(h: Hrir) -> Hrir:
    """Rational 3/4 resample (44.1 kHz -> 33.075 kHz), polyphase FIR."""
    if h.fs != 44100:
        raise ValueError(f"expected 44100 Hz input, got {h.fs}")
    n = h.n_taps
    if n % 4 != 0:
        raise ValueError("tap count must be divisible by 4")
    filt = _resample_filter()
    half = (len(filt) - 1) // 2
    n_out = n * RESAMPLE_UP // RESAMPLE_DOWN
    out = np.empty((2, n_out))
    for ear in range(2):
        up = np.zeros(n * RESAMPLE_UP)
        up[:: RESAMPLE_UP] = h.taps[ear]
        full = np.convolve(up, filt)
        aligned = full[half : half + n * RESAMPLE_UP]
        out[ear] = aligned[:: RESAMPLE_DOWN][:n_out]
    return Hrir(out, h.fs * RESAMPLE_UP / RESAMPLE_DOWN)


# ---------------------------------------------------------------------------
# spectra and group delay


def half_spectrum(h: Hrir) -> HalfSpectrum:
    """Positive-frequency DFT bins 0..N/2 of each ear."""
    return HalfSpectrum(np.fft.rfft(h.taps, axis=1), h.fs, h.n_taps)


def hrir_from_half_spectrum(s: HalfSpectrum) -> Hrir:
    """Hermitian-extension inverse DFT (imaginary parts at DC/Nyquist dropped)."""
    return Hrir(np.fft.irfft(s.bins, n=s.n_taps, axis=1), s.fs)


def _group_delay_samples(taps: np.ndarray, n_taps: int) -> np.ndarray:
    """Group delay (samples) at bins 0..N/2 from the unwrapped phase of a
    4x zero-padded spectrum, central differences inside, one-sided at DC."""
    pad = 4 * n_taps
    phase = np.unwrap(np.angle(np.fft.fft(taps, n=pad)))
    scale = pad / (2.0 * math.pi)
    gd = np.empty(pad)
    gd[1:-1] = -(phase[2:] - phase[:-2]) * (scale / 2.0)
    gd[0] = -(phase[1] - phase[0]) * scale
    gd[-1] = -(phase[-1] - phase[-2]) * scale
    return gd[: 4 * (n_taps // 2) + 1 : 4]


def _minimum_phase(taps: np.ndarray, n_taps: int) -> np.ndarray:
    """Minimum-phase counterpart via real-cepstrum folding on an 8N grid."""
    pad = 8 * n_taps
    mag = np.abs(np.fft.fft(taps, n=pad))
    mag = np.maximum(mag, 1e-12 * mag.max())  # guard interpolated near-zeros
    cep = np.fft.ifft(np.log(mag)).real
    fold = np.zeros(pad)
    fold[0] = cep[0]
    fold[1 : pad // 2] = 2.0 * cep[1 : pad // 2]
    fold[pad // 2] = cep[pad // 2]
    mp = np.fft.ifft(np.exp(np.fft.fft(fold))).real
    return mp[:n_taps]


def excess_group_delay(s: HalfSpectrum) -> np.ndarray:
    """Per-bin excess group delay in samples, shape (2, N/2 + 1).

    Excess = group delay of the filter minus group delay of its minimum-phase
    counterpart.
    """
    if np.any(np.abs(s.bins) == 0.0):
        raise DegenerateSpectrumError("zero-magnitude bin in spectrum")
    taps = np.fft.irfft(s.bins, n=s.n_taps, axis=1)
    out = np.empty((2, s.n_bins))
    for ear in range(2):
        total = _group_delay_samples(taps[ear], s.n_taps)
        mp = _group_delay_samples(_minimum_phase(taps[ear], s.n_taps), s.n_taps)
        out[ear] = total - mp
    return out


def estimate_pure_delay(h: Hrir) -> PureDelay:
    """Power-weighted average of excess group delay over bins <= 1.1 kHz."""
    s = half_spectrum(h)
    band = s.bin_frequencies() <= DELAY_BAND_HZ
    if band.sum() < 2:
        raise ValueError("fewer than 2 bins at or below 1.1 kHz")
    egd = excess_group_delay(s)
    power = np.abs(s.bins[:, band]) ** 2
    tau = (power * egd[:, band]).sum(axis=1) / power.sum(axis=1)
    return PureDelay(np.maximum(tau, 0.0))


# ---------------------------------------------------------------------------
# alignment


def _delay_phasor(s: HalfSpectrum, d: PureDelay, sign: float) -> np.ndarray:
    n = np.arange(s.n_bins)
    return np.exp(sign * 2j * math.pi * np.outer(d.tau, n) / s.n_taps)


def time_align(s: HalfSpectrum, d: PureDelay) -> HalfSpectrum:
    """Remove the pure delay: aligned_n = exp(+i 2 pi n tau / N) raw_n."""
    return HalfSpectrum(s.bins * _delay_phasor(s, d, +1.0), s.fs, s.n_taps)


def realign(s: HalfSpectrum, d: PureDelay) -> HalfSpectrum:
    """Reinstate the pure delay; inverse of time_align."""
    return HalfSpectrum(s.bins * _delay_phasor(s, d, -1.0), s.fs, s.n_taps)
