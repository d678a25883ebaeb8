"""Spherical interpolation toolkit for time-aligned HRTF spectra: a
conditional neural-process interpolator with a spherical CNN trunk, three
classical baselines, and an accuracy/calibration metric suite."""

__version__ = "0.1.0"
