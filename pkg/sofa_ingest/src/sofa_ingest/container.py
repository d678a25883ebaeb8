"""Writer for the hrtfnp raw-HRIR container (kind 0).

This package talks to the interpolation toolkit only through its published
file formats, so the byte layout is reproduced here rather than imported:

    magic "HRTF-NP1" | u32 version=1 | u8 kind=0 | u32 id_len | id bytes
    | f64 fs | u32 N | u32 P | P*3 f64 unit positions | P*2*N f32 taps
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HRTF-NP1"
VERSION = 1
KIND_RAW = 0


def write_raw_container(
    path: str | Path,
    subject_id: str,
    positions: np.ndarray,
    taps: np.ndarray,
    fs: float,
) -> None:
    """Serialize one subject's raw HRIR set.

    positions: (P, 3) unit vectors; taps: (P, 2, N) float32 (cast if needed,
    the f32 payload is the canonical lossless content); N must be even.
    """
    positions = np.asarray(positions, dtype="<f8")
    taps = np.asarray(taps, dtype="<f4")
    p, ears, n = taps.shape
    if ears != 2:
        raise ValueError("expected exactly 2 receivers")
    if n % 2 != 0:
        raise ValueError("tap count must be even")
    if positions.shape != (p, 3):
        raise ValueError("positions must be (P, 3) matching the tap count")
    norms = np.linalg.norm(positions, axis=1)
    if np.abs(norms - 1.0).max() > 1e-9:
        raise ValueError("positions must be unit vectors")
    sid = subject_id.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<BI", KIND_RAW, len(sid)),
        sid,
        struct.pack("<dII", float(fs), n, p),
        np.ascontiguousarray(positions).tobytes(),
        np.ascontiguousarray(taps).tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))
