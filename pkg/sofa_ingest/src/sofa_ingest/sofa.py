"""SOFA (HDF5) reading and conversion to raw containers.

Targets binaural SimpleFreeFieldHRIR-style files such as HUTUBS: IR data of
shape (measurements, 2 receivers, taps), spherical or cartesian source
positions in the head-centered frame, and receiver positions identifying the
ears. Left/right order is derived from the receivers' y-coordinates (left at
+y) and a mismatch aborts rather than silently permuting channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np

from .container import write_raw_container


class SofaError(ValueError):
    """Unusable or unsupported SOFA content."""


@dataclass
class SofaSource:
    path: str
    convention: str
    fs: float
    ir: np.ndarray  # (M, 2, N) float64 as stored
    source_positions: np.ndarray  # (M, 3) cartesian, metres
    receiver_positions: np.ndarray  # (2, 3) cartesian, metres


def _attr(obj, name: str, default: str = "") -> str:
    raw = obj.attrs.get(name, default)
    if isinstance(raw, bytes):
        return raw.decode("utf-8", "replace")
    return str(raw)


def _positions_to_cartesian(values: np.ndarray, pos_type: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    kind = pos_type.strip().lower()
    if kind == "cartesian":
        return values
    if kind == "spherical":
        az = np.radians(values[:, 0])
        el = np.radians(values[:, 1])
        r = values[:, 2]
        ce = np.cos(el)
        return np.column_stack([r * ce * np.cos(az), r * ce * np.sin(az), r * np.sin(el)])
    raise SofaError(f"unsupported position type {pos_type!r}")


def read_sofa(path: str | Path) -> SofaSource:
    path = Path(path)
    with h5py.File(path, "r") as f:
        convention = _attr(f, "SOFAConventions", "unknown")
        if "Data.IR" not in f:
            raise SofaError(f"{path}: missing Data.IR")
        ir = np.asarray(f["Data.IR"])
        if ir.ndim != 3:
            raise SofaError(f"{path}: Data.IR must be (M, R, N), got {ir.shape}")
        if ir.shape[1] != 2:
            raise SofaError(f"{path}: expected 2 receivers, got {ir.shape[1]}")
        if "Data.SamplingRate" not in f:
            raise SofaError(f"{path}: missing Data.SamplingRate")
        fs = float(np.asarray(f["Data.SamplingRate"]).reshape(-1)[0])
        if "SourcePosition" not in f:
            raise SofaError(f"{path}: missing SourcePosition")
        sp = f["SourcePosition"]
        source = _positions_to_cartesian(np.asarray(sp), _attr(sp, "Type", "spherical"))
        if len(source) != ir.shape[0]:
            raise SofaError(f"{path}: SourcePosition count != measurement count")
        if "ReceiverPosition" not in f:
            raise SofaError(f"{path}: missing ReceiverPosition")
        rp = f["ReceiverPosition"]
        rec = np.asarray(rp, dtype=float)
        rec = rec.reshape(rec.shape[0], 3)
        rec = _positions_to_cartesian(rec, _attr(rp, "Type", "cartesian"))
    return SofaSource(str(path), convention, fs, ir, source, rec)


def _check_ear_order(receivers: np.ndarray) -> None:
    """Receiver 0 must be the left ear (positive y in the head frame)."""
    y0, y1 = receivers[0, 1], receivers[1, 1]
    if not (y0 > 0 and y1 < 0):
        raise SofaError(
            "cannot confirm receiver 0 = left ear from receiver y-signs "
            f"(y = {y0:.4g}, {y1:.4g}); refusing to guess channel order"
        )


def convert(sofa_path: str | Path, out_path: str | Path, subject_id: str) -> dict:
    """Convert one SOFA file to a raw container plus a metadata sidecar.

    Taps and sample rate are copied verbatim (f32 payload); source positions
    are normalized to unit vectors with the discarded radii recorded in the
    sidecar JSON. Returns the metadata dict.
    """
    src = read_sofa(sofa_path)
    _check_ear_order(src.receiver_positions)
    radii = np.linalg.norm(src.source_positions, axis=1)
    if radii.min() <= 0:
        raise SofaError(f"{sofa_path}: source position at the origin")
    positions = src.source_positions / radii[:, None]
    taps = np.asarray(src.ir, dtype=np.float32)
    if taps.shape[2] % 2 != 0:
        raise SofaError(f"{sofa_path}: odd tap count {taps.shape[2]}")
    write_raw_container(out_path, subject_id, positions, taps, src.fs)
    meta = {
        "source_file": str(src.path),
        "convention": src.convention,
        "subject_id": subject_id,
        "measurements": int(taps.shape[0]),
        "taps": int(taps.shape[2]),
        "sampling_rate_hz": src.fs,
        "radius_m": {
            "min": float(radii.min()),
            "max": float(radii.max()),
            "mean": float(radii.mean()),
        },
        "receiver_order": "left-first",
    }
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8"
    )
    return meta


def hutubs_split() -> dict:
    """Published HUTUBS subject split: 85 train / 5 validate / 4 test;
    subjects 88 and 96 discarded as duplicates of 22 and 1."""
    validate = [4, 28, 30, 53, 65]
    test = [1, 18, 27, 67]
    discarded = [88, 96]
    held = set(validate) | set(test) | set(discarded)
    return {
        "train": [i for i in range(1, 97) if i not in held],
        "validate": validate,
        "test": test,
        "discarded": discarded,
    }


def emit_manifest(out_path: str | Path) -> None:
    Path(out_path).write_text(
        json.dumps(hutubs_split(), indent=2) + "\n", encoding="utf-8"
    )
