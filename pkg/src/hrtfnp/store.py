"""Portable dataset containers, subject-split bookkeeping, mean-envelope
computation and residual centering.

Binary container layout (little-endian):

    magic "HRTF-NP1" | u32 version=1 | u8 kind | u32 id_len | id bytes
    | f64 fs | u32 N | u32 P | P*3 f64 positions
    kind 0 (raw HRIR):        P*2*N f32 taps
    kind 1 (aligned/residual): P*2 f64 delays, P*2*(N/2+1)*2 f32 (re, im)
    kind 2 (mean envelope):   P*2*(N/2+1)*2 f32 (re, im)

Split manifests are JSON files with integer id arrays under the keys
train/validate/test/discarded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, GridError

MAGIC = b"HRTF-NP1"
VERSION = 1

KIND_RAW = 0
KIND_ALIGNED = 1
KIND_MEAN = 2


def _check_positions(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) == 0:
        raise ValueError("positions must be a nonempty (P, 3) array")
    if np.abs(np.linalg.norm(positions, axis=1) - 1.0).max() > 1e-9:
        raise ValueError("positions must be unit vectors")
    return positions


@dataclass
class HrtfSet:
    """One subject's raw HRIRs on unit-sphere source positions."""

    subject_id: str
    positions: np.ndarray  # (P, 3) f64
    hrirs: np.ndarray  # (P, 2, N) float
    fs: float

    def __post_init__(self):
        self.positions = _check_positions(self.positions)
        self.hrirs = np.asarray(self.hrirs, dtype=float)
        if self.hrirs.shape[:2] != (len(self.positions), 2):
            raise ValueError("hrirs must have shape (P, 2, N)")
        if self.hrirs.shape[2] % 2 != 0:
            raise ValueError("tap count must be even")

    @property
    def n_taps(self) -> int:
        return self.hrirs.shape[2]


@dataclass
class AlignedSet:
    """Per-position pure delays and time-aligned (or residual) complex spectra."""

    subject_id: str
    positions: np.ndarray  # (P, 3)
    delays: np.ndarray  # (P, 2) samples
    spectra: np.ndarray  # (P, 2, N/2+1) complex
    fs: float
    n_taps: int

    def __post_init__(self):
        self.positions = _check_positions(self.positions)
        self.delays = np.asarray(self.delays, dtype=float)
        self.spectra = np.asarray(self.spectra, dtype=complex)
        p = len(self.positions)
        if self.delays.shape != (p, 2):
            raise ValueError("delays must have shape (P, 2)")
        if self.spectra.shape != (p, 2, self.n_taps // 2 + 1):
            raise ValueError("spectra must have shape (P, 2, N/2+1)")
        if not np.all(np.isfinite(self.spectra.view(float))):
            raise ValueError("spectra must be finite")
        if np.any(self.delays < 0):
            raise ValueError("delays must be nonnegative")


@dataclass
class MeanEnvelope:
    """Across-subject mean of time-aligned spectra on a shared position grid."""

    positions: np.ndarray  # (P, 3)
    mean: np.ndarray  # (P, 2, N/2+1) complex
    fs: float
    n_taps: int

    def __post_init__(self):
        self.positions = _check_positions(self.positions)
        self.mean = np.asarray(self.mean, dtype=complex)
        if self.mean.shape != (len(self.positions), 2, self.n_taps // 2 + 1):
            raise ValueError("mean must have shape (P, 2, N/2+1)")


Container = HrtfSet | AlignedSet | MeanEnvelope


# ---------------------------------------------------------------------------
# binary I/O


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(f"{self.path}: truncated container", offset=self.pos)
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def scalar(self, fmt: str):
        (value,) = struct.unpack("<" + fmt, self.take(struct.calcsize(fmt)))
        return value

    def array(self, dtype: str, count: int) -> np.ndarray:
        raw = self.take(np.dtype(dtype).itemsize * count)
        return np.frombuffer(raw, dtype=dtype, count=count)


def save_container(path: str | Path, obj: Container) -> None:
    """Serialize a container; see the module docstring for the byte layout."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    if isinstance(obj, HrtfSet):
        kind, subject_id, n = KIND_RAW, obj.subject_id, obj.n_taps
    elif isinstance(obj, AlignedSet):
        kind, subject_id, n = KIND_ALIGNED, obj.subject_id, obj.n_taps
    elif isinstance(obj, MeanEnvelope):
        kind, subject_id, n = KIND_MEAN, "mean", obj.n_taps
    else:
        raise TypeError(f"cannot serialize {type(obj)}")
    sid = subject_id.encode("utf-8")
    parts.append(struct.pack("<BI", kind, len(sid)))
    parts.append(sid)
    parts.append(struct.pack("<dII", obj.fs, n, len(obj.positions)))
    parts.append(np.ascontiguousarray(obj.positions, dtype="<f8").tobytes())
    if kind == KIND_RAW:
        parts.append(np.ascontiguousarray(obj.hrirs, dtype="<f4").tobytes())
    else:
        if kind == KIND_ALIGNED:
            parts.append(np.ascontiguousarray(obj.delays, dtype="<f8").tobytes())
        spectra = obj.spectra if kind == KIND_ALIGNED else obj.mean
        inter = np.empty(spectra.shape + (2,), dtype="<f4")
        inter[..., 0] = spectra.real
        inter[..., 1] = spectra.imag
        parts.append(inter.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_container(path: str | Path) -> Container:
    """Load a container file; inverse of save_container (f32 payloads exact)."""
    r = _Reader(Path(path).read_bytes(), str(path))
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: bad magic", offset=0)
    version = r.scalar("I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=8)
    kind = r.scalar("B")
    if kind not in (KIND_RAW, KIND_ALIGNED, KIND_MEAN):
        raise FormatError(f"{path}: unknown kind {kind}", offset=12)
    subject_id = r.take(r.scalar("I")).decode("utf-8")
    fs = r.scalar("d")
    n = r.scalar("I")
    p = r.scalar("I")
    if n == 0 or n % 2 != 0 or p == 0:
        raise FormatError(f"{path}: invalid dimensions N={n} P={p}", offset=r.pos)
    positions = r.array("<f8", p * 3).reshape(p, 3)
    if kind == KIND_RAW:
        taps = r.array("<f4", p * 2 * n).reshape(p, 2, n).astype(float)
        return HrtfSet(subject_id, positions, taps, fs)
    bins = n // 2 + 1
    delays = None
    if kind == KIND_ALIGNED:
        delays = r.array("<f8", p * 2).reshape(p, 2)
    inter = r.array("<f4", p * 2 * bins * 2).reshape(p, 2, bins, 2).astype(float)
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes", offset=r.pos)
    spectra = inter[..., 0] + 1j * inter[..., 1]
    if kind == KIND_ALIGNED:
        return AlignedSet(subject_id, positions, delays, spectra, fs, n)
    return MeanEnvelope(positions, spectra, fs, n)


# ---------------------------------------------------------------------------
# split manifests


@dataclass
class DatasetSplit:
    train: list[int]
    validate: list[int]
    test: list[int]
    discarded: list[int]

    def __post_init__(self):
        groups = [self.train, self.validate, self.test, self.discarded]
        ids = [i for g in groups for i in g]
        if len(set(ids)) != len(ids):
            raise ValueError("split groups must be pairwise disjoint")


def default_split() -> DatasetSplit:
    """HUTUBS subject split: 85 train / 5 validate / 4 test, 2 discarded."""
    validate = [4, 28, 30, 53, 65]
    test = [1, 18, 27, 67]
    discarded = [88, 96]
    held = set(validate) | set(test) | set(discarded)
    train = [i for i in range(1, 97) if i not in held]
    return DatasetSplit(train, validate, test, discarded)


def save_split(path: str | Path, split: DatasetSplit) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "train": split.train,
                "validate": split.validate,
                "test": split.test,
                "discarded": split.discarded,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )


def load_split(path: str | Path) -> DatasetSplit:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    missing = {"train", "validate", "test", "discarded"} - set(raw)
    if missing:
        raise ValueError(f"{path}: manifest missing keys {sorted(missing)}")
    return DatasetSplit(
        [int(i) for i in raw["train"]],
        [int(i) for i in raw["validate"]],
        [int(i) for i in raw["test"]],
        [int(i) for i in raw["discarded"]],
    )


# ---------------------------------------------------------------------------
# mean envelope and centering


def _require_same_grid(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape or not np.array_equal(a, b):
        raise GridError(f"position grids differ: {what}")


def compute_mean_envelope(sets: list[AlignedSet]) -> MeanEnvelope:
    """Per-position, per-ear, per-bin complex mean across subjects."""
    if not sets:
        raise ValueError("need at least one subject")
    first = sets[0]
    acc = np.zeros_like(first.spectra)
    for s in sets:
        _require_same_grid(first.positions, s.positions, s.subject_id)
        if s.spectra.shape != first.spectra.shape:
            raise GridError(f"spectra shapes differ: {s.subject_id}")
        acc += s.spectra
    return MeanEnvelope(first.positions, acc / len(sets), first.fs, first.n_taps)


def center(aligned: AlignedSet, mean: MeanEnvelope) -> AlignedSet:
    """Replace spectra by residuals about the mean envelope."""
    _require_same_grid(aligned.positions, mean.positions, aligned.subject_id)
    return AlignedSet(
        aligned.subject_id,
        aligned.positions,
        aligned.delays,
        aligned.spectra - mean.mean,
        aligned.fs,
        aligned.n_taps,
    )


def uncenter(residual: AlignedSet, mean: MeanEnvelope) -> AlignedSet:
    """Inverse of center."""
    _require_same_grid(residual.positions, mean.positions, residual.subject_id)
    return AlignedSet(
        residual.subject_id,
        residual.positions,
        residual.delays,
        residual.spectra + mean.mean,
        residual.fs,
        residual.n_taps,
    )
