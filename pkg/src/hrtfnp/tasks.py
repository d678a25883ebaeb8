"""Meta-learning task generation: (context, target) episodes drawn from one
subject's aligned residual set.

A task is built by drawing a context size C in {0..max_context}, laying out C
probe directions (a fixed near-uniform grid, or iid uniform directions half
the time during training), rotating them uniformly at random, electing the
nearest dataset index for each probe (duplicates dropped), and assigning all
remaining indices to the target set. During training the whole task is
mirrored about the median plane half the time, with ear channels swapped.

Tasks are reproducible in isolation: the stream derives one rng per
(seed, stream_id, step), so any step can be regenerated without replaying
the stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import store
from .sphere import approx_uniform_grid, mirror_median, random_rotation, rotate


@dataclass
class SamplerConfig:
    max_context: int = 100
    p_irregular: float = 0.5  # train mode only
    p_mirror: float = 0.5  # train mode only
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_irregular <= 1.0 and 0.0 <= self.p_mirror <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.max_context < 0:
            raise ValueError("max_context must be nonnegative")


@dataclass
class Task:
    """One interpolation episode; features are (n, 2, bins) complex residuals."""

    context_locations: np.ndarray
    context_features: np.ndarray
    target_locations: np.ndarray
    target_features: np.ndarray
    context_indices: np.ndarray
    target_indices: np.ndarray
    requested_context: int
    mirrored: bool = False

    @property
    def context_size(self) -> int:
        return len(self.context_indices)

    @property
    def target_size(self) -> int:
        return len(self.target_indices)

    @property
    def n_bins(self) -> int:
        return self.target_features.shape[2]


def uniform_sphere(rng: np.random.Generator, count: int) -> np.ndarray:
    """Iid uniform directions via normalized 3-D Gaussians."""
    if count == 0:
        return np.zeros((0, 3))
    v = rng.standard_normal((count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_task(
    aligned: store.AlignedSet,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    train_mode: bool,
) -> Task:
    """Draw one task from a subject's set. Context indices are sorted so that
    downstream summations have a canonical order."""
    p = len(aligned.positions)
    c_max = min(cfg.max_context, p - 1)
    c_req = int(rng.integers(0, c_max + 1))
    if train_mode and rng.random() < cfg.p_irregular:
        probes = uniform_sphere(rng, c_req)
    else:
        probes = approx_uniform_grid(c_req)
    probes = rotate(random_rotation(rng), probes)

    chosen: list[int] = []
    taken = np.zeros(p, dtype=bool)
    if c_req > 0:
        nearest = np.argmax(probes @ aligned.positions.T, axis=1)
        for idx in nearest:
            if not taken[idx]:
                taken[idx] = True
                chosen.append(int(idx))
    ctx = np.array(sorted(chosen), dtype=int)
    tgt = np.nonzero(~taken)[0]

    task = Task(
        context_locations=aligned.positions[ctx],
        context_features=aligned.spectra[ctx],
        target_locations=aligned.positions[tgt],
        target_features=aligned.spectra[tgt],
        context_indices=ctx,
        target_indices=tgt,
        requested_context=c_req,
    )
    if train_mode and rng.random() < cfg.p_mirror:
        task = mirror_task(task)
    return task


def mirror_task(task: Task) -> Task:
    """Mirror all locations about the median plane and swap ear channels."""
    return replace(
        task,
        context_locations=mirror_median(task.context_locations),
        context_features=task.context_features[:, ::-1].copy(),
        target_locations=mirror_median(task.target_locations),
        target_features=task.target_features[:, ::-1].copy(),
        mirrored=not task.mirrored,
    )


def task_rng(seed: int, stream_id: int, step: int) -> np.random.Generator:
    """Deterministic per-task generator from the (seed, stream, step) triple."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream_id, step]))


@dataclass
class TaskStream:
    """Pull-based task source; step k is reproducible in isolation."""

    subjects: list[store.AlignedSet]
    cfg: SamplerConfig
    stream_id: int = 0
    train_mode: bool = True

    def __post_init__(self):
        if not self.subjects:
            raise ValueError("need at least one subject")

    def task(self, step: int) -> Task:
        rng = task_rng(self.cfg.seed, self.stream_id, step)
        subject = self.subjects[int(rng.integers(len(self.subjects)))]
        return sample_task(subject, self.cfg, rng, self.train_mode)

    def tasks(self, start: int, count: int) -> list[Task]:
        return [self.task(step) for step in range(start, start + count)]


def dump_task(path: str | Path, task: Task, fs: float, n_taps: int) -> None:
    """Debug dump: one aligned-residual container holding context then target
    points, plus a JSON sidecar with the index lists."""
    path = Path(path)
    locations = np.concatenate([task.context_locations, task.target_locations])
    features = np.concatenate([task.context_features, task.target_features])
    delays = np.zeros((len(locations), 2))
    store.save_container(
        path, store.AlignedSet("task", locations, delays, features, fs, n_taps)
    )
    sidecar = {
        "context_indices": [int(i) for i in task.context_indices],
        "target_indices": [int(i) for i in task.target_indices],
        "requested_context": task.requested_context,
        "mirrored": task.mirrored,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )
