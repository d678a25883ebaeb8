"""Maximum-likelihood meta-training over streamed tasks, with validation-based
model selection, plus the evaluation driver shared by the model and the
classical baselines.

The loss is the mean per-target negative log likelihood (a monotone
reparameterization of the summed-likelihood objective for fixed task shapes,
and better behaved across variable target counts). Optimization is Adam.
Checkpoints store the parameters, the optimizer moments and the step counter,
so a resumed run reproduces the uninterrupted trajectory bitwise: every
training task is derived from (seed, stream, step) and never from mutable
stream state.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import calibration_pairs, lmd, lre, lsd
from .model import (
    ModelConfig,
    Prediction,
    SphericalConvCNP,
    init_params,
    load_checkpoint,
    predictive_log_density,
    save_checkpoint,
)
from .tasks import Task, TaskStream


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_tasks: int = 4
    learning_rate: float = 2e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_interval: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_tasks < 1 or self.val_interval < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    log_rows: list[dict]
    best_val_nll: float
    halted: str | None = None  # diagnostic when training stopped early


class AdamState:
    """First/second moments per parameter, stored by name."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step = 0

    def update(self, params: dict[str, Tensor], cfg: TrainConfig) -> None:
        self.step += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        bias1 = 1.0 - b1**self.step
        bias2 = 1.0 - b2**self.step
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data = p.data - cfg.learning_rate * m_hat / (
                np.sqrt(v_hat) + cfg.adam_eps
            )


def _mean_val_nll(model: SphericalConvCNP, params, val_tasks: list[Task]) -> float:
    with ad.no_grad():
        total = 0.0
        for task in val_tasks:
            _, nll = model.forward(task, params)
            total += nll.item()
    return total / len(val_tasks)


def _grads_finite(params: dict[str, Tensor]) -> bool:
    return all(
        p.grad is None or np.all(np.isfinite(p.grad)) for p in params.values()
    )


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    stream: TaskStream,
    val_tasks: list[Task],
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run (or resume) meta-training; writes best/last checkpoints and a CSV log.

    The task for global step k, batch slot j is stream.task(k * batch + j),
    so resuming from the last checkpoint continues the identical trajectory.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    log_path = out_dir / "train_log.csv"

    model = SphericalConvCNP(model_cfg)
    best_val = math.inf
    start_step = 0
    if resume_from is not None:
        ckpt_cfg, params, sidecar, arrays = load_checkpoint(resume_from)
        if ckpt_cfg != model_cfg:
            raise ValueError("checkpoint config differs from requested config")
        # the f32 checkpoint is the interchange format; exact float64 state
        # for bitwise trajectory replay lives in the .resume.npz sidecar
        resume_npz = Path(str(resume_from) + ".resume.npz")
        if resume_npz.exists():
            exact = np.load(resume_npz)
            for name, p in params.items():
                p.data = exact[f"param/{name}"]
        state = AdamState(params)
        for name in params:
            if resume_npz.exists():
                state.m[name] = exact[f"adam_m/{name}"]
                state.v[name] = exact[f"adam_v/{name}"]
            else:
                state.m[name] = arrays[f"adam_m/{name}"]
                state.v[name] = arrays[f"adam_v/{name}"]
        state.step = int(sidecar["adam_step"])
        start_step = int(sidecar["step"])
        best_val = float(sidecar["best_val_nll"])
    else:
        params = init_params(model_cfg, np.random.default_rng(train_cfg.seed))
        state = AdamState(params)

    def write_checkpoint(path: Path, with_moments: bool, val_nll: float, step: int):
        arrays = {}
        if with_moments:
            for name in params:
                arrays[f"adam_m/{name}"] = state.m[name]
                arrays[f"adam_v/{name}"] = state.v[name]
        save_checkpoint(
            path,
            model_cfg,
            params,
            extra={
                "seed": train_cfg.seed,
                "step": step,
                "adam_step": state.step,
                "best_val_nll": val_nll,
            },
            arrays=arrays,
        )
        if with_moments:
            exact = {f"param/{n}": p.data for n, p in params.items()}
            exact.update({f"adam_m/{n}": state.m[n] for n in params})
            exact.update({f"adam_v/{n}": state.v[n] for n in params})
            np.savez(str(path) + ".resume.npz", **exact)

    log_rows: list[dict] = []
    halted = None
    t_start = time.time()
    if not val_tasks:
        raise ValueError("need at least one validation task")
    if start_step == 0:
        best_val = _mean_val_nll(model, params, val_tasks)
        write_checkpoint(best_path, False, best_val, 0)

    for step in range(start_step, train_cfg.steps):
        for p in params.values():
            p.zero_grad()
        batch_nll = 0.0
        for j in range(train_cfg.batch_tasks):
            task = stream.task(step * train_cfg.batch_tasks + j)
            _, nll = model.forward(task, params)
            batch_nll += nll.item()
            ad.backward(ad.mul(nll, Tensor(1.0 / train_cfg.batch_tasks)))
        batch_nll /= train_cfg.batch_tasks
        if not math.isfinite(batch_nll) or not _grads_finite(params):
            halted = f"non-finite loss or gradient at step {step}"
            break
        state.update(params, train_cfg)

        row = {
            "step": step + 1,
            "train_nll": batch_nll,
            "val_nll": "",
            "wall_time_s": time.time() - t_start,
        }
        if (step + 1) % train_cfg.val_interval == 0 or step + 1 == train_cfg.steps:
            val_nll = _mean_val_nll(model, params, val_tasks)
            if not math.isfinite(val_nll):
                halted = f"non-finite validation loss at step {step + 1}"
                break
            row["val_nll"] = val_nll
            if val_nll < best_val:
                best_val = val_nll
                write_checkpoint(best_path, False, best_val, step + 1)
        log_rows.append(row)

    final_step = log_rows[-1]["step"] if log_rows else start_step
    write_checkpoint(last_path, True, best_val, final_step)
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["step", "train_nll", "val_nll", "wall_time_s"]
        )
        writer.writeheader()
        writer.writerows(log_rows)
    return TrainResult(best_path, last_path, log_rows, best_val, halted)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class TaskReport:
    task_index: int
    context_size: int
    target_size: int
    nll: float | None  # mean per-target NLL; None for point predictors
    mean_lre_db: float | None
    mean_lmd_db: float | None
    mean_lsd_db: float | None
    excluded_features: int
    rows: list[dict] = field(repr=False, default_factory=list)
    pairs: dict[str, np.ndarray] | None = field(repr=False, default=None)


def evaluate_tasks(predict_fn, tasks: list[Task]) -> list[TaskReport]:
    """Run a predictor over tasks and score it.

    predict_fn(task) returns a Prediction; a None sigma marks a point
    predictor (no likelihood, no calibration pairs). Evaluation never mutates
    its inputs and is deterministic for a deterministic predictor.
    """
    reports = []
    for index, task in enumerate(tasks):
        prediction = predict_fn(task)
        truth = task.target_features
        mu = prediction.mu
        rows = []
        lre_vals, lmd_vals, lsd_vals = [], [], []
        excluded = 0
        for t in range(task.target_size):
            value, missing = lsd(truth[t], mu[t])
            excluded += missing
            if value is not None:
                lsd_vals.append(value)
            for ear in range(2):
                for b in range(task.n_bins):
                    r = lre(truth[t, ear, b], mu[t, ear, b])
                    m = lmd(truth[t, ear, b], mu[t, ear, b])
                    rows.append(
                        {
                            "target": t,
                            "ear": ear,
                            "bin": b,
                            "lre_db": r,
                            "lmd_db": m,
                        }
                    )
                    if r is not None:
                        lre_vals.append(r)
                    if m is not None:
                        lmd_vals.append(m)
        if prediction.sigma is not None:
            nll = -predictive_log_density(truth, prediction) / task.target_size
            pairs = calibration_pairs(truth, mu, prediction.sigma)
        else:
            nll = None
            pairs = None
        reports.append(
            TaskReport(
                task_index=index,
                context_size=task.context_size,
                target_size=task.target_size,
                nll=nll,
                mean_lre_db=float(np.mean(lre_vals)) if lre_vals else None,
                mean_lmd_db=float(np.mean(lmd_vals)) if lmd_vals else None,
                mean_lsd_db=float(np.mean(lsd_vals)) if lsd_vals else None,
                excluded_features=excluded,
                rows=rows,
                pairs=pairs,
            )
        )
    return reports


def model_predictor(model: SphericalConvCNP, params: dict[str, Tensor]):
    def predict(task: Task) -> Prediction:
        return model.predict(task, params)

    return predict


def pooled_pairs(reports: list[TaskReport]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate calibration pairs across tasks."""
    variances = np.concatenate([r.pairs["variance"] for r in reports if r.pairs])
    errors = np.concatenate([r.pairs["sq_error"] for r in reports if r.pairs])
    return variances, errors


def zero_predictor_nll(tasks: list[Task]) -> float:
    """Mean per-target NLL of predicting zero with one constant sigma fitted
    to the pooled component variance (the desk-scale reference)."""
    comps = np.concatenate(
        [
            np.stack(
                [task.target_features.real, task.target_features.imag]
            ).reshape(-1)
            for task in tasks
        ]
    )
    var = float(np.mean(comps**2))
    per_component = 0.5 * math.log(2.0 * math.pi * var) + 0.5
    total = sum(
        4 * task.n_bins * task.target_size * per_component for task in tasks
    )
    targets = sum(task.target_size for task in tasks)
    return total / targets


def gaussian_task_nll(task: Task, mu: np.ndarray, sigma: np.ndarray) -> float:
    """Mean per-target NLL of explicit factored-Gaussian predictions."""
    pred = Prediction(mu, sigma)
    return -predictive_log_density(task.target_features, pred) / task.target_size
