#!/usr/bin/env python3
"""End-to-end desk benchmark on synthetic data: train the neural interpolator,
then score it against the three classical baselines on held-out test tasks.

Prints one summary row per method (accuracy in dB, NLL and calibration where
the method provides uncertainty). Everything is seed-pinned.
"""

import argparse
import tempfile

import numpy as np

from hrtfnp.baselines import (
    GpHyper,
    barycentric_interpolate,
    gp_fit_beta,
    gp_predict,
    spline_interpolate,
)
from hrtfnp.metrics import calibration_curve, mcd
from hrtfnp.model import ModelConfig, Prediction, SphericalConvCNP, load_checkpoint
from hrtfnp.synth import SynthConfig, synth_dataset
from hrtfnp.tasks import SamplerConfig, TaskStream
from hrtfnp.train import (
    TrainConfig,
    evaluate_tasks,
    model_predictor,
    pooled_pairs,
    train,
    zero_predictor_nll,
)


def summarize(name, reports):
    def mean_of(attr):
        vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else None

    nll = mean_of("nll")
    row = {
        "method": name,
        "lre_db": mean_of("mean_lre_db"),
        "lmd_db": mean_of("mean_lmd_db"),
        "lsd_db": mean_of("mean_lsd_db"),
        "nll": nll,
    }
    if any(r.pairs is not None for r in reports):
        variances, errors = pooled_pairs(reports)
        row["mcd_db"] = mcd(calibration_curve(variances, errors, 10))
    return row


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=1500)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--num-test-tasks", type=int, default=20)
    parser.add_argument("--out-dir", default=None, help="keep checkpoints here")
    args = parser.parse_args()

    subjects, split = synth_dataset(SynthConfig(seed=args.seed))
    by_id = {int(s.subject_id): s for s in subjects}
    train_subjects = [by_id[i] for i in split.train]
    val_subjects = [by_id[i] for i in split.validate]
    test_subjects = [by_id[i] for i in split.test]

    model_cfg = ModelConfig(
        grid_size=16,
        bandwidth=7,
        channels=16,
        cnn_blocks=2,
        mlp_blocks=2,
        freq_kernel=3,
        anchors=3,
        freq_bins=5,
    )
    stream = TaskStream(train_subjects, SamplerConfig(seed=11), 0, True)
    val_tasks = TaskStream(val_subjects, SamplerConfig(seed=12), 1, False).tasks(0, 8)
    test_tasks = TaskStream(test_subjects, SamplerConfig(seed=13), 2, False).tasks(
        0, args.num_test_tasks
    )

    out_dir = args.out_dir or tempfile.mkdtemp(prefix="hrtfnp_bench_")
    print(f"training {args.steps} steps (checkpoints in {out_dir})")
    result = train(
        model_cfg,
        TrainConfig(steps=args.steps, batch_tasks=2, learning_rate=2e-3,
                    val_interval=100, seed=3),
        stream,
        val_tasks,
        out_dir,
    )
    print(
        f"best val NLL {result.best_val_nll:.3f} "
        f"(predict-zero baseline {zero_predictor_nll(val_tasks):.3f})"
    )

    config, params, _, _ = load_checkpoint(result.best_checkpoint)
    model = SphericalConvCNP(config)

    print(f"fitting GP precisions on 340 train tasks")
    gp_tasks = TaskStream(train_subjects, SamplerConfig(seed=14), 3, True).tasks(0, 340)
    hyper = gp_fit_beta(gp_tasks, GpHyper.default(model_cfg.freq_bins))

    def gp_predictor(task):
        mean, var = gp_predict(
            task.context_locations, task.context_features, task.target_locations, hyper
        )
        return Prediction(mean, np.sqrt(var[:, :, 0]) + 1j * np.sqrt(var[:, :, 1]))

    def bary_predictor(task):
        return Prediction(
            barycentric_interpolate(
                task.context_locations, task.context_features, task.target_locations
            ),
            None,
        )

    def spline_predictor(task):
        return Prediction(
            spline_interpolate(
                task.context_locations, task.context_features, task.target_locations
            ),
            None,
        )

    geo_tasks = [t for t in test_tasks if t.context_size >= 4]
    rows = [
        summarize("neural", evaluate_tasks(model_predictor(model, params), test_tasks)),
        summarize("gp", evaluate_tasks(gp_predictor, test_tasks)),
        summarize("spline", evaluate_tasks(spline_predictor, geo_tasks)),
        summarize("barycentric", evaluate_tasks(bary_predictor, geo_tasks)),
    ]

    cols = ["method", "lre_db", "lmd_db", "lsd_db", "nll", "mcd_db"]
    print()
    print(" | ".join(f"{c:>12}" for c in cols))
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append(f"{v:12.3f}" if isinstance(v, float) else f"{str(v):>12}")
        print(" | ".join(cells))


if __name__ == "__main__":
    main()
