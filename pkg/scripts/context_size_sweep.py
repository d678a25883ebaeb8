#!/usr/bin/env python3
"""Accuracy versus context size for a trained checkpoint and the GP baseline.

Builds fixed-size context tasks (one per requested size and repetition) from
the synthetic test subjects and reports mean relative error per size, which
is the sample-efficiency view of interpolator quality.
"""

import argparse
import csv

import numpy as np

from hrtfnp.baselines import GpHyper, gp_predict
from hrtfnp.model import Prediction, SphericalConvCNP, load_checkpoint
from hrtfnp.sphere import approx_uniform_grid, nearest_index, random_rotation, rotate
from hrtfnp.synth import SynthConfig, synth_dataset
from hrtfnp.tasks import Task
from hrtfnp.train import evaluate_tasks, model_predictor


def fixed_size_task(subject, size, rng):
    probes = rotate(random_rotation(rng), approx_uniform_grid(size))
    chosen = []
    taken = np.zeros(len(subject.positions), dtype=bool)
    for probe in probes:
        idx = nearest_index(probe, subject.positions)
        if not taken[idx]:
            taken[idx] = True
            chosen.append(idx)
    ctx = np.array(sorted(chosen), dtype=int)
    tgt = np.nonzero(~taken)[0]
    return Task(
        subject.positions[ctx],
        subject.spectra[ctx],
        subject.positions[tgt],
        subject.spectra[tgt],
        ctx,
        tgt,
        size,
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--sizes", default="5,10,20,40,70,100")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    config, params, _, _ = load_checkpoint(args.checkpoint)
    model = SphericalConvCNP(config)

    subjects, split = synth_dataset(SynthConfig(seed=args.seed))
    by_id = {int(s.subject_id): s for s in subjects}
    test_subjects = [by_id[i] for i in split.test]
    hyper = GpHyper.default(config.freq_bins)

    def gp_predictor(task):
        mean, var = gp_predict(
            task.context_locations, task.context_features, task.target_locations, hyper
        )
        return Prediction(mean, np.sqrt(var[:, :, 0]) + 1j * np.sqrt(var[:, :, 1]))

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    print(f"{'size':>6} | {'neural lre':>12} | {'gp lre':>12}")
    for size in sizes:
        rng = np.random.default_rng([args.seed, size])
        tasks = [
            fixed_size_task(test_subjects[r % len(test_subjects)], size, rng)
            for r in range(args.repeats)
        ]
        neural = evaluate_tasks(model_predictor(model, params), tasks)
        gp = evaluate_tasks(gp_predictor, tasks)
        n_lre = float(np.mean([r.mean_lre_db for r in neural]))
        g_lre = float(np.mean([r.mean_lre_db for r in gp]))
        rows.append({"size": size, "neural_lre_db": n_lre, "gp_lre_db": g_lre})
        print(f"{size:6d} | {n_lre:12.3f} | {g_lre:12.3f}")

    if args.out:
        with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["size", "neural_lre_db", "gp_lre_db"])
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
