"""Batch command-line interface.

Subcommands cover the full pipeline: synth (desk-scale dataset), preprocess
(resample + delay estimation + alignment), mean / center (population mean and
residuals), baseline / gp-fit (classical interpolators), train / eval (the
neural interpolator), and calibrate (variance-vs-error curve from an eval
pairs file).

Every emitted CSV is RFC-4180 with LF endings and carries a provenance
comment line (tool version, seed, config hash) above the header row.
Exit codes: 0 ok, 2 usage or format, 3 data consistency, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import hrir as hr
from . import store
from .baselines import (
    GpHyper,
    barycentric_interpolate,
    gp_fit_beta,
    gp_predict,
    spline_interpolate,
)
from .errors import (
    ConditioningError,
    FormatError,
    GridError,
    NumericError,
)
from .metrics import calibration_curve, mcd
from .model import (
    ModelConfig,
    Prediction,
    SphericalConvCNP,
    load_checkpoint,
)
from .synth import SynthConfig, synth_dataset
from .tasks import SamplerConfig, Task, TaskStream
from .train import (
    TrainConfig,
    evaluate_tasks,
    model_predictor,
    pooled_pairs,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


def _apply_thread_cap() -> None:
    cap = os.environ.get("HRTF_NP_THREADS")
    if not cap:
        return
    try:
        limit = max(1, int(cap))
    except ValueError:
        raise UsageError(f"HRTF_NP_THREADS must be an integer, got {cap!r}")
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=limit)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(limit)


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _provenance(seed, config_obj) -> str:
    return f"# hrtfnp {__version__} seed={seed} config={_config_hash(config_obj)}"


def _write_csv(path, provenance: str, header: list[str], rows) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(provenance + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# dataset plumbing


def _load_split_checked(path) -> store.DatasetSplit:
    try:
        return store.load_split(path)
    except ValueError as exc:  # overlap or malformed manifest: data consistency
        raise DataError(str(exc)) from exc


def _load_subject_pool(inputs: Path) -> dict[int, store.AlignedSet]:
    pool: dict[int, store.AlignedSet] = {}
    files = sorted(inputs.glob("*.hrtfc"))
    if not files:
        raise DataError(f"no .hrtfc containers in {inputs}")
    for path in files:
        obj = store.load_container(path)
        if not isinstance(obj, store.AlignedSet):
            continue
        try:
            sid = int(obj.subject_id)
        except ValueError:
            raise DataError(f"{path}: subject id {obj.subject_id!r} is not an integer")
        if sid in pool:
            raise DataError(f"duplicate subject id {sid} in {inputs}")
        pool[sid] = obj
    if not pool:
        raise DataError(f"no aligned containers in {inputs}")
    return pool


def _subjects_for(ids: list[int], pool: dict[int, store.AlignedSet]):
    missing = [i for i in ids if i not in pool]
    if missing:
        raise DataError(f"missing containers for subjects {missing}")
    return [pool[i] for i in ids]


def _split_ids(split: store.DatasetSplit, name: str) -> list[int]:
    try:
        return getattr(split, name)
    except AttributeError:
        raise UsageError(f"unknown split name {name!r}")


def _eval_tasks(
    subjects, max_context: int, num_tasks: int, seed: int
) -> list[Task]:
    stream = TaskStream(
        subjects,
        SamplerConfig(max_context=max_context, seed=seed),
        stream_id=0,
        train_mode=False,
    )
    return stream.tasks(0, num_tasks)


# ---------------------------------------------------------------------------
# report emission shared by baseline and eval


def _emit_reports(reports, out_prefix: Path, provenance: str, bins_hint: int) -> dict:
    feature_rows = []
    filter_rows = []
    pair_rows = []
    for report in reports:
        for row in report.rows:
            feature_rows.append(
                [
                    report.task_index,
                    row["target"],
                    row["ear"],
                    row["bin"],
                    _fmt(row["lre_db"]),
                    _fmt(row["lmd_db"]),
                ]
            )
        filter_rows.append([report.task_index, _fmt(report.mean_lsd_db)])
        if report.pairs is not None:
            p = report.pairs
            for i in range(len(p["variance"])):
                pair_rows.append(
                    [
                        report.task_index,
                        p["target"][i],
                        p["ear"][i],
                        p["part"][i],
                        p["bin"][i],
                        repr(float(p["variance"][i])),
                        repr(float(p["sq_error"][i])),
                    ]
                )
    _write_csv(
        Path(str(out_prefix) + "_features.csv"),
        provenance,
        ["task", "target", "ear", "bin", "lre_db", "lmd_db"],
        feature_rows,
    )
    _write_csv(
        Path(str(out_prefix) + "_filters.csv"),
        provenance,
        ["task", "mean_lsd_db"],
        filter_rows,
    )
    summary = {
        "tasks": len(reports),
        "mean_lre_db": _mean_or_none([r.mean_lre_db for r in reports]),
        "mean_lmd_db": _mean_or_none([r.mean_lmd_db for r in reports]),
        "mean_lsd_db": _mean_or_none([r.mean_lsd_db for r in reports]),
        "mean_nll": _mean_or_none([r.nll for r in reports]),
        "excluded_features": int(sum(r.excluded_features for r in reports)),
    }
    if pair_rows:
        _write_csv(
            Path(str(out_prefix) + "_pairs.csv"),
            provenance,
            ["task", "target", "ear", "part", "bin", "variance", "sq_error"],
            pair_rows,
        )
        variances, errors = pooled_pairs(reports)
        divisions = min(bins_hint, len(variances))
        curve = calibration_curve(variances, errors, divisions)
        summary["mcd_db"] = mcd(curve)
        summary["calibration_divisions"] = divisions
    Path(str(out_prefix) + "_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    return summary


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        subjects=args.subjects,
        positions=args.positions,
        freq_bins=args.bins,
        seed=args.seed,
    )
    subjects, split = synth_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for subject in subjects:
        store.save_container(out / f"subject_{subject.subject_id}.hrtfc", subject)
    store.save_split(out / "split.json", split)
    print(f"wrote {len(subjects)} subjects and split.json to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    obj = store.load_container(args.input)
    if not isinstance(obj, store.HrtfSet):
        raise UsageError(
            f"{args.input} is not a raw HRIR container (kind 0); refusing to "
            "re-align an already aligned set"
        )
    positions = obj.positions
    aligned_spectra = []
    delays = []
    for p in range(len(positions)):
        one = hr.Hrir(obj.hrirs[p], obj.fs)
        if not args.no_resample:
            one = hr.resample_3_4(one)
        delay = hr.estimate_pure_delay(one)
        spec = hr.time_align(hr.half_spectrum(one), delay)
        delays.append(delay.tau)
        aligned_spectra.append(spec.bins)
    n_taps = 2 * (aligned_spectra[0].shape[1] - 1)
    fs = obj.fs if args.no_resample else obj.fs * 3 / 4
    result = store.AlignedSet(
        obj.subject_id,
        positions,
        np.array(delays),
        np.array(aligned_spectra),
        fs,
        n_taps,
    )
    store.save_container(args.output, result)
    print(f"aligned {len(positions)} positions (N={n_taps}, fs={fs}) -> {args.output}")
    return EXIT_OK


def cmd_mean(args) -> int:
    split = _load_split_checked(args.split)
    pool = _load_subject_pool(Path(args.inputs))
    train_sets = _subjects_for(split.train, pool)
    mean = store.compute_mean_envelope(train_sets)
    store.save_container(args.output, mean)
    print(f"mean envelope over {len(train_sets)} train subjects -> {args.output}")
    return EXIT_OK


def cmd_center(args) -> int:
    split = _load_split_checked(args.split)
    pool = _load_subject_pool(Path(args.inputs))
    mean = store.load_container(args.mean)
    if not isinstance(mean, store.MeanEnvelope):
        raise UsageError(f"{args.mean} is not a mean-envelope container")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for name in ("train", "validate", "test"):
        for subject in _subjects_for(_split_ids(split, name), pool):
            residual = store.center(subject, mean)
            store.save_container(
                out_dir / f"subject_{subject.subject_id}.hrtfc", residual
            )
            count += 1
    store.save_split(out_dir / "split.json", split)
    print(f"centered {count} subjects -> {out_dir}")
    return EXIT_OK


def _predictor_for(method: str, hyper: GpHyper | None):
    if method == "barycentric":
        return lambda task: Prediction(
            barycentric_interpolate(
                task.context_locations, task.context_features, task.target_locations
            ),
            None,
        )
    if method == "spline":
        return lambda task: Prediction(
            spline_interpolate(
                task.context_locations, task.context_features, task.target_locations
            ),
            None,
        )
    if method == "gp":
        if hyper is None:
            raise UsageError("gp method requires --gp-hyper or default precisions")

        def predict(task):
            mean, var = gp_predict(
                task.context_locations,
                task.context_features,
                task.target_locations,
                hyper,
            )
            sigma = np.sqrt(var[:, :, 0]) + 1j * np.sqrt(var[:, :, 1])
            return Prediction(mean, sigma)

        return predict
    raise UsageError(f"unknown method {method!r}")


def cmd_baseline(args) -> int:
    split = _load_split_checked(args.split)
    pool = _load_subject_pool(Path(args.inputs))
    subjects = _subjects_for(_split_ids(split, args.split_name), pool)
    bins = subjects[0].spectra.shape[2]
    hyper = None
    if args.method == "gp":
        hyper = (
            GpHyper.load(args.gp_hyper) if args.gp_hyper else GpHyper.default(bins)
        )
        if hyper.n_bins != bins:
            raise DataError(
                f"gp hyper has {hyper.n_bins} bins, dataset has {bins}"
            )
    tasks = _eval_tasks(subjects, args.max_context, args.num_tasks, args.seed)
    if args.method in ("barycentric", "spline"):
        # both need a usable context; keep tasks with at least a tetrahedron
        tasks = [t for t in tasks if t.context_size >= 4]
        if not tasks:
            raise DataError("no tasks with >= 4 context points; raise --num-tasks")
    reports = evaluate_tasks(_predictor_for(args.method, hyper), tasks)
    provenance = _provenance(args.seed, {"method": args.method, "tasks": len(tasks)})
    summary = _emit_reports(reports, Path(args.out), provenance, args.calibration_bins)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_gp_fit(args) -> int:
    split = _load_split_checked(args.split)
    pool = _load_subject_pool(Path(args.inputs))
    subjects = _subjects_for(split.train, pool)
    bins = subjects[0].spectra.shape[2]
    stream = TaskStream(
        subjects,
        SamplerConfig(max_context=args.max_context, seed=args.seed),
        stream_id=0,
        train_mode=True,
    )
    tasks = stream.tasks(0, args.tasks)
    fitted = gp_fit_beta(
        tasks, GpHyper.default(bins, beta=args.init_beta), iterations=args.iterations
    )
    fitted.save(args.out)
    print(
        f"fitted per-bin precisions on {len(tasks)} tasks "
        f"(beta range {fitted.beta.min():.3g}..{fitted.beta.max():.3g}) -> {args.out}"
    )
    return EXIT_OK


def _parse_train_config(path: Path, seed_override: int | None):
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise UsageError(f"config file {path} not found")
    known = {"data", "model", "train", "sampler"}
    unknown_sections = set(parser.sections()) - known
    if unknown_sections:
        raise UsageError(f"unknown config sections {sorted(unknown_sections)}")

    def section(name, cls):
        values = {}
        if not parser.has_section(name):
            return cls()
        valid = {f.name: f.type for f in fields(cls)}
        for key, raw in parser.items(name):
            if key not in valid:
                raise UsageError(f"unknown key {key!r} in [{name}]")
            current = getattr(cls(), key)
            if isinstance(current, bool):
                values[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float):
                values[key] = float(raw)
            else:
                values[key] = raw
        return cls(**values)

    if not parser.has_section("data"):
        raise UsageError("config file needs a [data] section")
    data_keys = dict(parser.items("data"))
    unknown = set(data_keys) - {"inputs", "manifest"}
    if unknown:
        raise UsageError(f"unknown key(s) {sorted(unknown)} in [data]")
    if "inputs" not in data_keys or "manifest" not in data_keys:
        raise UsageError("[data] needs inputs and manifest")
    model_cfg = section("model", ModelConfig)
    train_cfg = section("train", TrainConfig)
    sampler_cfg = section("sampler", SamplerConfig)
    if seed_override is not None:
        train_cfg.seed = seed_override
        sampler_cfg.seed = seed_override
    return data_keys, model_cfg, train_cfg, sampler_cfg


def cmd_train(args) -> int:
    data_keys, model_cfg, train_cfg, sampler_cfg = _parse_train_config(
        Path(args.config), args.seed
    )
    split = _load_split_checked(data_keys["manifest"])
    pool = _load_subject_pool(Path(data_keys["inputs"]))
    train_subjects = _subjects_for(split.train, pool)
    val_subjects = _subjects_for(split.validate, pool)
    bins = train_subjects[0].spectra.shape[2]
    if model_cfg.freq_bins != bins:
        raise DataError(
            f"model config has {model_cfg.freq_bins} bins, dataset has {bins}"
        )
    stream = TaskStream(train_subjects, sampler_cfg, stream_id=0, train_mode=True)
    val_cfg = SamplerConfig(
        max_context=sampler_cfg.max_context, seed=sampler_cfg.seed + 1
    )
    val_tasks = TaskStream(
        val_subjects, val_cfg, stream_id=1, train_mode=False
    ).tasks(0, args.val_tasks)
    result = train(
        model_cfg, train_cfg, stream, val_tasks, args.out_dir, resume_from=args.resume
    )
    if result.halted:
        print(f"training halted: {result.halted}", file=sys.stderr)
        return EXIT_NUMERIC
    print(
        f"trained {train_cfg.steps} steps; best validation NLL "
        f"{result.best_val_nll:.4f}; checkpoints in {args.out_dir}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    config, params, sidecar, _ = load_checkpoint(args.checkpoint)
    split = _load_split_checked(args.split)
    pool = _load_subject_pool(Path(args.inputs))
    subjects = _subjects_for(_split_ids(split, args.split_name), pool)
    bins = subjects[0].spectra.shape[2]
    if config.freq_bins != bins:
        raise DataError(f"checkpoint has {config.freq_bins} bins, dataset has {bins}")
    tasks = _eval_tasks(subjects, args.max_context, args.num_tasks, args.seed)
    model = SphericalConvCNP(config)
    reports = evaluate_tasks(model_predictor(model, params), tasks)
    provenance = _provenance(args.seed, asdict(config))
    summary = _emit_reports(reports, Path(args.out), provenance, args.calibration_bins)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    path = Path(args.pairs)
    variances = []
    errors = []
    with open(path, encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or "variance" not in reader.fieldnames:
        raise FormatError(f"{path}: not a pairs CSV (missing variance column)")
    for record in reader:
        variances.append(float(record["variance"]))
        errors.append(float(record["sq_error"]))
    if len(variances) < args.bins:
        raise DataError(
            f"only {len(variances)} pairs for {args.bins} divisions"
        )
    curve = calibration_curve(np.array(variances), np.array(errors), args.bins)
    value = mcd(curve)
    provenance = _provenance(args.seed, {"bins": args.bins, "pairs": len(variances)})
    _write_csv(
        args.out,
        provenance,
        ["division", "mpv", "mse"],
        [[i, repr(float(m)), repr(float(e))] for i, (m, e) in enumerate(zip(curve.mpv, curve.mse))],
    )
    print(json.dumps({"mcd_db": value, "divisions": args.bins}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hrtfnp",
        description="Spherical interpolation toolkit for time-aligned HRTF spectra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic desk-scale dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--positions", type=int, default=220)
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="resample, estimate delays, time-align")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-resample", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("mean", help="train-split mean envelope")
    p.add_argument("--split", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mean)

    p = sub.add_parser("center", help="subtract the mean envelope from all splits")
    p.add_argument("--split", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--mean", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_center)

    p = sub.add_parser("baseline", help="run a classical interpolator over tasks")
    p.add_argument("--method", required=True, choices=["barycentric", "spline", "gp"])
    p.add_argument("--inputs", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--split-name", default="test")
    p.add_argument("--num-tasks", type=int, default=20)
    p.add_argument("--max-context", type=int, default=100)
    p.add_argument("--gp-hyper")
    p.add_argument("--calibration-bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix for CSV/JSON reports")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gp-fit", help="fit GP precisions on meta-train tasks")
    p.add_argument("--inputs", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--tasks", type=int, default=340)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--init-beta", type=float, default=5.0)
    p.add_argument("--max-context", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gp_fit)

    p = sub.add_parser("train", help="meta-train the neural interpolator")
    p.add_argument("--config", required=True, help="INI file: [data] [model] [train] [sampler]")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume")
    p.add_argument("--val-tasks", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out tasks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--split-name", default="test")
    p.add_argument("--num-tasks", type=int, default=20)
    p.add_argument("--max-context", type=int, default=100)
    p.add_argument("--calibration-bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix for CSV/JSON reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="calibration curve + MCD from a pairs CSV")
    p.add_argument("--pairs", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GridError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ConditioningError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
