"""Command-line interface.

Subcommands: synth-data, extract-features, train-fin, train-cnn, finetune,
evaluate, sweep-horizon, sweep-fraction. Reports land in --out as
report.json / report.csv (+ curve.csv, timing.json) with rendered figures
under --out/figures and checkpoints under --out/checkpoints. Exit code 0
on success; failures print one `error: <kind>: <message>` line to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--data-dir", help="directory of subject_<id>.csv recordings")
    parser.add_argument("--out", help="output directory (reports, figures, checkpoints)")
    parser.add_argument("--fraction", type=float, help="fine-tuning data fraction in (0, 1]")
    parser.add_argument("--horizon-ms", type=int, help="prediction horizon in ms")
    parser.add_argument("--subjects", help="subject filter, e.g. 1-4 or 1,3,7-9")
    parser.add_argument("--checkpoints", help="directory of pretrained checkpoints to reuse")
    parser.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="emgfin",
        description="Feature-imitation pipeline for sEMG hand-movement recognition",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate synthetic recordings as CSV files")
    _add_common(sp)
    sp.add_argument("--synth-subjects", type=int, help="number of synthetic subjects")
    sp.add_argument("--synth-classes", type=int, help="number of movement classes (2..17)")
    sp.add_argument("--burst-seconds", type=float, help="movement burst length in seconds")
    sp.add_argument("--rest-seconds", type=float, help="rest length in seconds")

    sp = sub.add_parser("extract-features", help="dump per-window raw features as CSV")
    _add_common(sp)
    sp.add_argument("--split", choices=["pretrain", "finetune", "test", "all"], default="all")

    for name, help_text in (
        ("train-fin", "train the four feature regressors (exp1)"),
        ("train-cnn", "train CNN-I and CNN-II on ground-truth features (exp3)"),
        ("finetune", "joint fine-tuning of the imitate->classify chain (exp4)"),
        ("evaluate", "evaluate stored checkpoints on the test split"),
        ("sweep-horizon", "forward-in-time horizon sweep (exp2)"),
        ("sweep-fraction", "fine-tuning data-fraction sweep"),
    ):
        sp = sub.add_parser(name, help=help_text)
        _add_common(sp)
    return p


def _config_from_args(args, experiment: str):
    from .config import build_config

    overrides = {
        "experiment": experiment,
        "seed": args.seed,
        "data_dir": getattr(args, "data_dir", None),
        "out_dir": args.out,
        "finetune_fraction": getattr(args, "fraction", None),
        "horizon_ms": getattr(args, "horizon_ms", None),
        "subjects": getattr(args, "subjects", None),
        "checkpoint_dir": getattr(args, "checkpoints", None),
        "synth_subjects": getattr(args, "synth_subjects", None),
        "synth_classes": getattr(args, "synth_classes", None),
        "synth_burst_seconds": getattr(args, "burst_seconds", None),
        "synth_rest_seconds": getattr(args, "rest_seconds", None),
    }
    return build_config(args.config, **overrides)


def _emit(report, cfg, no_figures: bool) -> None:
    from .report import write_report_bundle

    write_report_bundle(report, cfg.out_dir, figures=not no_figures)
    print(f"report written to {os.path.join(cfg.out_dir, 'report.json')}")


def _cmd_synth_data(args) -> int:
    from .data import save_csv, synth_generate

    cfg = _config_from_args(args, "exp1-fin")
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    recs = synth_generate(
        cfg.synth_subjects, cfg.synth_classes, cfg.synth_reps, cfg.seed,
        cfg.synth_burst_seconds, cfg.synth_rest_seconds,
    )
    for rec in recs:
        path = os.path.join(out, f"subject_{rec.subject_id}.csv")
        save_csv(rec, path)
        print(f"wrote {path} ({rec.n_samples} samples)")
    return 0


def _cmd_extract_features(args) -> int:
    from .config import ConfigError
    from .experiments import features_for, prepare_windows
    from .features import FEATURE_TYPES

    cfg = _config_from_args(args, "exp1-fin")
    ws = prepare_windows(cfg)
    if args.split == "all":
        idx = np.arange(len(ws))
    else:
        idx = ws.indices_of_split(args.split)
    if idx.size == 0:
        raise ConfigError(f"no windows in split {args.split!r}")
    feats = features_for(ws, idx)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "features.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ",".join(f"ch{i}" for i in range(1, 13))
        fh.write(f"subject,repetition,start_index,label,feature,{cols}\n")
        for k, i in enumerate(idx):
            for fi, feat in enumerate(FEATURE_TYPES):
                vals = ",".join(repr(float(v)) for v in feats[k, fi])
                fh.write(
                    f"{ws.subject[i]},{ws.repetition[i]},{ws.start[i]},{ws.label[i]},{feat},{vals}\n"
                )
    print(f"wrote {path} ({idx.size} windows x 4 features)")
    return 0


def _cmd_experiment(args, runner_name: str, experiment: str) -> int:
    from . import experiments

    cfg = _config_from_args(args, experiment)
    runner = getattr(experiments, runner_name)
    report, _ = runner(cfg, save_dir=cfg.out_dir)
    _emit(report, cfg, args.no_figures)
    return 0


def _cmd_evaluate(args) -> int:
    from .checkpoint import CheckpointError, load_joint
    from .classifier import evaluate_predictions, predict_from_features
    from .config import ConfigError
    from .experiments import SplitAudit, _eval_chain_subject, _test_pools, prepare_windows
    from .fin import HorizonSpec
    from .report import ExperimentReport, write_report_bundle

    cfg = _config_from_args(args, "exp4-finetune")
    if not cfg.checkpoint_dir:
        raise ConfigError("evaluate requires --checkpoints <dir> with joint-s<subject>.ckpt files")
    ws = prepare_windows(cfg)
    pools = _test_pools(cfg, ws)
    horizon = HorizonSpec(cfg.horizon_ms)
    per_subject = {}
    warnings = []
    stats = None
    for subj, idx in pools.items():
        path = os.path.join(cfg.checkpoint_dir, f"joint-s{subj}.ckpt")
        if not os.path.exists(path):
            warnings.append(f"subject {subj}: no joint checkpoint, skipped")
            continue
        fins, cnn, ck = load_joint(path)
        stats = ck.feature_stats or stats
        acc, _ = _eval_chain_subject(cfg, ws, stats, fins, cnn, idx, horizon)
        if acc is None:
            warnings.append(f"subject {subj}: no horizon targets in test windows")
            continue
        per_subject[subj] = acc
    if not per_subject:
        raise CheckpointError(f"{cfg.checkpoint_dir}: no evaluable joint checkpoints found")
    from .classifier import group_accuracy

    report = ExperimentReport(
        experiment="exp4-finetune",
        seed=cfg.seed,
        config=cfg.to_dict(),
        classifier={
            "fin_cnn_ii": {
                "per_subject": per_subject,
                "groups": group_accuracy(per_subject),
                "horizon_ms": cfg.horizon_ms,
            }
        },
        split_audit=SplitAudit().summary(),
        warnings=warnings,
    )
    write_report_bundle(report, cfg.out_dir, figures=not args.no_figures)
    print(f"report written to {os.path.join(cfg.out_dir, 'report.json')}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth-data":
            return _cmd_synth_data(args)
        if args.command == "extract-features":
            return _cmd_extract_features(args)
        if args.command == "train-fin":
            return _cmd_experiment(args, "run_exp1", "exp1-fin")
        if args.command == "train-cnn":
            return _cmd_experiment(args, "run_exp3", "exp3-cnn")
        if args.command == "finetune":
            return _cmd_experiment(args, "run_exp4", "exp4-finetune")
        if args.command == "sweep-horizon":
            return _cmd_experiment(args, "run_exp2", "exp2-horizon")
        if args.command == "sweep-fraction":
            return _cmd_experiment(args, "run_fraction_sweep", "exp4-finetune")
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        raise RuntimeError(f"unhandled command {args.command!r}")
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
