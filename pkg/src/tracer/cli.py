"""Command-line entry point: ``tracer {synth,score,fit,eval}``.

Exit codes: 0 ok, 2 input or configuration error, 3 unusable data (e.g. a
single outcome class or missing labels), 4 embedding provider failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import normalized_entropy_prefix_scores, normalized_entropy_score
from .calibration import CalibrationReport, GridSpec, fit, select_threshold
from .config import RunConfig, read_grid, read_run_config, read_scenario
from .embeddings import build_embedder
from .errors import ConfigError, DataError, InputError, TracerError
from .evaluation import auroc, early_warning, emit_report, evaluate, permutation_auroc, summary_lines
from .risk import (TracerParams, read_prefix_csv, read_score_csv, score_trajectory, write_prefix_csv,
                   write_score_csv)
from .signals import compute_step_signals, write_signal_csv
from .synth import ScenarioSpec, dataset_statistics, generate, write_annotations_csv
from .trajectory import TrajectoryRecord, parse_trajectory_log, require_labels, write_trajectory_log

DEFAULT_SEED = 7


def _run_dir(args) -> Path:
    if args.output_dir:
        out = Path(args.output_dir)
    else:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / f"{stamp}-seed{args.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    cfg = read_run_config(args.config) if args.config else RunConfig()
    if args.provider:
        emb = dataclasses.replace(cfg.embedding, kind=args.provider)
        cfg = dataclasses.replace(cfg, embedding=emb)
    return cfg


def _params(args, cfg: RunConfig) -> TracerParams:
    """--params is either ``name=value,...`` or the path of a calibration report."""
    if args.params:
        if "=" not in args.params:
            return CalibrationReport.read(args.params).params
        return TracerParams.parse(args.params)
    return cfg.params or TracerParams()


def _read_log(path: str) -> list[TrajectoryRecord]:
    try:
        return parse_trajectory_log(path)
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _is_score_csv(path: str) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            head = fh.readline()
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}") from None
    return head.startswith("episode_id,score")


# --- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = read_scenario(args.config) if args.config else ScenarioSpec()
    if args.seed_given:
        spec = dataclasses.replace(spec, seed=args.seed)
    ds = generate(spec)
    out = _run_dir(args)
    write_trajectory_log(ds.trajectories, out / "trajectories.jsonl")
    with open(out / "annotations.csv", "w", encoding="utf-8", newline="") as fh:
        write_annotations_csv(ds.annotations, fh)
    for key, val in dataset_statistics(ds).items():
        print(f"{key}: {val:.3f}" if isinstance(val, float) else f"{key}: {val}")
    print(f"wrote {out}")
    return 0


def cmd_score(args) -> int:
    cfg = _run_config(args)
    params = _params(args, cfg)
    embedder = build_embedder(cfg.embedding)
    trajs = _read_log(args.input)
    out = _run_dir(args)
    results = []
    sig_dir = out / "signals"
    if args.signals:
        sig_dir.mkdir(exist_ok=True)
    for traj in trajs:
        sigs = compute_step_signals(traj, cfg.signals, embedder)
        results.append(score_trajectory(traj, params, sigs, with_prefix=args.prefix, freeze_k=cfg.freeze_k))
        if args.signals:
            with open(sig_dir / f"{traj.episode_id}.csv", "w", encoding="utf-8", newline="") as fh:
                write_signal_csv(traj, sigs, fh)
    with open(out / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        write_score_csv(results, fh)
    if args.prefix:
        with open(out / "prefix_scores.csv", "w", encoding="utf-8", newline="") as fh:
            write_prefix_csv(results, fh)
    print(f"scored {len(results)} episodes under {_fmt_params(params)}")
    print(f"wrote {out}")
    return 0


def _split(trajs: Sequence[TrajectoryRecord], seed: int, fraction: float):
    idx = np.random.default_rng(seed).permutation(len(trajs))
    n_val = int(round(fraction * len(trajs)))
    val = sorted(idx[:n_val])
    train = sorted(idx[n_val:])
    return [trajs[i] for i in train], [trajs[i] for i in val]


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    embedder = build_embedder(cfg.embedding)
    grid = read_grid(args.grid) if args.grid else GridSpec()
    trajs = _read_log(args.input)
    require_labels(trajs)
    if args.validation:
        train, val = trajs, _read_log(args.validation)
    elif args.validation_fraction > 0:
        train, val = _split(trajs, args.seed, args.validation_fraction)
    else:
        train, val = trajs, None
    report = fit(train, grid, cfg.signals, embedder, validation=val)
    out = _run_dir(args)
    report.write(out / "calibration_report.jsonl")
    print(f"theta: {_fmt_params(report.params)}")
    print(f"loss: {report.loss:.6g}")
    auc = "n/a" if report.validation_auroc is None else f"{report.validation_auroc:.3f}"
    print(f"AUROC ({report.auroc_split}): {auc}")
    print(f"wrote {out}")
    return 0


def _read_labels(path: str) -> tuple[dict[str, int], list[TrajectoryRecord] | None]:
    """Labels from a trajectory log or from a CSV with columns episode_id and outcome (or label)."""
    if path.endswith(".csv"):
        try:
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
        except FileNotFoundError:
            raise InputError(f"labels file not found: {path}") from None
        col = "outcome" if rows and "outcome" in rows[0] else "label"
        try:
            return {r["episode_id"]: int(r[col]) for r in rows}, None
        except (KeyError, ValueError):
            raise InputError(f"{path}: expected columns episode_id and outcome") from None
    trajs = _read_log(path)
    return {t.episode_id: lab for t, lab in zip(trajs, require_labels(trajs))}, trajs


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    log_trajs = None
    prefixes = None
    if _is_score_csv(args.input):
        if not args.labels:
            raise DataError("evaluating a score CSV needs --labels")
        with open(args.input, encoding="utf-8", newline="") as fh:
            rows = read_score_csv(fh)
        label_map, log_trajs = _read_labels(args.labels)
        missing = [r.episode_id for r in rows if r.episode_id not in label_map]
        if missing:
            raise DataError(f"no label for episode {missing[0]!r}")
        ids = [r.episode_id for r in rows]
        scores = [r.score for r in rows]
        labels = [label_map[e] for e in ids]
        if args.prefix:
            prefix_path = Path(args.input).with_name("prefix_scores.csv")
            try:
                with open(prefix_path, encoding="utf-8", newline="") as fh:
                    by_id = read_prefix_csv(fh)
            except FileNotFoundError:
                raise InputError(f"--prefix needs {prefix_path} next to the score file") from None
            prefixes = [by_id.get(e, []) for e in ids]
    else:
        params = _params(args, cfg)
        embedder = build_embedder(cfg.embedding)
        log_trajs = _read_log(args.input)
        labels = require_labels(log_trajs)
        results = [score_trajectory(t, params, compute_step_signals(t, cfg.signals, embedder),
                                    with_prefix=args.prefix, freeze_k=cfg.freeze_k) for t in log_trajs]
        ids = [r.episode_id for r in results]
        scores = [r.score for r in results]
        if args.prefix:
            prefixes = [list(r.prefix) for r in results]

    report = evaluate(scores, labels, prefixes, args.threshold)
    perm_mean, perm_sd = permutation_auroc(scores, labels, seed=args.seed)
    report.extra["permutation AUROC mean"] = perm_mean
    report.extra["permutation AUROC sd"] = perm_sd
    if log_trajs is not None:
        by_id = {t.episode_id: t for t in log_trajs}
        base = [normalized_entropy_score(by_id[e]) for e in ids if e in by_id]
        if len(base) == len(ids) and not any(math.isnan(b) for b in base):
            report.extra["normalized-entropy baseline AUROC"] = auroc(base, labels)
            if prefixes is not None and report.early_warning is not None:
                b_thr = select_threshold(base, labels)
                failed = [normalized_entropy_prefix_scores(by_id[e]) for e, y in zip(ids, labels) if y == 1]
                report.extra["normalized-entropy baseline detected by 20%"] = early_warning(
                    failed, b_thr).detected_by_early
    out = _run_dir(args)
    emit_report(report, out)
    for line in summary_lines(report):
        print(line)
    print(f"wrote {out}")
    return 0


def _fmt_params(p: TracerParams) -> str:
    return ", ".join(f"{k}={v:g}" for k, v in p.to_dict().items())


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", help="run directory (default runs/<timestamp>-seed<seed>)")
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--provider", choices=["builtin_hashed_bow", "external_http"],
                        help="embedding provider; TRACER_EMBED_URL sets the external endpoint")

    parser = argparse.ArgumentParser(prog="tracer", description="Trajectory risk scoring for agent conversations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled trajectory log")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", parents=[common], help="score every episode of a trajectory log")
    p.add_argument("--input", required=True, help="trajectory log (JSON lines)")
    p.add_argument("--params", help="alpha=..,beta=..,gamma=..,k=..,w=.. or a calibration report path")
    p.add_argument("--prefix", action="store_true", help="also write per-step prefix scores")
    p.add_argument("--signals", action="store_true", help="also dump per-step signals per episode")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit", parents=[common], help="calibrate parameters on a labeled log")
    p.add_argument("--input", required=True, help="labeled trajectory log")
    p.add_argument("--grid", help="grid specification file")
    p.add_argument("--validation", help="separate labeled log for the reported AUROC")
    p.add_argument("--validation-fraction", type=float, default=0.5,
                   help="held-out share when --validation is absent; 0 reports training AUROC")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", parents=[common], help="evaluate scores against outcome labels")
    p.add_argument("--input", required=True, help="labeled trajectory log or scores.csv")
    p.add_argument("--labels", help="labels for a scores.csv input: a labeled log or episode_id,outcome CSV")
    p.add_argument("--params", help="parameters when --input is a log")
    p.add_argument("--prefix", action="store_true", help="prefix-level AUROC and early warning")
    p.add_argument("--threshold", type=float, help="early-warning threshold (default: Youden's J)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = DEFAULT_SEED
    try:
        if getattr(args, "validation_fraction", 0.0) and not 0.0 <= args.validation_fraction < 1.0:
            raise ConfigError("--validation-fraction must lie in [0, 1)")
        return args.func(args)
    except TracerError as exc:
        print(f"tracer: error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    except OSError as exc:
        print(f"tracer: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
