"""Command-line experiment runner.

Subcommands:

    gen-data   generate the configured cohort and write cohort.json
    train      train the configured objective; writes params.json,
               trainlog.jsonl and the run manifest
    eval       evaluate trained parameters; writes metrics.json and
               per_sample.csv
    oracle     run the solver-vs-brute-force equivalence sweep and the
               finite-difference gradient suites; writes oracle.json
    report     build a comparison bundle from >= 1 metrics.json files

Exit codes: 0 success, 1 configuration/validation error (message on
stderr), 2 oracle failure (failing instance serialized in the output).

Artifacts land in <output_dir>/<run_name>/; the output directory is
taken from --out, else the config's output_dir, else the DUETFAIR_OUT
environment variable. Every file-emitting command rewrites the run
manifest (config hash, tool version, timestamps, file hashes).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    parse_experiment_config,
    parse_variant,
    resolved_config_dict,
)
from .core import cohort_from_json, cohort_to_json, validate_cohort
from .metrics import report_to_csv, report_to_json
from .model import params_from_json, params_to_json
from .objectives import ObjectiveConfig
from .report import ReportError, emit_report
from .robust import RobustnessConfig
from .synth import generate_cohort
from .trainer import evaluate, log_to_jsonl, train
from .verification import gradient_check_suite, oracle_sweep

_MANIFEST_NAME = "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(run_dir: Path, config: ExperimentConfig, started: float) -> None:
    files = sorted(p for p in run_dir.iterdir() if p.is_file() and p.name != _MANIFEST_NAME)
    doc = {
        "run_name": config.run_name,
        "config_hash": config_hash(config),
        "tool_version": __version__,
        "started_at": started,
        "finished_at": time.time(),
        "files": [{"path": p.name, "sha256": _sha256(p)} for p in files],
        "config": resolved_config_dict(config),
    }
    (run_dir / _MANIFEST_NAME).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        config = load_experiment_config(args.config)
    else:
        config = parse_experiment_config({})

    if getattr(args, "seed", None) is not None:
        config = replace(config, synth=replace(config.synth, seed=args.seed),
                         train=replace(config.train, seed=args.seed))
    if getattr(args, "objective", None) is not None:
        variant = parse_variant(args.objective)
        config = replace(config, objective=replace(config.objective, variant=variant))
    if getattr(args, "rho", None) is not None:
        if args.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {args.rho}")
        group_ids = range(config.synth.num_groups)
        config = replace(
            config,
            objective=replace(config.objective, robustness=RobustnessConfig.from_scalar(args.rho, group_ids)),
        )
    if getattr(args, "lambda_rob", None) is not None:
        if args.lambda_rob < 0:
            raise ConfigError(f"lambda_rob must be >= 0, got {args.lambda_rob}")
        config = replace(config, objective=replace(config.objective, lambda_rob=args.lambda_rob))
    if getattr(args, "no_dmoe", False):
        config = replace(config, model=replace(config.model, use_dmoe=False))
    return config


def _run_dir(args, config: ExperimentConfig) -> Path:
    out = args.out or config.output_dir or os.environ.get("DUETFAIR_OUT")
    if not out:
        raise ConfigError("no output directory: pass --out, set output_dir in the config, or set DUETFAIR_OUT")
    run_dir = Path(out) / config.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_or_generate_cohort(run_dir: Path, config: ExperimentConfig):
    cohort_path = run_dir / "cohort.json"
    if cohort_path.exists():
        cohort = cohort_from_json(cohort_path.read_text(encoding="utf-8"))
    else:
        cohort = generate_cohort(config.synth)
        cohort_path.write_text(cohort_to_json(cohort), encoding="utf-8")
    violations = validate_cohort(cohort)
    if violations:
        raise ConfigError("invalid cohort: " + "; ".join(violations[:5]))
    return cohort


def _cmd_gen_data(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, config)
    started = time.time()
    cohort = generate_cohort(config.synth)
    (run_dir / "cohort.json").write_text(cohort_to_json(cohort), encoding="utf-8")
    _write_manifest(run_dir, config, started)
    print(f"wrote {run_dir / 'cohort.json'} ({len(cohort)} samples)")
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, config)
    started = time.time()
    cohort = _load_or_generate_cohort(run_dir, config)
    params, log = train(cohort, config.model, config.objective, config.train)
    (run_dir / "params.json").write_text(params_to_json(params), encoding="utf-8")
    (run_dir / "trainlog.jsonl").write_text(log_to_jsonl(log), encoding="utf-8")
    _write_manifest(run_dir, config, started)
    final = log.records[-1]
    print(f"trained {config.objective.variant.value} for {config.train.epochs} epochs; "
          f"final objective {final.objective:.6f}; artifacts in {run_dir}")
    return 0


def _cmd_eval(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, config)
    started = time.time()
    params_path = run_dir / "params.json"
    if not params_path.exists():
        raise ConfigError(f"no trained parameters at {params_path}; run the train command first")
    params = params_from_json(params_path.read_text(encoding="utf-8"))
    cohort = _load_or_generate_cohort(run_dir, config)
    report = evaluate(cohort, params, config.model, bootstrap=config.bootstrap)
    (run_dir / "metrics.json").write_text(report_to_json(report), encoding="utf-8")
    (run_dir / "per_sample.csv").write_text(report_to_csv(report), encoding="utf-8")
    _write_manifest(run_dir, config, started)
    print(f"mean dice {report.population[0]:.4f}, ES dice {report.es[0]:.4f}, "
          f"worst group {report.per_group[report.worst_group[0]].label} ({report.worst_group[1]:.4f}); "
          f"artifacts in {run_dir}")
    return 0


def _cmd_oracle(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, config)
    started = time.time()
    sweep = oracle_sweep()
    grad = gradient_check_suite()
    doc = {"equivalence_sweep": sweep, "gradient_checks": grad}
    ok = sweep["passed"] and grad["passed"]
    doc["passed"] = ok
    (run_dir / "oracle.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    _write_manifest(run_dir, config, started)
    print(f"oracle: equivalence {sweep['num_passed']}/{sweep['num_instances']} "
          f"(worst gap {sweep['worst_gap']:.3e}), gradient checks "
          f"{'passed' if grad['passed'] else 'FAILED'}; wrote {run_dir / 'oracle.json'}")
    if not ok:
        print("oracle failure; see oracle.json for the failing instance", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args) -> int:
    emitted = emit_report(args.reports, args.out)
    print(f"wrote {len(emitted)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duetfair",
        description="Subgroup-conditioned distributionally robust segmentation testbed",
    )
    parser.add_argument("--version", action="version", version=f"duetfair {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_objective: bool):
        p.add_argument("--config", help="path to experiment config JSON")
        p.add_argument("--seed", type=int, help="override synth and train seeds")
        p.add_argument("--out", help="override output directory")
        if with_objective:
            p.add_argument("--objective", choices=["erm", "fairdro", "groupdro", "fairdro-penalty"])
            p.add_argument("--rho", type=float, help="robustness radius for all groups")
            p.add_argument("--lambda-rob", dest="lambda_rob", type=float)
            p.add_argument("--no-dmoe", dest="no_dmoe", action="store_true")

    common(sub.add_parser("gen-data", help="generate the synthetic cohort"), with_objective=False)
    common(sub.add_parser("train", help="train the configured objective"), with_objective=True)
    common(sub.add_parser("eval", help="evaluate trained parameters"), with_objective=True)
    common(sub.add_parser("oracle", help="run verification sweeps"), with_objective=False)

    rep = sub.add_parser("report", help="build a comparison bundle")
    rep.add_argument("reports", nargs="+", help="metrics.json files, one per method")
    rep.add_argument("--out", required=True, help="output directory for the bundle")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "oracle": _cmd_oracle,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
