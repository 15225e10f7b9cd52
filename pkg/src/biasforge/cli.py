"""Command-line entry point.

Subcommands::

    biasforge gen        --output base.csv [--config cfg.yaml] [--seed N]
    biasforge inject     --data base.csv --kind H2_1 --s-a 0.5 --c 2 --seed N --output DIR
    biasforge audit      DATASET.csv [--alpha 0.01]
    biasforge train-eval --train train.csv --test test.csv --algorithm GBT [--hp JSON | --spec-index K]
    biasforge run        --config cfg.yaml [--output DIR] [--seed N] [--cell I:R ...]

Exit codes: 0 success, 1 a stage or cell failed, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import auditor
from .data import DataError, infer_schema, load_csv, temporal_split, write_csv
from .evaluator import EvaluationError, evaluate
from .injector import BiasScenario, InjectionError, Kind, SeparabilityScheme, apply_scenario, write_manifest
from .learners import Algorithm, ModelSpec, fit, predict, sample_hyperparams
from .runner import RESULT_COLUMNS, format_rows, load_config, result_row, run_experiment
from .synth import BaseConfig, ConfigError, gen_base_dataset

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

log = logging.getLogger("biasforge")


def _load_dataset(path: str):
    return load_csv(path, infer_schema(path))


def _base_config(args) -> BaseConfig:
    cfg = load_config(args.config).base if args.config else BaseConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "rows", None) is not None:
        cfg = replace(cfg, n_rows=args.rows)
    cfg.validate()
    return cfg


def cmd_gen(args) -> int:
    ds = gen_base_dataset(_base_config(args))
    path = write_csv(ds, args.output)
    print(f"wrote {ds.n_rows} rows to {path}")
    return EXIT_OK


def cmd_inject(args) -> int:
    base = _load_dataset(args.data)
    train, test = temporal_split(base, args.train_fraction)
    scheme = SeparabilityScheme.default(args.scale) if args.kind == Kind.H3.value else None
    scenario = BiasScenario(Kind(args.kind), args.s_a, args.c, scheme, args.seed)
    tr, te, manifest = apply_scenario(train, test, scenario)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}_{args.seed}"
    write_csv(tr, out / f"{stem}_train.csv")
    write_csv(te, out / f"{stem}_test.csv")
    path = write_manifest(manifest, out)
    print(f"wrote {stem}_train.csv, {stem}_test.csv and {path.name} to {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    ds = _load_dataset(args.dataset)
    if ds.protected is None:
        raise DataError(f"{args.dataset}: no protected column (expected 'z')")
    text = auditor.format_audit(auditor.audit_dataset(ds, args.alpha), args.dataset)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train_eval(args) -> int:
    train, test = _load_dataset(args.train), _load_dataset(args.test)
    alg = Algorithm(args.algorithm)
    if args.hp is not None:
        try:
            spec = ModelSpec(alg, json.loads(args.hp), seed=args.seed)
        except ValueError as exc:
            raise ConfigError(f"--hp: {exc}") from exc
    else:
        spec = replace(sample_hyperparams(alg, args.spec_index + 1, args.seed)[args.spec_index], seed=args.seed)
    modes = ["aware", "unaware"] if args.awareness == "both" else [args.awareness]
    audits = {
        part: {r.condition: r.detected for r in auditor.audit_dataset(ds, args.alpha)}
        for part, ds in (("train", train), ("test", test))
    }
    scenario = BiasScenario(Kind.BASELINE, seed=args.seed)
    rows = []
    for mode in modes:
        s = spec.aware(mode == "aware")
        model = fit(s, train)
        scores = predict(model, test)
        for t in args.target_fpr:
            report = evaluate(scores, test.y, test.z, t)
            row = result_row(scenario, 0, 0, args.seed, s, report, model.converged, audits)
            row["scenario"], row["kind"] = args.label, "EXTERNAL"
            rows.append(row)
    text = format_rows(rows, RESULT_COLUMNS)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_cell(text: str) -> tuple[int, int]:
    try:
        i, r = text.split(":")
        return int(i), int(r)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cell must look like SCENARIO_INDEX:REPLICATE, got {text!r}") from None


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.output is not None:
        cfg.output_dir = Path(args.output)
    if args.seed is not None:
        cfg.master_seed = args.seed
    cfg.validate()
    if args.cell:
        for i, r in args.cell:
            if not (0 <= i < len(cfg.scenarios) and 0 <= r < cfg.replicates):
                raise ConfigError(f"cell {i}:{r} outside the configured grid")
    try:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir not writable: {exc}") from exc
    summary = run_experiment(cfg, args.cell or None)
    sys.stdout.write(summary.text())
    return summary.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biasforge", description="Synthetic bias injection and fairness evaluation")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a base dataset to CSV")
    p.add_argument("--config", help="experiment config; only its base section is used")
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--seed", type=int)
    p.add_argument("--rows", type=int, help="override n_rows")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("inject", help="split a base dataset and inject one scenario instance")
    p.add_argument("--data", required=True, help="base dataset CSV")
    p.add_argument("--kind", required=True, choices=[k.value for k in Kind])
    p.add_argument("--s-a", dest="s_a", type=float, default=0.5)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=3.0, help="H3 separation scale of the default scheme")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("audit", help="audit a dataset with a protected column")
    p.add_argument("dataset")
    p.add_argument("--alpha", type=float, default=auditor.DEFAULT_ALPHA)
    p.add_argument("--output", help="report path (default stdout)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("train-eval", help="fit one spec on a train CSV and evaluate on a test CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--algorithm", required=True, choices=[a.value for a in Algorithm])
    g = p.add_mutually_exclusive_group()
    g.add_argument("--hp", help="hyperparameters as a JSON object")
    g.add_argument("--spec-index", type=int, default=0, help="index into the sampled grid (default 0)")
    p.add_argument("--awareness", choices=["aware", "unaware", "both"], default="both")
    p.add_argument("--target-fpr", type=float, nargs="+", default=[0.05])
    p.add_argument("--alpha", type=float, default=auditor.DEFAULT_ALPHA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="external", help="scenario label written to the rows")
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("run", help="run a full experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="override output_dir")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--cell", type=_parse_cell, action="append", help="run only SCENARIO_INDEX:REPLICATE (repeatable)")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InjectionError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
