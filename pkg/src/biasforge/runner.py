"""Config-driven orchestration: synthesize, split, inject, audit, train, evaluate, report.

A run is a grid of independent cells, one per (scenario, replicate). Each
cell's randomness is derived from ``(master_seed, scenario index, replicate
index)`` only, so cells can run in any order or in isolation and still
produce the same rows. Cells execute on a bounded worker pool (size from
``BIASFORGE_THREADS``); a single collector writes all files in sorted order.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from . import auditor
from .auditor import Condition
from .data import temporal_split
from .evaluator import (
    EIGHTY_HIGH,
    EIGHTY_LOW,
    RATIO_NAMES,
    AggregateResult,
    FairnessReport,
    Run,
    aggregate_error_bars,
    evaluate,
    select_top_per_seed,
)
from .injector import BiasScenario, Kind, SeparabilityScheme, apply_scenario, dumps_manifest
from .learners import Algorithm, ConvergenceWarning, ModelSpec, fit, predict, sample_hyperparams
from .rng import derive_seed
from .synth import BaseConfig, ConfigError, gen_base_dataset

log = logging.getLogger(__name__)

AWARENESS_MODES = ("aware", "unaware")
NA = "NA"


@dataclass
class ExperimentConfig:
    base: BaseConfig = field(default_factory=BaseConfig)
    train_fraction: float = 0.75
    scenarios: list[BiasScenario] = field(default_factory=lambda: [BiasScenario(Kind.BASELINE)])
    replicates: int = 10
    algorithms: list[Algorithm] = field(default_factory=lambda: list(Algorithm))
    configs_per_algorithm: int = 50
    awareness_modes: list[str] = field(default_factory=lambda: list(AWARENESS_MODES))
    target_fprs: list[float] = field(default_factory=lambda: [0.05])
    master_seed: int = 0
    output_dir: Path = Path("runs/default")
    alpha: float = auditor.DEFAULT_ALPHA

    def validate(self) -> None:
        self.base.validate()
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.configs_per_algorithm < 1:
            raise ConfigError("configs_per_algorithm must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for mode in self.awareness_modes:
            if mode not in AWARENESS_MODES:
                raise ConfigError(f"unknown awareness mode {mode!r}")
        if not self.awareness_modes:
            raise ConfigError("at least one awareness mode is required")
        if not self.target_fprs or not all(0.0 < t < 1.0 for t in self.target_fprs):
            raise ConfigError("target_fprs must be a non-empty list of values in (0, 1)")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ConfigError(f"scenario names must be unique, got {names}")


def _scenario_from_dict(raw: dict) -> BiasScenario:
    raw = dict(raw)
    kind = Kind(raw.pop("kind"))
    scheme = raw.pop("scheme", None)
    if kind is Kind.H3:
        if scheme is None or scheme == "default":
            scheme = SeparabilityScheme.default()
        elif isinstance(scheme, dict) and set(scheme) == {"scale"}:
            scheme = SeparabilityScheme.default(float(scheme["scale"]))
        else:
            scheme = SeparabilityScheme.from_dict(scheme)
    elif scheme is not None:
        raise ConfigError(f"scheme given for non-H3 scenario {kind.value}")
    unknown = set(raw) - {"s_a", "c"}
    if unknown:
        raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
    return BiasScenario(kind, float(raw.get("s_a", 0.5)), float(raw.get("c", 1.0)), scheme)


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {}
    try:
        if "base" in raw:
            kwargs["base"] = BaseConfig(**raw.pop("base"))
        if "scenarios" in raw:
            kwargs["scenarios"] = [_scenario_from_dict(s) for s in raw.pop("scenarios")]
        if "algorithms" in raw:
            kwargs["algorithms"] = [Algorithm(a) for a in raw.pop("algorithms")]
        if "output_dir" in raw:
            kwargs["output_dir"] = Path(raw.pop("output_dir"))
        if "target_fprs" in raw:
            kwargs["target_fprs"] = [float(t) for t in raw.pop("target_fprs")]
        kwargs.update(raw)
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


# --- cells -------------------------------------------------------------------

RESULT_COLUMNS = [
    "scenario", "scenario_index", "kind", "s_a", "c", "replicate", "seed",
    "algorithm", "spec_id", "awareness", "target_fpr",
    "threshold", "global_tpr", "global_fpr", "auc", "auc_a", "auc_b",
    "tp_a", "fp_a", "tn_a", "fn_a", "tp_b", "fp_b", "tn_b", "fn_b",
    "prevalence_a", "prevalence_b", "fpr_a", "fpr_b", "fnr_a", "fnr_b", "ppv_a", "ppv_b",
    "log2_fpr_ratio", "log2_fnr_ratio", "log2_ppv_ratio",
    "eighty_rule_fpr", "eighty_rule_fnr", "eighty_rule_ppv",
    "decomp_prevalence_odds", "decomp_imprecision_odds", "decomp_recall", "decomp_residual",
    "converged",
] + [f"audit_{part}_{c.value.lower()}" for part in ("train", "test") for c in Condition]


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NA
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def scenario_seed(master_seed: int, scenario_index: int, replicate: int) -> int:
    return derive_seed(master_seed, "scenario", scenario_index, replicate)


def model_seed(spec: ModelSpec, cell_seed: int) -> int:
    """Aware and unaware fits share a stream so the feature set is their only difference."""
    return derive_seed(spec.seed, cell_seed)


def result_row(
    scenario: BiasScenario, scenario_index: int, replicate: int, seed: int, spec: ModelSpec,
    report: FairnessReport, converged: bool, audits: dict[str, dict[Condition, bool]],
) -> dict:
    a, b = report.conf_a, report.conf_b
    d = report.decomposition
    row = {
        "scenario": scenario.name, "scenario_index": scenario_index, "kind": scenario.kind.value,
        "s_a": scenario.s_a, "c": scenario.c, "replicate": replicate, "seed": seed,
        "algorithm": spec.algorithm.value, "spec_id": spec.spec_id,
        "awareness": "aware" if spec.awareness else "unaware", "target_fpr": report.target_fpr,
        "threshold": report.threshold, "global_tpr": report.global_tpr, "global_fpr": report.global_fpr,
        "auc": report.auc, "auc_a": report.auc_a, "auc_b": report.auc_b,
        "tp_a": a.tp, "fp_a": a.fp, "tn_a": a.tn, "fn_a": a.fn,
        "tp_b": b.tp, "fp_b": b.fp, "tn_b": b.tn, "fn_b": b.fn,
        "prevalence_a": a.prevalence, "prevalence_b": b.prevalence,
        "fpr_a": a.fpr, "fpr_b": b.fpr, "fnr_a": a.fnr, "fnr_b": b.fnr, "ppv_a": a.ppv, "ppv_b": b.ppv,
        "log2_fpr_ratio": report.log2_fpr_ratio, "log2_fnr_ratio": report.log2_fnr_ratio,
        "log2_ppv_ratio": report.log2_ppv_ratio,
        "eighty_rule_fpr": report.ratios.eighty_rule_fpr, "eighty_rule_fnr": report.ratios.eighty_rule_fnr,
        "eighty_rule_ppv": report.ratios.eighty_rule_ppv,
        "decomp_prevalence_odds": d.prevalence_odds if d else None,
        "decomp_imprecision_odds": d.imprecision_odds if d else None,
        "decomp_recall": d.recall if d else None,
        "decomp_residual": d.residual if d else None,
        "converged": converged,
    }
    for part in ("train", "test"):
        for c in Condition:
            row[f"audit_{part}_{c.value.lower()}"] = audits[part][c]
    return row


@dataclass
class CellResult:
    scenario_index: int
    replicate: int
    seed: int
    rows: list[dict] = field(default_factory=list)
    runs: list[tuple[tuple, Run]] = field(default_factory=list)
    manifest_name: str = ""
    manifest_text: str = ""
    audit_text: str = ""
    error: str | None = None


def specs_for(cfg: ExperimentConfig) -> dict[Algorithm, list[ModelSpec]]:
    """Hyperparameter samples per algorithm, shared by every scenario and seed."""
    return {alg: sample_hyperparams(alg, cfg.configs_per_algorithm, derive_seed(cfg.master_seed, "specs")) for alg in cfg.algorithms}


_BASE_CACHE: dict = {}


def _base_split(cfg: ExperimentConfig):
    key = (cfg.base, cfg.train_fraction)
    if key not in _BASE_CACHE:
        _BASE_CACHE.clear()
        _BASE_CACHE[key] = temporal_split(gen_base_dataset(cfg.base), cfg.train_fraction)
    return _BASE_CACHE[key]


def run_cell(cfg: ExperimentConfig, scenario_index: int, replicate: int) -> CellResult:
    """Inject, audit, train every (algorithm, spec, awareness) and evaluate one cell; never raises."""
    template = cfg.scenarios[scenario_index]
    seed = scenario_seed(cfg.master_seed, scenario_index, replicate)
    result = CellResult(scenario_index, replicate, seed)
    try:
        train, test = _base_split(cfg)
        scenario = replace(template, seed=seed)
        tr, te, manifest = apply_scenario(train, test, scenario)
        result.manifest_name = f"{scenario.name}_{seed}.manifest"
        result.manifest_text = dumps_manifest(manifest)
        audits, texts, profiles = {}, [], {}
        for part, ds in (("train", tr), ("test", te)):
            profiles[part] = auditor.audit_dataset(ds, cfg.alpha)
            audits[part] = {r.condition: r.detected for r in profiles[part]}
            texts.append(auditor.format_audit(profiles[part], f"{scenario.name} replicate={replicate} seed={seed} partition={part}"))
        texts.append(auditor.format_comparison(auditor.compare_profiles(profiles["train"], profiles["test"])))
        result.audit_text = "\n".join(texts)

        with warnings.catch_warnings():
            # non-convergence is recorded per row in the ``converged`` column
            warnings.simplefilter("ignore", ConvergenceWarning)
            _fit_grid(cfg, scenario, scenario_index, replicate, seed, tr, te, audits, result)
    except Exception as exc:  # noqa: BLE001 - cell failures are recorded, not raised
        result.rows = []
        result.runs = []
        result.error = f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
    return result


def _fit_grid(cfg, scenario, scenario_index, replicate, seed, tr, te, audits, result: CellResult) -> None:
    for alg, specs in specs_for(cfg).items():
        for spec in specs:
            for mode in cfg.awareness_modes:
                cell_spec = replace(spec, awareness=mode == "aware", seed=model_seed(spec, seed))
                model = fit(cell_spec, tr)
                scores = predict(model, te)
                for target in cfg.target_fprs:
                    report = evaluate(scores, te.y, te.z, target)
                    result.rows.append(result_row(scenario, scenario_index, replicate, seed, cell_spec, report, model.converged, audits))
                    result.runs.append(((scenario.name, alg.value, mode, target), Run.from_report(replicate, spec.spec_id, report)))


def _run_cell_args(args):
    return run_cell(*args)


def worker_count() -> int:
    raw = os.environ.get("BIASFORGE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"BIASFORGE_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


# --- output ------------------------------------------------------------------

def format_rows(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


AGGREGATE_COLUMNS = [
    "scenario", "algorithm", "awareness", "target_fpr", "n_seeds",
    "tpr_median", "tpr_min", "tpr_max",
] + [f"{name}_{stat}" for name in RATIO_NAMES for stat in ("median", "min", "max", "n_defined", "n_undefined")] + [
    "undefined", "top_spec_ids",
]


def aggregate_row(agg: AggregateResult) -> dict:
    row = {
        "scenario": agg.scenario, "algorithm": agg.algorithm,
        "awareness": "aware" if agg.awareness else "unaware", "target_fpr": agg.target_fpr,
        "n_seeds": len(agg.top_runs),
        "tpr_median": agg.tpr.median, "tpr_min": agg.tpr.min, "tpr_max": agg.tpr.max,
        "undefined": agg.undefined,
        "top_spec_ids": ";".join(f"{r.seed}:{r.spec_id}" for r in agg.top_runs),
    }
    for name, s in agg.ratios.items():
        row[f"{name}_median"] = s.median
        row[f"{name}_min"] = s.min
        row[f"{name}_max"] = s.max
        row[f"{name}_n_defined"] = s.n_defined
        row[f"{name}_n_undefined"] = s.n_undefined
    return row


def aggregate_runs(keyed_runs: list[tuple[tuple, Run]], order: list[tuple]) -> list[AggregateResult]:
    """Group runs by (scenario, algorithm, mode, target), keep the top model per seed, summarize."""
    grouped: dict[tuple, list[Run]] = {}
    for key, run in keyed_runs:
        grouped.setdefault(key, []).append(run)
    out = []
    for key in order:
        if key not in grouped:
            continue
        scenario, alg, mode, _ = key
        top = select_top_per_seed(grouped[key])
        out.append(aggregate_error_bars(top, scenario, alg, mode == "aware"))
    return out


PLOT_COLUMNS = [
    "scenario", "algorithm", "awareness", "x_tpr_median", "x_tpr_min", "x_tpr_max",
    "y_median", "y_min", "y_max", "n_defined", "n_undefined", "band_low", "band_high",
]


def emit_plot_data(aggregates: list[AggregateResult], output_dir: str | os.PathLike) -> list[Path]:
    """One CSV per (ratio metric, target FPR) with error-bar coordinates and the 80%-rule band."""
    if not aggregates:
        raise ValueError("emit_plot_data needs at least one aggregate")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    targets = sorted({a.target_fpr for a in aggregates})
    paths = []
    for metric in RATIO_NAMES:
        for target in targets:
            rows = []
            for a in aggregates:
                if a.target_fpr != target:
                    continue
                s = a.ratios[metric]
                rows.append({
                    "scenario": a.scenario, "algorithm": a.algorithm,
                    "awareness": "aware" if a.awareness else "unaware",
                    "x_tpr_median": a.tpr.median, "x_tpr_min": a.tpr.min, "x_tpr_max": a.tpr.max,
                    "y_median": s.median, "y_min": s.min, "y_max": s.max,
                    "n_defined": s.n_defined, "n_undefined": s.n_undefined,
                    "band_low": EIGHTY_LOW, "band_high": EIGHTY_HIGH,
                })
            path = output_dir / f"plot_{metric}_fpr{target:g}.csv"
            path.write_text(format_rows(rows, PLOT_COLUMNS), encoding="utf-8")
            paths.append(path)
    return paths


@dataclass
class RunSummary:
    output_dir: Path
    n_cells: int
    failed: list[tuple[int, int, str]]
    aggregates: list[AggregateResult]
    results_path: Path
    aggregate_path: Path

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def text(self) -> str:
        lines = [f"cells: {self.n_cells}, failed: {len(self.failed)}"]
        for i, r, err in self.failed:
            lines.append(f"FAILED scenario_index={i} replicate={r}: {err.splitlines()[0]}")
        lines.append("scenario | algorithm | awareness | target_fpr | median TPR | median log2 FPR ratio | median log2 FNR ratio")
        for a in self.aggregates:
            f = a.ratios["log2_fpr_ratio"].median
            n = a.ratios["log2_fnr_ratio"].median
            lines.append(
                f"{a.scenario} | {a.algorithm} | {'aware' if a.awareness else 'unaware'} | {a.target_fpr:g} | "
                f"{a.tpr.median:.4f} | {NA if f is None else f'{f:+.4f}'} | {NA if n is None else f'{n:+.4f}'}"
            )
        return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, cells: list[tuple[int, int]] | None = None) -> RunSummary:
    """Execute every (scenario, replicate) cell, or only ``cells``, and write all artifacts."""
    cfg.validate()
    out = Path(cfg.output_dir)
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    (out / "audits").mkdir(parents=True, exist_ok=True)
    if cells is None:
        cells = [(i, r) for i in range(len(cfg.scenarios)) for r in range(cfg.replicates)]
    workers = min(worker_count(), len(cells))
    log.info("running %d cells on %d worker(s)", len(cells), workers)

    results: list[CellResult] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_cell_args, [(cfg, i, r) for i, r in cells]):
                _write_cell_files(out, cfg, res)
                results.append(res)
    else:
        for i, r in cells:
            res = run_cell(cfg, i, r)
            _write_cell_files(out, cfg, res)
            results.append(res)

    results.sort(key=lambda c: (c.scenario_index, c.replicate))
    rows = [row for c in results for row in c.rows]
    results_path = out / "results.csv"
    results_path.write_text(format_rows(rows, RESULT_COLUMNS), encoding="utf-8")

    order = [
        (s.name, alg.value, mode, t)
        for s in cfg.scenarios for alg in cfg.algorithms for mode in cfg.awareness_modes for t in cfg.target_fprs
    ]
    aggregates = aggregate_runs([kr for c in results for kr in c.runs], order)
    aggregate_path = out / "aggregate.csv"
    aggregate_path.write_text(format_rows([aggregate_row(a) for a in aggregates], AGGREGATE_COLUMNS), encoding="utf-8")
    if aggregates:
        emit_plot_data(aggregates, out / "plots")

    failed = [(c.scenario_index, c.replicate, c.error) for c in results if c.error]
    errors_path = out / "errors.txt"
    if failed:
        errors_path.write_text("\n".join(f"scenario_index={i} replicate={r}\n{e}" for i, r, e in failed), encoding="utf-8")
    elif errors_path.exists():
        errors_path.unlink()
    summary = RunSummary(out, len(cells), failed, aggregates, results_path, aggregate_path)
    (out / "summary.txt").write_text(summary.text(), encoding="utf-8")
    return summary


def _write_cell_files(out: Path, cfg: ExperimentConfig, res: CellResult) -> None:
    if res.manifest_text:
        (out / "manifests" / res.manifest_name).write_text(res.manifest_text, encoding="utf-8")
    if res.audit_text:
        name = res.manifest_name.replace(".manifest", ".audit")
        (out / "audits" / name).write_text(res.audit_text, encoding="utf-8")


# --- reading results back ----------------------------------------------------

def _parse(text: str):
    if text == NA:
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_rows(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def runs_from_rows(rows: list[dict]) -> list[tuple[tuple, Run]]:
    return [
        (
            (r["scenario"], r["algorithm"], r["awareness"], r["target_fpr"]),
            Run(r["replicate"], r["spec_id"], r["target_fpr"], r["global_tpr"],
                r["log2_fpr_ratio"], r["log2_fnr_ratio"], r["log2_ppv_ratio"], r),
        )
        for r in rows
    ]
