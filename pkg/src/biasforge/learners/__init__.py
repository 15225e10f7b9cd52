"""Fairness-blind classifiers: logistic regression, CART tree, random forest, gradient boosting.

All four learners emit scores in [0, 1] and are deterministic given the
spec seed. ``awareness`` controls whether the protected column enters the
feature list (encoded A -> 1, B -> 0).
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from ..data import DataError, MissingColumnError, TabularDataset
from ..rng import derive_seed, make_rng
from . import _tree
from .logreg import fit_logreg, predict_logreg

MODEL_FORMAT_VERSION = 1


class Algorithm(str, enum.Enum):
    LOGREG = "LOGREG"
    TREE = "TREE"
    FOREST = "FOREST"
    GBT = "GBT"


class ConvergenceWarning(UserWarning):
    pass


# name -> (sampling rule, low, high); "fixed" entries are not sampled.
GRIDS: dict[Algorithm, dict[str, tuple]] = {
    Algorithm.LOGREG: {
        "learning_rate": ("log", 1e-3, 1e-1),
        "l2": ("log", 1e-6, 1e-1),
        "epochs": ("int", 10, 100),
    },
    Algorithm.TREE: {
        "max_depth": ("int", 2, 12),
        "min_leaf": ("int", 5, 200),
    },
    Algorithm.FOREST: {
        "n_trees": ("int", 25, 200),
        "max_depth": ("int", 4, 16),
        "feature_fraction": ("uniform", 0.3, 1.0),
        "min_leaf": ("fixed", 5, 5),
        "bootstrap": ("fixed", True, True),
    },
    Algorithm.GBT: {
        "n_rounds": ("int", 50, 300),
        "learning_rate": ("log", 0.02, 0.3),
        "max_depth": ("int", 2, 6),
        "subsample": ("uniform", 0.5, 1.0),
        "min_leaf": ("fixed", 20, 20),
        "l2": ("fixed", 1.0, 1.0),
    },
}


# Structural domain of every hyperparameter, used for specs built with ``off_grid=True``.
DOMAINS: dict[str, tuple] = {
    "learning_rate": ("real", 0.0, math.inf),
    "l2": ("real", 0.0, math.inf),
    "epochs": ("int", 1, math.inf),
    "max_depth": ("int", 1, 64),
    "min_leaf": ("int", 1, math.inf),
    "n_trees": ("int", 1, math.inf),
    "n_rounds": ("int", 1, math.inf),
    "feature_fraction": ("real", 0.0, 1.0),
    "subsample": ("real", 0.0, 1.0),
    "bootstrap": ("bool", False, True),
}


@dataclass(frozen=True)
class ModelSpec:
    """One learner configuration.

    Hyperparameters must lie inside the algorithm's grid. ``off_grid=True``
    relaxes this to the structural domain (for example a single unbootstrapped
    forest tree), which property checks need; sampled specs never set it.
    """

    algorithm: Algorithm
    hyperparameters: dict
    awareness: bool = False
    seed: int = 0
    spec_id: str = ""
    off_grid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        check_hyperparameters(self.algorithm, self.hyperparameters, self.off_grid)
        if not self.spec_id:
            object.__setattr__(self, "spec_id", f"{self.algorithm.value}-custom")

    def aware(self, flag: bool = True) -> "ModelSpec":
        return replace(self, awareness=flag)


def check_hyperparameters(algorithm: Algorithm, hp: dict, off_grid: bool = False) -> None:
    algorithm = Algorithm(algorithm)
    grid = GRIDS[algorithm]
    missing = set(grid) - set(hp)
    unknown = set(hp) - set(grid)
    if missing or unknown:
        raise ValueError(f"{algorithm.value}: missing {sorted(missing)}, unknown {sorted(unknown)}")
    for name, (rule, lo, hi) in grid.items():
        v = hp[name]
        kind, dlo, dhi = DOMAINS[name]
        if kind == "bool" and not isinstance(v, bool):
            raise ValueError(f"{algorithm.value}: {name} must be a boolean")
        if kind == "int" and (isinstance(v, bool) or not isinstance(v, (int, np.integer))):
            raise ValueError(f"{algorithm.value}: {name} must be an integer")
        if off_grid:
            if kind == "real" and not (dlo < v <= dhi if name in ("feature_fraction", "subsample", "learning_rate") else dlo <= v < dhi):
                raise ValueError(f"{algorithm.value}: {name}={v} outside its domain")
            if kind == "int" and not dlo <= v <= dhi:
                raise ValueError(f"{algorithm.value}: {name}={v} outside its domain")
            continue
        if rule == "fixed":
            if v != lo:
                raise ValueError(f"{algorithm.value}: {name} is fixed at {lo} on the grid, got {v}")
            continue
        if not lo <= v <= hi:
            raise ValueError(f"{algorithm.value}: {name}={v} outside [{lo}, {hi}]")


def sample_hyperparams(algorithm, count: int, seed: int) -> list[ModelSpec]:
    """Draw ``count`` specs, each dimension independently uniform (log-uniform where marked)."""
    try:
        algorithm = Algorithm(algorithm)
    except ValueError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(derive_seed(seed, "hyperparams", algorithm.value))
    specs = []
    for i in range(count):
        hp = {}
        for name, (rule, lo, hi) in GRIDS[algorithm].items():
            if rule == "fixed":
                hp[name] = lo
            elif rule == "int":
                hp[name] = int(rng.integers(lo, hi + 1))
            elif rule == "log":
                hp[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
                hp[name] = min(max(hp[name], lo), hi)
            else:
                hp[name] = float(rng.uniform(lo, hi))
        specs.append(ModelSpec(algorithm, hp, False, derive_seed(seed, algorithm.value, i), f"{algorithm.value}-{i:03d}"))
    return specs


@dataclass
class TrainedModel:
    spec: ModelSpec
    features: list[str]
    params: dict
    iterations: int = 0
    loss_trace: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def uses_protected(self) -> bool:
        return self.spec.awareness


def model_features(spec: ModelSpec, ds: TabularDataset) -> list[str]:
    features = ds.feature_names()
    if spec.awareness:
        if ds.protected is None:
            raise DataError("aware model needs a protected column")
        features = features + [ds.protected]
    return features


def design_matrix(ds: TabularDataset, features: list[str]) -> np.ndarray:
    for name in features:
        if name not in ds.columns:
            raise MissingColumnError("feature missing from dataset", column=name)
    if not features:
        return np.zeros((ds.n_rows, 0))
    return np.column_stack([ds[name].astype(np.float64) for name in features])


def _pack(trees: list[dict]) -> dict:
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    for i, t in enumerate(trees):
        offsets[i + 1] = offsets[i] + t["feature"].size
    return {
        "feature": np.concatenate([t["feature"] for t in trees]).astype(np.int32),
        "threshold": np.concatenate([t["threshold"] for t in trees]).astype(np.float64),
        "left": np.concatenate([t["left"] for t in trees]).astype(np.int32),
        "right": np.concatenate([t["right"] for t in trees]).astype(np.int32),
        "value": np.concatenate([t["value"] for t in trees]).astype(np.float64),
        "offsets": offsets,
    }


def _grow(binned, edges, s1, s2, cnt, rows, features, max_depth, min_leaf, criterion, lam) -> dict:
    n_bins = np.array([e.size + 1 for e in edges], dtype=np.int64)
    feat, split, left, right, value = _tree.build_tree(
        binned, s1, s2, cnt, rows.astype(np.int64), features.astype(np.int64), n_bins,
        int(max_depth), float(min_leaf), criterion, float(lam), 1e-12,
    )
    threshold = np.zeros(feat.size)
    inner = feat >= 0
    threshold[inner] = [edges[f][k] for f, k in zip(feat[inner], split[inner])]
    return {"feature": feat, "split": split, "threshold": threshold, "left": left, "right": right, "value": value}


def _fit_forest(X, y, hp, rng, n_trees, bootstrap, feature_fraction) -> dict:
    edges = _tree.bin_edges(X)
    binned = _tree.apply_bins(X, edges)
    n, d = X.shape
    yf = y.astype(np.float64)
    n_feat = max(1, int(round(feature_fraction * d)))
    trees = []
    for _ in range(n_trees):
        if n_feat < d:
            features = np.sort(rng.choice(d, size=n_feat, replace=False))
        else:
            features = np.arange(d)
        if bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
            rows = np.flatnonzero(counts)
        else:
            counts = np.ones(n)
            rows = np.arange(n)
        trees.append(_grow(binned, edges, counts * yf, counts, counts, rows, features,
                           hp["max_depth"], hp["min_leaf"], _tree.GINI, 0.0))
    return _pack(trees)


def _fit_gbt(X, y, hp, rng) -> tuple[dict, list[float]]:
    edges = _tree.bin_edges(X)
    binned = _tree.apply_bins(X, edges)
    n, d = X.shape
    yf = y.astype(np.float64)
    n_pos = yf.sum()
    w = np.where(yf == 1.0, (n - n_pos) / n_pos, 1.0)
    base = float(np.log((w * yf).sum() / (w * (1 - yf)).sum()))
    F = np.full(n, base)
    ones = np.ones(n)
    features = np.arange(d)
    lr = hp["learning_rate"]
    g = np.empty(n)
    h = np.empty(n)
    trees, trace = [], []
    for _ in range(hp["n_rounds"]):
        trace.append(float(_tree.logistic_grad_hess(F, yf, w, g, h)))
        rows = np.flatnonzero(rng.random(n) < hp["subsample"]) if hp["subsample"] < 1.0 else np.arange(n)
        tree = _grow(binned, edges, g, h, ones, rows, features, hp["max_depth"], hp["min_leaf"], _tree.NEWTON, hp["l2"])
        _tree.predict_binned(binned, tree["feature"], tree["split"], tree["left"], tree["right"], tree["value"], F, lr)
        trees.append(tree)
    trace.append(float(_tree.logistic_grad_hess(F, yf, w, g, h)))
    packed = _pack(trees)
    packed["base_score"] = np.array([base])
    packed["learning_rate"] = np.array([lr])
    return packed, trace


def fit(spec: ModelSpec, train: TabularDataset) -> TrainedModel:
    """Train ``spec`` on ``train``; raises DataError on single-class labels."""
    y = train.y
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DataError("training data must contain both classes")
    features = model_features(spec, train)
    X = design_matrix(train, features)
    if X.shape[1] == 0:
        raise DataError("no features to train on")
    rng = make_rng(derive_seed(spec.seed, "fit"))
    hp = spec.hyperparameters
    alg = spec.algorithm
    model = TrainedModel(spec, features, {})
    if alg is Algorithm.LOGREG:
        out = fit_logreg(X, y, hp["learning_rate"], hp["l2"], hp["epochs"], rng)
        model.params = out["params"]
        model.iterations = out["iterations"]
        model.loss_trace = out["loss_trace"]
        model.converged = out["converged"]
        if not model.converged:
            warnings.warn(f"{spec.spec_id}: loss still changing after {hp['epochs']} epochs", ConvergenceWarning, stacklevel=2)
    elif alg is Algorithm.TREE:
        model.params = _fit_forest(X, y, {"max_depth": hp["max_depth"], "min_leaf": hp["min_leaf"]}, rng, 1, False, 1.0)
        model.iterations = 1
    elif alg is Algorithm.FOREST:
        model.params = _fit_forest(X, y, hp, rng, hp["n_trees"], hp["bootstrap"], hp["feature_fraction"])
        model.iterations = hp["n_trees"]
    else:
        model.params, model.loss_trace = _fit_gbt(X, y, hp, rng)
        model.iterations = hp["n_rounds"]
    return model


def predict(model: TrainedModel, ds: TabularDataset) -> np.ndarray:
    """Scores in [0, 1], one per row of ``ds``."""
    X = np.ascontiguousarray(design_matrix(ds, model.features))
    p = model.params
    alg = model.spec.algorithm
    if alg is Algorithm.LOGREG:
        scores = predict_logreg(p, X)
    elif alg is Algorithm.GBT:
        F = np.full(X.shape[0], p["base_score"][0])
        _tree.predict_raw(X, p["feature"], p["threshold"], p["left"], p["right"], p["value"], p["offsets"], F, p["learning_rate"][0])
        scores = expit(F)
    else:
        acc = np.zeros(X.shape[0])
        n_trees = p["offsets"].size - 1
        _tree.predict_raw(X, p["feature"], p["threshold"], p["left"], p["right"], p["value"], p["offsets"], acc, 1.0)
        scores = acc / n_trees
    return np.clip(scores, 0.0, 1.0)


# --- persistence -------------------------------------------------------------

def dumps_model(model: TrainedModel) -> str:
    """Versioned JSON text; floats use shortest round-trip repr so reload is bit-exact."""
    spec = model.spec
    doc = {
        "format": "biasforge-model",
        "version": MODEL_FORMAT_VERSION,
        "algorithm": spec.algorithm.value,
        "spec_id": spec.spec_id,
        "hyperparameters": spec.hyperparameters,
        "awareness": spec.awareness,
        "seed": spec.seed,
        "off_grid": spec.off_grid,
        "features": model.features,
        "iterations": model.iterations,
        "converged": model.converged,
        "loss_trace": model.loss_trace,
        "params": {k: {"dtype": str(v.dtype), "values": v.tolist()} for k, v in sorted(model.params.items())},
    }
    return json.dumps(doc, indent=1)


def loads_model(text: str) -> TrainedModel:
    doc = json.loads(text)
    if doc.get("format") != "biasforge-model":
        raise ValueError("not a biasforge model file")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    spec = ModelSpec(doc["algorithm"], doc["hyperparameters"], doc["awareness"], doc["seed"], doc["spec_id"], doc["off_grid"])
    params = {k: np.asarray(v["values"], dtype=v["dtype"]) for k, v in doc["params"].items()}
    return TrainedModel(spec, doc["features"], params, doc["iterations"], doc["loss_trace"], doc["converged"])


def save_model(model: TrainedModel, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".model":
        path = path.with_suffix(".model")
    path.write_text(dumps_model(model), encoding="utf-8")
    return path


def load_model(path: str | Path) -> TrainedModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))
