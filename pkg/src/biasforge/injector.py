"""Synthetic protected-attribute injection and label flipping.

Each operation returns fresh datasets; inputs are never modified. Group
assignment draws one uniform per row, so the prevalence-conditioned assignment
with ``c == 1`` reproduces the independent assignment draw for draw.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .data import GROUPS, DataError, TabularDataset, group_counts, prevalence
from .rng import derive_seed, make_rng


class InjectionError(ValueError):
    pass


class Kind(str, enum.Enum):
    BASELINE = "BASELINE"
    H1 = "H1"
    H2_1 = "H2_1"
    H2_2_TRAIN_ONLY = "H2_2_TRAIN_ONLY"
    H2_2_TEST_ONLY = "H2_2_TEST_ONLY"
    H3 = "H3"
    H4_1 = "H4_1"
    H4_2 = "H4_2"


@dataclass(frozen=True)
class SeparabilityScheme:
    """Bivariate normal parameters for (x1, x2) in each (label, group) cell.

    ``means`` and ``covs`` are keyed by ``(y, z)`` with y in {0, 1} and z in {"A", "B"}.
    """

    means: dict
    covs: dict

    def __post_init__(self):
        keys = {(y, z) for y in (0, 1) for z in GROUPS}
        if set(self.means) != keys or set(self.covs) != keys:
            raise InjectionError("scheme needs means and covariances for all four (y, z) cells")
        for key in keys:
            mu = np.asarray(self.means[key], dtype=float)
            cov = np.asarray(self.covs[key], dtype=float)
            if mu.shape != (2,) or cov.shape != (2, 2):
                raise InjectionError(f"cell {key}: mean must be length 2 and covariance 2x2")
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise InjectionError(f"cell {key}: covariance not symmetric")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise InjectionError(f"cell {key}: covariance not positive definite")

    @classmethod
    def default(cls, scale: float = 3.0) -> "SeparabilityScheme":
        """Group B classes at (0,0) vs (scale, scale); both group A classes at the midpoint."""
        mid = scale / 2
        means = {(0, "B"): (0.0, 0.0), (1, "B"): (scale, scale), (0, "A"): (mid, mid), (1, "A"): (mid, mid)}
        covs = {key: ((1.0, 0.0), (0.0, 1.0)) for key in means}
        return cls(means, covs)

    def fisher_ratio(self, group: str) -> float:
        """Squared Mahalanobis distance between the class means of ``group`` under the pooled covariance."""
        d = np.asarray(self.means[(1, group)], float) - np.asarray(self.means[(0, group)], float)
        pooled = (np.asarray(self.covs[(1, group)], float) + np.asarray(self.covs[(0, group)], float)) / 2
        return float(d @ np.linalg.solve(pooled, d))

    def to_dict(self) -> dict:
        return {
            f"{y}{z}": {"mean": list(map(float, self.means[(y, z)])), "cov": [list(map(float, r)) for r in self.covs[(y, z)]]}
            for y in (0, 1)
            for z in GROUPS
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SeparabilityScheme":
        means, covs = {}, {}
        for key, cell in raw.items():
            y, z = int(key[0]), key[1]
            means[(y, z)] = tuple(cell["mean"])
            covs[(y, z)] = tuple(tuple(r) for r in cell["cov"])
        return cls(means, covs)


@dataclass(frozen=True)
class BiasScenario:
    kind: Kind
    s_a: float = 0.5
    c: float = 1.0
    scheme: SeparabilityScheme | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0.0 < self.s_a < 1.0:
            raise InjectionError(f"s_A must lie in (0, 1), got {self.s_a}")
        if not self.c > 0:
            raise InjectionError(f"c must be positive, got {self.c}")
        if (self.kind is Kind.H3) != (self.scheme is not None):
            raise InjectionError("a separability scheme is required for H3 and only for H3")

    @property
    def name(self) -> str:
        k = self.kind
        if k is Kind.BASELINE:
            return "BASELINE"
        if k is Kind.H1:
            return f"H1_sA{self.s_a:g}"
        if k is Kind.H3:
            return "H3"
        if k is Kind.H4_1:
            return f"H4_1_c{self.c:g}"
        return f"{k.value}_sA{self.s_a:g}_c{self.c:g}"


@dataclass(frozen=True)
class FlipLog:
    rows: tuple[int, ...]
    old: tuple[int, ...]
    new: tuple[int, ...]
    group: str
    achieved_prevalence: dict

    def __len__(self) -> int:
        return len(self.rows)

    def revert(self, ds: TabularDataset) -> TabularDataset:
        y = ds.y.copy()
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.size:
            if not np.array_equal(y[rows], np.asarray(self.new)):
                raise InjectionError("dataset labels do not match the flip log")
            y[rows] = np.asarray(self.old, dtype=y.dtype)
        return ds.with_labels(y)


@dataclass
class PartitionStats:
    n_rows: int
    n_a: int
    n_b: int
    pos_a: int
    pos_b: int
    flips: int = 0

    @property
    def group_fraction_a(self) -> float:
        return self.n_a / self.n_rows

    @property
    def group_fraction_b(self) -> float:
        return self.n_b / self.n_rows

    @property
    def prevalence_a(self) -> float | None:
        return self.pos_a / self.n_a if self.n_a else None

    @property
    def prevalence_b(self) -> float | None:
        return self.pos_b / self.n_b if self.n_b else None

    @property
    def prevalence(self) -> float:
        return (self.pos_a + self.pos_b) / self.n_rows

    @property
    def prevalence_ratio(self) -> float | None:
        pa, pb = self.prevalence_a, self.prevalence_b
        if pa is None or not pb:
            return None
        return pa / pb

    @classmethod
    def of(cls, ds: TabularDataset, flips: int = 0) -> "PartitionStats":
        counts = group_counts(ds)
        return cls(ds.n_rows, counts["A"][0], counts["B"][0], counts["A"][1], counts["B"][1], flips)

    def as_dict(self) -> dict:
        out = asdict(self)
        for name in ("group_fraction_a", "group_fraction_b", "prevalence", "prevalence_a", "prevalence_b", "prevalence_ratio"):
            out[name] = getattr(self, name)
        return out


@dataclass
class InjectionManifest:
    scenario: BiasScenario
    seed: int
    train: PartitionStats
    test: PartitionStats
    columns_added: list[str]
    flip_log: FlipLog | None = None
    notes: list[str] = field(default_factory=list)


def _require_no_protected(ds: TabularDataset) -> None:
    if ds.protected is not None:
        raise InjectionError(f"dataset already has protected column {ds.protected!r}")


def assign_groups_independent(ds: TabularDataset, s_a: float, seed: int) -> TabularDataset:
    """Append Z with each row an independent coin flip, P[A] = s_a."""
    _require_no_protected(ds)
    if not 0.0 < s_a < 1.0:
        raise InjectionError(f"s_A must lie in (0, 1), got {s_a}")
    u = make_rng(derive_seed(seed, "groups")).random(ds.n_rows)
    return ds.with_protected(u < s_a)


def prevalence_assignment_probs(p: float, s_a: float, c: float) -> tuple[float, float, float, float]:
    """Return (p_A, p_B, P[Z=A|Y=1], P[Z=A|Y=0]) for overall prevalence p.

    Solves s_A p_A + (1 - s_A) p_B = p with p_A = c p_B, then applies Bayes' rule.
    Raises InjectionError naming the first violated bound.
    """
    if not 0.0 < s_a < 1.0:
        raise InjectionError(f"s_A must lie in (0, 1), got {s_a}")
    if not c > 0:
        raise InjectionError(f"c must be positive, got {c}")
    if not 0.0 < p < 1.0:
        raise InjectionError(f"overall prevalence must lie in (0, 1), got {p}")
    if c == 1.0:
        return p, p, s_a, s_a
    p_b = p / (s_a * c + 1.0 - s_a)
    p_a = c * p_b
    if not 0.0 < p_b < 1.0:
        raise InjectionError(f"infeasible: p_B = {p_b:.6g} outside (0, 1)")
    if not 0.0 < p_a < 1.0:
        raise InjectionError(f"infeasible: p_A = {p_a:.6g} outside (0, 1)")
    q1 = s_a * p_a / p
    q0 = s_a * (1.0 - p_a) / (1.0 - p)
    if not 0.0 <= q1 <= 1.0:
        raise InjectionError(f"infeasible: P[Z=A|Y=1] = {q1:.6g} outside [0, 1]")
    if not 0.0 <= q0 <= 1.0:
        raise InjectionError(f"infeasible: P[Z=A|Y=0] = {q0:.6g} outside [0, 1]")
    return p_a, p_b, q1, q0


def assign_groups_prevalence(ds: TabularDataset, s_a: float, c: float, seed: int) -> TabularDataset:
    """Append Z drawn conditionally on Y so that P[Z=A] = s_a and P[Y=1|A] = c P[Y=1|B] in expectation."""
    _require_no_protected(ds)
    _, _, q1, q0 = prevalence_assignment_probs(prevalence(ds), s_a, c)
    u = make_rng(derive_seed(seed, "groups")).random(ds.n_rows)
    prob_a = np.where(ds.y == 1, q1, q0)
    return ds.with_protected(u < prob_a)


def add_separability_features(ds: TabularDataset, scheme: SeparabilityScheme, seed: int) -> TabularDataset:
    """Append real columns x1, x2 drawn from the bivariate normal of each row's (y, z) cell."""
    if ds.protected is None:
        raise InjectionError("add_separability_features needs a protected column")
    e = make_rng(derive_seed(seed, "separability")).standard_normal((ds.n_rows, 2))
    x = np.empty_like(e)
    y, z = ds.y, ds.z
    for label in (0, 1):
        for g in GROUPS:
            mask = (y == label) & (z == (1 if g == "A" else 0))
            chol = np.linalg.cholesky(np.asarray(scheme.covs[(label, g)], dtype=float))
            x[mask] = np.asarray(scheme.means[(label, g)], dtype=float) + e[mask] @ chol.T
    return ds.with_column("x1", x[:, 0], "real").with_column("x2", x[:, 1], "real")


def _other(group: str) -> str:
    if group not in GROUPS:
        raise InjectionError(f"unknown group {group!r}")
    return "B" if group == "A" else "A"


def _flip(ds: TabularDataset, rows: np.ndarray, new_label: int, group: str) -> tuple[TabularDataset, FlipLog]:
    rows = np.sort(rows)
    y = ds.y.copy()
    old = y[rows].copy()
    y[rows] = new_label
    out = ds.with_labels(y)
    achieved = {g: prevalence(out, g) for g in GROUPS}
    log = FlipLog(
        tuple(int(r) for r in rows),
        tuple(int(v) for v in old),
        tuple([new_label] * len(rows)),
        group,
        achieved,
    )
    return out, log


def flip_count_to_ratio(n_g: int, pos_g: int, n_o: int, pos_o: int, c_target: float) -> int:
    """Smallest k >= 0 with (pos_g + k) / n_g >= c_target * pos_o / n_o, in exact arithmetic."""
    need = Fraction(c_target) * Fraction(pos_o, n_o) * n_g - pos_g
    return max(0, math.ceil(need))


def flip_negatives_to_positives(
    train: TabularDataset, group: str, c_target: float, seed: int
) -> tuple[TabularDataset, FlipLog]:
    """Relabel uniformly chosen negatives of ``group`` as positives until its prevalence reaches ``c_target`` times the other's."""
    if train.protected is None:
        raise InjectionError("label flipping needs a protected column")
    if not c_target > 0:
        raise InjectionError(f"c_target must be positive, got {c_target}")
    other = _other(group)
    counts = group_counts(train)
    (n_g, pos_g), (n_o, pos_o) = counts[group], counts[other]
    if n_g == 0 or n_o == 0:
        raise InjectionError("both groups must be present to flip labels")
    if pos_g == 0 and pos_o == 0:
        raise InjectionError("prevalence ratio undefined: no positives in either group")
    k = flip_count_to_ratio(n_g, pos_g, n_o, pos_o, c_target)
    negatives = np.flatnonzero(train.group_mask(group) & (train.y == 0))
    if k > negatives.size:
        raise InjectionError(f"c_target {c_target} unreachable: needs {k} flips, only {negatives.size} negatives in group {group}")
    rows = make_rng(derive_seed(seed, "flip")).choice(negatives, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    return _flip(train, rows, 1, group)


def flip_count_to_equalize(n_g: int, pos_g: int, n_o: int, pos_o: int) -> int:
    """Integer k in [0, pos_g] minimizing |(pos_g - k)/n_g - pos_o/n_o|; ties go to the smaller k."""
    target = Fraction(pos_o, n_o)
    exact = pos_g - target * n_g
    best_k, best_gap = 0, abs(Fraction(pos_g, n_g) - target)
    for k in {math.floor(exact), math.ceil(exact)}:
        if 0 <= k <= pos_g:
            gap = abs(Fraction(pos_g - k, n_g) - target)
            if gap < best_gap or (gap == best_gap and k < best_k):
                best_k, best_gap = k, gap
    return best_k


def flip_positives_to_negatives_equalize(train: TabularDataset, seed: int) -> tuple[TabularDataset, FlipLog]:
    """Relabel uniformly chosen positives of the more prevalent group as negatives until prevalences match."""
    if train.protected is None:
        raise InjectionError("label flipping needs a protected column")
    counts = group_counts(train)
    (n_a, pos_a), (n_b, pos_b) = counts["A"], counts["B"]
    if n_a == 0 or n_b == 0:
        raise InjectionError("both groups must be present to flip labels")
    group = "A" if Fraction(pos_a, n_a) >= Fraction(pos_b, n_b) else "B"
    other = _other(group)
    k = flip_count_to_equalize(*counts[group], *counts[other])
    positives = np.flatnonzero(train.group_mask(group) & (train.y == 1))
    rows = make_rng(derive_seed(seed, "flip")).choice(positives, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    return _flip(train, rows, 0, group)


def apply_scenario(
    train: TabularDataset, test: TabularDataset, scenario: BiasScenario
) -> tuple[TabularDataset, TabularDataset, InjectionManifest]:
    """Instantiate one biased (train, test) pair for ``scenario``.

    Sub-streams for the train groups, test groups, features and flips are
    derived from ``scenario.seed`` so each step is independently reproducible.
    """
    k = scenario.kind
    seed = scenario.seed
    s_train = derive_seed(seed, "groups", "train")
    s_test = derive_seed(seed, "groups", "test")

    def independent(ds, s, s_a=scenario.s_a):
        return assign_groups_independent(ds, s_a, s)

    def conditioned(ds, s):
        return assign_groups_prevalence(ds, scenario.s_a, scenario.c, s)

    added = ["z"]
    flip_log = None
    if k is Kind.BASELINE:
        tr, te = independent(train, s_train, 0.5), independent(test, s_test, 0.5)
    elif k is Kind.H1:
        tr, te = independent(train, s_train), independent(test, s_test)
    elif k is Kind.H2_1:
        tr, te = conditioned(train, s_train), conditioned(test, s_test)
    elif k is Kind.H2_2_TRAIN_ONLY:
        tr, te = conditioned(train, s_train), independent(test, s_test)
    elif k is Kind.H2_2_TEST_ONLY:
        tr, te = independent(train, s_train), conditioned(test, s_test)
    elif k is Kind.H3:
        tr, te = independent(train, s_train), independent(test, s_test)
        tr = add_separability_features(tr, scenario.scheme, derive_seed(seed, "features", "train"))
        te = add_separability_features(te, scenario.scheme, derive_seed(seed, "features", "test"))
        added += ["x1", "x2"]
    elif k is Kind.H4_1:
        tr, te = independent(train, s_train), independent(test, s_test)
        tr, flip_log = flip_negatives_to_positives(tr, "A", scenario.c, derive_seed(seed, "flips"))
    elif k is Kind.H4_2:
        tr, te = conditioned(train, s_train), conditioned(test, s_test)
        tr, flip_log = flip_positives_to_negatives_equalize(tr, derive_seed(seed, "flips"))
    else:  # pragma: no cover
        raise InjectionError(f"unknown scenario kind {k}")

    manifest = InjectionManifest(
        scenario=scenario,
        seed=seed,
        train=PartitionStats.of(tr, len(flip_log) if flip_log else 0),
        test=PartitionStats.of(te),
        columns_added=added,
        flip_log=flip_log,
    )
    return tr, te, manifest


# --- manifest serialization ------------------------------------------------

_STAT_KEYS = ("n_rows", "n_a", "n_b", "pos_a", "pos_b", "flips")
_DERIVED_KEYS = ("group_fraction_a", "group_fraction_b", "prevalence", "prevalence_a", "prevalence_b", "prevalence_ratio")


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_manifest(m: InjectionManifest) -> str:
    s = m.scenario
    lines = [
        "# biasforge injection manifest v1",
        "[scenario]",
        f"name = {s.name}",
        f"kind = {s.kind.value}",
        f"s_a = {s.s_a!r}",
        f"c = {s.c!r}",
        f"seed = {m.seed}",
        f"columns_added = {','.join(m.columns_added)}",
    ]
    if s.scheme is not None:
        lines.append("")
        lines.append("[scheme]")
        lines.append("cell | mean_x1 | mean_x2 | cov_11 | cov_12 | cov_22")
        for y in (0, 1):
            for g in GROUPS:
                mu = s.scheme.means[(y, g)]
                cov = s.scheme.covs[(y, g)]
                lines.append(f"{y}{g} | {float(mu[0])!r} | {float(mu[1])!r} | {float(cov[0][0])!r} | {float(cov[0][1])!r} | {float(cov[1][1])!r}")
    for part in ("train", "test"):
        st: PartitionStats = getattr(m, part)
        lines.append("")
        lines.append(f"[{part}]")
        for key in _STAT_KEYS + _DERIVED_KEYS:
            lines.append(f"{key} = {_fmt(getattr(st, key))}")
    if m.flip_log is not None:
        fl = m.flip_log
        lines.append("")
        lines.append("[flips]")
        lines.append(f"group = {fl.group}")
        lines.append(f"count = {len(fl)}")
        for g in GROUPS:
            lines.append(f"achieved_prevalence_{g} = {fl.achieved_prevalence[g]!r}")
        lines.append("row | old | new")
        for r, o, n in zip(fl.rows, fl.old, fl.new):
            lines.append(f"{r} | {o} | {n}")
    return "\n".join(lines) + "\n"


def write_manifest(m: InjectionManifest, directory: str | Path) -> Path:
    path = Path(directory) / f"{m.scenario.name}_{m.seed}.manifest"
    path.write_text(dumps_manifest(m), encoding="utf-8")
    return path


def _parse_value(text: str):
    if text == "undefined":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def loads_manifest(text: str) -> dict:
    """Parse manifest text into ``{section: {key: value}}``; table rows go under ``"rows"``."""
    out: dict = {}
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = out.setdefault(line[1:-1], {})
            continue
        if section is None:
            raise DataError(f"manifest line outside a section: {line!r}")
        if " = " in line:
            key, value = line.split(" = ", 1)
            section[key] = _parse_value(value)
        elif "|" in line:
            cells = [c.strip() for c in line.split("|")]
            if "header" not in section:
                section["header"] = cells
            else:
                section.setdefault("rows", []).append([_parse_value(c) for c in cells])
    return out


def verify_manifest(manifest: dict, train: TabularDataset, test: TabularDataset) -> list[str]:
    """Recompute partition statistics and list every key whose stored value differs."""
    problems = []
    for part, ds in (("train", train), ("test", test)):
        stored = manifest[part]
        fresh = PartitionStats.of(ds, stored.get("flips", 0))
        for key in _STAT_KEYS + _DERIVED_KEYS:
            if stored.get(key) != getattr(fresh, key):
                problems.append(f"{part}.{key}: stored {stored.get(key)!r} != recomputed {getattr(fresh, key)!r}")
    return problems
