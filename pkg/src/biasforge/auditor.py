"""Statistical detectors for the data-bias conditions.

Each detector gates on a p-value at level ``alpha`` and reports an effect size
alongside it. Label noise has no detector: it cannot be seen in a single
observed dataset and is checked only against a :class:`~biasforge.injector.FlipLog`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import DataError, TabularDataset

DEFAULT_ALPHA = 0.01
MIN_CELL_ROWS = 10


class Condition(str, enum.Enum):
    GROUP_SIZE_DISPARITY = "GROUP_SIZE_DISPARITY"
    PREVALENCE_DISPARITY = "PREVALENCE_DISPARITY"
    CLASS_CONDITIONAL_DISPARITY = "CLASS_CONDITIONAL_DISPARITY"
    PROTECTED_ATTRIBUTE_BIAS = "PROTECTED_ATTRIBUTE_BIAS"


@dataclass
class AuditResult:
    condition: Condition
    statistic: float
    p_value: float
    alpha: float
    detected: bool
    detail: list[dict] = field(default_factory=list)
    effect: float | None = None
    degenerate: bool = False

    def ranked(self) -> list[dict]:
        """Detail rows ordered by decreasing test statistic (skipped cells last)."""
        return sorted(self.detail, key=lambda r: (r.get("skipped", False), -(r.get("statistic") or 0.0)))


def _require_groups(ds: TabularDataset) -> tuple[np.ndarray, np.ndarray]:
    if ds.protected is None:
        raise DataError("audit needs a protected column")
    is_a = ds.z == 1
    return is_a, ~is_a


def audit_group_size(ds: TabularDataset, alpha: float = DEFAULT_ALPHA) -> AuditResult:
    """Two-sided test of P[Z=A] = 1/2: exact binomial up to 1000 rows, normal approximation above."""
    is_a, _ = _require_groups(ds)
    n = ds.n_rows
    n_a = int(is_a.sum())
    cond = Condition.GROUP_SIZE_DISPARITY
    if n_a == 0 or n_a == n:
        return AuditResult(cond, math.inf, 0.0, alpha, True, effect=n_a / n if n else None, degenerate=True)
    z = (n_a - n / 2) / math.sqrt(n / 4)
    if n > 1000:
        p = float(2 * stats.norm.sf(abs(z)))
    else:
        p = float(stats.binomtest(n_a, n, 0.5).pvalue)
    p = min(1.0, p)
    return AuditResult(cond, float(z), p, alpha, p < alpha, effect=n_a / n)


def two_proportion_z(x1: int, n1: int, x2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z statistic and two-sided p-value."""
    pooled = (x1 + x2) / (n1 + n2)
    var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    if var == 0:
        return 0.0, 1.0
    z = (x1 / n1 - x2 / n2) / math.sqrt(var)
    return z, float(min(1.0, 2 * stats.norm.sf(abs(z))))


def audit_prevalence(ds: TabularDataset, alpha: float = DEFAULT_ALPHA) -> AuditResult:
    """Pooled two-proportion z-test of P[Y=1|A] = P[Y=1|B]; effect is the A/B prevalence ratio."""
    is_a, is_b = _require_groups(ds)
    n_a, n_b = int(is_a.sum()), int(is_b.sum())
    if n_a == 0 or n_b == 0:
        raise DataError(f"prevalence audit needs both groups (n_A={n_a}, n_B={n_b})")
    y = ds.y.astype(np.int64)
    x_a, x_b = int(y[is_a].sum()), int(y[is_b].sum())
    z, p = two_proportion_z(x_a, n_a, x_b, n_b)
    ratio = (x_a / n_a) / (x_b / n_b) if x_b else None
    detail = [{"group": "A", "rows": n_a, "positives": x_a}, {"group": "B", "rows": n_b, "positives": x_b}]
    return AuditResult(Condition.PREVALENCE_DISPARITY, z, p, alpha, p < alpha, detail, effect=ratio)


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample KS statistic: sup over x of |F_a(x) - F_b(x)|."""
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _chi_square(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    values = np.union1d(a, b)
    table = np.array([[np.sum(a == v) for v in values], [np.sum(b == v) for v in values]])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 0.0, 1.0
    res = stats.chi2_contingency(table, correction=False)
    return float(res.statistic), float(res.pvalue)


def audit_class_conditional(ds: TabularDataset, alpha: float = DEFAULT_ALPHA) -> AuditResult:
    """Per-feature, per-class comparison of the A and B distributions.

    Real features use the two-sample KS test, binary and categorical ones a
    chi-square test on the group-by-value table. P-values are Bonferroni
    corrected by ``2 * n_features``. Cells with fewer than 10 rows in either
    group are skipped and flagged.
    """
    is_a, is_b = _require_groups(ds)
    features = sorted(ds.feature_names())
    if not features:
        raise DataError("class-conditional audit needs at least one non-protected feature")
    m = 2 * len(features)
    y = ds.y
    detail = []
    for name in features:
        values = ds[name]
        kind = ds.kinds[name]
        for label in (0, 1):
            in_class = y == label
            a, b = values[in_class & is_a], values[in_class & is_b]
            row = {"feature": name, "class": label, "n_a": int(a.size), "n_b": int(b.size)}
            if a.size < MIN_CELL_ROWS or b.size < MIN_CELL_ROWS:
                row.update(test=None, statistic=None, p_value=None, p_corrected=None, skipped=True)
            elif kind == "real":
                res = stats.ks_2samp(a, b)
                p = float(res.pvalue)
                row.update(test="ks", statistic=float(res.statistic), p_value=p, p_corrected=min(1.0, p * m), skipped=False)
            else:
                stat, p = _chi_square(a, b)
                row.update(test="chi2", statistic=stat, p_value=p, p_corrected=min(1.0, p * m), skipped=False)
            detail.append(row)
    tested = [r for r in detail if not r["skipped"]]
    if tested:
        best = min(tested, key=lambda r: r["p_corrected"])
        p_min = best["p_corrected"]
        stat = max(r["statistic"] for r in tested if r["test"] == "ks") if any(r["test"] == "ks" for r in tested) else best["statistic"]
    else:
        p_min, stat = 1.0, 0.0
    return AuditResult(Condition.CLASS_CONDITIONAL_DISPARITY, stat, p_min, alpha, p_min < alpha, detail)


def audit_dataset(ds: TabularDataset, alpha: float = DEFAULT_ALPHA) -> list[AuditResult]:
    """Run the three single-condition detectors and append the protected-attribute composite.

    Group size disparity alone does not make Z statistically related to X or
    Y, so the composite is the disjunction of the prevalence and
    class-conditional detections only.
    """
    size = audit_group_size(ds, alpha)
    prev = audit_prevalence(ds, alpha)
    cc = audit_class_conditional(ds, alpha)
    members = [prev, cc]
    composite = AuditResult(
        Condition.PROTECTED_ATTRIBUTE_BIAS,
        statistic=float(sum(r.detected for r in members)),
        p_value=min(r.p_value for r in members),
        alpha=alpha,
        detected=any(r.detected for r in members),
        detail=[{"member": r.condition.value, "detected": r.detected, "p_value": r.p_value} for r in members],
    )
    return [size, prev, cc, composite]


@dataclass
class ProfileComparison:
    differs: dict[Condition, bool]
    train_detected: dict[Condition, bool]
    test_detected: dict[Condition, bool]

    @property
    def any_differs(self) -> bool:
        return any(self.differs.values())


def compare_profiles(train_audit: list[AuditResult], test_audit: list[AuditResult]) -> ProfileComparison:
    train = {r.condition: r for r in train_audit}
    test = {r.condition: r for r in test_audit}
    if set(train) != set(test):
        raise ValueError("audits cover different condition sets")
    if {r.alpha for r in train_audit} != {r.alpha for r in test_audit}:
        raise ValueError("audits used different alpha levels")
    order = [c for c in Condition if c in train]
    return ProfileComparison(
        {c: train[c].detected != test[c].detected for c in order},
        {c: train[c].detected for c in order},
        {c: test[c].detected for c in order},
    )


def format_audit(results: list[AuditResult], title: str = "") -> str:
    lines = [f"# audit {title}".rstrip()]
    for r in results:
        eff = "undefined" if r.effect is None else f"{r.effect:.6g}"
        lines.append(
            f"{r.condition.value}: detected={str(r.detected).lower()} statistic={r.statistic:.6g} "
            f"p_value={r.p_value:.6g} alpha={r.alpha:g} effect={eff}" + (" degenerate=true" if r.degenerate else "")
        )
        if r.condition is Condition.CLASS_CONDITIONAL_DISPARITY:
            for row in r.detail:
                if row["skipped"]:
                    lines.append(f"  {row['feature']} | y={row['class']} | skipped (n_A={row['n_a']}, n_B={row['n_b']})")
                else:
                    lines.append(
                        f"  {row['feature']} | y={row['class']} | {row['test']} stat={row['statistic']:.6g} "
                        f"p={row['p_value']:.6g} p_bonf={row['p_corrected']:.6g}"
                    )
    return "\n".join(lines) + "\n"


def format_comparison(cmp: ProfileComparison) -> str:
    lines = ["# train/test profile comparison"]
    for c, d in cmp.differs.items():
        lines.append(
            f"{c.value}: train={str(cmp.train_detected[c]).lower()} "
            f"test={str(cmp.test_detected[c]).lower()} differs={str(d).lower()}"
        )
    lines.append(f"any_differs={str(cmp.any_differs).lower()}")
    return "\n".join(lines) + "\n"
