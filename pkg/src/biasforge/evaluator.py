"""Fixed-FPR thresholding, group confusion matrices and log2 fairness ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

DEFAULT_TARGET_FPR = 0.05
EIGHTY_LOW = math.log2(0.8)
EIGHTY_HIGH = math.log2(1.25)
# Slack on the band edges so a ratio of exactly 0.8 or 1.25 computed from counts stays inside.
_BAND_TOL = 1e-12
RATIO_NAMES = ("log2_fpr_ratio", "log2_fnr_ratio", "log2_ppv_ratio")


class EvaluationError(ValueError):
    pass


def threshold_at_global_fpr(scores, labels, target_fpr: float = DEFAULT_TARGET_FPR) -> float:
    """Smallest threshold t with FPR(t) <= target, where a row is flagged iff score > t.

    Candidates are the distinct negative scores; tied scores are never split,
    so the achieved FPR may fall short of the target.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not 0.0 < target_fpr < 1.0:
        raise EvaluationError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    neg = np.sort(scores[labels == 0])
    n_neg = neg.size
    if n_neg == 0:
        raise EvaluationError("no negative labels: FPR undefined")
    cand = np.unique(neg)
    above = n_neg - np.searchsorted(neg, cand, side="right")
    feasible = above / n_neg <= target_fpr
    # above is non-increasing in the candidate, so the feasible set is a suffix
    return float(cand[np.argmax(feasible)])


def global_rates(scores, labels, threshold: float) -> tuple[float, float]:
    """(TPR, FPR) of the rule score > threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    flagged = scores > threshold
    pos = labels == 1
    tpr = float(flagged[pos].mean()) if pos.any() else math.nan
    fpr = float(flagged[~pos].mean()) if (~pos).any() else math.nan
    return tpr, fpr


def _div(a: int, b: int) -> float | None:
    return a / b if b else None


@dataclass(frozen=True)
class GroupConfusion:
    group: str
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def prevalence(self) -> float | None:
        return _div(self.tp + self.fn, self.n)

    @property
    def fpr(self) -> float | None:
        return _div(self.fp, self.fp + self.tn)

    @property
    def fnr(self) -> float | None:
        return _div(self.fn, self.fn + self.tp)

    @property
    def tpr(self) -> float | None:
        return _div(self.tp, self.fn + self.tp)

    @property
    def ppv(self) -> float | None:
        return _div(self.tp, self.tp + self.fp)

    def __add__(self, other: "GroupConfusion") -> "GroupConfusion":
        return GroupConfusion("all", self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def confusion(scores, labels, threshold: float, group: str = "all") -> GroupConfusion:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    flagged = scores > threshold
    pos = labels == 1
    tp = int(np.count_nonzero(flagged & pos))
    fp = int(np.count_nonzero(flagged & ~pos))
    fn = int(np.count_nonzero(~flagged & pos))
    tn = int(np.count_nonzero(~flagged & ~pos))
    return GroupConfusion(group, tp, fp, tn, fn)


def group_confusion(scores, labels, z, threshold: float) -> tuple[GroupConfusion, GroupConfusion]:
    """Confusion matrices for group A (z == 1) and group B (z == 0).

    Rates that are undefined for a group (for example FPR with no negatives)
    come back as None from the corresponding property.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    z = np.asarray(z)
    if not (scores.shape == labels.shape == z.shape):
        raise EvaluationError("scores, labels and groups must be aligned")
    is_a = z == 1
    if not is_a.any() or is_a.all():
        raise EvaluationError("both groups must be non-empty")
    return (
        confusion(scores[is_a], labels[is_a], threshold, "A"),
        confusion(scores[~is_a], labels[~is_a], threshold, "B"),
    )


def _log2_ratio(a: float | None, b: float | None) -> float | None:
    if not a or not b:
        return None
    # difference of logs, so swapping the groups negates the ratio exactly
    return math.log2(a) - math.log2(b)


def in_eighty_band(log2_ratio: float | None) -> bool | None:
    if log2_ratio is None:
        return None
    return EIGHTY_LOW - _BAND_TOL <= log2_ratio <= EIGHTY_HIGH + _BAND_TOL


@dataclass
class RatioReport:
    log2_fpr_ratio: float | None
    log2_fnr_ratio: float | None
    log2_ppv_ratio: float | None
    eighty_rule_fpr: bool | None
    eighty_rule_fnr: bool | None
    eighty_rule_ppv: bool | None
    notes: list[str] = field(default_factory=list)


def fairness_ratios(conf_a: GroupConfusion, conf_b: GroupConfusion) -> RatioReport:
    """log2(A/B) of FPR, FNR and PPV; zero or undefined rates give None plus a note, never +/-inf."""
    notes = []
    ratios = {}
    for metric in ("fpr", "fnr", "ppv"):
        a, b = getattr(conf_a, metric), getattr(conf_b, metric)
        r = _log2_ratio(a, b)
        if r is None:
            bad = [g.group for g, v in ((conf_a, a), (conf_b, b)) if not v]
            notes.append(f"{metric} ratio undefined: {metric.upper()} zero or undefined for group {'/'.join(bad)}")
        ratios[metric] = r
    return RatioReport(
        ratios["fpr"], ratios["fnr"], ratios["ppv"],
        in_eighty_band(ratios["fpr"]), in_eighty_band(ratios["fnr"]), in_eighty_band(ratios["ppv"]),
        notes,
    )


@dataclass(frozen=True)
class Decomposition:
    prevalence_odds: float
    imprecision_odds: float
    recall: float
    fpr_ratio: float

    @property
    def product(self) -> float:
        return self.prevalence_odds * self.imprecision_odds * self.recall

    @property
    def residual(self) -> float:
        return abs(self.product - self.fpr_ratio) / self.fpr_ratio


def decompose_fpr_ratio(conf_a: GroupConfusion, conf_b: GroupConfusion) -> Decomposition:
    """Factor FPR_A/FPR_B into prevalence-odds, imprecision-odds and recall ratios (A over B).

    FPR = p/(1-p) * (1-PPV)/PPV * (1-FNR) holds exactly on counts whenever
    every factor is defined and non-zero.
    """
    for c in (conf_a, conf_b):
        checks = {
            "prevalence": c.prevalence,
            "1 - prevalence": None if c.prevalence is None else 1 - c.prevalence,
            "PPV": c.ppv,
            "1 - PPV": None if c.ppv is None else 1 - c.ppv,
            "1 - FNR": c.tpr,
            "FPR": c.fpr,
        }
        for name, v in checks.items():
            if not v:
                raise EvaluationError(f"group {c.group}: {name} is zero or undefined")

    def odds(v):
        return v / (1 - v)

    prev = odds(conf_a.prevalence) / odds(conf_b.prevalence)
    imprecision = ((1 - conf_a.ppv) / conf_a.ppv) / ((1 - conf_b.ppv) / conf_b.ppv)
    recall = conf_a.tpr / conf_b.tpr
    return Decomposition(prev, imprecision, recall, conf_a.fpr / conf_b.fpr)


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with midranks for ties; None when a class is missing."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class FairnessReport:
    target_fpr: float
    threshold: float
    global_tpr: float
    global_fpr: float
    conf_a: GroupConfusion
    conf_b: GroupConfusion
    ratios: RatioReport
    decomposition: Decomposition | None
    auc: float | None = None
    auc_a: float | None = None
    auc_b: float | None = None

    @property
    def log2_fpr_ratio(self) -> float | None:
        return self.ratios.log2_fpr_ratio

    @property
    def log2_fnr_ratio(self) -> float | None:
        return self.ratios.log2_fnr_ratio

    @property
    def log2_ppv_ratio(self) -> float | None:
        return self.ratios.log2_ppv_ratio


def evaluate(scores, labels, z, target_fpr: float = DEFAULT_TARGET_FPR) -> FairnessReport:
    """Threshold at the global FPR ceiling and compute every group metric at that operating point."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    z = np.asarray(z)
    t = threshold_at_global_fpr(scores, labels, target_fpr)
    tpr, fpr = global_rates(scores, labels, t)
    conf_a, conf_b = group_confusion(scores, labels, z, t)
    try:
        decomp = decompose_fpr_ratio(conf_a, conf_b)
    except EvaluationError:
        decomp = None
    is_a = z == 1
    return FairnessReport(
        target_fpr, t, tpr, fpr, conf_a, conf_b, fairness_ratios(conf_a, conf_b), decomp,
        roc_auc(scores, labels), roc_auc(scores[is_a], labels[is_a]), roc_auc(scores[~is_a], labels[~is_a]),
    )


# --- selection and aggregation ----------------------------------------------

@dataclass
class Run:
    """One evaluated (seed, model spec) pair at a target FPR."""

    seed: int
    spec_id: str
    target_fpr: float
    global_tpr: float
    log2_fpr_ratio: float | None
    log2_fnr_ratio: float | None
    log2_ppv_ratio: float | None
    payload: object = None

    @classmethod
    def from_report(cls, seed: int, spec_id: str, report: FairnessReport) -> "Run":
        return cls(seed, spec_id, report.target_fpr, report.global_tpr, report.log2_fpr_ratio,
                   report.log2_fnr_ratio, report.log2_ppv_ratio, report)


def select_top_per_seed(runs: list[Run]) -> list[Run]:
    """Best run per seed by global TPR; ties go to smaller |log2 FPR ratio| (undefined last), then spec id."""
    best: dict[int, Run] = {}

    def key(r: Run):
        ratio = r.log2_fpr_ratio
        return (-r.global_tpr, math.inf if ratio is None else abs(ratio), r.spec_id)

    for run in runs:
        cur = best.get(run.seed)
        if cur is None or key(run) < key(cur):
            best[run.seed] = run
    return [best[s] for s in sorted(best)]


@dataclass
class Summary:
    median: float | None
    min: float | None
    max: float | None
    n_defined: int
    n_undefined: int

    @property
    def undefined(self) -> bool:
        return self.n_defined == 0


def summarize(values: list[float | None]) -> Summary:
    defined = [v for v in values if v is not None]
    if not defined:
        return Summary(None, None, None, 0, len(values))
    return Summary(float(np.median(defined)), float(min(defined)), float(max(defined)), len(defined), len(values) - len(defined))


@dataclass
class AggregateResult:
    scenario: str
    algorithm: str
    awareness: bool
    target_fpr: float
    top_runs: list[Run]
    tpr: Summary
    ratios: dict[str, Summary]

    @property
    def undefined(self) -> bool:
        return all(s.undefined for s in self.ratios.values())


def aggregate_error_bars(top_runs: list[Run], scenario: str = "", algorithm: str = "", awareness: bool = False) -> AggregateResult:
    """Median, min and max across seeds of global TPR and each defined log2 ratio."""
    if not top_runs:
        raise EvaluationError("aggregation needs at least one seed")
    runs = sorted(top_runs, key=lambda r: r.seed)
    ratios = {name: summarize([getattr(r, name) for r in runs]) for name in RATIO_NAMES}
    return AggregateResult(
        scenario, algorithm, awareness, runs[0].target_fpr, runs,
        summarize([r.global_tpr for r in runs]), ratios,
    )
