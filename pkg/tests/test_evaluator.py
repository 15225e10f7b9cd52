import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import achieved_fpr, count_confusion, fpr_ratio_from_eq1, random_scores, threshold_sweep

from biasforge.evaluator import (
    EvaluationError,
    GroupConfusion,
    Run,
    aggregate_error_bars,
    confusion,
    decompose_fpr_ratio,
    evaluate,
    fairness_ratios,
    global_rates,
    group_confusion,
    in_eighty_band,
    select_top_per_seed,
    summarize,
    threshold_at_global_fpr,
)

LOG2_08 = math.log2(0.8)


def eight_rows():
    """A: TP1 FP1 TN2 FN0; B: TP0 FP2 TN1 FN1, threshold 0.5."""
    scores = [0.9, 0.8, 0.1, 0.2, 0.7, 0.6, 0.3, 0.4]
    labels = [1, 0, 0, 0, 0, 0, 0, 1]
    z = [1, 1, 1, 1, 0, 0, 0, 0]
    return np.array(scores), np.array(labels), np.array(z)


def test_threshold_four_negatives():
    assert threshold_at_global_fpr([0.1, 0.2, 0.3, 0.4], [0, 0, 0, 0], 0.5) == 0.2


def test_threshold_hundred_negatives_hits_target():
    s = np.random.default_rng(0).random(100)
    t = threshold_at_global_fpr(s, np.zeros(100, int), 0.05)
    assert achieved_fpr(s, np.zeros(100), t) == 0.05


def test_threshold_cannot_split_ties():
    t = threshold_at_global_fpr([0.3] * 10, [0] * 10, 0.5)
    assert global_rates([0.3] * 10, [0] * 10, t)[1] == 0.0


def test_threshold_errors():
    with pytest.raises(EvaluationError):
        threshold_at_global_fpr([0.1, 0.2], [1, 1], 0.05)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(EvaluationError):
            threshold_at_global_fpr([0.1, 0.2], [0, 1], bad)


def test_threshold_matches_sweep_on_random_vectors():
    rng = np.random.default_rng(42)
    for i in range(1000):
        n = int(rng.integers(2, 60))
        scores, labels = random_scores(rng, n, ties=bool(i % 2))
        target = float(rng.choice([0.05, 0.1, 0.2, 0.5]))
        t = threshold_at_global_fpr(scores, labels, target)
        assert t == threshold_sweep(scores, labels, target)
        fpr = achieved_fpr(scores, labels, t)
        assert fpr <= target
        neg = scores[labels == 0]
        max_tie = max(np.unique(neg, return_counts=True)[1])
        assert target - fpr < (1 + max_tie) / neg.size


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_raising_target_never_lowers_tpr(seed):
    rng = np.random.default_rng(seed)
    scores, labels = random_scores(rng, 80, ties=bool(seed % 2))
    tprs = [global_rates(scores, labels, threshold_at_global_fpr(scores, labels, f))[0] for f in (0.05, 0.1, 0.2, 0.5)]
    assert tprs == sorted(tprs)


def test_eight_row_case():
    s, y, z = eight_rows()
    a, b = group_confusion(s, y, z, 0.5)
    assert (a.tp, a.fp, a.tn, a.fn) == (1, 1, 2, 0)
    assert (b.tp, b.fp, b.tn, b.fn) == (0, 2, 1, 1)
    assert a.fpr == pytest.approx(1 / 3) and b.fpr == pytest.approx(2 / 3)
    assert a.fnr == 0 and b.fnr == 1


def test_eight_row_decomposition_product():
    # the hand case has TP_B = 0 (PPV_B = 0, recall_B = 0), so the factorisation is undefined there
    s, y, z = eight_rows()
    a, b = group_confusion(s, y, z, 0.5)
    with pytest.raises(EvaluationError, match="group B"):
        decompose_fpr_ratio(a, b)
    # same FPRs with one extra true positive in B so every factor is defined
    b2 = GroupConfusion("B", 1, 2, 1, 1)
    d = decompose_fpr_ratio(a, b2)
    assert d.fpr_ratio == pytest.approx(0.5)
    assert d.product == pytest.approx(0.5, rel=1e-12)
    assert d.residual < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_confusion_matches_counting_oracle_and_partitions(seed):
    rng = np.random.default_rng(seed)
    scores, labels = random_scores(rng, 50, ties=True)
    z = rng.integers(0, 2, 50)
    z[0], z[1] = 0, 1
    t = float(rng.choice(scores))
    whole = confusion(scores, labels, t)
    assert (whole.tp, whole.fp, whole.tn, whole.fn) == count_confusion(scores, labels, t)
    a, b = group_confusion(scores, labels, z, t)
    total = a + b
    assert (total.tp, total.fp, total.tn, total.fn) == (whole.tp, whole.fp, whole.tn, whole.fn)


def test_identical_groups_identical_confusions():
    s = np.array([0.1, 0.5, 0.9, 0.3, 0.15])
    y = np.array([0, 1, 1, 0, 1])
    a, b = group_confusion(np.tile(s, 2), np.tile(y, 2), np.repeat([1, 0], 5), 0.2)
    assert (a.tp, a.fp, a.tn, a.fn) == (b.tp, b.fp, b.tn, b.fn)
    r = fairness_ratios(a, b)
    assert r.log2_fpr_ratio == 0 and r.log2_fnr_ratio == 0 and r.log2_ppv_ratio == 0
    assert r.eighty_rule_fpr and r.eighty_rule_fnr and r.eighty_rule_ppv


def test_group_confusion_errors():
    with pytest.raises(EvaluationError):
        group_confusion([0.1, 0.2], [0, 1], [1, 1], 0.5)
    with pytest.raises(EvaluationError):
        group_confusion([0.1, 0.2], [0, 1], [1], 0.5)
    a, _ = group_confusion([0.9, 0.2], [1, 0], [1, 0], 0.5)
    assert a.fpr is None


def test_ratio_double_fpr():
    a = GroupConfusion("A", 10, 10, 90, 10)
    b = GroupConfusion("B", 10, 5, 95, 10)
    r = fairness_ratios(a, b)
    assert r.log2_fpr_ratio == pytest.approx(1.0)
    assert r.eighty_rule_fpr is False


def test_ratio_boundary_inclusive():
    a = GroupConfusion("A", 10, 50, 950, 10)
    b = GroupConfusion("B", 10, 50, 750, 10)
    assert a.fpr == 0.05 and b.fpr == 0.0625
    r = fairness_ratios(a, b)
    assert r.log2_fpr_ratio == pytest.approx(-0.32193, abs=1e-5)
    assert r.eighty_rule_fpr is True


def test_eighty_band_edges():
    assert in_eighty_band(LOG2_08) and in_eighty_band(-LOG2_08)
    assert not in_eighty_band(LOG2_08 - 1e-6)
    assert not in_eighty_band(-LOG2_08 + 1e-6)
    assert in_eighty_band(None) is None


def test_zero_rates_are_undefined_not_infinite():
    a = GroupConfusion("A", 10, 0, 100, 0)
    b = GroupConfusion("B", 10, 5, 95, 10)
    r = fairness_ratios(a, b)
    assert r.log2_fpr_ratio is None and r.eighty_rule_fpr is None
    assert r.log2_fnr_ratio is None
    assert any("group A" in n for n in r.notes)
    assert r.log2_ppv_ratio is not None


def test_decomposition_prevalence_only():
    # p_A = 0.02, p_B = 0.01, PPV and FNR equal (0.5 each)
    a = GroupConfusion("A", 100, 100, 9700, 100)
    b = GroupConfusion("B", 50, 50, 9850, 50)
    d = decompose_fpr_ratio(a, b)
    expected = (0.02 / 0.98) / (0.01 / 0.99)
    assert expected == pytest.approx(2.0204, abs=1e-4)
    assert d.fpr_ratio == pytest.approx(expected, rel=1e-12)
    assert math.log2(d.fpr_ratio) == pytest.approx(1.0147, abs=1e-4)
    assert d.imprecision_odds == pytest.approx(1.0) and d.recall == pytest.approx(1.0)
    assert fpr_ratio_from_eq1(0.02, 0.01, 0.5, 0.5, 0.5, 0.5) == pytest.approx(expected)


def test_decomposition_identical_groups():
    c = GroupConfusion("A", 5, 7, 80, 3)
    d = decompose_fpr_ratio(c, c)
    assert (d.prevalence_odds, d.imprecision_odds, d.recall, d.fpr_ratio) == (1.0, 1.0, 1.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=8, max_size=8))
def test_decomposition_identity_and_symmetry(counts):
    a = GroupConfusion("A", *counts[:4])
    b = GroupConfusion("B", *counts[4:])
    d = decompose_fpr_ratio(a, b)
    assert d.residual <= 1e-9
    assert d.fpr_ratio == pytest.approx(fpr_ratio_from_eq1(a.prevalence, b.prevalence, a.ppv, b.ppv, a.fnr, b.fnr), rel=1e-9)
    fwd, back = fairness_ratios(a, b), fairness_ratios(b, a)
    for name in ("log2_fpr_ratio", "log2_fnr_ratio", "log2_ppv_ratio"):
        assert getattr(fwd, name) == -getattr(back, name)


def test_evaluate_swap_groups_negates_ratios():
    rng = np.random.default_rng(3)
    scores = rng.random(2000)
    y = (scores + rng.normal(0, 0.3, 2000) > 0.8).astype(int)
    z = rng.integers(0, 2, 2000)
    fwd, back = evaluate(scores, y, z), evaluate(scores, y, 1 - z)
    assert fwd.threshold == back.threshold
    assert fwd.log2_fpr_ratio == -back.log2_fpr_ratio
    assert fwd.log2_fnr_ratio == -back.log2_fnr_ratio
    assert fwd.log2_ppv_ratio == -back.log2_ppv_ratio
    assert fwd.decomposition.residual <= 1e-9
    assert fwd.global_fpr <= 0.05


def run(seed, spec, tpr, ratio, target=0.05):
    return Run(seed, spec, target, tpr, ratio, None, None)


def test_select_top_examples():
    assert select_top_per_seed([run(0, "a", 0.6, 0.0), run(0, "b", 0.5, 0.0)])[0].spec_id == "a"
    assert select_top_per_seed([run(0, "a", 0.5, 0.1), run(0, "b", 0.5, -0.4)])[0].spec_id == "a"
    assert select_top_per_seed([run(0, "b", 0.5, 0.1), run(0, "a", 0.5, -0.1)])[0].spec_id == "a"
    assert select_top_per_seed([run(0, "a", 0.5, None), run(0, "b", 0.5, 2.0)])[0].spec_id == "b"
    only = run(3, "x", 0.1, None)
    assert select_top_per_seed([only]) == [only]


def test_select_top_one_per_seed_and_order_independent():
    rng = np.random.default_rng(0)
    runs = [run(int(s), f"s{j}", float(rng.integers(0, 4)) / 4, float(rng.normal())) for s in range(5) for j in range(6)]
    top = select_top_per_seed(runs)
    assert [r.seed for r in top] == list(range(5))
    shuffled = [runs[i] for i in rng.permutation(len(runs))]
    assert [r.spec_id for r in select_top_per_seed(shuffled)] == [r.spec_id for r in top]


def test_aggregate_examples():
    agg = aggregate_error_bars([run(2, "a", 0.5, 0.3), run(0, "a", 0.7, -0.1), run(1, "a", 0.6, 0.0)])
    s = agg.ratios["log2_fpr_ratio"]
    assert (s.median, s.min, s.max) == (0.0, -0.1, 0.3)
    assert (agg.tpr.median, agg.tpr.min, agg.tpr.max) == (0.6, 0.5, 0.7)
    assert [r.seed for r in agg.top_runs] == [0, 1, 2]
    one = aggregate_error_bars([run(0, "a", 0.4, 0.2)]).ratios["log2_fpr_ratio"]
    assert one.median == one.min == one.max == 0.2


def test_aggregate_undefined_handling():
    agg = aggregate_error_bars([run(0, "a", 0.4, None), run(1, "a", 0.4, 0.5)])
    assert agg.ratios["log2_fpr_ratio"].n_undefined == 1
    assert agg.ratios["log2_fpr_ratio"].median == 0.5
    assert aggregate_error_bars([run(0, "a", 0.4, None)]).undefined
    with pytest.raises(EvaluationError):
        aggregate_error_bars([])
    assert summarize([]).undefined
