from fractions import Fraction

import numpy as np
import pytest
from conftest import make_dataset
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import bayes_assignment, brute_flip_to_equalize, brute_flip_to_ratio, gaussian_auc

from biasforge.auditor import audit_dataset
from biasforge.data import group_counts, group_fraction, prevalence, temporal_split
from biasforge.evaluator import roc_auc
from biasforge.injector import (
    BiasScenario,
    InjectionError,
    Kind,
    PartitionStats,
    SeparabilityScheme,
    add_separability_features,
    apply_scenario,
    assign_groups_independent,
    assign_groups_prevalence,
    dumps_manifest,
    flip_count_to_equalize,
    flip_count_to_ratio,
    flip_negatives_to_positives,
    flip_positives_to_negatives_equalize,
    loads_manifest,
    prevalence_assignment_probs,
    verify_manifest,
    write_manifest,
)
from biasforge.learners import Algorithm, ModelSpec, fit, predict


@pytest.fixture(scope="module")
def split60k(base60k):
    return temporal_split(base60k, 0.75)


def with_counts(n_a, pos_a, n_b, pos_b):
    """Dataset with exactly the requested group sizes and positives."""
    y = [1] * pos_a + [0] * (n_a - pos_a) + [1] * pos_b + [0] * (n_b - pos_b)
    z = ["A"] * n_a + ["B"] * n_b
    return make_dataset(y, z=z)


# --- group assignment --------------------------------------------------------

@pytest.mark.parametrize("s_a, lo, hi", [(0.5, 0.49, 0.51), (0.99, 0.985, 0.995)])
def test_independent_group_fraction(base50k, s_a, lo, hi):
    out = assign_groups_independent(base50k, s_a, seed=5)
    assert lo <= group_fraction(out, "A") <= hi


def test_independent_tiny_and_untouched_columns():
    ds = make_dataset([0, 1], features={"x": [0.25, -1.0]})
    out = assign_groups_independent(ds, 0.5, seed=1)
    assert out.z.tolist() in ([0, 0], [0, 1], [1, 0], [1, 1])
    for name in ds.columns:
        assert np.array_equal(out[name], ds[name])
    assert list(out.columns) == list(ds.columns) + ["z"]


def test_independent_rejects_existing_group():
    with pytest.raises(InjectionError):
        assign_groups_independent(make_dataset([0, 1], z=["A", "B"]), 0.5, seed=1)


def test_assignment_probs_reference_example():
    p_a, p_b, q1, q0 = prevalence_assignment_probs(0.01, 0.5, 2.0)
    assert p_b == pytest.approx(0.006667, abs=5e-7)
    assert p_a == pytest.approx(0.013333, abs=5e-7)
    assert q1 == pytest.approx(0.6667, abs=5e-5)
    assert q0 == pytest.approx(0.49832, abs=5e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.2), st.floats(0.05, 0.95), st.floats(0.2, 5.0))
def test_assignment_probs_match_bayes_oracle(p, s_a, c):
    try:
        got = prevalence_assignment_probs(p, s_a, c)
    except InjectionError:
        ref = bayes_assignment(p, s_a, c)
        assert not (0 < ref[0] < 1 and 0 < ref[1] < 1 and 0 <= ref[2] <= 1 and 0 <= ref[3] <= 1)
        return
    for a, b in zip(got, bayes_assignment(p, s_a, c)):
        assert a == pytest.approx(float(b), rel=1e-9, abs=1e-15)
    # the two conditionals reproduce the marginal P[A] = s_A
    assert p * got[2] + (1 - p) * got[3] == pytest.approx(s_a, rel=1e-9)


@pytest.mark.parametrize("s_a", [0.1, 0.5, 0.93])
def test_c_one_reduces_to_independent(s_a):
    p_a, p_b, q1, q0 = prevalence_assignment_probs(0.01, s_a, 1.0)
    assert (p_a, p_b, q1, q0) == (0.01, 0.01, s_a, s_a)


def test_infeasible_assignment_names_bound():
    with pytest.raises(InjectionError, match="p_A"):
        prevalence_assignment_probs(0.6, 0.2, 4.0)
    with pytest.raises(InjectionError, match="p_B"):
        prevalence_assignment_probs(0.5, 0.9, 0.1)


def test_prevalence_assignment_simulation(base50k):
    """Brute-force check of the conditional draw: empirical conditionals sit near the closed form."""
    p = prevalence(base50k)
    _, _, q1, q0 = prevalence_assignment_probs(p, 0.5, 2.0)
    hits1 = hits0 = n1 = n0 = 0
    for seed in range(20):
        out = assign_groups_prevalence(base50k, 0.5, 2.0, seed)
        a = out.z == 1
        hits1 += int(a[out.y == 1].sum())
        hits0 += int(a[out.y == 0].sum())
        n1 += int((out.y == 1).sum())
        n0 += int((out.y == 0).sum())
    assert abs(hits1 / n1 - q1) < 4 * np.sqrt(q1 * (1 - q1) / n1)
    assert abs(hits0 / n0 - q0) < 4 * np.sqrt(q0 * (1 - q0) / n0)


def test_prevalence_ratio_c4(base50k):
    out = assign_groups_prevalence(base50k, 0.5, 4.0, seed=3)
    ratio = prevalence(out, "A") / prevalence(out, "B")
    assert 3.2 <= ratio <= 4.8
    assert abs(group_fraction(out, "A") - 0.5) < 0.01


# --- separability features ---------------------------------------------------

def test_default_scheme_fisher_ratio():
    scheme = SeparabilityScheme.default()
    # analytic: group B class means differ by (3, 3) under identity covariance, group A not at all
    assert scheme.fisher_ratio("B") == pytest.approx(18.0)
    assert scheme.fisher_ratio("A") == 0.0
    assert scheme.fisher_ratio("B") > scheme.fisher_ratio("A")


def test_scheme_validation():
    good = SeparabilityScheme.default()
    covs = dict(good.covs)
    covs[(0, "A")] = ((1.0, 2.0), (2.0, 1.0))
    with pytest.raises(InjectionError, match="positive definite"):
        SeparabilityScheme(good.means, covs)
    covs[(0, "A")] = ((1.0, 0.5), (0.1, 1.0))
    with pytest.raises(InjectionError, match="symmetric"):
        SeparabilityScheme(good.means, covs)
    assert SeparabilityScheme.from_dict(good.to_dict()) == good


def _xz_only(ds):
    cols = {n: ds[n] for n in ("t", "x1", "x2", "y", "z")}
    kinds = {n: ds.kinds[n] for n in cols}
    return type(ds)(cols, kinds, "y", "t", "z")


def test_degenerate_scheme_has_no_signal(base50k):
    same = {(y, g): (0.0, 0.0) for y in (0, 1) for g in "AB"}
    scheme = SeparabilityScheme(same, {k: ((1.0, 0.0), (0.0, 1.0)) for k in same})
    ds = add_separability_features(assign_groups_independent(base50k, 0.5, 1), scheme, seed=2)
    for g in (1, 0):
        m = ds.z == g
        assert 0.45 <= roc_auc(ds["x1"][m] + ds["x2"][m], ds.y[m]) <= 0.55


def test_default_scheme_separates_group_b_only(base50k):
    assert gaussian_auc(np.hypot(3, 3)) == pytest.approx(0.9986, abs=1e-4)
    ds = add_separability_features(assign_groups_independent(base50k, 0.5, 1), SeparabilityScheme.default(), seed=2)
    train, test = temporal_split(_xz_only(ds), 0.75)
    spec = ModelSpec(Algorithm.LOGREG, {"learning_rate": 0.05, "l2": 1e-5, "epochs": 30}, awareness=True, seed=4)
    scores = predict(fit(spec, train), test)
    auc_b = roc_auc(scores[test.z == 0], test.y[test.z == 0])
    auc_a = roc_auc(scores[test.z == 1], test.y[test.z == 1])
    assert auc_b >= 0.95
    assert auc_a <= 0.60


def test_separability_preserves_groups_and_labels(split60k):
    train, _ = split60k
    ds = assign_groups_independent(train, 0.5, 9)
    out = add_separability_features(ds, SeparabilityScheme.default(), seed=3)
    assert np.array_equal(out.z, ds.z) and np.array_equal(out.y, ds.y)
    assert group_counts(out) == group_counts(ds)
    with pytest.raises(InjectionError):
        add_separability_features(train, SeparabilityScheme.default(), seed=3)


# --- label flips --------------------------------------------------------------

def test_flip_to_ratio_reference_example():
    assert flip_count_to_ratio(10000, 100, 10000, 100, 2.0) == 100
    ds = with_counts(10000, 100, 10000, 100)
    out, log = flip_negatives_to_positives(ds, "A", 2.0, seed=1)
    assert len(log) == 100
    assert prevalence(out, "A") == 200 / 10000 == 2 * prevalence(out, "B")


def test_flip_to_ratio_already_satisfied():
    out, log = flip_negatives_to_positives(with_counts(100, 5, 100, 5), "A", 1.0, seed=1)
    assert len(log) == 0
    assert np.array_equal(out.y, with_counts(100, 5, 100, 5).y)


def test_flip_to_ratio_degenerate_and_unreachable():
    with pytest.raises(InjectionError, match="undefined"):
        flip_negatives_to_positives(with_counts(100, 0, 100, 0), "A", 2.0, seed=1)
    with pytest.raises(InjectionError, match="unreachable"):
        flip_negatives_to_positives(with_counts(10, 5, 10, 8), "A", 2.0, seed=1)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 400), st.integers(1, 400), st.data())
def test_flip_to_ratio_matches_brute_force(n_g, n_o, data):
    pos_g = data.draw(st.integers(0, n_g))
    pos_o = data.draw(st.integers(0, n_o))
    c = data.draw(st.sampled_from([1.0, 1.5, 2.0, 3.0, 0.5]))
    assert flip_count_to_ratio(n_g, pos_g, n_o, pos_o, c) == brute_flip_to_ratio(n_g, pos_g, n_o, pos_o, c)


@pytest.mark.parametrize(
    "n_a, pos_a, n_b, pos_b, k",
    [(10000, 200, 10000, 100, 100), (1000, 10, 1000, 10, 0), (5000, 100, 10000, 100, 50)],
)
def test_equalize_reference_examples(n_a, pos_a, n_b, pos_b, k):
    assert flip_count_to_equalize(n_a, pos_a, n_b, pos_b) == k
    out, log = flip_positives_to_negatives_equalize(with_counts(n_a, pos_a, n_b, pos_b), seed=2)
    assert len(log) == k
    assert all(old == 1 and new == 0 for old, new in zip(log.old, log.new))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.data())
def test_equalize_matches_brute_force(n_g, n_o, data):
    pos_g = data.draw(st.integers(0, n_g))
    pos_o = data.draw(st.integers(0, n_o))
    assert flip_count_to_equalize(n_g, pos_g, n_o, pos_o) == brute_flip_to_equalize(n_g, pos_g, n_o, pos_o)


def test_equalize_picks_more_prevalent_group():
    out, log = flip_positives_to_negatives_equalize(with_counts(100, 2, 100, 10), seed=3)
    assert log.group == "B"
    assert prevalence(out, "A") == prevalence(out, "B") == 0.02


def test_flip_log_revert_restores_labels():
    ds = with_counts(2000, 20, 2000, 20)
    out, log = flip_negatives_to_positives(ds, "A", 2.0, seed=4)
    assert all(ds.z[r] == 1 and o != n for r, o, n in zip(log.rows, log.old, log.new))
    assert log.achieved_prevalence == {"A": prevalence(out, "A"), "B": prevalence(out, "B")}
    assert np.array_equal(log.revert(out).y, ds.y)
    with pytest.raises(InjectionError):
        log.revert(ds)


# --- scenarios ----------------------------------------------------------------

SCENARIOS = [
    BiasScenario(Kind.BASELINE),
    BiasScenario(Kind.H1, s_a=0.9),
    BiasScenario(Kind.H2_1, s_a=0.5, c=2.0),
    BiasScenario(Kind.H2_2_TRAIN_ONLY, s_a=0.5, c=2.0),
    BiasScenario(Kind.H2_2_TEST_ONLY, s_a=0.5, c=2.0),
    BiasScenario(Kind.H3, scheme=SeparabilityScheme.default()),
    BiasScenario(Kind.H4_1, c=2.0),
    BiasScenario(Kind.H4_2, s_a=0.5, c=2.0),
]


@pytest.mark.parametrize("scenario", SCENARIOS, ids=lambda s: s.name)
def test_scenario_invariants(split60k, scenario, tmp_path):
    train, test = split60k
    tr, te, manifest = apply_scenario(train, test, scenario)
    for before, after in ((train, tr), (test, te)):
        assert list(after.columns)[: len(before.columns)] == list(before.columns)
        for name in before.columns:
            if name != before.label:
                assert np.array_equal(after[name], before[name])
    if scenario.kind in (Kind.H4_1, Kind.H4_2):
        assert manifest.flip_log is not None
        assert np.array_equal(manifest.flip_log.revert(tr).y, train.y)
    else:
        assert np.array_equal(tr.y, train.y)
    assert np.array_equal(te.y, test.y)
    assert manifest.train == PartitionStats.of(tr, manifest.train.flips)
    assert manifest.test == PartitionStats.of(te)
    path = write_manifest(manifest, tmp_path)
    assert path.name == f"{scenario.name}_{scenario.seed}.manifest"
    parsed = loads_manifest(path.read_text())
    assert verify_manifest(parsed, tr, te) == []
    assert parsed["scenario"]["kind"] == scenario.kind.value


def test_scenario_deterministic(split60k):
    train, test = split60k
    sc = BiasScenario(Kind.H4_2, s_a=0.5, c=2.0, seed=77)
    a = apply_scenario(train, test, sc)
    b = apply_scenario(train, test, sc)
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert dumps_manifest(a[2]) == dumps_manifest(b[2])


def test_h3_leaves_group_statistics_bit_identical(split60k):
    train, test = split60k
    h1 = apply_scenario(train, test, BiasScenario(Kind.H1, s_a=0.5, seed=5))
    h3 = apply_scenario(train, test, BiasScenario(Kind.H3, scheme=SeparabilityScheme.default(), seed=5))
    for a, b in zip(h1[:2], h3[:2]):
        assert np.array_equal(a.z, b.z)
        assert group_fraction(a, "A") == group_fraction(b, "A")
        assert prevalence(a, "A") == prevalence(b, "A") and prevalence(a, "B") == prevalence(b, "B")
    assert h3[2].columns_added == ["z", "x1", "x2"]


def test_h2_2_test_only_ratios(split60k):
    train, test = split60k
    _, _, m = apply_scenario(train, test, BiasScenario(Kind.H2_2_TEST_ONLY, s_a=0.5, c=2.0, seed=1))
    assert 0.6 <= m.train.prevalence_ratio <= 1.6
    assert 1.4 <= m.test.prevalence_ratio <= 2.8


def test_h4_1_targets_train_only(split60k):
    train, test = split60k
    tr, te, m = apply_scenario(train, test, BiasScenario(Kind.H4_1, c=2.0, seed=1))
    assert len(m.flip_log) > 0
    assert m.train.prevalence_ratio >= 2.0
    assert m.train.flips == len(m.flip_log)
    assert 0.6 <= m.test.prevalence_ratio <= 1.6
    assert all(r < tr.n_rows for r in m.flip_log.rows)


def test_baseline_triggers_no_condition(split60k):
    train, test = split60k
    tr, te, _ = apply_scenario(train, test, BiasScenario(Kind.BASELINE, seed=2))
    for ds in (tr, te):
        assert not any(r.detected for r in audit_dataset(ds))


def test_scenario_validation():
    with pytest.raises(InjectionError):
        BiasScenario(Kind.H3)
    with pytest.raises(InjectionError):
        BiasScenario(Kind.H1, scheme=SeparabilityScheme.default())
    with pytest.raises(InjectionError):
        BiasScenario(Kind.H1, s_a=1.0)
    with pytest.raises(InjectionError):
        BiasScenario(Kind.H2_1, c=0.0)


def test_manifest_records_tampering(split60k):
    train, test = split60k
    tr, te, m = apply_scenario(train, test, BiasScenario(Kind.H2_1, c=2.0, seed=3))
    parsed = loads_manifest(dumps_manifest(m))
    parsed["train"]["pos_a"] += 1
    assert any(p.startswith("train.pos_a") for p in verify_manifest(parsed, tr, te))


def test_fractions_exact_in_flip_count():
    # 1/3 * 3 is exactly 1 in rational arithmetic; floating point would demand an extra flip
    assert flip_count_to_ratio(3, 0, 3, 1, 1.0) == 1
    assert Fraction(1, 3) * 3 == 1
