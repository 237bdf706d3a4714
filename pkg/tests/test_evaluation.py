import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from ordscore import evaluation as ev
from ordscore.errors import ConfigError, UndefinedMetricError

# distinct values on a 1e-3 grid, so monotone transforms cannot merge them
vals = st.lists(st.integers(-100_000, 100_000), min_size=3, max_size=40, unique=True).map(
    lambda v: np.array(v, dtype=float) / 1000.0
)


# -- correlations ------------------------------------------------------------

def test_spearman_examples():
    assert ev.spearman([1, 2, 3], [10, 20, 30]) == 1.0
    assert ev.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    d2 = [0, 1, 1, 0]
    assert ev.spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(1 - 6 * sum(d2) / (4 * 15), abs=1e-15)
    assert ev.spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_pearson_examples():
    x = np.arange(10.0)
    assert ev.pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-15)
    assert ev.pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert abs(ev.pearson([0, 1, 2, 3], [0, 1, 1, 3]) - oracles.pearson([0, 1, 2, 3], [0, 1, 1, 3])) < 1e-12


def test_constant_input_is_undefined():
    with pytest.raises(UndefinedMetricError):
        ev.pearson([1, 1, 1], [1, 2, 3])


def test_ties_use_average_ranks():
    assert ev.average_ranks([3, 1, 3, 2]).tolist() == oracles.ranks([3, 1, 3, 2]) == [3.5, 1, 3.5, 2]


@given(vals, st.sampled_from([np.exp, np.cbrt, lambda v: 3 * v - 7, np.arctan]))
def test_spearman_of_increasing_map_is_one(x, f):
    y = f(x)
    assume(len(np.unique(y)) == len(y))
    assert ev.spearman(x, y) == pytest.approx(1.0, abs=1e-12)


@given(vals, st.integers(0, 2**31))
def test_spearman_and_auc_invariant_to_monotone_transform(x, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=x.size)
    labels = rng.integers(0, 2, size=x.size)
    labels[:2] = [0, 1]
    t = np.arctan(x / 50.0) * 3 + 1
    assume(len(np.unique(t)) == len(t))
    assert ev.spearman(t, y) == pytest.approx(ev.spearman(x, y), abs=1e-12)
    assert ev.auc_binary(t, labels) == ev.auc_binary(x, labels)


# -- rank MSE ----------------------------------------------------------------

def test_rank_mse_examples():
    assert ev.normalized_rank_mse([1, 2, 3, 4], [0.1, 0.2, 0.5, 0.9]) == 0.0
    assert ev.normalized_rank_mse([1, 2], [2.0, 1.0]) == pytest.approx(0.25, abs=1e-15)


def test_rank_mse_matches_brute_force_on_permutations():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = rng.permutation(100) + 1
        s = rng.normal(size=100)
        assert abs(ev.normalized_rank_mse(t, s) - oracles.rank_mse(list(t), list(s))) < 1e-12


@given(vals, st.integers(0, 2**31))
def test_rank_mse_zero_iff_same_order(x, seed):
    true = np.argsort(np.argsort(x)) + 1
    assert ev.normalized_rank_mse(true, x) == 0.0
    perm = np.random.default_rng(seed).permutation(x.size)
    shuffled = x[perm]
    same = np.array_equal(np.argsort(shuffled), np.argsort(x))
    assert (ev.normalized_rank_mse(true, shuffled) == 0.0) == same


# -- AUC ---------------------------------------------------------------------

def test_auc_examples():
    assert ev.auc_binary([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert oracles.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert ev.auc_binary([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert ev.auc_binary([5, 5, 5, 5], [0, 1, 0, 1]) == 0.5


def test_auc_with_clinical_split():
    split = ev.ClinicalSplit.from_negatives([0, 1], 3)
    assert split.positive_classes == (2,)
    assert ev.auc_binary([0.1, 0.5, 1.0, 0.9], [0, 1, 2, 1], split) == 1.0
    assert ev.ClinicalSplit.upper(3) == split


@pytest.mark.parametrize("neg", [[], [0, 1, 2], [1], [0, 2], [5]])
def test_invalid_clinical_splits(neg):
    with pytest.raises(ConfigError):
        ev.ClinicalSplit.from_negatives(neg, 3)


def test_auc_needs_both_groups():
    with pytest.raises(UndefinedMetricError):
        ev.auc_binary([1, 2, 3], [1, 1, 1])


@given(vals, st.integers(0, 2**31))
def test_auc_complement(x, seed):
    labels = np.random.default_rng(seed).integers(0, 2, size=x.size)
    labels[:2] = [0, 1]
    assert ev.auc_binary(x, labels) + ev.auc_binary(-x, labels) == pytest.approx(1.0, abs=1e-12)
    assert ev.auc_binary(x, labels) == pytest.approx(oracles.auc(list(x), list(labels)), abs=1e-12)


# -- rescaling and rating metrics --------------------------------------------

def test_rescale_examples():
    assert ev.rescale_score(0.0, "ordinal") == 1.0
    assert ev.rescale_score(2.0, "multiclass") == 5.0
    assert ev.rescale_score(12.3, "siamese") == 9.0
    assert ev.rescale_score(0.0, "siamese") == 1.0


def test_rescale_is_defined_only_for_three_classes():
    with pytest.raises(ConfigError):
        ev.rescale_score(1.0, "ordinal", k=5)


def test_fine_rating_mse_examples():
    r = np.array([1.0, 4.0, 9.0])
    assert ev.fine_rating_mse(r, r) == 0.0
    assert ev.fine_rating_mse(r, r + 1) == 1.0
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=30), rng.normal(size=30)
    assert abs(ev.fine_rating_mse(a, b) - sum((x - y) ** 2 for x, y in zip(a, b)) / 30) < 1e-12


def test_longitudinal_examples():
    assert ev.longitudinal_diff_mse([1, 2], [3, 5], [1.0, 1.0], [3.0, 4.0]) == 0.0
    assert ev.longitudinal_diff_mse([(2, 4, 1.0, 1.5)]) == pytest.approx(2.25)


def test_sign_flip_is_no_better_than_predicting_no_change():
    rng = np.random.default_rng(4)
    r0 = rng.integers(1, 10, size=2000).astype(float)
    r1 = r0 + rng.normal(0, 1, size=2000)
    flipped = ev.longitudinal_diff_mse(r0, r1, r1, r0)
    zero = ev.longitudinal_diff_mse(r0, r1, r0, r0)
    assert flipped >= zero


# -- bootstrap and t-test ----------------------------------------------------

def test_constant_metric_has_zero_width():
    d = ev.bootstrap(lambda x: 1.0, [np.arange(10)], iterations=50, seed=1)
    assert d.ci == (1.0, 1.0)


def test_bootstrap_is_seeded():
    x = np.random.default_rng(0).normal(size=40)
    a = ev.bootstrap(np.mean, [x], iterations=100, seed=5)
    b = ev.bootstrap(np.mean, [x], iterations=100, seed=5)
    assert np.array_equal(a.values, b.values)
    assert ev.BootstrapDistribution.from_dict(a.to_dict()).values.tolist() == a.values.tolist()


def test_bootstrap_mean_of_mean_is_the_sample_mean():
    x = np.random.default_rng(1).exponential(size=200)
    d = ev.bootstrap(np.mean, [x], iterations=500, seed=2)
    se = x.std(ddof=1) / np.sqrt(x.size)
    assert abs(d.mean - x.mean()) < 3 * se
    assert len(d.values) == 500


def test_undefined_resamples_are_redrawn():
    labels = np.array([0] * 19 + [1])
    scores = np.arange(20.0)
    d = ev.bootstrap(ev.auc_binary, [scores, labels], iterations=200, seed=0)
    assert len(d.values) == 200 and np.all(d.values == 1.0)


def test_hopeless_resampling_gives_up():
    with pytest.raises(UndefinedMetricError):
        ev.bootstrap(ev.pearson, [np.ones(5), np.arange(5.0)], iterations=3, max_redraws=4)


@given(st.integers(0, 2**31), st.sampled_from(["mean", "spearman", "auc"]), st.integers(30, 60))
def test_ci_contains_the_point_estimate(seed, name, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = x + rng.normal(size=n)
    metric, cols = {
        "mean": (np.mean, [x]),
        "spearman": (ev.spearman, [x, y]),
        "auc": (ev.auc_binary, [y, (x > 0).astype(int)]),
    }[name]
    assume(name != "auc" or 0 < (x > 0).sum() < n)
    d = ev.bootstrap(metric, cols, iterations=200, seed=seed)
    lo, hi = d.ci
    assert lo <= d.point <= hi
    assert lo <= d.mean <= hi


def test_ttest_examples():
    a = np.random.default_rng(0).normal(size=500)
    assert ev.pairwise_ttest(a, a.copy()) == pytest.approx(1.0)
    b = np.random.default_rng(1).normal(0, 1e-3, size=500)
    assert ev.pairwise_ttest(b + 10, b) < 1e-10
    assert ev.pairwise_ttest(np.full(5, 2.0), np.full(5, 2.0)) == 1.0
    assert ev.pairwise_ttest(np.full(5, 2.0), np.full(5, 3.0)) == 0.0


def test_welch_matches_textbook():
    a = [0.81, 0.84, 0.79, 0.88, 0.83]
    b = [0.76, 0.80, 0.74, 0.79, 0.71]
    assert abs(ev.pairwise_ttest(a, b) - oracles.welch_p(a, b)) < 1e-9
    c = [1.0, 2.0, 3.0, 4.0, 5.0]
    d = [2.0, 4.0, 6.0, 8.0, 30.0]
    assert abs(ev.pairwise_ttest(c, d) - oracles.welch_p(c, d)) < 1e-9


def test_grid_flags_separation_only():
    rng = np.random.default_rng(3)
    base = rng.normal(0.8, 0.02, size=500)
    grid = ev.comparison_grid("spearman", {"a": base, "b": base.copy(), "c": base - 0.1})
    sig = grid.significant
    assert not sig[0, 1] and sig[0, 2] and sig[1, 2]
    assert np.array_equal(sig, sig.T) and not sig.diagonal().any()
    assert grid.n_pairs == 3
    back = ev.ComparisonGrid.from_dict(grid.to_dict())
    assert np.array_equal(back.significant, sig)


def test_eight_models_make_28_pairs():
    rng = np.random.default_rng(0)
    grid = ev.comparison_grid("auc", {f"m{i}": rng.normal(size=20) for i in range(8)})
    assert grid.n_pairs == 28
    assert np.isfinite(grid.p_values[np.triu_indices(8, 1)]).sum() == 28


def test_table_layout():
    summary = {"mean": 0.5, "ci_low": 0.4, "ci_high": 0.6, "point": 0.5}
    rep = ev.MetricReport("mc_ordinal", {"rank_mse": summary, "spearman": summary, "auc": summary})
    lines = ev.summary_table_csv([rep]).splitlines()
    assert lines[0] == "model,mse,mse_ci,spearman,spearman_ci,auc,auc_ci"
    assert lines[1].startswith("mc_ordinal,0.500000,\"[0.400000, 0.600000]\"")
