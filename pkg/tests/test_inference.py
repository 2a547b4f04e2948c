import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profreg.datagen import GenerativeTruth, exact_assignment_posterior, generate, benchmark_truth
from profreg.errors import StructureError
from profreg.inference import (
    InformationCriteria,
    choose_k,
    compute_dstar,
    compute_ic,
    credible_interval,
    dstar_matrix,
    free_parameters,
    membership_posterior,
    odds_from_probabilities,
    odds_ratio,
    posterior_predictive,
    profile_report,
    relevance_ranking,
    select_k,
    what_if,
)
from profreg.model import ChainState, Dataset, PosteriorSamples, observed_loglik
from profreg.sampler import McmcSchedule, ModelSpec, run_chain


def state(weights, means, variances, gamma_base=0.0, increments=None, shrinkage=None, n=1):
    means = np.asarray(means, dtype=float)
    K, P = means.shape
    return ChainState(
        weights=np.asarray(weights, dtype=float),
        cluster_means=means,
        common_means=means.mean(axis=0),
        shrinkage=np.ones(P) if shrinkage is None else np.asarray(shrinkage, dtype=float),
        variances=np.asarray(variances, dtype=float),
        gamma_base=gamma_base,
        increments=np.full(K - 1, 0.5) if increments is None else np.asarray(increments, dtype=float),
        assignments=np.zeros(n, dtype=int),
    )


def stack(*states, **kw):
    return PosteriorSamples.from_states(states, np.zeros(len(states)), **kw)


def random_samples(seed, T=4, K=3, P=2):
    r = np.random.default_rng(seed)
    return stack(*[state(r.dirichlet(np.ones(K)), r.normal(0, 2, (K, P)), r.gamma(2, 0.5, P),
                         shrinkage=r.gamma(2, 1, P)) for _ in range(T)])


# ---------------------------------------------------------------- information criteria


def test_criteria_formulas():
    ic = InformationCriteria.from_deviance(2, 100.0, 10, math.e ** 2)
    assert ic.aic == pytest.approx(120.0, abs=1e-12)
    assert ic.bic == pytest.approx(120.0, abs=1e-12)


@given(K=st.integers(1, 20), P=st.integers(1, 50))
def test_parameter_count_increments(K, P):
    assert free_parameters(K + 1, P) - free_parameters(K, P) == P + 2


def test_argmin_at_three_for_reference_criteria():
    crit = [InformationCriteria(k, 0.0, 0, 0.0, b, 99) for k, b in zip((2, 3, 4), (7854, 7728, 7784))]
    assert choose_k(crit) == 3


def test_ties_go_to_smaller_k():
    crit = [InformationCriteria(k, 0.0, 0, 0.0, 50.0, 10) for k in (4, 2, 3)]
    assert choose_k(crit) == 2


def test_compute_ic_uses_posterior_mean_plug_in():
    r = np.random.default_rng(0)
    data = Dataset(r.normal(size=(10, 2)), r.poisson(2, 10))
    s = random_samples(1)
    ic = compute_ic(s, data)
    mean_state = state(s.weights.mean(axis=0), s.cluster_means.mean(axis=0), s.variances.mean(axis=0),
                       increments=s.increments.mean(axis=0))
    assert ic.deviance == pytest.approx(-2 * observed_loglik(mean_state, data), abs=1e-9)
    assert ic.aic == ic.deviance + 2 * ic.nu_k
    assert ic.bic == ic.deviance + ic.nu_k * math.log(10)


def test_compute_ic_requires_samples():
    s = random_samples(2)
    empty = PosteriorSamples(*(getattr(s, f)[:0] for f in (
        "weights", "cluster_means", "common_means", "shrinkage", "variances", "gamma_base",
        "increments", "assignments", "observed_loglik")))
    with pytest.raises(StructureError):
        compute_ic(empty, Dataset(np.zeros((1, 2)), [0]))


# ---------------------------------------------------------------- profiles


def test_percentile_interval_definition():
    lo, hi = credible_interval(np.arange(1, 101, dtype=float))
    assert (lo, hi) == pytest.approx((3.475, 97.525), abs=1e-12)


def test_constant_parameter_gives_zero_width_interval():
    s0 = state([0.3, 0.7], [[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0])
    rep = profile_report(stack(s0, s0, s0))
    assert np.array_equal(rep.cluster_means.lower, rep.cluster_means.upper)
    assert np.allclose(rep.cluster_means.mean, s0.cluster_means)
    assert np.allclose(rep.cluster_means.sd, 0.0)


def test_report_invariants():
    rep = profile_report(random_samples(3, T=50))
    assert abs(rep.weights.mean.sum() - 1) < 1e-10
    for summ in (rep.cluster_means, rep.weights, rep.poisson_means, rep.variances):
        assert np.all(summ.lower <= summ.mean) and np.all(summ.mean <= summ.upper)
    assert np.all((rep.dstar >= 0) & (rep.dstar <= 1))


def test_report_undoes_standardization():
    s = random_samples(4)
    center, scale = np.array([10.0, -3.0]), np.array([2.0, 0.5])
    s.center, s.scale = center, scale
    rep = profile_report(s)
    assert np.allclose(rep.cluster_means.mean, center + scale * s.cluster_means.mean(axis=0))
    assert np.allclose(rep.variances.mean, (s.variances * scale ** 2).mean(axis=0))
    assert rep.standardized


def test_dstar_direct_count():
    above = [1, 1, 0, 1, 1, 0, 1, 1, 0, 1]
    states = [state([0.5, 0.5], [[2.0 if a else -2.0], [0.0]], [1.0]) for a in above]
    s = stack(*states)
    assert compute_dstar(s, 0, 0, 1) == pytest.approx(0.7, abs=1e-15)
    assert compute_dstar(s, 0, 1, 0) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(StructureError):
        compute_dstar(s, 0, 1, 1)


def test_dstar_complementarity_with_ties():
    r = np.random.default_rng(5)
    means = r.integers(0, 3, size=(40, 3, 2)).astype(float)
    s = stack(*[state([0.2, 0.3, 0.5], m, [1.0, 1.0]) for m in means])
    d = dstar_matrix(s)
    for j in range(2):
        for k in range(3):
            for k2 in range(3):
                if k != k2:
                    ties = np.mean(means[:, k, j] == means[:, k2, j])
                    assert d[j, k, k2] + d[j, k2, k] + ties == pytest.approx(1.0, abs=1e-15)
                    assert d[j, k, k2] == compute_dstar(s, j, k, k2)


def test_relevance_ties_keep_input_order():
    s = random_samples(6, P=4)
    s.shrinkage[:] = 1.0
    assert [row.index for row in relevance_ranking(s)] == [0, 1, 2, 3]


def test_relevance_box_statistics():
    s = random_samples(7, T=200, P=3)
    rows = relevance_ranking(s)
    assert [r.median for r in rows] == sorted(r.median for r in rows)
    for row in rows:
        col = s.shrinkage[:, row.index]
        q1, med, q3 = np.percentile(col, [25, 50, 75])
        assert (row.q1, row.median, row.q3) == pytest.approx((q1, med, q3), abs=1e-14)
        inside = col[(col >= q1 - 1.5 * (q3 - q1)) & (col <= q3 + 1.5 * (q3 - q1))]
        assert row.whisker_lo == inside.min() and row.whisker_hi == inside.max()


# ---------------------------------------------------------------- membership


def test_identical_components_return_weights():
    s0 = state([0.25, 0.75], [[1.0, 1.0], [1.0, 1.0]], [2.0, 3.0])
    mem = membership_posterior(stack(s0), [5.0, -4.0])
    assert np.allclose(mem.probabilities, [0.25, 0.75], atol=1e-15)


def test_two_sample_toy_matches_hand_computation():
    s1 = state([0.6, 0.4], [[0.0], [2.0]], [1.0])
    s2 = state([0.5, 0.5], [[-1.0], [1.0]], [4.0])
    x = 0.7

    def hand(w, m, v):
        a = [w[k] * math.exp(-(x - m[k]) ** 2 / (2 * v)) for k in range(2)]
        return [ak / sum(a) for ak in a]

    p1, p2 = hand([0.6, 0.4], [0.0, 2.0], 1.0), hand([0.5, 0.5], [-1.0, 1.0], 4.0)
    mem = membership_posterior(stack(s1, s2), [x])
    assert np.allclose(mem.per_sample, [p1, p2], rtol=0, atol=1e-12)
    assert np.allclose(mem.probabilities, np.mean([p1, p2], axis=0), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_membership_sums_to_one_and_is_permutation_equivariant(seed):
    s = random_samples(seed)
    x = np.random.default_rng(seed).normal(0, 2, 2)
    mem = membership_posterior(s, x)
    assert np.allclose(mem.per_sample.sum(axis=1), 1, atol=1e-12)
    assert abs(mem.probabilities.sum() - 1) < 1e-12
    perm = np.array([2, 0, 1])
    relabeled = PosteriorSamples(s.weights[:, perm], s.cluster_means[:, perm], s.common_means, s.shrinkage,
                                 s.variances, s.gamma_base, s.increments, s.assignments, s.observed_loglik)
    assert np.allclose(membership_posterior(relabeled, x).probabilities, mem.probabilities[perm], atol=1e-12)


def test_duplicated_column_equals_double_weight():
    s = random_samples(8)
    dup = PosteriorSamples(s.weights, np.concatenate([s.cluster_means, s.cluster_means[:, :, :1]], axis=2),
                           np.zeros((4, 3)), np.ones((4, 3)),
                           np.concatenate([s.variances, s.variances[:, :1]], axis=1),
                           s.gamma_base, s.increments, s.assignments, s.observed_loglik)
    x = np.array([0.3, -1.2])
    a = membership_posterior(dup, [x[0], x[1], x[0]]).per_sample
    b = membership_posterior(s, x, variable_weights=[2.0, 1.0]).per_sample
    assert np.allclose(a, b, atol=1e-12)


def test_missing_variable_is_dropped():
    s = random_samples(9)
    only_first = PosteriorSamples(s.weights, s.cluster_means[:, :, :1], s.common_means[:, :1],
                                  s.shrinkage[:, :1], s.variances[:, :1], s.gamma_base, s.increments,
                                  s.assignments, s.observed_loglik)
    a = membership_posterior(s, [0.5, np.nan]).probabilities
    assert np.allclose(a, membership_posterior(only_first, [0.5]).probabilities, atol=1e-14)


def test_what_if_scenarios():
    s = random_samples(10)
    s.variable_names = ("age", "score")
    out = what_if(s, [0.5, 1.0], {"older": {"age": 3.0}, "unknown score": {1: None}})
    assert np.allclose(out["older"].probabilities, membership_posterior(s, [3.0, 1.0]).probabilities)
    assert np.allclose(out["unknown score"].probabilities, membership_posterior(s, [0.5, np.nan]).probabilities)


def test_membership_rejects_wrong_length():
    with pytest.raises(StructureError):
        membership_posterior(random_samples(11), [1.0, 2.0, 3.0])


def test_odds():
    assert odds_from_probabilities([0.8, 0.2], 0, 1).ratio == pytest.approx(4.0, abs=1e-15)
    assert odds_from_probabilities([0.5, 0.5], 0, 1).ratio == 1.0
    inf = odds_from_probabilities([1.0, 0.0], 0, 1)
    assert inf.ratio == math.inf and inf.degenerate
    s = random_samples(12)
    a, b = odds_ratio(s, [0.1, 0.2], 0, 2), odds_ratio(s, [0.1, 0.2], 2, 0)
    assert a.ratio * b.ratio == pytest.approx(1.0, rel=1e-12)


def test_single_state_matches_exact_posterior():
    truth = benchmark_truth()
    s0 = state(truth.weights, truth.cluster_means, truth.variances)
    x = generate(truth)[0].covariates[:20]
    samples = stack(s0)
    for row in x:
        exact = exact_assignment_posterior(truth, row)
        assert np.allclose(membership_posterior(samples, row).probabilities, exact, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- predictive replication


def test_replicates_of_unit_poisson():
    s0 = state([1.0], [[0.0]], [1.0], gamma_base=0.0, increments=[])
    samples = stack(*[s0] * 400)
    ppc = posterior_predictive(samples, 200, np.random.default_rng(13))
    se = math.sqrt(1.0 / (400 * 200))
    assert abs(ppc.replicate_means.mean() - 1.0) < 3 * se


def test_rank_intervals_monotone_and_frequency_totals():
    samples = random_samples(14, T=300)
    ppc = posterior_predictive(samples, 50, np.random.default_rng(15))
    assert np.all(np.diff(ppc.rank_lower) >= 0) and np.all(np.diff(ppc.rank_upper) >= 0)
    assert np.all(np.diff(ppc.rank_mean) >= 0)
    assert ppc.freq_mean.sum() == pytest.approx(50.0)


def test_predictive_is_seeded():
    samples = random_samples(16, T=30)
    a = posterior_predictive(samples, 20, np.random.default_rng(1))
    b = posterior_predictive(samples, 20, np.random.default_rng(1))
    assert np.array_equal(a.rank_mean, b.rank_mean)


@pytest.fixture(scope="module")
def benchmark_fit():
    truth = benchmark_truth()
    data, _ = generate(truth)
    samples = run_chain(ModelSpec(3), data, McmcSchedule(seed=8, burn_in=1000, n_iter=4000))
    return data, samples


def test_predictive_moment_identity(benchmark_fit):
    _, samples = benchmark_fit
    n_rep = 300
    ppc = posterior_predictive(samples, n_rep, np.random.default_rng(17))
    per_draw = np.sum(samples.weights * samples.poisson_means, axis=1)
    # replicate mean minus its conditional expectation is independent across draws
    resid = ppc.replicate_means - per_draw
    se = resid.std(ddof=1) / math.sqrt(len(resid))
    assert abs(resid.mean()) < 3 * se
    plug_in = np.sum(samples.weights.mean(axis=0) * samples.poisson_means.mean(axis=0))
    assert ppc.replicate_means.mean() == pytest.approx(plug_in, rel=0.05)


def test_benchmark_profiles_are_recovered(benchmark_fit):
    data, samples = benchmark_fit
    truth = benchmark_truth()
    rep = profile_report(samples, data)
    assert np.allclose(rep.cluster_means.mean, truth.cluster_means, atol=1.0 * np.sqrt(truth.variances))
    # adjacent cluster means are separated, so D* is near 0 or 1 along each variable's direction
    sign = np.sign(truth.cluster_means[2] - truth.cluster_means[0])
    for j in range(truth.P):
        d = rep.dstar[j, 2, 0] if sign[j] > 0 else rep.dstar[j, 0, 2]
        assert d > 0.99


def test_one_cluster_data_selects_two():
    t = GenerativeTruth([1.0], [[0.0, 5.0, -2.0]], [1.0, 4.0, 0.25], [2.0], n=300, seed=7)
    data, _ = generate(t)
    sel = select_k(data, [2, 3, 4], McmcSchedule(seed=1, burn_in=500, n_iter=2000))
    assert sel.chosen_k == 2
    # both AIC and BIC rose at K=3, so K=4 is never fitted
    assert [ic.k for ic in sel.criteria] == [2, 3]


def test_select_tie_break_on_identical_criteria(monkeypatch):
    import profreg.inference as inf

    monkeypatch.setattr(inf, "run_chain", lambda spec, data, schedule: spec.K)
    monkeypatch.setattr(inf, "compute_ic", lambda s, d, k: InformationCriteria(k, 1.0, 1, 3.0, 5.0, 10))
    sel = inf.select_k(Dataset(np.zeros((3, 1)), [0, 0, 0]), [4, 2, 3], McmcSchedule(seed=1))
    assert sel.chosen_k == 2 and [c.k for c in sel.criteria] == [2, 3, 4]
