import numpy as np
import pytest

from profreg.datagen import (
    BENCHMARK_POISSON_MEANS,
    BENCHMARK_SEED,
    BENCHMARK_WEIGHTS,
    GenerativeTruth,
    benchmark_truth,
    exact_assignment_posterior,
    generate,
    is_representative,
    representative_seed,
)
from profreg.errors import DomainError, StructureError


def simple_truth(**kw):
    base = dict(weights=[0.5, 0.5], cluster_means=[[0.0, 0.0], [4.0, -4.0]], variances=[1.0, 1.0],
                poisson_means=[1.0, 3.0], n=200, seed=1)
    base.update(kw)
    return GenerativeTruth(**base)


def test_benchmark_constants():
    assert BENCHMARK_WEIGHTS == (0.63, 0.27, 0.08)
    assert BENCHMARK_POISSON_MEANS == (0.5, 1.48, 10.61)
    t = benchmark_truth()
    assert t.weight_normalization == pytest.approx(0.98)
    assert np.allclose(t.weights, np.array([0.63, 0.27, 0.08]) / 0.98, atol=1e-15)
    assert abs(t.weights.sum() - 1) < 1e-15
    assert np.all(np.diff(t.poisson_means) >= 0)
    assert (t.K, t.P, t.n, t.seed) == (3, 5, 300, BENCHMARK_SEED)


def test_benchmark_separation_is_two_sds():
    t = benchmark_truth()
    gaps = np.abs(np.diff(t.cluster_means, axis=0)) / np.sqrt(t.variances)
    assert np.allclose(gaps, 2.0)


def test_null_variable_has_equal_means():
    t = benchmark_truth(null_variables=(0,))
    assert np.ptp(t.cluster_means[:, 0]) == 0
    assert np.all(np.ptp(t.cluster_means[:, 1:], axis=0) > 0)


def test_regeneration_is_identical():
    a, za = generate(benchmark_truth())
    b, zb = generate(benchmark_truth())
    assert np.array_equal(a.covariates, b.covariates) and np.array_equal(a.counts, b.counts)
    assert np.array_equal(za, zb)
    c, _ = generate(benchmark_truth(seed=BENCHMARK_SEED + 1))
    assert not np.array_equal(a.covariates, c.covariates)


def test_degenerate_weights_and_zero_noise():
    t = simple_truth(weights=[1.0, 0.0], variances=[1e-300, 1e-300])
    data, z = generate(t)
    assert np.all(z == 0)
    assert np.allclose(data.covariates, 0.0)


def test_large_sample_proportions():
    t = GenerativeTruth([0.2, 0.5, 0.3], np.zeros((3, 1)), [1.0], [1.0, 2.0, 3.0], n=10_000, seed=3)
    _, z = generate(t)
    assert np.all(np.abs(np.bincount(z) / 10_000 - t.weights) < 0.02)


def test_cluster_means_converge():
    t = simple_truth(n=5000)
    data, z = generate(t)
    for k in range(2):
        nk = np.sum(z == k)
        emp = data.covariates[z == k].mean(axis=0)
        assert np.all(np.abs(emp - t.cluster_means[k]) < 3 * np.sqrt(t.variances / nk))


def test_truth_validation():
    with pytest.raises(DomainError):
        simple_truth(weights=[0.6, 0.6])
    with pytest.raises(DomainError):
        simple_truth(poisson_means=[3.0, 1.0])
    with pytest.raises(StructureError):
        simple_truth(variances=[1.0])


def test_truth_round_trip():
    t = benchmark_truth(null_variables=(2,))
    u = GenerativeTruth.from_dict(t.to_dict())
    assert u.to_dict() == t.to_dict()


def test_exact_posterior_properties():
    t = simple_truth(weights=[0.3, 0.7], cluster_means=[[1.0, 1.0], [1.0, 1.0]])
    assert np.allclose(exact_assignment_posterior(t, [2.0, 5.0]), [0.3, 0.7], atol=1e-15)
    sym = simple_truth(weights=[0.3, 0.7], cluster_means=[[-1.0, 0.0], [1.0, 0.0]])
    assert np.allclose(exact_assignment_posterior(sym, [0.0, 3.0]), [0.3, 0.7], atol=1e-15)
    p = exact_assignment_posterior(benchmark_truth(), [11.0, 47.0, 0.5, 30.0, 3.0], y=4)
    assert abs(p.sum() - 1.0) < 1e-15


def test_bayes_rule_beats_a_mismatched_rule():
    t = benchmark_truth()
    data, z = generate(t)
    bayes = np.array([np.argmax(exact_assignment_posterior(t, x, y)) for x, y in zip(data.covariates, data.counts)])
    wrong = GenerativeTruth(t.weights, t.cluster_means + 0.7 * np.sqrt(t.variances), t.variances,
                            t.poisson_means, t.n, t.seed)
    other = np.array([np.argmax(exact_assignment_posterior(wrong, x, y)) for x, y in zip(data.covariates, data.counts)])
    assert np.mean(bayes == z) >= np.mean(other == z)


def test_benchmark_seed_is_first_representative_draw():
    assert representative_seed() == BENCHMARK_SEED
    t = benchmark_truth()
    data, z = generate(t)
    assert is_representative(t, data, z)
