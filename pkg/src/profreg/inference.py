"""Post-processing of posterior draws.

Model selection by information criteria, per-cluster profiles, separation
scores between clusters, covariate-only membership prediction with odds
ratios, posterior predictive replication of the counts, and the ranking of
covariates by their shrinkage factors.

Label alignment across draws comes from the ordered intercepts; no
relabelling pass is applied here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import StructureError
from .model import (
    ChainState,
    Dataset,
    Hyperparameters,
    LOG_2PI,
    PosteriorSamples,
    logsumexp_rows,
    observed_loglik,
)
from .sampler import McmcSchedule, ModelSpec, WeightPrior, run_chain

CI_LEVEL = 0.95


def credible_interval(values, level=CI_LEVEL, axis=0):
    """Equal-tailed interval from linearly interpolated empirical percentiles."""
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(values, [tail, 100.0 - tail], axis=axis)
    return lo, hi


# --------------------------------------------------------------------------
# Information criteria
# --------------------------------------------------------------------------


def free_parameters(K: int, P: int) -> int:
    """Cluster means, common means/shrinkage/variances, intercepts, free weights."""
    return K * P + 3 * P + K + (K - 1)


@dataclass(frozen=True)
class InformationCriteria:
    k: int
    deviance: float
    nu_k: int
    aic: float
    bic: float
    n: int

    @classmethod
    def from_deviance(cls, k, deviance, nu_k, n):
        return cls(k, float(deviance), int(nu_k), deviance + 2.0 * nu_k, deviance + nu_k * math.log(n), n)


def posterior_mean_state(samples: PosteriorSamples) -> ChainState:
    """Plug-in state at the posterior mean of every parameter block.

    Assignments are the per-subject modal labels.
    """
    if len(samples) == 0:
        raise StructureError("no posterior samples")
    K = samples.K
    z = samples.assignments
    modal = np.argmax(np.stack([(z == k).sum(axis=0) for k in range(K)]), axis=0)
    w = samples.weights.mean(axis=0)
    return ChainState(
        weights=w / w.sum(),
        cluster_means=samples.cluster_means.mean(axis=0),
        common_means=samples.common_means.mean(axis=0),
        shrinkage=samples.shrinkage.mean(axis=0),
        variances=samples.variances.mean(axis=0),
        gamma_base=float(samples.gamma_base.mean()),
        increments=samples.increments.mean(axis=0),
        assignments=modal,
        logit_weights=None if samples.logit_weights is None else samples.logit_weights.mean(axis=0),
    )


def compute_ic(samples: PosteriorSamples, data: Dataset, k: int | None = None) -> InformationCriteria:
    """AIC and BIC with the deviance evaluated at the posterior-mean parameters."""
    if len(samples) == 0:
        raise StructureError("no posterior samples")
    k = samples.K if k is None else k
    deviance = -2.0 * observed_loglik(posterior_mean_state(samples), data)
    return InformationCriteria.from_deviance(k, deviance, free_parameters(k, data.P), data.n)


def choose_k(criteria) -> int:
    """Smallest BIC; ties go to the smaller K."""
    best = min(criteria, key=lambda ic: (ic.bic, ic.k))
    return best.k


@dataclass
class Selection:
    criteria: list
    chosen_k: int
    samples: dict = field(default_factory=dict)


def _spec_for(K, hyper: Hyperparameters | None, weight_prior: WeightPrior) -> ModelSpec:
    if hyper is None:
        return ModelSpec(K, Hyperparameters.default(K), weight_prior)
    alpha = hyper.alpha if len(hyper.alpha) == K else (hyper.alpha[0],) * K
    return ModelSpec(K, Hyperparameters(alpha=alpha, c=hyper.c, d=hyper.d, r=hyper.r, s=hyper.s,
                                        sigma0_sq=hyper.sigma0_sq,
                                        common_mean_var=hyper.common_mean_var), weight_prior)


def select_k(data: Dataset, k_values, schedule: McmcSchedule, hyper: Hyperparameters | None = None,
             weight_prior: WeightPrior = WeightPrior(), keep_samples: bool = False) -> Selection:
    """Fit increasing K and pick the BIC minimizer.

    The scan stops after the first K at which both AIC and BIC rose versus
    the previous K.  ``hyper.alpha`` is reused when its length matches K and
    otherwise its first entry is repeated.
    """
    k_values = sorted(int(k) for k in k_values)
    if not k_values or k_values[0] < 1:
        raise StructureError("K range must be nonempty and positive")
    criteria, kept = [], {}
    for K in k_values:
        samples = run_chain(_spec_for(K, hyper, weight_prior), data, schedule)
        ic = compute_ic(samples, data, K)
        criteria.append(ic)
        if keep_samples:
            kept[K] = samples
        if len(criteria) > 1 and ic.aic > criteria[-2].aic and ic.bic > criteria[-2].bic:
            break
    return Selection(criteria, choose_k(criteria), kept)


# --------------------------------------------------------------------------
# Profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    """Posterior mean, SD and equal-tailed interval, elementwise."""

    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def of(cls, draws, level=CI_LEVEL):
        draws = np.asarray(draws, dtype=float)
        lo, hi = credible_interval(draws, level)
        constant = draws.min(axis=0) == draws.max(axis=0)
        # summation rounding must not move a constant's mean off its value
        mean = np.where(constant, draws[0], draws.mean(axis=0))
        sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1:])
        sd = np.where(constant, 0.0, sd)
        return cls(mean, sd, lo, hi)


class RelevanceRow(NamedTuple):
    name: str
    index: int
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    mean: float


@dataclass(frozen=True)
class ProfileReport:
    variable_names: tuple
    cluster_means: Summary       # (K, P), original units
    variances: Summary           # (P,), original units
    poisson_means: Summary       # (K,)
    weights: Summary             # (K,)
    dstar: np.ndarray            # (P, K, K)
    relevance: list
    standardized: bool = False


def compute_dstar(samples: PosteriorSamples, j: int, k: int, k2: int) -> float:
    """Fraction of draws in which cluster ``k``'s mean of variable ``j`` exceeds cluster ``k2``'s."""
    if k == k2:
        raise StructureError("clusters must differ")
    mu = samples.cluster_means
    return float(np.mean(mu[:, k, j] > mu[:, k2, j]))


def dstar_matrix(samples: PosteriorSamples) -> np.ndarray:
    """All pairwise separation scores, shape ``(P, K, K)``; the diagonal is 0."""
    mu = samples.cluster_means                              # (T, K, P)
    gt = mu[:, :, None, :] > mu[:, None, :, :]              # (T, K, K, P)
    return np.moveaxis(gt.mean(axis=0), 2, 0)


def relevance_ranking(samples: PosteriorSamples) -> list:
    """Variables sorted by ascending posterior median shrinkage, with box-plot statistics.

    Whiskers extend to the most extreme draws within 1.5 IQR of the quartiles.
    """
    if len(samples) == 0:
        raise StructureError("no posterior samples")
    lam = samples.shrinkage
    q1, med, q3 = np.percentile(lam, [25.0, 50.0, 75.0], axis=0)
    iqr = q3 - q1
    rows = []
    names = samples.variable_names or tuple(f"x{j + 1}" for j in range(samples.P))
    for j in range(samples.P):
        col = lam[:, j]
        inside = col[(col >= q1[j] - 1.5 * iqr[j]) & (col <= q3[j] + 1.5 * iqr[j])]
        rows.append(RelevanceRow(names[j], j, float(med[j]), float(q1[j]), float(q3[j]),
                                 float(inside.min()), float(inside.max()), float(col.mean())))
    order = sorted(range(samples.P), key=lambda j: (rows[j].median, j))
    return [rows[j] for j in order]


def profile_report(samples: PosteriorSamples, data: Dataset | None = None) -> ProfileReport:
    """Per-cluster, per-variable summaries on the covariates' original scale."""
    if len(samples) == 0:
        raise StructureError("no posterior samples")
    if data is not None and data.P != samples.P:
        raise StructureError("data and samples disagree on the number of covariates")
    return ProfileReport(
        variable_names=tuple(samples.variable_names),
        cluster_means=Summary.of(samples.to_original_means()),
        variances=Summary.of(samples.to_original_variances()),
        poisson_means=Summary.of(samples.poisson_means),
        weights=Summary.of(samples.weights),
        dstar=dstar_matrix(samples),
        relevance=relevance_ranking(samples),
        standardized=samples.center is not None,
    )


# --------------------------------------------------------------------------
# Membership prediction
# --------------------------------------------------------------------------


class Membership(NamedTuple):
    probabilities: np.ndarray   # (K,) averaged over draws
    per_sample: np.ndarray      # (T, K)


class Odds(NamedTuple):
    ratio: float
    degenerate: bool            # denominator was zero; ratio is +inf (or nan for 0/0)


def _to_model_scale(samples, x):
    if samples.center is None:
        return x
    return (x - samples.center) / samples.scale


def membership_posterior(samples: PosteriorSamples, x_new, variable_weights=None) -> Membership:
    """Covariate-only cluster membership of a new subject, Rao-Blackwellized over draws.

    ``x_new`` is in original units.  NaN entries are treated as unobserved
    and dropped from the likelihood.  ``variable_weights`` multiplies each
    variable's log density.
    """
    x = np.asarray(x_new, dtype=float).reshape(-1)
    if x.shape[0] != samples.P:
        raise StructureError(f"expected {samples.P} covariates, got {x.shape[0]}")
    w = np.ones(samples.P) if variable_weights is None else np.asarray(variable_weights, dtype=float)
    observed = ~np.isnan(x)
    w = np.where(observed, w, 0.0)
    x = np.where(observed, _to_model_scale(samples, np.where(observed, x, 0.0)), 0.0)

    var = samples.variances[:, None, :]
    resid = x - samples.cluster_means
    loglik = np.sum(w * (-0.5 * (LOG_2PI + np.log(var)) - resid * resid / (2.0 * var)), axis=2)
    with np.errstate(divide="ignore"):
        logw = np.log(samples.weights) + loglik
    per = np.exp(logw - logsumexp_rows(logw)[:, None])
    return Membership(per.mean(axis=0), per)


def odds_from_probabilities(prob, k: int, k2: int) -> Odds:
    if k == k2:
        raise StructureError("clusters must differ")
    num, den = float(prob[k]), float(prob[k2])
    if den == 0.0:
        return Odds(math.inf if num > 0 else math.nan, True)
    return Odds(num / den, False)


def odds_ratio(samples: PosteriorSamples, x_new, k: int, k2: int) -> Odds:
    """Ratio of averaged membership probabilities of clusters ``k`` and ``k2``."""
    return odds_from_probabilities(membership_posterior(samples, x_new).probabilities, k, k2)


def what_if(samples: PosteriorSamples, base, scenarios: dict) -> dict:
    """Membership of a reference profile and of modified copies of it.

    ``scenarios`` maps a scenario name to ``{variable: value}`` changes, the
    variable given by index or name; a value of ``None`` removes the
    variable.  The unmodified profile is returned under ``"base"``.
    """
    base = np.asarray(base, dtype=float).reshape(-1)
    names = list(samples.variable_names)
    out = {"base": membership_posterior(samples, base)}
    for label, changes in scenarios.items():
        x = base.copy()
        for var, value in changes.items():
            j = names.index(var) if isinstance(var, str) else int(var)
            x[j] = np.nan if value is None else value
        out[label] = membership_posterior(samples, x)
    return out


# --------------------------------------------------------------------------
# Posterior predictive replication
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictiveSummary:
    rank_mean: np.ndarray        # (n_rep,) mean of the r-th smallest replicated count
    rank_lower: np.ndarray
    rank_upper: np.ndarray
    count_values: np.ndarray     # 0..max replicated count
    freq_mean: np.ndarray        # mean number of replicates equal to each value
    freq_lower: np.ndarray
    freq_upper: np.ndarray
    replicate_means: np.ndarray  # (T,) mean count of each replicated data set


def posterior_predictive(samples: PosteriorSamples, n_rep: int, rng, chunk: int = 2048) -> PredictiveSummary:
    """Replicate ``n_rep`` counts per draw from the fitted mixture and summarize them."""
    if n_rep < 1:
        raise StructureError("n_rep must be >= 1")
    T, K = samples.weights.shape
    theta = samples.poisson_means
    reps = np.empty((T, n_rep), dtype=np.int64)
    for lo in range(0, T, chunk):
        hi = min(lo + chunk, T)
        cdf = np.cumsum(samples.weights[lo:hi], axis=1)
        u = rng.random((hi - lo, n_rep)) * cdf[:, -1:]
        z = np.minimum((u[:, :, None] >= cdf[:, None, :]).sum(axis=2), K - 1)
        reps[lo:hi] = rng.poisson(np.take_along_axis(theta[lo:hi], z, axis=1))
    ranked = np.sort(reps, axis=1)
    rank_lo, rank_hi = credible_interval(ranked)
    values = np.arange(int(reps.max()) + 1)
    freq = np.stack([np.bincount(row, minlength=values.size) for row in reps])
    freq_lo, freq_hi = credible_interval(freq)
    return PredictiveSummary(ranked.mean(axis=0), rank_lo, rank_hi, values,
                             freq.mean(axis=0), freq_lo, freq_hi, reps.mean(axis=1))
