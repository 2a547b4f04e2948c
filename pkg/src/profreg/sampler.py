"""Metropolis-within-Gibbs sampler for the profile mixture.

Conjugate blocks (assignments, Dirichlet weights, cluster means, common
means, variances) are drawn exactly from their full conditionals.  The
shrinkage factors and the ordered Poisson intercepts have no standard
conditional and get random-walk Metropolis moves on the log scale, with
per-coordinate step sizes that adapt during burn-in only.

Every kernel is a pure function ``(state, ..., rng) -> new state``; the
Metropolis kernels also return a boolean acceptance array.  Passing
``data=None`` to a kernel drops the likelihood, leaving the prior as the
target, which is what the prior-recovery and Geweke checks rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from .errors import ConfigError, NumericalError, StructureError
from .model import (
    ChainState,
    Dataset,
    Hyperparameters,
    PosteriorSamples,
    covariate_loglik,
    logsumexp_rows,
    observed_loglik_batch,
)

BLOCKS = ("z", "pi", "mu_k", "mu_j", "sigma2", "lambda", "gamma")
DEFAULT_ORDER = BLOCKS
# one independent stream per block (plus initialisation), so reordering the
# sweep never changes which uniforms a given block consumes
_STREAMS = ("init",) + BLOCKS

TARGET_ACCEPT = 0.44
ADAPT_BATCH = 50
MIN_INCREMENT = 1e-2
_TINY = 1e-300


@dataclass(frozen=True)
class WeightPrior:
    """Prior on the mixture weights.

    ``kind="dirichlet"`` uses the concentration in ``Hyperparameters.alpha``.
    ``kind="logit"`` puts ``N(0, logit_sd**2)`` priors on log weights
    2..K relative to a pinned first one; ``order_logits`` additionally
    restricts them to be nondecreasing.
    """

    kind: str = "dirichlet"
    logit_sd: float = 1.0
    order_logits: bool = False

    def __post_init__(self):
        if self.kind not in ("dirichlet", "logit"):
            raise ConfigError(f"unknown weight prior {self.kind!r}")
        if not self.logit_sd > 0:
            raise ConfigError("logit_sd must be > 0")


@dataclass(frozen=True)
class ModelSpec:
    K: int
    hyper: Hyperparameters = None
    weight_prior: WeightPrior = field(default_factory=WeightPrior)

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        hyper = self.hyper if self.hyper is not None else Hyperparameters.default(self.K)
        if hyper.K != self.K:
            raise ConfigError(f"alpha has length {hyper.K}, expected K={self.K}")
        object.__setattr__(self, "hyper", hyper)


@dataclass(frozen=True)
class McmcSchedule:
    seed: int
    burn_in: int = 10_000
    n_iter: int = 100_000
    thin: int = 1
    mh_step_lambda: float = 0.5
    mh_step_gamma: float = 0.1
    mh_step_logit: float = 0.2
    adapt_during_burnin: bool = True

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        for name in ("mh_step_lambda", "mh_step_gamma", "mh_step_logit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")

    @property
    def n_retained(self) -> int:
        return self.n_iter // self.thin


def make_streams(seed: int) -> dict:
    """Independent counter-based generators, one per sweep block."""
    children = np.random.SeedSequence(int(seed)).spawn(len(_STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(_STREAMS, children)}


# --------------------------------------------------------------------------
# Sufficient statistics
# --------------------------------------------------------------------------


def _one_hot(z, K):
    out = np.zeros((z.shape[0], K))
    out[np.arange(z.shape[0]), z] = 1.0
    return out


def _cluster_stats(state, data):
    """Cluster sizes and covariate sums; zeros when ``data`` is None."""
    K, P = state.K, state.P
    if data is None:
        return np.zeros(K), np.zeros((K, P))
    onehot = _one_hot(state.assignments, K)
    return onehot.sum(axis=0), onehot.T @ data.covariates


# --------------------------------------------------------------------------
# Conjugate blocks
# --------------------------------------------------------------------------


def _assignment_logits(state, data):
    gamma = state.intercepts
    logw = covariate_loglik(data.covariates, state.cluster_means, state.variances,
                            x_sq=data.covariates_sq)
    logw += data.counts[:, None] * gamma - np.exp(gamma)
    with np.errstate(divide="ignore"):
        logw += np.log(state.weights)
    return logw


def assignment_log_probs(state: ChainState, data: Dataset) -> np.ndarray:
    """Normalized log full-conditional probabilities of each label, ``(n, K)``."""
    logw = _assignment_logits(state, data)
    norm = logsumexp_rows(logw)[:, None]
    if not np.all(np.isfinite(norm)):
        raise NumericalError("assignment probabilities are not finite")
    return logw - norm


def update_assignments(state: ChainState, data: Dataset, rng) -> ChainState:
    if data is None:
        return state
    logw = _assignment_logits(state, data)
    m = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericalError("assignment probabilities are not finite")
    cdf = np.exp(logw - m).cumsum(axis=1)
    u = rng.random(data.n) * cdf[:, -1]
    z = (u[:, None] >= cdf).sum(axis=1)
    np.minimum(z, state.K - 1, out=z)
    return replace(state, assignments=z)


def weights_conditional(state: ChainState, hyper: Hyperparameters, data=None) -> np.ndarray:
    """Dirichlet parameters of the weight full conditional, ``alpha + n_k``."""
    counts = state.cluster_sizes() if data is not None else np.zeros(state.K)
    return np.asarray(hyper.alpha) + counts


def _normalize_simplex(w):
    w = np.maximum(w, _TINY)
    return w / w.sum()


def update_weights(state: ChainState, hyper: Hyperparameters, prior: WeightPrior, rng,
                   data=None, step=None) -> ChainState:
    """Redraw the mixture weights.

    The Dirichlet case is an exact conjugate draw.  The logit case delegates
    to :func:`update_logit_weights` and discards the acceptance flags.
    """
    if prior.kind == "logit":
        step = 0.2 if step is None else step
        return update_logit_weights(state, prior, rng, data, step)[0]
    w = rng.dirichlet(weights_conditional(state, hyper, data))
    return replace(state, weights=_normalize_simplex(w))


def softmax(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


def logit_log_target(logits, counts, prior: WeightPrior) -> float:
    if prior.order_logits and np.any(np.diff(logits) < 0):
        return -np.inf
    log_pi = logits - logsumexp_rows(logits)
    return float(counts @ log_pi - 0.5 * np.sum(logits[1:] ** 2) / prior.logit_sd ** 2)


def update_logit_weights(state: ChainState, prior: WeightPrior, rng, data=None, step=0.2):
    """One random-walk Metropolis move per free log weight (entries 1..K-1)."""
    K = state.K
    logits = np.array(state.logit_weights if state.logit_weights is not None
                      else np.log(state.weights / state.weights[0]), dtype=float)
    logits[0] = 0.0
    counts = state.cluster_sizes().astype(float) if data is not None else np.zeros(K)
    steps = np.broadcast_to(np.asarray(step, dtype=float), (max(K - 1, 0),))
    accepted = np.zeros(max(K - 1, 0), dtype=bool)
    noise = rng.standard_normal(K - 1)
    logu = np.log(rng.random(K - 1))
    current = logit_log_target(logits, counts, prior)
    for k in range(1, K):
        prop = logits.copy()
        prop[k] += steps[k - 1] * noise[k - 1]
        target = logit_log_target(prop, counts, prior)
        if logu[k - 1] < target - current:
            logits, current = prop, target
            accepted[k - 1] = True
    return replace(state, logit_weights=logits, weights=_normalize_simplex(softmax(logits))), accepted


def cluster_means_conditional(state: ChainState, data=None):
    """Mean and variance of each cluster mean's Gaussian full conditional, ``(K, P)`` each."""
    n_k, sums = _cluster_stats(state, data)
    lam = state.shrinkage
    denom = n_k[:, None] * lam + 1.0
    mean = (lam * sums + state.common_means) / denom
    var = state.variances * lam / denom
    return mean, var


def update_cluster_means(state: ChainState, data, rng) -> ChainState:
    mean, var = cluster_means_conditional(state, data)
    return replace(state, cluster_means=mean + np.sqrt(var) * rng.standard_normal(mean.shape))


def common_means_conditional(state: ChainState, hyper: Hyperparameters):
    """Mean and variance of each common mean's full conditional, ``(P,)`` each."""
    K = state.K
    prior_var = state.variances * state.shrinkage
    if hyper.common_mean_var is None:
        return state.cluster_means.mean(axis=0), prior_var / K
    prec = K / prior_var + 1.0 / hyper.common_mean_var
    return state.cluster_means.sum(axis=0) / prior_var / prec, 1.0 / prec


def update_common_means(state: ChainState, hyper: Hyperparameters, rng) -> ChainState:
    mean, var = common_means_conditional(state, hyper)
    return replace(state, common_means=mean + np.sqrt(var) * rng.standard_normal(mean.shape))


def variances_conditional(state: ChainState, hyper: Hyperparameters, data=None):
    """Inverse-Gamma shape and scale of each variance's full conditional."""
    K = state.K
    dev = state.cluster_means - state.common_means
    prior_ss = np.sum(dev * dev, axis=0) / state.shrinkage
    if data is None:
        n, data_ss = 0, 0.0
    else:
        n = data.n
        resid = data.covariates - state.cluster_means[state.assignments]
        data_ss = np.sum(resid * resid, axis=0)
    shape = np.full(state.P, hyper.r + 0.5 * (n + K))
    scale = hyper.s + 0.5 * (data_ss + prior_ss)
    return shape, scale


def update_variances(state: ChainState, hyper: Hyperparameters, rng, data=None) -> ChainState:
    shape, scale = variances_conditional(state, hyper, data)
    return replace(state, variances=scale / rng.standard_gamma(shape))


# --------------------------------------------------------------------------
# Metropolis blocks
# --------------------------------------------------------------------------


def shrinkage_log_target(log_lam, A, c, d, K):
    """Log density of ``u = ln(lambda)`` under the shrinkage full conditional.

    The conditional of ``lambda`` is proportional to
    ``lambda**(c - 1 - K/2) * exp(-d*lambda - A/lambda)``; the Jacobian of the
    log transform adds one to the power.
    """
    return (c - 0.5 * K) * log_lam - d * np.exp(log_lam) - A * np.exp(-log_lam)


def shrinkage_scale(state: ChainState) -> np.ndarray:
    """``A_j = sum_k (mu_kj - mu_j)**2 / (2 sigma_j**2)``."""
    dev = state.cluster_means - state.common_means
    return np.sum(dev * dev, axis=0) / (2.0 * state.variances)


def update_shrinkage(state: ChainState, hyper: Hyperparameters, rng, step=0.5):
    """Random-walk Metropolis on every ``ln(lambda_j)``; returns ``(state, accepted)``."""
    A = shrinkage_scale(state)
    u = np.log(state.shrinkage)
    u_new = u + step * rng.standard_normal(u.shape)
    log_ratio = (shrinkage_log_target(u_new, A, hyper.c, hyper.d, state.K)
                 - shrinkage_log_target(u, A, hyper.c, hyper.d, state.K))
    accepted = np.log(rng.random(u.shape)) < log_ratio
    lam = np.where(accepted, np.exp(u_new), state.shrinkage)
    return replace(state, shrinkage=lam), accepted


def _pois(gamma, n, s):
    """Poisson log-likelihood of one cluster from its size and count sum."""
    if n == 0:
        return s * gamma
    try:
        return s * gamma - n * math.exp(gamma)
    except OverflowError:
        return -math.inf


def _count_stats(state, data):
    if data is None:
        return [0.0] * state.K, [0.0] * state.K
    z = state.assignments
    n_k = np.bincount(z, minlength=state.K).astype(float)
    s_k = np.bincount(z, weights=data.counts, minlength=state.K)
    return n_k.tolist(), s_k.tolist()


def intercepts_log_target(gamma_base, increments, hyper: Hyperparameters, n_k, s_k) -> float:
    """Log posterior density (up to a constant) of ``(gamma_base, increments)``."""
    increments = np.asarray(increments, dtype=float)
    if np.any(increments <= 0):
        return -np.inf
    gamma = gamma_base + np.concatenate(([0.0], np.cumsum(increments)))
    prior = -0.5 * (gamma_base ** 2 + np.sum(increments ** 2)) / hyper.sigma0_sq
    return float(prior + sum(_pois(g, n, s) for g, n, s in zip(gamma, n_k, s_k)))


def update_intercepts(state: ChainState, data, hyper: Hyperparameters, rng, step=0.1):
    """Metropolis moves on the base intercept and on each log increment.

    Move 0 shifts every intercept by a Gaussian step; move ``k`` perturbs
    ``ln(eta_k)``, shifting intercepts ``k..K-1``.  Ordering is preserved by
    construction.  Returns ``(state, accepted)`` with one flag per move.
    """
    K = state.K
    n_k, s_k = _count_stats(state, data)
    steps = np.broadcast_to(np.asarray(step, dtype=float), (K,)).tolist()
    noise = rng.standard_normal(K).tolist()
    logu = np.log(rng.random(K)).tolist()
    accepted = np.zeros(K, dtype=bool)
    s0 = hyper.sigma0_sq

    base = state.gamma_base
    eta = [float(e) for e in state.increments]
    gamma = state.intercepts.tolist()
    cl = [_pois(g, n, s) for g, n, s in zip(gamma, n_k, s_k)]

    prop = base + steps[0] * noise[0]
    shift = prop - base
    cl_prop = [_pois(g + shift, n, s) for g, n, s in zip(gamma, n_k, s_k)]
    log_ratio = -0.5 * (prop * prop - base * base) / s0 + sum(cl_prop) - sum(cl)
    if logu[0] < log_ratio:
        gamma = [g + shift for g in gamma]
        base, cl = prop, cl_prop
        accepted[0] = True

    for k in range(1, K):
        old = eta[k - 1]
        v_step = steps[k] * noise[k]
        eta_new = old * math.exp(v_step)
        shift = eta_new - old
        cl_tail = [_pois(gamma[i] + shift, n_k[i], s_k[i]) for i in range(k, K)]
        # half-normal prior on eta plus the log-walk Jacobian
        log_ratio = (-0.5 * (eta_new * eta_new - old * old) / s0 + v_step
                     + sum(cl_tail) - sum(cl[k:]))
        if logu[k] < log_ratio and eta_new > 0:
            eta[k - 1] = eta_new
            for i in range(k, K):
                gamma[i] += shift
            cl[k:] = cl_tail
            accepted[k] = True

    return replace(state, gamma_base=float(base), increments=np.array(eta)), accepted


def update_labels(state: ChainState, data, hyper: Hyperparameters, prior: WeightPrior, rng):
    """Metropolis label exchange between every pair of clusters.

    A move swaps the assignments, cluster means and weights of clusters
    ``k`` and ``k'`` while the ordered intercepts stay in place, so the
    count level attached to each covariate profile changes.  The map is an
    involution with unit Jacobian and the covariate part of the target is
    exchangeable, so the ratio only involves the Poisson likelihood and the
    weight prior.  This lets the chain leave modes where profiles sit under
    the wrong intercept, which single-site moves cannot do under the order
    constraint.  Returns ``(state, accepted)`` with one flag per pair.
    """
    K = state.K
    pairs = [(a, b) for a in range(K) for b in range(a + 1, K)]
    accepted = np.zeros(len(pairs), dtype=bool)
    logu = np.log(rng.random(len(pairs))).tolist()
    if data is None or not pairs:
        return state, accepted
    n_k, s_k = _count_stats(state, data)
    gamma = state.intercepts.tolist()
    alpha = hyper.alpha
    perm = list(range(K))
    w = state.weights.tolist()
    logits = None if state.logit_weights is None else state.logit_weights.copy()
    for i, (a, b) in enumerate(pairs):
        ga, gb = gamma[a], gamma[b]
        delta = (_pois(ga, n_k[b], s_k[b]) + _pois(gb, n_k[a], s_k[a])
                 - _pois(ga, n_k[a], s_k[a]) - _pois(gb, n_k[b], s_k[b]))
        if prior.kind == "logit":
            new_logits = logits.copy()
            new_logits[[a, b]] = logits[[b, a]]
            new_logits -= new_logits[0]
            if prior.order_logits and np.any(np.diff(new_logits) < 0):
                continue
            delta += -0.5 * (np.sum(new_logits[1:] ** 2) - np.sum(logits[1:] ** 2)) / prior.logit_sd ** 2
        elif alpha[a] != alpha[b]:
            delta += (alpha[a] - alpha[b]) * (math.log(w[b]) - math.log(w[a]))
        if logu[i] < delta:
            accepted[i] = True
            for arr in (perm, n_k, s_k, w):
                arr[a], arr[b] = arr[b], arr[a]
            if logits is not None:
                logits = new_logits
    if not accepted.any():
        return state, accepted
    perm = np.array(perm)
    # new label of each old cluster
    relabel = np.empty(K, dtype=np.int64)
    relabel[perm] = np.arange(K)
    weights = np.array(w) if logits is None else _normalize_simplex(softmax(logits))
    return replace(
        state,
        weights=weights,
        logit_weights=logits,
        cluster_means=state.cluster_means[perm],
        assignments=relabel[state.assignments],
    ), accepted


# --------------------------------------------------------------------------
# Prior draws and initialisation
# --------------------------------------------------------------------------


def sample_prior(spec: ModelSpec, n: int, P: int, rng) -> ChainState:
    """Draw a complete state from the joint prior.

    Needs a proper prior on the common means (``hyper.common_mean_var``).
    """
    hyper, K = spec.hyper, spec.K
    if hyper.common_mean_var is None:
        raise ConfigError("the flat common-mean prior cannot be sampled; set common_mean_var")
    lam = rng.gamma(hyper.c, 1.0 / hyper.d, size=P)
    sigma2 = hyper.s / rng.standard_gamma(hyper.r, size=P)
    mu_j = math.sqrt(hyper.common_mean_var) * rng.standard_normal(P)
    mu_k = mu_j + np.sqrt(sigma2 * lam) * rng.standard_normal((K, P))
    base = math.sqrt(hyper.sigma0_sq) * rng.standard_normal()
    eta = np.abs(math.sqrt(hyper.sigma0_sq) * rng.standard_normal(K - 1))
    logits = None
    if spec.weight_prior.kind == "logit":
        logits = np.concatenate(([0.0], spec.weight_prior.logit_sd * rng.standard_normal(K - 1)))
        if spec.weight_prior.order_logits:
            # rejection from the unrestricted prior
            while np.any(np.diff(logits) < 0):
                logits[1:] = spec.weight_prior.logit_sd * rng.standard_normal(K - 1)
        w = softmax(logits)
    else:
        w = rng.dirichlet(hyper.alpha)
    w = _normalize_simplex(w)
    z = rng.choice(K, size=n, p=w)
    return ChainState(w, mu_k, mu_j, lam, sigma2, float(base), eta, z, logits)


def initial_state(spec: ModelSpec, data: Dataset) -> ChainState:
    """Deterministic warm start from equal-size count-rank bins.

    Subjects are sorted by count (ties by index) and split into ``K``
    contiguous bins, so bin labels ascend with count like the ordered
    intercepts.  Cluster means are the within-bin covariate means,
    variances the pooled within-bin variances, shrinkage one and the
    intercepts the log within-bin mean counts (floored at 0.1) made
    strictly increasing.
    """
    K, n, P = spec.K, data.n, data.P
    x, y = data.covariates, data.counts
    order = np.argsort(y, kind="stable")
    z = np.empty(n, dtype=np.int64)
    for k, idx in enumerate(np.array_split(order, K)):
        z[idx] = k
    sizes = np.bincount(z, minlength=K).astype(float)
    grand = x.mean(axis=0)
    mu_k = np.tile(grand, (K, 1))
    counts_mean = np.full(K, max(y.mean(), 0.1))
    for k in range(K):
        if sizes[k] > 0:
            mu_k[k] = x[z == k].mean(axis=0)
            counts_mean[k] = y[z == k].mean()
    resid = x - mu_k[z]
    if n > K:
        sigma2 = np.sum(resid * resid, axis=0) / (n - K)
    else:
        sigma2 = x.var(axis=0)
    sigma2 = np.where(sigma2 > 0, sigma2, 1.0)

    gamma = np.maximum.accumulate(np.log(np.maximum(counts_mean, 0.1)))
    eta = np.maximum(np.diff(gamma), MIN_INCREMENT)
    if np.all(sizes > 0):
        w = sizes / n
    else:
        w = (sizes + 1.0) / (n + K)
    logits = None
    if spec.weight_prior.kind == "logit":
        logits = np.log(w / w[0])
        if spec.weight_prior.order_logits:
            logits = np.maximum.accumulate(logits)
            w = softmax(logits)
    return ChainState(
        weights=_normalize_simplex(w),
        cluster_means=mu_k,
        common_means=mu_k.mean(axis=0),
        shrinkage=np.ones(P),
        variances=sigma2,
        gamma_base=float(gamma[0]),
        increments=eta,
        assignments=z,
        logit_weights=logits,
    )


# --------------------------------------------------------------------------
# Chain driver
# --------------------------------------------------------------------------


class _Adapter:
    """Batch-wise step-size tuning towards ``TARGET_ACCEPT``; frozen after burn-in."""

    def __init__(self, initial, size):
        self.log_step = np.full(size, math.log(initial))
        self.batch_hits = np.zeros(size)
        self.batch_len = 0
        self.n_batches = 0
        self.hits = np.zeros(size)
        self.trials = 0

    @property
    def step(self):
        return np.exp(self.log_step)

    def record(self, accepted, adapting):
        if adapting:
            self.batch_hits += accepted
            self.batch_len += 1
            if self.batch_len == ADAPT_BATCH:
                self.n_batches += 1
                delta = min(0.1, 1.0 / math.sqrt(self.n_batches))
                rate = self.batch_hits / ADAPT_BATCH
                self.log_step += np.where(rate > TARGET_ACCEPT, delta, -delta)
                self.batch_hits[:] = 0
                self.batch_len = 0
        else:
            self.hits += accepted
            self.trials += 1

    def rates(self):
        if self.trials == 0:
            return np.full(self.hits.shape, np.nan)
        return self.hits / self.trials


def sweep(state, data, spec: ModelSpec, streams, steps, order=DEFAULT_ORDER):
    """One full pass over the blocks in ``order``.

    ``steps`` maps ``"lambda"``, ``"gamma"`` and ``"logit"`` to step-size
    arrays.  Returns the new state and a dict of acceptance flags.
    """
    hyper, prior = spec.hyper, spec.weight_prior
    acc = {}
    for block in order:
        rng = streams[block]
        if block == "z":
            state = update_assignments(state, data, rng)
        elif block == "pi":
            if prior.kind == "logit":
                state, acc["logit"] = update_logit_weights(state, prior, rng, data, steps["logit"])
            else:
                state = update_weights(state, hyper, prior, rng, data)
        elif block == "mu_k":
            state = update_cluster_means(state, data, rng)
        elif block == "mu_j":
            state = update_common_means(state, hyper, rng)
        elif block == "sigma2":
            state = update_variances(state, hyper, rng, data)
        elif block == "lambda":
            state, acc["lambda"] = update_shrinkage(state, hyper, rng, steps["lambda"])
        elif block == "gamma":
            state, acc["gamma"] = update_intercepts(state, data, hyper, rng, steps["gamma"])
            state, acc["swap"] = update_labels(state, data, hyper, prior, rng)
        else:
            raise StructureError(f"unknown sweep block {block!r}")
    return state, acc


def run_chain(spec: ModelSpec, data: Dataset, schedule: McmcSchedule,
              order=DEFAULT_ORDER, init: ChainState | None = None) -> PosteriorSamples:
    """Run one seeded chain and return the retained post-burn-in draws.

    The output is bitwise reproducible for a fixed seed.

    Raises
    ------
    NumericalError
        If a log-likelihood becomes non-finite; carries the sweep index.
    """
    if sorted(order) != sorted(BLOCKS):
        raise StructureError(f"sweep order must be a permutation of {BLOCKS}")
    K, P, n = spec.K, data.P, data.n
    streams = make_streams(schedule.seed)
    state = initial_state(spec, data) if init is None else init
    state.check(n)

    adapters = {
        "lambda": _Adapter(schedule.mh_step_lambda, P),
        "gamma": _Adapter(schedule.mh_step_gamma, K),
    }
    swap = _Adapter(1.0, K * (K - 1) // 2)
    if spec.weight_prior.kind == "logit":
        adapters["logit"] = _Adapter(schedule.mh_step_logit, K - 1)

    T = schedule.n_retained
    z_dtype = np.int8 if K <= 127 else np.int16
    out = dict(
        weights=np.empty((T, K)),
        cluster_means=np.empty((T, K, P)),
        common_means=np.empty((T, P)),
        shrinkage=np.empty((T, P)),
        variances=np.empty((T, P)),
        gamma_base=np.empty(T),
        increments=np.empty((T, K - 1)),
        assignments=np.empty((T, n), dtype=z_dtype),
    )
    logits = np.empty((T, K)) if spec.weight_prior.kind == "logit" else None

    total = schedule.burn_in + schedule.n_iter
    t = 0
    for it in range(total):
        burning = it < schedule.burn_in
        steps = {name: a.step for name, a in adapters.items()}
        try:
            state, acc = sweep(state, data, spec, streams, steps, order)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it) from None
        swapped = acc.pop("swap")
        if not burning:
            swap.record(swapped, adapting=False)
        for name, flags in acc.items():
            adapters[name].record(flags, burning and schedule.adapt_during_burnin)
        if burning or (it - schedule.burn_in + 1) % schedule.thin:
            continue
        out["weights"][t] = state.weights
        out["cluster_means"][t] = state.cluster_means
        out["common_means"][t] = state.common_means
        out["shrinkage"][t] = state.shrinkage
        out["variances"][t] = state.variances
        out["gamma_base"][t] = state.gamma_base
        out["increments"][t] = state.increments
        out["assignments"][t] = state.assignments
        if logits is not None:
            logits[t] = state.logit_weights
        t += 1

    gamma = np.empty((T, K))
    gamma[:, 0] = out["gamma_base"]
    gamma[:, 1:] = out["gamma_base"][:, None] + np.cumsum(out["increments"], axis=1)
    loglik = observed_loglik_batch(out["weights"], out["cluster_means"], out["variances"], gamma, data)
    bad = np.flatnonzero(~np.isfinite(loglik))
    if bad.size:
        it = schedule.burn_in + (int(bad[0]) + 1) * schedule.thin - 1
        raise NumericalError("observed log-likelihood is not finite", iteration=it)

    meta = {
        "seed": int(schedule.seed),
        "K": K,
        "n": n,
        "burn_in": schedule.burn_in,
        "n_iter": schedule.n_iter,
        "thin": schedule.thin,
        "order": list(order),
        "weight_prior": spec.weight_prior.kind,
        "acceptance": {name: a.rates().tolist() for name, a in adapters.items()},
        "swap_acceptance": swap.rates().tolist(),
        "step_sizes": {name: a.step.tolist() for name, a in adapters.items()},
    }
    return PosteriorSamples(
        **out,
        observed_loglik=loglik,
        logit_weights=logits,
        variable_names=data.variable_names,
        center=data.center,
        scale=data.scale,
        meta=meta,
    )
