"""Domain types, densities and likelihoods for the Gaussian/Poisson profile mixture.

Each subject contributes a vector of ``P`` continuous covariates and one
count.  Given cluster ``k`` the covariates are independent Gaussians with
cluster-specific means and variances shared by all clusters, and the count is
Poisson with mean ``exp(gamma_k)``.  The cluster intercepts ``gamma`` are
stored as a base value plus nonnegative increments, so they are nondecreasing
by construction and cluster 0 is always the lowest-count cluster.

Cluster labels are 0-based throughout the library; the command line
front end reports them 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .errors import DataError, DomainError, StructureError

LOG_2PI = float(np.log(2.0 * np.pi))


# --------------------------------------------------------------------------
# Densities
# --------------------------------------------------------------------------


def gaussian_logpdf(x, mean, variance):
    """Log density of a univariate normal, broadcasting over arrays.

    Raises
    ------
    DomainError
        If any variance is not strictly positive.
    """
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise DomainError("variance must be strictly positive")
    resid = np.asarray(x, dtype=float) - mean
    out = -0.5 * (LOG_2PI + np.log(variance)) - resid * resid / (2.0 * variance)
    return out if np.ndim(out) else float(out)


def poisson_logpmf(y, theta):
    """Log probability mass of a Poisson count, with ``ln(y!)`` from log-gamma."""
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0)):
        raise DomainError("Poisson mean must be strictly positive")
    y = np.asarray(y)
    if np.any(y < 0):
        raise DomainError("counts must be nonnegative")
    out = y * np.log(theta) - theta - gammaln(y + 1.0)
    return out if np.ndim(out) else float(out)


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariate matrix plus one count outcome per subject.

    Parameters
    ----------
    covariates : ndarray, shape (n, P)
    counts : ndarray of int, shape (n,)
    variable_names : tuple of str, length P
    count_name : str
        Column name of the outcome, used when writing the data back out.
    center, scale : ndarray, shape (P,), optional
        Set when the covariates were standardized; the original value of
        entry ``x`` in column ``j`` is ``center[j] + scale[j] * x``.
    """

    covariates: np.ndarray
    counts: np.ndarray
    variable_names: tuple = None
    count_name: str = "y"
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise StructureError("covariates must be a 2-D array")
        n, p = x.shape
        if n < 1 or p < 1:
            raise DataError("need at least one subject and one covariate")
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"missing or non-finite covariate at row {i}, column {j}")

        y_raw = np.asarray(self.counts)
        if y_raw.shape != (n,):
            raise StructureError(f"counts must have shape ({n},), got {y_raw.shape}")
        if y_raw.dtype.kind == "f":
            if not np.all(np.isfinite(y_raw)) or np.any(y_raw != np.round(y_raw)):
                raise DataError("counts must be integers")
        elif y_raw.dtype.kind not in "iu":
            raise DataError("counts must be integers")
        y = y_raw.astype(np.int64)
        if np.any(y < 0):
            raise DataError(f"negative count at row {int(np.argmax(y < 0))}")

        names = self.variable_names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(p))
        names = tuple(str(s) for s in names)
        if len(names) != p:
            raise StructureError(f"expected {p} variable names, got {len(names)}")

        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "counts", y)
        object.__setattr__(self, "variable_names", names)
        for attr in ("center", "scale"):
            val = getattr(self, attr)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != (p,):
                    raise StructureError(f"{attr} must have shape ({p},)")
                object.__setattr__(self, attr, val)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def P(self) -> int:
        return self.covariates.shape[1]

    @property
    def standardized_flag(self) -> bool:
        return self.center is not None

    @cached_property
    def log_factorial(self) -> np.ndarray:
        return gammaln(self.counts + 1.0)

    @cached_property
    def covariates_sq(self) -> np.ndarray:
        return self.covariates * self.covariates

    def standardize(self) -> "Dataset":
        """Return a copy with each covariate centred and scaled to unit SD."""
        if self.standardized_flag:
            return self
        center = self.covariates.mean(axis=0)
        if self.n > 1:
            scale = self.covariates.std(axis=0, ddof=1)
        else:
            scale = np.ones(self.P)
        scale = np.where(scale > 0, scale, 1.0)
        return Dataset(
            (self.covariates - center) / scale,
            self.counts,
            self.variable_names,
            self.count_name,
            center=center,
            scale=scale,
        )

    def original_covariates(self) -> np.ndarray:
        if not self.standardized_flag:
            return self.covariates
        return self.center + self.scale * self.covariates


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparameters:
    """Prior hyperparameters.

    ``c``/``d`` are the Gamma shape/rate of each shrinkage factor, ``r``/``s``
    the Inverse-Gamma shape/scale of each covariate variance, ``sigma0_sq``
    the prior variance of the base intercept and of the (half-normal)
    intercept increments, and ``alpha`` the Dirichlet concentration.

    ``common_mean_var`` is the prior variance of each common mean; ``None``
    gives the improper flat prior used for fitting.  A finite value makes
    the joint prior proper, which the prior-sampling checks need.
    """

    alpha: tuple
    c: float = 0.5
    d: float = 0.5
    r: float = 0.1
    s: float = 0.1
    sigma0_sq: float = 10.0
    common_mean_var: float | None = None

    def __post_init__(self):
        alpha = tuple(float(a) for a in np.atleast_1d(self.alpha))
        object.__setattr__(self, "alpha", alpha)
        for name in ("c", "d", "r", "s", "sigma0_sq"):
            if not getattr(self, name) > 0:
                raise DomainError(f"hyperparameter {name} must be > 0")
        if len(alpha) < 1 or not all(a > 0 for a in alpha):
            raise DomainError("Dirichlet concentrations must be > 0")
        if self.common_mean_var is not None and not self.common_mean_var > 0:
            raise DomainError("common_mean_var must be > 0 or None")

    @classmethod
    def default(cls, K: int, **kwargs) -> "Hyperparameters":
        return cls(alpha=(1.0,) * K, **kwargs)

    @property
    def K(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True, eq=False)
class ChainState:
    """One full parameter configuration of the mixture.

    Attributes
    ----------
    weights : ndarray (K,)
        Mixture weights on the open simplex.
    cluster_means : ndarray (K, P)
    common_means : ndarray (P,)
    shrinkage : ndarray (P,)
        Prior-variance multipliers of the cluster means around the common means.
    variances : ndarray (P,)
    gamma_base : float
        Log Poisson mean of cluster 0.
    increments : ndarray (K-1,)
        Strictly positive gaps between successive log Poisson means.
    assignments : ndarray of int (n,)
        0-based cluster labels.
    logit_weights : ndarray (K,), optional
        Unnormalized log weights when the multinomial-logit weight prior is
        used; entry 0 is pinned at zero.
    """

    weights: np.ndarray
    cluster_means: np.ndarray
    common_means: np.ndarray
    shrinkage: np.ndarray
    variances: np.ndarray
    gamma_base: float
    increments: np.ndarray
    assignments: np.ndarray
    logit_weights: np.ndarray | None = field(default=None)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def P(self) -> int:
        return self.cluster_means.shape[1]

    @property
    def intercepts(self) -> np.ndarray:
        gamma = np.empty(self.K)
        gamma[0] = self.gamma_base
        gamma[1:] = self.gamma_base + np.cumsum(self.increments)
        return gamma

    @property
    def poisson_means(self) -> np.ndarray:
        return np.exp(self.intercepts)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)

    def check(self, n: int | None = None) -> None:
        """Raise ``StructureError`` if any state invariant is violated."""
        K, P = self.K, self.P
        shapes = {
            "cluster_means": (self.cluster_means.shape, (K, P)),
            "common_means": (self.common_means.shape, (P,)),
            "shrinkage": (self.shrinkage.shape, (P,)),
            "variances": (self.variances.shape, (P,)),
            "increments": (np.shape(self.increments), (K - 1,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise StructureError(f"{name} has shape {got}, expected {want}")
        if n is not None and self.assignments.shape != (n,):
            raise StructureError(f"assignments have shape {self.assignments.shape}, expected ({n},)")
        if abs(self.weights.sum() - 1.0) >= 1e-12:
            raise StructureError("weights do not sum to one")
        if not np.all((self.weights > 0) & (self.weights < 1)) and K > 1:
            raise StructureError("weights must lie strictly inside (0, 1)")
        if not (np.all(self.shrinkage > 0) and np.all(self.variances > 0)):
            raise StructureError("shrinkage and variances must be positive")
        if not np.all(self.increments > 0):
            raise StructureError("intercept increments must be positive")
        if np.any(np.diff(self.intercepts) < 0):
            raise StructureError("intercepts are not nondecreasing")
        if self.assignments.size and (self.assignments.min() < 0 or self.assignments.max() >= K):
            raise StructureError("assignment label out of range")


@dataclass(eq=False)
class PosteriorSamples:
    """Retained draws of a chain, stacked along the first axis.

    Arrays have a leading axis of length ``T`` (number of retained sweeps).
    ``meta`` holds the seed, schedule, per-block acceptance rates and the
    final Metropolis step sizes.
    """

    weights: np.ndarray          # (T, K)
    cluster_means: np.ndarray    # (T, K, P)
    common_means: np.ndarray     # (T, P)
    shrinkage: np.ndarray        # (T, P)
    variances: np.ndarray        # (T, P)
    gamma_base: np.ndarray       # (T,)
    increments: np.ndarray       # (T, K-1)
    assignments: np.ndarray      # (T, n)
    observed_loglik: np.ndarray  # (T,)
    logit_weights: np.ndarray | None = None
    variable_names: tuple = ()
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, t: int) -> ChainState:
        return ChainState(
            weights=self.weights[t],
            cluster_means=self.cluster_means[t],
            common_means=self.common_means[t],
            shrinkage=self.shrinkage[t],
            variances=self.variances[t],
            gamma_base=float(self.gamma_base[t]),
            increments=self.increments[t],
            assignments=self.assignments[t].astype(np.int64),
            logit_weights=None if self.logit_weights is None else self.logit_weights[t],
        )

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    @property
    def P(self) -> int:
        return self.cluster_means.shape[2]

    @property
    def intercepts(self) -> np.ndarray:
        T, K = self.weights.shape
        gamma = np.empty((T, K))
        gamma[:, 0] = self.gamma_base
        gamma[:, 1:] = self.gamma_base[:, None] + np.cumsum(self.increments, axis=1)
        return gamma

    @property
    def poisson_means(self) -> np.ndarray:
        return np.exp(self.intercepts)

    @classmethod
    def from_states(cls, states, loglik, **kwargs) -> "PosteriorSamples":
        """Stack a sequence of ``ChainState`` objects."""
        states = list(states)
        if not states:
            raise StructureError("no states to stack")
        logit = None
        if states[0].logit_weights is not None:
            logit = np.stack([s.logit_weights for s in states])
        return cls(
            weights=np.stack([s.weights for s in states]),
            cluster_means=np.stack([s.cluster_means for s in states]),
            common_means=np.stack([s.common_means for s in states]),
            shrinkage=np.stack([s.shrinkage for s in states]),
            variances=np.stack([s.variances for s in states]),
            gamma_base=np.array([s.gamma_base for s in states], dtype=float),
            increments=np.stack([np.asarray(s.increments, dtype=float) for s in states]).reshape(len(states), -1),
            assignments=np.stack([s.assignments for s in states]),
            observed_loglik=np.asarray(loglik, dtype=float),
            logit_weights=logit,
            **kwargs,
        )

    def to_original_means(self) -> np.ndarray:
        """Cluster means on the covariates' original scale."""
        if self.center is None:
            return self.cluster_means
        return self.center + self.scale * self.cluster_means

    def to_original_variances(self) -> np.ndarray:
        if self.center is None:
            return self.variances
        return self.variances * self.scale ** 2


# --------------------------------------------------------------------------
# Likelihoods
# --------------------------------------------------------------------------


def _check_dims(state: ChainState, data: Dataset, need_z: bool) -> None:
    if state.P != data.P:
        raise StructureError(f"state has {state.P} covariates, data has {data.P}")
    if state.increments.shape != (state.K - 1,):
        raise StructureError("increments must have length K-1")
    if need_z and state.assignments.shape != (data.n,):
        raise StructureError(f"state has {state.assignments.shape[0]} assignments, data has {data.n} subjects")


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Log-sum-exp over the last axis; rows that are all ``-inf`` give ``-inf``."""
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=-1)) + m[..., 0]


def covariate_loglik(x, cluster_means, variances, weights=None, x_sq=None):
    """Per-subject, per-cluster Gaussian log density of covariate rows.

    Parameters
    ----------
    x : ndarray (n, P)
    cluster_means : ndarray (K, P)
    variances : ndarray (P,)
    weights : ndarray (P,), optional
        Multiplies each variable's log density; a 0 weight drops the variable.
    x_sq : ndarray (n, P), optional
        Precomputed ``x * x``.

    Returns
    -------
    ndarray (n, K)
    """
    x = np.asarray(x, dtype=float)
    prec = 1.0 / np.asarray(variances, dtype=float)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        prec = prec * w
        const = -0.5 * np.sum(w * (LOG_2PI + np.log(variances)))
    else:
        const = -0.5 * np.sum(LOG_2PI + np.log(variances))
    # expanded quadratic form: sum_j (x_j - mu_kj)^2 / sigma_j^2
    if x_sq is None:
        x_sq = x * x
    quad = (x_sq @ prec)[:, None] - 2.0 * (x @ (cluster_means * prec).T) \
        + np.sum(cluster_means * cluster_means * prec, axis=1)[None, :]
    return const - 0.5 * quad


def component_loglik(state: ChainState, data: Dataset) -> np.ndarray:
    """``(n, K)`` matrix of ``ln N(x_i | mu_k, Sigma) + ln Po(y_i | exp(gamma_k))``."""
    _check_dims(state, data, need_z=False)
    gamma = state.intercepts
    pois = data.counts[:, None] * gamma[None, :] - np.exp(gamma)[None, :] - data.log_factorial[:, None]
    return covariate_loglik(data.covariates, state.cluster_means, state.variances) + pois


def complete_loglik(state: ChainState, data: Dataset) -> float:
    """Log-likelihood of data and assignments given the state's parameters."""
    _check_dims(state, data, need_z=True)
    comp = component_loglik(state, data)
    z = state.assignments
    return float(np.sum(np.log(state.weights[z]) + comp[np.arange(data.n), z]))


def observed_loglik(state: ChainState, data: Dataset) -> float:
    """Mixture log-likelihood with assignments summed out (log-sum-exp per subject)."""
    _check_dims(state, data, need_z=False)
    comp = component_loglik(state, data)
    return float(np.sum(logsumexp_rows(comp + np.log(state.weights)[None, :])))


def observed_loglik_batch(weights, cluster_means, variances, intercepts, data: Dataset,
                          chunk: int = 512) -> np.ndarray:
    """Observed log-likelihood of many parameter sets at once.

    Arrays carry a leading draw axis ``T``; returns shape ``(T,)``.
    """
    x, y = data.covariates, data.counts
    x2 = x * x
    T = weights.shape[0]
    out = np.empty(T)
    for lo in range(0, T, chunk):
        sl = slice(lo, min(lo + chunk, T))
        prec = 1.0 / variances[sl]                                   # (t, P)
        mu = cluster_means[sl]                                       # (t, K, P)
        const = -0.5 * np.sum(LOG_2PI + np.log(variances[sl]), axis=1)
        quad = ((x2 @ prec.T).T[:, :, None]
                - 2.0 * np.einsum("ip,tkp->tik", x, mu * prec[:, None, :])
                + np.sum(mu * mu * prec[:, None, :], axis=2)[:, None, :])
        gamma = intercepts[sl]
        pois = y[None, :, None] * gamma[:, None, :] - np.exp(gamma)[:, None, :] - data.log_factorial[None, :, None]
        with np.errstate(divide="ignore"):
            logw = np.log(weights[sl])[:, None, :]
        comp = const[:, None, None] - 0.5 * quad + pois + logw
        out[sl] = logsumexp_rows(comp).sum(axis=1)
    return out
