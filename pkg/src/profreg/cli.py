"""Command-line front end: ``profreg {fit,select,predict,ppc,simulate}``.

Configuration comes from an optional flat ``key = value`` file; command-line
flags and ``--set key=value`` overrides win over the file.  Every stochastic
command needs an explicit seed.  Exit status is 0 on success, 2 for
input/config errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import GenerativeTruth, generate, benchmark_truth
from .errors import ConfigError, NumericalError, ProfregError
from .inference import (
    compute_ic,
    membership_posterior,
    odds_from_probabilities,
    posterior_predictive,
    profile_report,
    select_k,
)
from .io import (
    dump_json,
    load_samples,
    read_config,
    read_dataset,
    read_profiles,
    save_samples,
    sha256_file,
    write_csv,
    write_dataset,
)
from .model import Hyperparameters
from .sampler import McmcSchedule, ModelSpec, WeightPrior, make_streams, run_chain

log = logging.getLogger("profreg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
DENSITY_BINS = 50


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_k_range(text) -> tuple:
    """``"2-4"`` or ``"2,3,4"`` to a sorted tuple of ints."""
    s = str(text).replace(" ", "")
    try:
        if "-" in s:
            lo, hi = (int(p) for p in s.split("-", 1))
            ks = tuple(range(lo, hi + 1))
        else:
            ks = tuple(sorted({int(p) for p in s.split(",") if p}))
    except ValueError:
        raise ConfigError(f"bad K range {text!r}") from None
    if not ks or ks[0] < 1:
        raise ConfigError(f"K range {text!r} is empty or not positive")
    return ks


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    count_column: str = "y"
    covariates: str = "all"
    standardize: bool = False
    k: int | None = None
    k_range: str | None = None
    c: float = 0.5
    d: float = 0.5
    r: float = 0.1
    s: float = 0.1
    sigma0_sq: float = 10.0
    alpha: str = "1"
    weight_prior: str = "dirichlet"
    logit_sd: float = 1.0
    order_logits: bool = False
    burn_in: int = 10_000
    n_iter: int = 100_000
    thin: int = 1
    seed: int | None = None
    mh_step_lambda: float = 0.5
    mh_step_gamma: float = 0.1
    mh_step_logit: float = 0.2
    adapt: bool = True
    out: str | None = None
    fitted: str | None = None
    n_rep: int | None = None
    null_variables: str = ""
    n: int | None = None
    truth: str | None = None

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = known[key].default
            typ = known[key].type
            try:
                if "bool" in typ:
                    kwargs[key] = _bool(raw)
                elif "int" in typ:
                    kwargs[key] = int(raw)
                elif "float" in typ:
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = str(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r} (default {default!r})") from None
        return cls(**kwargs)

    def identity(self) -> dict:
        """Every setting that affects results; the output location is excluded."""
        d = asdict(self)
        d.pop("out")
        return d

    def canonical(self) -> str:
        return "\n".join(f"{k}={'' if v is None else v}" for k, v in sorted(self.identity().items()))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"{name.replace('_', '-')} is required")

    def covariate_list(self):
        if self.covariates.strip().lower() in ("", "all"):
            return None
        return [c.strip() for c in self.covariates.split(",") if c.strip()]

    def hyper(self, K: int) -> Hyperparameters:
        parts = [float(a) for a in self.alpha.split(",") if a.strip()]
        if len(parts) == 1:
            parts = parts * K
        if len(parts) != K:
            raise ConfigError(f"alpha has {len(parts)} entries, expected 1 or K={K}")
        return Hyperparameters(alpha=tuple(parts), c=self.c, d=self.d, r=self.r, s=self.s,
                               sigma0_sq=self.sigma0_sq)

    def prior(self) -> WeightPrior:
        return WeightPrior(self.weight_prior, self.logit_sd, self.order_logits)

    def schedule(self) -> McmcSchedule:
        self.require("seed")
        return McmcSchedule(seed=self.seed, burn_in=self.burn_in, n_iter=self.n_iter, thin=self.thin,
                            mh_step_lambda=self.mh_step_lambda, mh_step_gamma=self.mh_step_gamma,
                            mh_step_logit=self.mh_step_logit, adapt_during_burnin=self.adapt)

    def load_data(self):
        self.require("input")
        return read_dataset(self.input, self.count_column, self.covariate_list(), self.standardize)


# --------------------------------------------------------------------------
# Artifacts
# --------------------------------------------------------------------------


def _trace_rows(samples):
    K, P = samples.K, samples.P
    names = samples.variable_names
    header = (["iteration", "observed_loglik"]
              + [f"pi_{k + 1}" for k in range(K)]
              + [f"gamma_{k + 1}" for k in range(K)]
              + [f"lambda_{v}" for v in names]
              + [f"sigma2_{v}" for v in names]
              + [f"mu_j_{v}" for v in names]
              + [f"mu_{k + 1}_{v}" for k in range(K) for v in names])
    meta = samples.meta
    iters = meta["burn_in"] + (np.arange(len(samples)) + 1) * meta["thin"]
    block = np.column_stack([
        samples.observed_loglik, samples.weights, samples.intercepts, samples.shrinkage,
        samples.variances, samples.common_means, samples.cluster_means.reshape(len(samples), K * P),
    ])
    rows = ([int(it), *vals] for it, vals in zip(iters, block.tolist()))
    return header, rows


def _fit_outputs(samples, data, cfg: RunConfig, out: Path):
    """Compute every fit artifact, then write them."""
    report = profile_report(samples, data)
    ic = compute_ic(samples, data)
    K, names = samples.K, samples.variable_names
    cm = report.cluster_means

    profile_rows = [(names[j], k + 1, cm.mean[k, j], cm.sd[k, j], cm.lower[k, j], cm.upper[k, j])
                    for j in range(data.P) for k in range(K)]
    pm, w = report.poisson_means, report.weights
    cluster_rows = [(k + 1, w.mean[k], w.sd[k], w.lower[k], w.upper[k],
                     pm.mean[k], pm.sd[k], pm.lower[k], pm.upper[k]) for k in range(K)]
    dstar_rows = [(names[j], k + 1, k2 + 1, report.dstar[j, k, k2])
                  for j in range(data.P) for k in range(K) for k2 in range(K) if k != k2]
    relevance_rows = [(i + 1, r.name, r.median, r.q1, r.q3, r.whisker_lo, r.whisker_hi, r.mean)
                      for i, r in enumerate(report.relevance)]
    acc_rows = []
    for block, rates in samples.meta["acceptance"].items():
        steps = samples.meta["step_sizes"][block]
        acc_rows += [(block, i + 1, rate, step) for i, (rate, step) in enumerate(zip(rates, steps))]
    acc_rows += [("swap", i + 1, rate, "") for i, rate in enumerate(samples.meta["swap_acceptance"])]

    summary = {
        "config_hash": cfg.config_hash,
        "K": K,
        "n": data.n,
        "variables": list(names),
        "weights": {"mean": w.mean.tolist(), "sd": w.sd.tolist(), "lower": w.lower.tolist(), "upper": w.upper.tolist()},
        "poisson_means": {"mean": pm.mean.tolist(), "sd": pm.sd.tolist(), "lower": pm.lower.tolist(), "upper": pm.upper.tolist()},
        "cluster_means": {v: {"mean": cm.mean[:, j].tolist(), "sd": cm.sd[:, j].tolist(),
                              "lower": cm.lower[:, j].tolist(), "upper": cm.upper[:, j].tolist()}
                          for j, v in enumerate(names)},
        "variances": {v: {"mean": float(report.variances.mean[j]), "lower": float(report.variances.lower[j]),
                          "upper": float(report.variances.upper[j])} for j, v in enumerate(names)},
        "relevance_ascending": [r._asdict() for r in report.relevance],
        "information_criteria": {"deviance": ic.deviance, "nu": ic.nu_k, "aic": ic.aic, "bic": ic.bic,
                                 "plug_in": "posterior mean"},
        "standardized": report.standardized,
    }
    metadata = {
        "version": __version__,
        "command": "fit",
        "config": cfg.identity(),
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "input_sha256": sha256_file(cfg.input),
        "n": data.n,
        "P": data.P,
        "K": K,
        "variable_names": list(names),
        "count_column": data.count_name,
        "standardize": data.standardized_flag,
        "center": None if data.center is None else data.center.tolist(),
        "scale": None if data.scale is None else data.scale.tolist(),
        "observed_counts": data.counts.tolist(),
        "acceptance": samples.meta["acceptance"],
        "swap_acceptance": samples.meta["swap_acceptance"],
        "step_sizes": samples.meta["step_sizes"],
    }
    trace_header, trace_rows = _trace_rows(samples)

    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trace.csv", trace_header, trace_rows)
    write_csv(out / "profile.csv", ["variable", "cluster", "mean", "sd", "lower", "upper"], profile_rows)
    write_csv(out / "clusters.csv", ["cluster", "weight_mean", "weight_sd", "weight_lower", "weight_upper",
                                     "theta_mean", "theta_sd", "theta_lower", "theta_upper"], cluster_rows)
    write_csv(out / "dstar.csv", ["variable", "cluster", "other", "dstar"], dstar_rows)
    write_csv(out / "relevance.csv", ["rank", "variable", "median", "q1", "q3", "whisker_lo", "whisker_hi", "mean"],
              relevance_rows)
    write_csv(out / "acceptance.csv", ["block", "coordinate", "rate", "step"], acc_rows)
    dump_json(out / "summary.json", summary)
    dump_json(out / "metadata.json", metadata)
    save_samples(out / "samples.npz", samples, cfg.config_hash)
    _write_manifest(out, cfg.config_hash, ["trace.csv", "profile.csv", "clusters.csv", "dstar.csv",
                                           "relevance.csv", "acceptance.csv", "summary.json",
                                           "metadata.json", "samples.npz"])


def _write_manifest(out: Path, config_hash: str, names, extra=None):
    manifest = {"config_hash": config_hash, "files": {n: sha256_file(out / n) for n in names}}
    if extra:
        manifest.update(extra)
    dump_json(out / "manifest.json", manifest)


def _load_fitted(cfg: RunConfig):
    cfg.require("fitted")
    fitted = Path(cfg.fitted)
    try:
        metadata = json.loads((fitted / "metadata.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read fitted metadata in {fitted}: {exc}") from None
    samples, archive_hash = load_samples(fitted / "samples.npz")
    if archive_hash != metadata.get("config_hash"):
        raise ConfigError(f"{fitted}: samples.npz and metadata.json come from different runs "
                          f"(config hash {archive_hash[:12]} vs {str(metadata.get('config_hash'))[:12]})")
    return samples, metadata


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_fit(cfg: RunConfig) -> int:
    cfg.require("out", "k")
    data = cfg.load_data()
    spec = ModelSpec(cfg.k, cfg.hyper(cfg.k), cfg.prior())
    samples = run_chain(spec, data, cfg.schedule())
    _fit_outputs(samples, data, cfg, Path(cfg.out))
    log.info("fit K=%d written to %s", cfg.k, cfg.out)
    return EXIT_OK


def cmd_select(cfg: RunConfig) -> int:
    cfg.require("out")
    ks = parse_k_range(cfg.k_range) if cfg.k_range else (parse_k_range(str(cfg.k)) if cfg.k else None)
    if ks is None:
        raise ConfigError("k-range is required")
    if "," in cfg.alpha:
        raise ConfigError("select needs a scalar alpha, repeated for every K")
    data = cfg.load_data()
    sel = select_k(data, ks, cfg.schedule(), cfg.hyper(ks[0]), cfg.prior())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "criteria.csv", ["K", "deviance", "nu", "AIC", "BIC"],
              [(ic.k, ic.deviance, ic.nu_k, ic.aic, ic.bic) for ic in sel.criteria])
    dump_json(out / "selection.json", {"chosen_k": sel.chosen_k, "criterion": "BIC",
                                       "evaluated": [ic.k for ic in sel.criteria],
                                       "requested": list(ks), "config_hash": cfg.config_hash,
                                       "config": cfg.identity(), "plug_in": "posterior mean"})
    _write_manifest(out, cfg.config_hash, ["criteria.csv", "selection.json"])
    print(sel.chosen_k)
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    cfg.require("input", "out")
    samples, metadata = _load_fitted(cfg)
    names = list(samples.variable_names)
    ids, profiles = read_profiles(cfg.input, names)
    K = samples.K
    pairs = [(a, b) for a in range(K) for b in range(K) if a != b]
    header = (["patient"] + [f"prob_{k + 1}" for k in range(K)]
              + [f"odds_{a + 1}_{b + 1}" for a, b in pairs] + ["odds_degenerate"])
    rows, density_rows = [], []
    edges = np.linspace(0.0, 1.0, DENSITY_BINS + 1)
    for pid, x in zip(ids, profiles):
        mem = membership_posterior(samples, x)
        odds = [odds_from_probabilities(mem.probabilities, a, b) for a, b in pairs]
        rows.append([pid, *mem.probabilities, *(o.ratio for o in odds), any(o.degenerate for o in odds)])
        for k in range(K):
            dens, _ = np.histogram(mem.per_sample[:, k], bins=edges, density=True)
            density_rows += [(pid, k + 1, edges[b], edges[b + 1], dens[b]) for b in range(DENSITY_BINS)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "membership.csv", header, rows)
    write_csv(out / "membership_density.csv", ["patient", "cluster", "bin_lower", "bin_upper", "density"],
              density_rows)
    _write_manifest(out, metadata["config_hash"], ["membership.csv", "membership_density.csv"],
                    {"input_sha256": sha256_file(cfg.input)})
    return EXIT_OK


def cmd_ppc(cfg: RunConfig) -> int:
    cfg.require("out", "seed")
    samples, metadata = _load_fitted(cfg)
    n_rep = cfg.n_rep or int(metadata["n"])
    rng = make_streams(cfg.seed)["init"]
    ppc = posterior_predictive(samples, n_rep, rng)
    observed = np.sort(np.asarray(metadata.get("observed_counts", []), dtype=np.int64))
    obs_rank = observed if observed.size == n_rep else np.full(n_rep, np.nan)
    obs_freq = np.bincount(observed, minlength=ppc.count_values.size) if observed.size else None
    rank_rows = [(r + 1, ppc.rank_mean[r], ppc.rank_lower[r], ppc.rank_upper[r], obs_rank[r])
                 for r in range(n_rep)]
    freq_rows = [(int(v), ppc.freq_mean[i], ppc.freq_lower[i], ppc.freq_upper[i],
                  int(obs_freq[v]) if obs_freq is not None and v < obs_freq.size else 0)
                 for i, v in enumerate(ppc.count_values)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ppc_ranks.csv", ["rank", "mean", "lower", "upper", "observed"], rank_rows)
    write_csv(out / "ppc_freq.csv", ["count", "mean", "lower", "upper", "observed"], freq_rows)
    _write_manifest(out, metadata["config_hash"], ["ppc_ranks.csv", "ppc_freq.csv"],
                    {"ppc_seed": cfg.seed, "n_rep": n_rep})
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    cfg.require("out", "seed")
    if cfg.truth:
        try:
            d = json.loads(Path(cfg.truth).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read truth file {cfg.truth}: {exc}") from None
        d["seed"] = cfg.seed
        if cfg.n:
            d["n"] = cfg.n
        truth = GenerativeTruth.from_dict(d)
    else:
        nulls = tuple(int(v) - 1 for v in cfg.null_variables.split(",") if v.strip())
        kwargs = {"n": cfg.n} if cfg.n else {}
        truth = benchmark_truth(seed=cfg.seed, null_variables=nulls, **kwargs)
    data, z = generate(truth, count_name=cfg.count_column)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "data.csv", data)
    dump_json(out / "truth.json", {**truth.to_dict(), "assignments": (z + 1).tolist(),
                                   "count_column": cfg.count_column})
    _write_manifest(out, cfg.config_hash, ["data.csv", "truth.json"])
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "predict": cmd_predict, "ppc": cmd_ppc,
            "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="profreg", description="Bayesian profile regression for count outcomes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--input", help="input CSV (subjects for fit/select, profiles for predict)")
        p.add_argument("--seed", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--k-range", dest="k_range")
        p.add_argument("--standardize", action="store_true", default=None)
        p.add_argument("--out")
        p.add_argument("--fitted", help="directory written by a previous fit")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip().replace("-", "_").lower()] = value.strip()
    for key in ("input", "seed", "k", "k_range", "standardize", "out", "fitted"):
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    return RunConfig.from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ProfregError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
