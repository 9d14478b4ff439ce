"""Hierarchical-Bayes Gibbs sampler for the grouped model parameters.

The signal density is a K-component Gaussian mixture with common, fixed
variance ``sigma2``. Priors: ``pi1 ~ Beta(a1, b1)``, ``pi2 ~ Beta(a2, b2)``,
mixture weights ``~ Dirichlet(d)`` and component means ``~ N(0, sigma_mu2)``.
Point estimates are posterior medians over the retained draws.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    DensitySpec,
    GammParams,
    GroupedObservations,
    NumericalError,
    _log_lambda,
    _normal_logpdf,
    _table_from_log_star,
)

__all__ = [
    "GibbsConfig",
    "GibbsState",
    "ChainTrace",
    "PosteriorSummary",
    "pi_posterior",
    "mean_posterior",
    "weight_posterior",
    "initial_state",
    "gibbs_sweep",
    "gibbs_run",
    "posterior_medians",
    "trace_csv",
    "fit_then_test",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GibbsConfig:
    K: int = 2
    sigma2: float = 1.0
    a1: float = 1.0
    b1: float = 1.0
    a2: float = 1.0
    b2: float = 1.0
    d: tuple[float, ...] | None = None
    sigma_mu2: float = 100.0
    iters: int = 20000
    burn_in: int = 10000
    thin: int = 20
    chains: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        d = tuple(float(v) for v in (self.d if self.d is not None else (1.0,) * self.K))
        object.__setattr__(self, "d", d)
        if len(d) != self.K:
            raise ValueError("need one Dirichlet parameter per component")
        hyper = (self.sigma2, self.a1, self.b1, self.a2, self.b2, self.sigma_mu2, *d)
        if any(not v > 0 for v in hyper):
            raise ValueError("all hyperparameters must be positive")
        if not 0 <= self.burn_in < self.iters:
            raise ValueError("need 0 <= burn_in < iters")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be at least 1")

    @property
    def retained_per_chain(self) -> int:
        return (self.iters - self.burn_in) // self.thin


@dataclass
class GibbsState:
    theta_group: np.ndarray
    theta_cond: np.ndarray
    z: np.ndarray
    pi1: float
    pi2: float
    weights: np.ndarray
    means: np.ndarray


# ---------------------------------------------------------------------------
# conditional posteriors (exposed for direct checking)


def pi_posterior(theta_group, theta_cond, sizes, cfg: GibbsConfig):
    """Beta parameters ``((a, b) for pi1, (a, b) for pi2)`` given the latent states."""
    theta_group = np.asarray(theta_group, dtype=bool)
    theta_cond = np.asarray(theta_cond, dtype=bool)
    sizes = np.asarray(sizes)
    m = theta_group.size
    n_sig_groups = int(theta_group.sum())
    in_sig = np.repeat(theta_group, sizes)
    signals = int((theta_cond & in_sig).sum())
    members = int(sizes[theta_group].sum())
    return (
        (cfg.a1 + n_sig_groups, cfg.b1 + m - n_sig_groups),
        (cfg.a2 + signals, cfg.b2 + members - signals),
    )


def mean_posterior(x, signal, z, K: int, sigma2: float):
    """Per-component ``(mean, variance, count)`` of the component-mean update.

    Only signal-assigned observations enter. Components with no observations
    get ``nan`` mean/variance and fall back to the prior when sampled.
    """
    x = np.asarray(x, dtype=float)
    signal = np.asarray(signal, dtype=bool)
    z = np.asarray(z)
    counts = np.bincount(z[signal], minlength=K).astype(float)
    sums = np.bincount(z[signal], weights=x[signal], minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / counts, np.nan)
        var = np.where(counts > 0, sigma2 / counts, np.nan)
    return mean, var, counts


def weight_posterior(signal, z, K: int, d):
    """Dirichlet parameters of the mixture-weight update."""
    signal = np.asarray(signal, dtype=bool)
    counts = np.bincount(np.asarray(z)[signal], minlength=K)
    return np.asarray(d, dtype=float) + counts


# ---------------------------------------------------------------------------
# sweep


class _Data:
    """Per-run constants reused by every sweep."""

    def __init__(self, data: GroupedObservations):
        self.x = data.values
        self.sizes = np.asarray(data.sizes)
        self.m = data.m
        self.gidx = data.group_index
        self.offsets = data.offsets
        self.log_f0 = _normal_logpdf(self.x, 0.0, 1.0)


def _table(dd: _Data, pi1, pi2, weights, means, sigma):
    comps = _normal_logpdf(dd.x[:, None], means[None, :], sigma)
    with np.errstate(divide="ignore"):
        log_f1 = np.logaddexp.reduce(comps + np.log(weights)[None, :], axis=1)
    log_odds = np.log(pi2) - np.log1p(-pi2) + log_f1 - dd.log_f0
    if np.any(np.isnan(log_odds)):
        raise NumericalError("non-finite density ratio in Gibbs sweep")
    log_star = -np.logaddexp(0.0, log_odds)
    return _table_from_log_star(log_star, dd.sizes, _log_lambda(pi1, pi2, dd.sizes)), comps


def _clip_prob(p):
    # Beta draws can round to exactly 0 or 1, where the Lfdr formulas break
    return float(np.clip(p, 1e-12, 1.0 - 1e-12))


def _draw_thetas(dd: _Data, table, rng):
    theta_group = rng.random(dd.m) >= table.lfdr_group
    u = rng.random(dd.x.size)
    in_sig = theta_group[dd.gidx]
    theta_cond = (u >= table.lfdr_cond) & in_sig
    counts = np.bincount(dd.gidx, weights=theta_cond, minlength=dd.m)
    need = np.flatnonzero(theta_group & (counts == 0))
    if need.size:
        # approximate repair: switch on the member with the smallest conditional Lfdr
        order = np.lexsort((table.lfdr_cond, dd.gidx))
        theta_cond[order[dd.offsets[need]]] = True
    return theta_group, theta_cond


def _draw_labels(comps, weights, rng):
    with np.errstate(divide="ignore"):
        logp = comps + np.log(weights)[None, :]
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    cum = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), p.shape[1] - 1)


def gibbs_sweep(state: GibbsState, data, cfg: GibbsConfig, rng: np.random.Generator) -> GibbsState:
    """One full sweep of the six conditional updates, in order."""
    dd = data if isinstance(data, _Data) else _Data(data)
    sigma = np.sqrt(cfg.sigma2)
    K = cfg.K

    # 1-2: latent group and member states at the current parameters
    table, comps = _table(dd, state.pi1, state.pi2, state.weights, state.means, sigma)
    theta_group, theta_cond = _draw_thetas(dd, table, rng)

    # 3: signal proportions
    (a1, b1), (a2, b2) = pi_posterior(theta_group, theta_cond, dd.sizes, cfg)
    pi1 = _clip_prob(rng.beta(a1, b1))
    pi2 = _clip_prob(rng.beta(a2, b2))

    # 4: component labels for every observation
    z = _draw_labels(comps, state.weights, rng)

    # 5: component means, prior fallback for empty components
    signal = theta_cond & theta_group[dd.gidx]
    mean, var, counts = mean_posterior(dd.x, signal, z, K, cfg.sigma2)
    eps = rng.standard_normal(K)
    means = np.where(counts > 0, mean + np.sqrt(np.where(counts > 0, var, 1.0)) * eps,
                     np.sqrt(cfg.sigma_mu2) * eps)

    # 6: mixture weights
    weights = rng.dirichlet(weight_posterior(signal, z, K, cfg.d))
    weights = np.maximum(weights, 1e-300)
    weights /= weights.sum()

    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(weights))):
        raise NumericalError("non-finite parameter draw in Gibbs sweep")
    return GibbsState(theta_group, theta_cond, z, pi1, pi2, weights, means)


def initial_state(data, cfg: GibbsConfig, rng: np.random.Generator, chain: int = 0) -> GibbsState:
    """Prior draws for pi1/pi2, quantile-spread means over extreme statistics,
    uniform weights, then one latent-state pass. Chains after the first get
    their means jittered by up to +-1."""
    dd = data if isinstance(data, _Data) else _Data(data)
    K = cfg.K
    pi1 = _clip_prob(rng.beta(cfg.a1, cfg.b1))
    pi2 = _clip_prob(rng.beta(cfg.a2, cfg.b2))
    ax = np.abs(dd.x)
    extreme = dd.x[ax >= np.quantile(ax, 0.9)]
    means = np.quantile(extreme, (np.arange(K) + 0.5) / K)
    if chain > 0:
        means = means + rng.uniform(-1.0, 1.0, K)
    weights = np.full(K, 1.0 / K)
    table, comps = _table(dd, pi1, pi2, weights, means, np.sqrt(cfg.sigma2))
    theta_group, theta_cond = _draw_thetas(dd, table, rng)
    z = _draw_labels(comps, weights, rng)
    return GibbsState(theta_group, theta_cond, z, pi1, pi2, weights, means)


@dataclass
class ChainTrace:
    """Retained parameter draws of one chain."""

    chain: int
    iteration: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    weights: np.ndarray  # (T, K)
    means: np.ndarray  # (T, K)
    final_state: GibbsState | None = field(default=None, repr=False)

    def __len__(self):
        return int(self.iteration.size)


def _run_chain(dd: _Data, cfg: GibbsConfig, chain: int, seed_seq) -> ChainTrace:
    rng = np.random.default_rng(seed_seq)
    state = initial_state(dd, cfg, rng, chain)
    T = cfg.retained_per_chain
    it = np.empty(T, dtype=np.int64)
    p1, p2 = np.empty(T), np.empty(T)
    w, mu = np.empty((T, cfg.K)), np.empty((T, cfg.K))
    k = 0
    for sweep in range(1, cfg.iters + 1):
        try:
            state = gibbs_sweep(state, dd, cfg, rng)
        except NumericalError as exc:
            raise NumericalError(f"chain {chain}, sweep {sweep}: {exc}") from exc
        if sweep > cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0 and k < T:
            it[k], p1[k], p2[k], w[k], mu[k] = sweep, state.pi1, state.pi2, state.weights, state.means
            k += 1
    return ChainTrace(chain, it, p1, p2, w, mu, state)


def gibbs_run(data: GroupedObservations, cfg: GibbsConfig, workers: int = 1) -> list[ChainTrace]:
    """Run ``cfg.chains`` independent chains; chain ``c`` is seeded from
    ``(cfg.seed, c)`` so output does not depend on ``workers``."""
    dd = _Data(data)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    log.info("gibbs: %d chains x %d sweeps (burn-in %d, thin %d)", cfg.chains, cfg.iters, cfg.burn_in, cfg.thin)
    if workers > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(min(workers, cfg.chains)) as pool:
            return list(pool.map(lambda c: _run_chain(dd, cfg, c, seeds[c]), range(cfg.chains)))
    return [_run_chain(dd, cfg, c, seeds[c]) for c in range(cfg.chains)]


@dataclass
class PosteriorSummary:
    pi1: float
    pi2: float
    weights: tuple[float, ...]
    means: tuple[float, ...]
    retained: int = 0
    chain_spread: dict = field(default_factory=dict)

    def to_params(self, sigma: float = 1.0) -> GammParams:
        w = np.clip(np.asarray(self.weights, dtype=float), 1e-12, None)
        w = w / w.sum()
        return GammParams(self.pi1, self.pi2, DensitySpec(tuple(w), self.means, sigma))

    @classmethod
    def from_params(cls, params: GammParams) -> "PosteriorSummary":
        d = params.densities
        return cls(params.pi1, params.shared_pi2, d.alt_weights, d.alt_means)


def _aligned(trace: ChainTrace):
    # canonical labelling: components ordered by mean, per draw
    order = np.argsort(trace.means, axis=1, kind="stable")
    return np.take_along_axis(trace.weights, order, 1), np.take_along_axis(trace.means, order, 1)


def posterior_medians(chains: list[ChainTrace]) -> PosteriorSummary:
    """Pooled posterior medians with label-aligned mixture components."""
    chains = [c for c in chains if len(c)]
    if not chains:
        raise ValueError("no retained draws to summarise")
    aligned = [_aligned(c) for c in chains]
    pi1 = np.concatenate([c.pi1 for c in chains])
    pi2 = np.concatenate([c.pi2 for c in chains])
    w = np.concatenate([a[0] for a in aligned])
    mu = np.concatenate([a[1] for a in aligned])

    def spread(per_chain):
        v = np.asarray(per_chain)
        return (v.max(axis=0) - v.min(axis=0)).tolist()

    chain_spread = {
        "pi1": float(np.ptp([np.median(c.pi1) for c in chains])),
        "pi2": float(np.ptp([np.median(c.pi2) for c in chains])),
        "weights": spread([np.median(a[0], axis=0) for a in aligned]),
        "means": spread([np.median(a[1], axis=0) for a in aligned]),
    }
    return PosteriorSummary(
        pi1=float(np.median(pi1)),
        pi2=float(np.median(pi2)),
        weights=tuple(float(v) for v in np.median(w, axis=0)),
        means=tuple(float(v) for v in np.median(mu, axis=0)),
        retained=int(pi1.size),
        chain_spread=chain_spread,
    )


def trace_csv(chains: list[ChainTrace]) -> str:
    """CSV with one row per retained draw: iteration, chain, pi1, pi2, eta_k, mu_k."""
    K = chains[0].means.shape[1] if chains else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "chain", "pi1", "pi2"]
               + [f"eta_{k + 1}" for k in range(K)] + [f"mu_{k + 1}" for k in range(K)])
    for c in chains:
        for t in range(len(c)):
            vals = [c.pi1[t], c.pi2[t], *c.weights[t], *c.means[t]]
            w.writerow([int(c.iteration[t]), c.chain] + [format(float(v), ".10g") for v in vals])
    return buf.getvalue()


def fit_then_test(data: GroupedObservations, cfg: GibbsConfig, alpha: float, eta=None,
                  method: str = "gate1", params: GammParams | None = None, workers: int = 1):
    """Estimate parameters (unless ``params`` is given) and run ``method`` on them.

    Returns ``(DecisionSet, PosteriorSummary, GammParams used, chains)``; chains
    is empty when the supplied parameters short-circuit the sampler.
    """
    from .simulate import run_method

    chains: list[ChainTrace] = []
    if params is None:
        chains = gibbs_run(data, cfg, workers)
        summary = posterior_medians(chains)
        params = summary.to_params(np.sqrt(cfg.sigma2))
    else:
        summary = PosteriorSummary.from_params(params)
    dec = run_method(method, data, params, alpha, eta=eta)
    return dec, summary, params, chains
