"""One-way group-adjusted two-class mixture model.

Observations come in ``m`` groups. A group is significant with probability
``pi1``; inside a significant group the member signal indicators follow a
truncated product Bernoulli law (independent Bernoulli(``pi2``) draws
conditioned on at least one success). Null statistics follow ``f0`` and
signals follow a Gaussian mixture ``f1``.

All ragged per-hypothesis quantities are stored flat in group-major order,
with ``sizes`` giving the member count of every group.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import expit, logsumexp

__all__ = [
    "DegenerateGroupError",
    "NumericalError",
    "DensitySpec",
    "GammParams",
    "GroupedObservations",
    "LatentTruth",
    "LfdrTable",
    "tpbern_pmf",
    "tpbern_sample",
    "lfdr_star",
    "lambda_group",
    "lfdr_group",
    "lfdr_cond",
    "lfdr_hypothesis",
    "lfdr_hypothesis_direct",
    "build_lfdr_table",
    "brute_force_posterior",
    "generate_dataset",
]

# below this, 1 - Lfdr*_{i.} is treated as zero and conditional Lfdrs are set to 0
DEGENERATE_TOL = 1e-15
MAX_ENUMERATION_SIZE = 20
_LOG_2PI = np.log(2.0 * np.pi)


class NumericalError(ArithmeticError):
    """A density or posterior evaluation produced non-finite values."""


class DegenerateGroupError(NumericalError):
    """Conditional Lfdr requested for a group whose null posterior is 1."""


def _check_prob(name, value, closed=False):
    value = np.asarray(value, dtype=float)
    if closed:
        ok = np.all((value >= 0.0) & (value <= 1.0))
        interval = "[0, 1]"
    else:
        ok = np.all((value > 0.0) & (value < 1.0))
        interval = "(0, 1)"
    if not ok:
        raise ValueError(f"{name} must lie in {interval}, got {value!r}")
    return value


def _normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


@dataclass(frozen=True)
class DensitySpec:
    """Null density N(null_mean, null_sd^2) and a Gaussian mixture alternative.

    The alternative is ``sum_k alt_weights[k] * N(alt_means[k], alt_sd^2)``.
    """

    alt_weights: tuple[float, ...] = (1.0,)
    alt_means: tuple[float, ...] = (2.0,)
    alt_sd: float = 1.0
    null_mean: float = 0.0
    null_sd: float = 1.0

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.alt_weights))
        mu = tuple(float(v) for v in np.atleast_1d(self.alt_means))
        object.__setattr__(self, "alt_weights", w)
        object.__setattr__(self, "alt_means", mu)
        if len(w) < 1 or len(w) != len(mu):
            raise ValueError("alt_weights and alt_means must be non-empty and of equal length")
        if any(v <= 0 for v in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"alt_weights must be positive and sum to 1, got {w}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("alt_means must be finite")
        if not self.alt_sd > 0 or not self.null_sd > 0:
            raise ValueError("standard deviations must be positive")

    @property
    def K(self) -> int:
        return len(self.alt_weights)

    def log_f0(self, x):
        return _normal_logpdf(np.asarray(x, dtype=float), self.null_mean, self.null_sd)

    def log_f1(self, x):
        x = np.asarray(x, dtype=float)
        comps = _normal_logpdf(x[..., None], np.asarray(self.alt_means), self.alt_sd)
        return logsumexp(comps + np.log(self.alt_weights), axis=-1)

    def f0(self, x):
        return np.exp(self.log_f0(x))

    def f1(self, x):
        return np.exp(self.log_f1(x))


@dataclass(frozen=True)
class GammParams:
    """Model parameters.

    ``pi2`` is either a scalar shared by all groups or a per-group vector.
    Values on the closed unit interval are accepted so that degenerate
    generators and baselines (e.g. ``pi1 = 1``) can be expressed; Lfdr
    computations require the open interval.
    """

    pi1: float
    pi2: float | tuple[float, ...]
    densities: DensitySpec = field(default_factory=DensitySpec)

    def __post_init__(self):
        object.__setattr__(self, "pi1", float(self.pi1))
        if np.ndim(self.pi2) == 0:
            object.__setattr__(self, "pi2", float(self.pi2))
        else:
            object.__setattr__(self, "pi2", tuple(float(v) for v in self.pi2))
        _check_prob("pi1", self.pi1, closed=True)
        _check_prob("pi2", self.pi2, closed=True)

    @property
    def shared_pi2(self) -> float:
        """The common ``pi2``; raises if per-group values differ."""
        if isinstance(self.pi2, float):
            return self.pi2
        if len(set(self.pi2)) != 1:
            raise ValueError("this operation needs a pi2 shared by all groups")
        return self.pi2[0]

    def pi2_for(self, m: int) -> np.ndarray:
        if isinstance(self.pi2, float):
            return np.full(m, self.pi2)
        if len(self.pi2) != m:
            raise ValueError(f"pi2 has {len(self.pi2)} entries for {m} groups")
        return np.asarray(self.pi2)

    def require_interior(self, m: int | None = None):
        _check_prob("pi1", self.pi1)
        _check_prob("pi2", self.pi2 if m is None else self.pi2_for(m))


def _offsets(sizes):
    return np.concatenate(([0], np.cumsum(sizes)))


@dataclass(frozen=True, eq=False)
class GroupedObservations:
    """Ragged collection of test statistics, stored flat in group-major order."""

    values: np.ndarray
    sizes: np.ndarray
    group_ids: tuple[str, ...] = ()
    unit_ids: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        sizes = np.array(self.sizes, dtype=np.int64)
        if sizes.ndim != 1 or sizes.size < 1:
            raise ValueError("need at least one group")
        if np.any(sizes < 1):
            raise ValueError("every group needs at least one member")
        if values.ndim != 1 or values.size != sizes.sum():
            raise ValueError("values length does not match group sizes")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValueError(f"non-finite statistic at flat position {bad}")
        gids = tuple(str(g) for g in self.group_ids) or tuple(str(i) for i in range(sizes.size))
        uids = tuple(str(u) for u in self.unit_ids) or tuple(
            str(j) for n in sizes for j in range(int(n))
        )
        if len(gids) != sizes.size or len(uids) != values.size:
            raise ValueError("identifier lengths do not match the data")
        values.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "group_ids", gids)
        object.__setattr__(self, "unit_ids", uids)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[float]], group_ids=None):
        groups = [np.atleast_1d(np.asarray(g, dtype=float)) for g in groups]
        sizes = [g.size for g in groups]
        values = np.concatenate(groups) if groups else np.empty(0)
        return cls(values, np.asarray(sizes), tuple(group_ids or ()))

    @property
    def m(self) -> int:
        return int(self.sizes.size)

    @property
    def N(self) -> int:
        return int(self.values.size)

    @property
    def offsets(self) -> np.ndarray:
        return _offsets(self.sizes)

    @property
    def group_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.m), self.sizes)

    def group(self, i: int) -> np.ndarray:
        off = self.offsets
        return self.values[off[i]:off[i + 1]]

    def __eq__(self, other):
        if not isinstance(other, GroupedObservations):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and np.array_equal(self.sizes, other.sizes)
            and self.group_ids == other.group_ids
            and self.unit_ids == other.unit_ids
        )


@dataclass(frozen=True, eq=False)
class LatentTruth:
    theta_group: np.ndarray
    theta_cond: np.ndarray
    sizes: np.ndarray

    @property
    def theta_hyp(self) -> np.ndarray:
        return self.theta_cond & np.repeat(self.theta_group, self.sizes)


@dataclass(frozen=True, eq=False)
class LfdrTable:
    """Every Lfdr quantity of the grouped model for one data set.

    Per-hypothesis arrays have length N (group-major); per-group arrays have
    length m.
    """

    lfdr_star: np.ndarray
    lfdr_cond: np.ndarray
    lfdr_hyp: np.ndarray
    lfdr_star_group: np.ndarray
    log_lfdr_star_group: np.ndarray
    lam: np.ndarray
    lfdr_group: np.ndarray
    sizes: np.ndarray

    @property
    def m(self) -> int:
        return int(self.sizes.size)

    @property
    def N(self) -> int:
        return int(self.lfdr_hyp.size)

    @property
    def offsets(self) -> np.ndarray:
        return _offsets(self.sizes)

    @property
    def group_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.m), self.sizes)

    def members(self, i: int) -> slice:
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))


# ---------------------------------------------------------------------------
# truncated product Bernoulli


def tpbern_pmf(z, pi: float) -> float:
    """Probability of the binary vector ``z`` under TPBern(pi, len(z))."""
    z = np.asarray(z)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("z must be a non-empty binary vector")
    _check_prob("pi", pi)
    s = int(z.sum())
    if s == 0:
        return 0.0
    n = z.size
    log_q = np.log1p(-pi)
    log_norm = np.log(-np.expm1(n * log_q))
    return float(np.exp(n * log_q - log_norm + s * (np.log(pi) - log_q)))


def _truncated_binomial_cdf(pi, n):
    k = np.arange(1, n + 1)
    pmf = stats.binom.pmf(k, n, pi)
    cdf = np.cumsum(pmf)
    return cdf / cdf[-1]


def _tpbern_block(pi, n, size, rng):
    """``size`` independent TPBern(pi, n) vectors as a (size, n) bool array.

    The success count comes from the zero-truncated binomial by inverse CDF;
    the successes are then placed at uniformly random positions.
    """
    cdf = _truncated_binomial_cdf(pi, n)
    counts = np.searchsorted(cdf, rng.random(size), side="right") + 1
    counts = np.minimum(counts, n)
    ranks = np.argsort(rng.random((size, n)), axis=1).argsort(axis=1)
    return ranks < counts[:, None]


def tpbern_sample(pi: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """One draw from TPBern(pi, n) as an int vector with at least one 1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    _check_prob("pi", pi)
    return _tpbern_block(pi, int(n), 1, rng)[0].astype(int)


# ---------------------------------------------------------------------------
# closed-form Lfdr quantities


def _log_lfdr_star(x, pi2, d: DensitySpec):
    # log of (1-pi2) f0 / [(1-pi2) f0 + pi2 f1], via the log posterior odds
    log_odds = np.log(pi2) + d.log_f1(x) - np.log1p(-pi2) - d.log_f0(x)
    if np.any(np.isnan(log_odds)):
        raise NumericalError("density ratio evaluated to NaN")
    return -np.logaddexp(0.0, log_odds)


def lfdr_star(x, pi2, d: DensitySpec):
    """Lfdr under the ungrouped two-class mixture with signal proportion ``pi2``.

    Vectorised over ``x`` (and ``pi2`` when it is an array of matching shape).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    _check_prob("pi2", pi2)
    out = np.exp(_log_lfdr_star(x, np.asarray(pi2, dtype=float), d))
    return float(out) if out.ndim == 0 else out


def _log_lambda(pi1, pi2, n):
    n = np.asarray(n, dtype=float)
    log_q = np.log1p(-np.asarray(pi2, dtype=float))
    return (np.log(pi1) - np.log1p(-pi1)) + n * log_q - np.log(-np.expm1(n * log_q))


def lambda_group(pi1, pi2, n):
    """Group effect factor on the posterior odds of group significance."""
    _check_prob("pi1", pi1)
    _check_prob("pi2", pi2)
    if np.any(np.asarray(n) < 1):
        raise ValueError("n must be at least 1")
    out = np.exp(_log_lambda(pi1, pi2, n))
    return float(out) if np.ndim(out) == 0 else out


def _lfdr_group_from_log(log_L, log_lam):
    # L / (L + lam (1 - L)) = expit(log L - log lam - log(1 - L))
    with np.errstate(divide="ignore"):
        log_1mL = np.log(-np.expm1(log_L))
    with np.errstate(invalid="ignore"):
        arg = log_L - log_lam - log_1mL
    return expit(np.where(np.isnan(arg), -np.inf, arg))


def lfdr_group(lfdr_star_group, lam):
    """Posterior probability that the whole group is null."""
    L = np.asarray(lfdr_star_group, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        out = _lfdr_group_from_log(np.log(L), np.log(lam))
    return float(out) if out.ndim == 0 else out


def lfdr_cond(lfdr_star_ij, lfdr_star_group):
    """Null probability of a member given that its group is significant."""
    a = np.asarray(lfdr_star_ij, dtype=float)
    g = np.asarray(lfdr_star_group, dtype=float)
    if np.any(1.0 - g < DEGENERATE_TOL):
        raise DegenerateGroupError("group Lfdr* equals 1; conditional Lfdr undefined")
    out = np.clip((a - g) / (1.0 - g), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def lfdr_hypothesis(lfdr_grp, lfdr_cnd):
    out = 1.0 - (1.0 - np.asarray(lfdr_grp, dtype=float)) * (1.0 - np.asarray(lfdr_cnd, dtype=float))
    return float(out) if out.ndim == 0 else out


def lfdr_hypothesis_direct(lfdr_star_ij, lfdr_star_group, lam):
    """Hypothesis Lfdr written directly in terms of Lfdr*, the group product and lambda."""
    a = np.asarray(lfdr_star_ij, dtype=float)
    g = np.asarray(lfdr_star_group, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = 1.0 - lam * (1.0 - a) / (lam + (1.0 - lam) * g)
    return float(out) if out.ndim == 0 else out


def _table_from_log_star(log_star, sizes, log_lam):
    m = sizes.size
    gidx = np.repeat(np.arange(m), sizes)
    log_group = np.bincount(gidx, weights=log_star, minlength=m)
    star = np.exp(log_star)
    star_group = np.exp(log_group)
    lfdr_grp = _lfdr_group_from_log(log_group, log_lam)

    # (a - g) / (1 - g), with a - g = a (1 - g/a) evaluated through expm1
    lg = log_group[gidx]
    with np.errstate(invalid="ignore", divide="ignore"):
        num = star * -np.expm1(lg - log_star)
        den = -np.expm1(lg)
        cond = np.where(star > 0.0, num / den, 0.0)
    cond = np.where(den < DEGENERATE_TOL, 0.0, cond)
    cond = np.clip(cond, 0.0, 1.0) + 0.0  # no negative zeros in reports
    hyp = np.clip(1.0 - (1.0 - lfdr_grp[gidx]) * (1.0 - cond), 0.0, 1.0)
    if not (np.all(np.isfinite(hyp)) and np.all(np.isfinite(lfdr_grp))):
        raise NumericalError("non-finite Lfdr values")
    return LfdrTable(
        lfdr_star=star,
        lfdr_cond=cond,
        lfdr_hyp=hyp,
        lfdr_star_group=star_group,
        log_lfdr_star_group=log_group,
        lam=np.exp(log_lam),
        lfdr_group=lfdr_grp,
        sizes=sizes,
    )


def build_lfdr_table(data: GroupedObservations, params: GammParams) -> LfdrTable:
    """Compute the full Lfdr table of ``data`` under ``params``."""
    params.require_interior(data.m)
    sizes = np.asarray(data.sizes)
    pi2 = params.pi2_for(data.m)
    log_star = _log_lfdr_star(data.values, np.repeat(pi2, sizes), params.densities)
    log_lam = _log_lambda(params.pi1, pi2, sizes)
    return _table_from_log_star(log_star, sizes, log_lam)


def brute_force_posterior(x, pi1: float, pi2: float, d: DensitySpec):
    """Exact group and conditional null posteriors of one group by enumeration.

    Sums the joint law over the null group state and all 2^n - 1 admissible
    signal configurations. Independent of the closed forms above: densities
    come straight from ``scipy.stats.norm``.

    Returns ``(P(group null | x), array of P(member j null | group significant, x))``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.size
    if n > MAX_ENUMERATION_SIZE:
        raise ValueError(f"enumeration limited to n <= {MAX_ENUMERATION_SIZE}, got {n}")
    _check_prob("pi1", pi1)
    _check_prob("pi2", pi2)
    log_f0 = stats.norm.logpdf(x, d.null_mean, d.null_sd)
    comp = np.array([
        w * stats.norm.pdf(x, mu, d.alt_sd) for w, mu in zip(d.alt_weights, d.alt_means)
    ])
    log_f1 = np.log(comp.sum(axis=0))

    configs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=bool)[1:]
    log_prior = np.log([tpbern_pmf(z, pi2) for z in configs])
    log_lik = np.where(configs, log_f1, log_f0).sum(axis=1)
    log_sig = np.log(pi1) + log_prior + log_lik
    log_null = np.log1p(-pi1) + log_f0.sum()

    scale = max(log_null, log_sig.max())
    w_sig = np.exp(log_sig - scale)
    w_null = np.exp(log_null - scale)
    total = w_null + w_sig.sum()
    post_null, post_sig = w_null / total, w_sig / total
    if abs(post_null + post_sig.sum() - 1.0) > 1e-12:
        raise NumericalError("enumerated posterior does not normalise")

    sig_mass = w_sig.sum()
    cond = np.array([w_sig[~configs[:, j]].sum() / sig_mass for j in range(n)])
    return float(post_null), cond


# ---------------------------------------------------------------------------
# generation


def generate_dataset(m: int, n, params: GammParams, rng: np.random.Generator):
    """Draw ``(GroupedObservations, LatentTruth)`` from the grouped model.

    ``n`` is a common group size or a length-``m`` sequence of sizes.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    sizes = np.full(m, int(n), dtype=np.int64) if np.ndim(n) == 0 else np.asarray(n, dtype=np.int64)
    if sizes.size != m or np.any(sizes < 1):
        raise ValueError("group sizes must be positive and match m")
    pi2 = params.pi2_for(m)
    d = params.densities

    theta_group = rng.random(m) < params.pi1
    theta_cond = np.zeros(int(sizes.sum()), dtype=bool)
    off = _offsets(sizes)
    sig = np.flatnonzero(theta_group)
    # vectorise over groups that share (n_i, pi2_i)
    keys = sorted({(int(sizes[i]), float(pi2[i])) for i in sig})
    for n_i, p in keys:
        idx = sig[(sizes[sig] == n_i) & (pi2[sig] == p)]
        if p >= 1.0:
            block = np.ones((idx.size, n_i), dtype=bool)
        else:
            _check_prob("pi2", p)
            block = _tpbern_block(p, n_i, idx.size, rng)
        theta_cond[off[idx][:, None] + np.arange(n_i)] = block

    N = theta_cond.size
    comp = rng.choice(d.K, size=N, p=np.asarray(d.alt_weights))
    eps = rng.standard_normal(N)
    signal = theta_cond & np.repeat(theta_group, sizes)
    x = np.where(
        signal,
        np.asarray(d.alt_means)[comp] + d.alt_sd * eps,
        d.null_mean + d.null_sd * eps,
    )
    data = GroupedObservations(x, sizes)
    return data, LatentTruth(theta_group, theta_cond, sizes)
