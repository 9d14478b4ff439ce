"""Competitor procedures run at the same (oracle or estimated) parameters.

All methods return a :class:`~onewaygate.gate.DecisionSet`. The two pooled
Lfdr methods share the GATE 1 step-up scan; GBH and BB work on two-sided
p-values.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from .gate import DecisionSet, pooled_step_up
from .model import GammParams, GroupedObservations, lfdr_star

__all__ = [
    "z_to_pvalue",
    "bh",
    "bh_mask",
    "naive_signal_proportion",
    "naive_method",
    "sc_method",
    "gbh_method",
    "simes_scores",
    "bb_method",
]


def z_to_pvalue(x):
    """Two-sided normal p-value ``2 (1 - Phi(|x|))``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("z statistics must be finite")
    p = 2.0 * stats.norm.sf(np.abs(x))
    return float(p) if p.ndim == 0 else p


def bh_mask(pvalues, alpha: float) -> np.ndarray:
    """Benjamini-Hochberg step-up; boolean rejection mask in input order.

    Values above 1 (e.g. weighted p-values) are capped at 1 first.
    """
    p = np.minimum(np.asarray(pvalues, dtype=float), 1.0)
    n = p.size
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    order = np.argsort(p, kind="stable")
    below = np.flatnonzero(p[order] <= np.arange(1, n + 1) * alpha / n)
    if below.size:
        mask[order[: below[-1] + 1]] = True
    return mask


def bh(pvalues, alpha: float) -> np.ndarray:
    """Sorted indices rejected by BH at level ``alpha``."""
    return np.flatnonzero(bh_mask(pvalues, alpha))


def naive_signal_proportion(pi1: float, pi2: float, n):
    """Marginal signal probability of one hypothesis in a group of size n."""
    n = np.asarray(n, dtype=float)
    return pi1 * pi2 / -np.expm1(n * np.log1p(-pi2))


def _pooled_lfdr_decisions(data, lfdrs, alpha, **info):
    mask, R, cutoff = pooled_step_up(lfdrs, alpha)
    return DecisionSet(mask, data.sizes, threshold_info={"R": R, "cutoff": cutoff, **info})


def naive_method(data: GroupedObservations, params: GammParams, alpha: float) -> DecisionSet:
    """Pool everything under a two-class mixture with the marginal signal rate."""
    pi2 = params.shared_pi2
    p = naive_signal_proportion(params.pi1, pi2, np.repeat(data.sizes, data.sizes))
    lfdrs = lfdr_star(data.values, p, params.densities)
    return _pooled_lfdr_decisions(data, lfdrs, alpha)


def sc_method(data: GroupedObservations, params: GammParams, alpha: float) -> DecisionSet:
    """Pool everything under a two-class mixture with signal proportion pi2."""
    lfdrs = lfdr_star(data.values, params.shared_pi2, params.densities)
    return _pooled_lfdr_decisions(data, lfdrs, alpha)


def gbh_method(data: GroupedObservations, params: GammParams, alpha: float) -> DecisionSet:
    """BH on the pooled weighted p-values ``(1 - pi2) P_ij``."""
    weighted = (1.0 - params.shared_pi2) * z_to_pvalue(data.values)
    mask = bh_mask(weighted, alpha)
    return DecisionSet(mask, data.sizes, threshold_info={"R": int(mask.sum())})


def simes_scores(pvalues_by_group, pi2: float) -> np.ndarray:
    """Oracle Simes combination ``min_j n_i (1 - pi2) P_(j) / j`` per group."""
    out = np.empty(len(pvalues_by_group))
    for i, p in enumerate(pvalues_by_group):
        p = np.sort(p)
        n = p.size
        out[i] = np.min(n * (1.0 - pi2) * p / np.arange(1, n + 1))
    return out


def bb_method(data: GroupedObservations, params: GammParams, alpha: float) -> DecisionSet:
    """Oracle Benjamini-Bogomolov two-stage procedure with Simes group scores."""
    pi1, pi2 = params.pi1, params.shared_pi2
    pvals = z_to_pvalue(data.values)
    off = data.offsets
    groups = [pvals[off[i]:off[i + 1]] for i in range(data.m)]
    scores = simes_scores(groups, pi2)
    G = bh((1.0 - pi1) * scores, alpha)

    delta = np.zeros(data.N, dtype=bool)
    R_i = []
    for i in G:
        p = groups[i]
        n = p.size
        order = np.argsort(p, kind="stable")
        j = np.arange(1, n + 1)
        ok = np.flatnonzero((1.0 - pi1 * pi2) * p[order] <= j * G.size * alpha / (data.m * n))
        r = int(ok[-1] + 1) if ok.size else 0
        delta[off[i] + order[:r]] = True
        R_i.append(r)
    return DecisionSet(delta, data.sizes, G, {"R_i": R_i, "n_selected": int(G.size)})
