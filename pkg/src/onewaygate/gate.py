"""GATE 1 and GATE 2 decision procedures and posterior error-rate functionals.

Posterior FDR/FNR values are exact under the model: by linearity they reduce
to sums of Lfdr values over the rejected (or accepted) hypotheses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LfdrTable

__all__ = [
    "DecisionSet",
    "step_up_count",
    "pooled_step_up",
    "gate1",
    "threshold_rule",
    "pfdr_total",
    "pfnr_total",
    "select_groups",
    "within_group_stepup",
    "pfdr_selective_at",
    "gate2",
    "pfdr_selective",
    "pfdr_between",
    "pfnr_between",
    "pfdr_within",
    "pfnr_within",
]


LEVEL_RTOL = 1e-12


def _check_level(name, value, allow_zero=False):
    lo_ok = value >= 0.0 if allow_zero else value > 0.0
    if not (lo_ok and value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")


@dataclass(eq=False)
class DecisionSet:
    """Binary decisions for every hypothesis, with group structure attached.

    ``selected_groups`` is the index set S: the step-1 selection for GATE 2
    and BB, otherwise the groups holding at least one rejection.
    """

    delta_hyp: np.ndarray
    sizes: np.ndarray
    selected_groups: np.ndarray | None = None
    threshold_info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delta_hyp = np.asarray(self.delta_hyp, dtype=bool)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        if self.delta_hyp.size != self.sizes.sum():
            raise ValueError("decision vector does not match group sizes")
        if self.selected_groups is None:
            self.selected_groups = np.flatnonzero(self.rejections_per_group > 0)
        self.selected_groups = np.asarray(self.selected_groups, dtype=np.int64)

    @property
    def group_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.sizes.size), self.sizes)

    @property
    def rejections_per_group(self) -> np.ndarray:
        return np.bincount(self.group_index, weights=self.delta_hyp, minlength=self.sizes.size).astype(np.int64)

    @property
    def delta_group(self) -> np.ndarray:
        return self.rejections_per_group > 0

    @property
    def selected_mask(self) -> np.ndarray:
        mask = np.zeros(self.sizes.size, dtype=bool)
        mask[self.selected_groups] = True
        return mask

    @property
    def n_rejections(self) -> int:
        return int(self.delta_hyp.sum())


def _within(values, level):
    # relative slack so that e.g. three Lfdrs equal to alpha average to alpha
    return values <= level * (1.0 + LEVEL_RTOL)


def step_up_count(sorted_values, level: float) -> int:
    """Largest ``l`` whose running mean ``sum(sorted_values[:l]) / l`` is <= level.

    Returns 0 when no prefix qualifies.
    """
    v = np.asarray(sorted_values, dtype=float)
    if v.size == 0:
        return 0
    ok = _within(np.cumsum(v) / np.arange(1, v.size + 1), level)
    hits = np.flatnonzero(ok)
    return int(hits[-1] + 1) if hits.size else 0


def pooled_step_up(lfdrs, alpha: float):
    """Pool, sort ascending and reject the step-up prefix.

    Ties are broken by flat position (group, then member). Returns the boolean
    rejection mask, the number of rejections and the largest rejected value.
    """
    lfdrs = np.asarray(lfdrs, dtype=float)
    order = np.argsort(lfdrs, kind="stable")
    R = step_up_count(lfdrs[order], alpha)
    mask = np.zeros(lfdrs.size, dtype=bool)
    mask[order[:R]] = True
    return mask, R, (float(lfdrs[order[R - 1]]) if R else None)


def gate1(table: LfdrTable, alpha: float) -> DecisionSet:
    """One-Way GATE 1: pooled step-up on the group-adjusted hypothesis Lfdrs."""
    _check_level("alpha", alpha)
    mask, R, cutoff = pooled_step_up(table.lfdr_hyp, alpha)
    return DecisionSet(mask, table.sizes, threshold_info={"R": R, "cutoff": cutoff})


def threshold_rule(table: LfdrTable, c: float) -> DecisionSet:
    if not 0.0 <= c <= 1.0:
        raise ValueError("cutoff must lie in [0, 1]")
    return DecisionSet(table.lfdr_hyp <= c, table.sizes, threshold_info={"cutoff": c})


def _ratio(num, den):
    return float(num) / max(float(den), 1.0)


def pfdr_total(dec: DecisionSet, table: LfdrTable) -> float:
    d = dec.delta_hyp
    return _ratio(table.lfdr_hyp[d].sum(), d.sum())


def pfnr_total(dec: DecisionSet, table: LfdrTable) -> float:
    a = ~dec.delta_hyp
    return _ratio((1.0 - table.lfdr_hyp[a]).sum(), a.sum())


def select_groups(table: LfdrTable, eta: float) -> np.ndarray:
    """Largest set of groups whose mean group Lfdr stays within ``eta``.

    Returned indices are sorted ascending; empty when even the smallest group
    Lfdr exceeds ``eta``.
    """
    _check_level("eta", eta)
    order = np.argsort(table.lfdr_group, kind="stable")
    R = step_up_count(table.lfdr_group[order], eta)
    return np.sort(order[:R])


def within_group_stepup(cond_lfdrs, alpha_prime: float) -> int:
    """``max{k : sum of the k smallest values <= k alpha'}``, or 0."""
    return step_up_count(np.sort(np.asarray(cond_lfdrs, dtype=float), kind="stable"), alpha_prime)


def pfdr_selective_at(table: LfdrTable, S, alpha_prime: float) -> float:
    """Selective posterior FDR obtained by within-group step-up at ``alpha_prime``.

    A selected group without any within-group rejection contributes 0.
    """
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        raise ValueError("selected group set is empty")
    total = 0.0
    for i in S:
        cond = np.sort(table.lfdr_cond[table.members(int(i))], kind="stable")
        R = step_up_count(cond, alpha_prime)
        if R:
            total += 1.0 - (1.0 - table.lfdr_group[i]) * (1.0 - cond[:R].mean())
    return total / S.size


def _cummeans_padded(table: LfdrTable, S):
    """Sorted conditional Lfdrs of the groups in S, their running means and
    within-group member order. Rows are padded with ``inf``."""
    sizes = table.sizes[S]
    width = int(sizes.max())
    off = table.offsets
    sorted_vals = np.full((S.size, width), np.inf)
    order = np.zeros((S.size, width), dtype=np.int64)
    for row, i in enumerate(S):
        cond = table.lfdr_cond[off[i]:off[i + 1]]
        o = np.argsort(cond, kind="stable")
        sorted_vals[row, : o.size] = cond[o]
        order[row, : o.size] = off[i] + o
    cummean = np.cumsum(sorted_vals, axis=1) / np.arange(1, width + 1)
    return sorted_vals, cummean, order, sizes


def _selective_curve(cummean, lfdr_group_S, candidates):
    """PFDR_S and R_i at every candidate alpha'.

    R_i(a) >= k exactly when some running mean at rank >= k is <= a, so R_i is
    a searchsorted count against the suffix minima of the running means.
    """
    suffix_min = np.minimum.accumulate(cummean[:, ::-1], axis=1)[:, ::-1]
    R = np.stack([
        np.searchsorted(row, candidates * (1.0 + LEVEL_RTOL), side="right") for row in suffix_min
    ])
    within = np.take_along_axis(cummean, np.maximum(R, 1) - 1, axis=1)
    bracket = np.where(R > 0, 1.0 - (1.0 - lfdr_group_S[:, None]) * (1.0 - within), 0.0)
    return bracket.mean(axis=0), R


def gate2(table: LfdrTable, alpha: float, eta: float | None = None, selected=None) -> DecisionSet:
    """One-Way GATE 2.

    Step 1 selects groups by step-up on group Lfdrs at ``eta`` (default
    ``alpha / 2``) unless ``selected`` supplies S directly. Then ``alpha*`` is
    the largest achievable within-group level not above ``alpha`` whose
    selective posterior FDR stays within ``alpha``; each selected group rejects
    its ``R_i(alpha*)`` smallest conditional Lfdrs.
    """
    _check_level("alpha", alpha)
    if selected is None:
        eta = alpha / 2.0 if eta is None else eta
        _check_level("eta", eta)
        if not eta < alpha:
            raise ValueError("eta must be smaller than alpha")
        S = select_groups(table, eta)
    else:
        S = np.unique(np.asarray(selected, dtype=np.int64))
    info = {"eta": eta, "alpha_star": None, "R_i": [], "pfdr_selective": 0.0}
    delta = np.zeros(table.N, dtype=bool)
    if S.size == 0:
        return DecisionSet(delta, table.sizes, S, info)

    _, cummean, order, sizes = _cummeans_padded(table, S)
    finite = cummean[np.isfinite(cummean)]
    candidates = np.unique(np.concatenate(([0.0], finite[_within(finite, alpha)])))
    curve, R = _selective_curve(cummean, table.lfdr_group[S], candidates)
    best = int(np.flatnonzero(_within(curve, alpha))[-1])
    R_star = R[:, best]
    for row, r in enumerate(R_star):
        delta[order[row, :r]] = True
    info.update(
        alpha_star=float(candidates[best]),
        R_i=[int(r) for r in R_star],
        pfdr_selective=float(curve[best]),
    )
    return DecisionSet(delta, table.sizes, S, info)


def pfdr_selective(dec: DecisionSet, table: LfdrTable) -> float:
    """Average over selected groups of each group's posterior FDP.

    Evaluated directly from the hypothesis Lfdrs; a selected group with no
    rejection contributes 0. Returns 0 for an empty selection.
    """
    S = dec.selected_groups
    if S.size == 0:
        return 0.0
    gidx = table.group_index
    d = dec.delta_hyp
    false_mass = np.bincount(gidx, weights=np.where(d, table.lfdr_hyp, 0.0), minlength=table.m)
    counts = np.bincount(gidx, weights=d, minlength=table.m)
    return float(np.mean(false_mass[S] / np.maximum(counts[S], 1.0)))


def pfdr_between(dec: DecisionSet, table: LfdrTable) -> float:
    S = dec.selected_groups
    return _ratio(table.lfdr_group[S].sum(), S.size)


def pfnr_between(dec: DecisionSet, table: LfdrTable) -> float:
    rest = ~dec.selected_mask
    return _ratio((1.0 - table.lfdr_group[rest]).sum(), rest.sum())


def pfdr_within(dec: DecisionSet, table: LfdrTable, i: int) -> float:
    sl = table.members(i)
    d = dec.delta_hyp[sl]
    return _ratio(table.lfdr_cond[sl][d].sum(), d.sum())


def pfnr_within(dec: DecisionSet, table: LfdrTable, i: int) -> float:
    sl = table.members(i)
    a = ~dec.delta_hyp[sl]
    return _ratio((1.0 - table.lfdr_cond[sl][a]).sum(), a.sum())
