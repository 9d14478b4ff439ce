"""Shared test fixtures: hand-set Lfdr tables and small random instances."""
import numpy as np

from onewaygate.model import DensitySpec, GammParams, GroupedObservations, LfdrTable, build_lfdr_table
from onewaygate.simulate import mixture_preset


def hand_table(lfdr_group, cond_by_group):
    """LfdrTable with chosen group and conditional Lfdrs; the rest is derived."""
    g = np.asarray(lfdr_group, dtype=float)
    sizes = np.array([len(c) for c in cond_by_group])
    cond = np.concatenate([np.asarray(c, dtype=float) for c in cond_by_group])
    gi = np.repeat(np.arange(g.size), sizes)
    hyp = 1.0 - (1.0 - g[gi]) * (1.0 - cond)
    nan_h = np.full(cond.size, np.nan)
    nan_g = np.full(g.size, np.nan)
    return LfdrTable(
        lfdr_star=nan_h, lfdr_cond=cond, lfdr_hyp=hyp, lfdr_star_group=nan_g,
        log_lfdr_star_group=nan_g, lam=nan_g, lfdr_group=g, sizes=sizes,
    )


def pooled_table(lfdr_hyp):
    """Single-group table whose hypothesis Lfdrs are exactly ``lfdr_hyp``."""
    v = np.asarray(lfdr_hyp, dtype=float)
    return hand_table([0.0], [v])


def random_table(rng, m_max=5, n_max=8, scale=2.0):
    m = int(rng.integers(1, m_max + 1))
    sizes = rng.integers(1, n_max + 1, m)
    K = int(rng.integers(1, 4))
    params = GammParams(*rng.uniform(0.05, 0.95, 2), DensitySpec(*mixture_preset(K), 1.0))
    data = GroupedObservations(rng.normal(0.5, scale, sizes.sum()), sizes)
    return data, params, build_lfdr_table(data, params)


# acceptance outcomes, printed by the terminal-summary hook in conftest
ACCEPTANCE_RESULTS: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}")
    print(ACCEPTANCE_RESULTS[-1])
    assert ok, detail
