"""Monte Carlo benchmark harness for the grouped-testing procedures."""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines
from .gate import DecisionSet, gate1, gate2, pfdr_between, pfdr_selective, pfdr_total
from .model import (
    DensitySpec,
    GammParams,
    LatentTruth,
    build_lfdr_table,
    generate_dataset,
    lambda_group,
)

__all__ = [
    "METHODS",
    "SELECTIVE_METHODS",
    "FIGURE_PRESETS",
    "SimulationConfig",
    "MetricsCell",
    "MetricsReport",
    "mixture_preset",
    "lambda_grid",
    "run_method",
    "run_benchmark",
    "figure_config",
]

METHODS = ("gate1", "gate2", "naive", "sc", "gbh", "bb")
SELECTIVE_METHODS = frozenset({"gate2", "bb"})

_PRESETS = {
    1: ((1.0,), (2.0,)),
    2: ((0.4, 0.6), (-2.0, 2.5)),
    3: ((0.4, 0.4, 0.2), (-2.0, 2.0, 3.5)),
}


def mixture_preset(K: int):
    """Alternative mixture ``(weights, means)`` used by the simulation designs."""
    try:
        return _PRESETS[K]
    except KeyError:
        raise ValueError(f"no mixture preset for K={K}; choose 1, 2 or 3") from None


def lambda_grid(pi1_grid, pi2: float, n: int) -> np.ndarray:
    return np.array([lambda_group(p, pi2, n) for p in pi1_grid])


def _default_grid(pi2: float = 0.3, n: int = 10, points: int = 10, lam_max: float = 10.0):
    # equispaced in log(lambda), from pi1 = 0.05 up to lambda = lam_max, so the
    # grid straddles lambda = 1 where the pooled methods change behaviour
    c = float(lambda_group(0.5, pi2, n))
    lam = np.geomspace(c * 0.05 / 0.95, lam_max, points)
    return tuple(float(v) for v in np.round(lam / (lam + c), 6))


@dataclass(frozen=True)
class SimulationConfig:
    m: int = 200
    n: int = 10
    pi1_grid: tuple[float, ...] = field(default_factory=_default_grid)
    pi2: float = 0.3
    K: int = 1
    alpha: float = 0.05
    eta: float | None = None
    replications: int = 200
    methods: tuple[str, ...] = ("gate1", "naive", "sc", "gbh")
    seed: int = 0
    data_driven: bool = False
    gibbs_iters: int = 2000
    gibbs_burn_in: int = 1000
    gibbs_thin: int = 5

    def __post_init__(self):
        object.__setattr__(self, "pi1_grid", tuple(float(v) for v in self.pi1_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.pi1_grid:
            raise ValueError("pi1 grid must be non-empty")
        if self.replications < 1 or self.m < 1 or self.n < 1:
            raise ValueError("m, n and replications must be positive")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"unknown methods {sorted(unknown)}; available: {METHODS}")
        mixture_preset(self.K)

    @property
    def eta_value(self) -> float:
        return self.alpha / 2.0 if self.eta is None else self.eta

    def params_at(self, pi1: float) -> GammParams:
        w, mu = mixture_preset(self.K)
        return GammParams(pi1, self.pi2, DensitySpec(w, mu, 1.0))

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown simulation config fields: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


FIGURE_PRESETS = {
    "gate1-k1": dict(K=1),
    "gate1-k2": dict(K=2),
    "gate1-k3": dict(K=3),
    "gate1-k1-n20": dict(K=1, n=20),
    "gate2-k3-pi025": dict(K=3, pi1_grid=(0.25,), methods=("gate2", "bb")),
    "gate2-k3-pi0756": dict(K=3, pi1_grid=(0.756,), methods=("gate2", "bb")),
    "gate2-k1-pi025": dict(K=1, pi1_grid=(0.25,), methods=("gate2", "bb")),
}


def figure_config(name: str, **overrides) -> SimulationConfig:
    """Desk-scale configuration for one of the benchmark designs."""
    if name not in FIGURE_PRESETS:
        raise ValueError(f"unknown figure preset {name!r}; choose from {sorted(FIGURE_PRESETS)}")
    return SimulationConfig(**{**FIGURE_PRESETS[name], **overrides})


@dataclass
class MetricsCell:
    method: str
    pi1: float
    lam: float
    replications: int
    bayes_fdr: float
    freq_fdr: float
    mean_rejections: float
    mean_true_rejections: float
    mcse_bayes_fdr: float
    mcse_freq_fdr: float
    mcse_rejections: float
    mcse_true_rejections: float
    bayes_fdr_between: float
    max_pfdr_between: float


@dataclass
class MetricsReport:
    config: SimulationConfig
    cells: list[MetricsCell]
    wall_clock_seconds: float = 0.0

    CSV_COLUMNS = (
        "method", "pi1", "lambda", "replications", "bayes_fdr", "freq_fdr",
        "mean_rejections", "mean_true_rejections", "mcse_bayes_fdr", "mcse_freq_fdr",
        "mcse_rejections", "mcse_true_rejections", "bayes_fdr_between", "max_pfdr_between",
    )

    def cell(self, method: str, pi1: float) -> MetricsCell:
        for c in self.cells:
            if c.method == method and np.isclose(c.pi1, pi1):
                return c
        raise KeyError((method, pi1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for c in self.cells:
            row = asdict(c)
            row["lambda"] = row.pop("lam")
            w.writerow([_fmt_csv(row[k]) for k in self.CSV_COLUMNS])
        return buf.getvalue()

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {"config": self.config.to_dict(), "cells": [asdict(c) for c in self.cells]}
        for c in out["cells"]:
            c["lambda"] = c.pop("lam")
        if include_timing:
            out["wall_clock_seconds"] = self.wall_clock_seconds
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


def _fmt_csv(v):
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def run_method(name, data, params, alpha, table=None, eta=None) -> DecisionSet:
    """Dispatch one procedure by name at the given parameters."""
    if name in ("gate1", "gate2"):
        table = build_lfdr_table(data, params) if table is None else table
        if name == "gate1":
            return gate1(table, alpha)
        return gate2(table, alpha, eta)
    fn = {
        "naive": baselines.naive_method,
        "sc": baselines.sc_method,
        "gbh": baselines.gbh_method,
        "bb": baselines.bb_method,
    }.get(name)
    if fn is None:
        raise ValueError(f"unknown method {name!r}")
    return fn(data, params, alpha)


def _selective_fdp(dec: DecisionSet, truth: LatentTruth) -> float:
    S = dec.selected_groups
    if S.size == 0:
        return 0.0
    gidx = dec.group_index
    false = dec.delta_hyp & ~truth.theta_hyp
    V = np.bincount(gidx, weights=false, minlength=dec.sizes.size)[S]
    R = np.bincount(gidx, weights=dec.delta_hyp, minlength=dec.sizes.size)[S]
    return float(np.mean(V / np.maximum(R, 1.0)))


def _replicate(cfg: SimulationConfig, grid_idx: int, rep: int):
    """One replication at one grid point: per-method metric rows."""
    seq = np.random.SeedSequence(cfg.seed, spawn_key=(grid_idx, rep))
    rng = np.random.default_rng(seq)
    true_params = cfg.params_at(cfg.pi1_grid[grid_idx])
    data, truth = generate_dataset(cfg.m, cfg.n, true_params, rng)
    true_table = build_lfdr_table(data, true_params)

    use_params, use_table = true_params, true_table
    if cfg.data_driven:
        from .gibbs import GibbsConfig, gibbs_run, posterior_medians

        gcfg = GibbsConfig(
            K=cfg.K, iters=cfg.gibbs_iters, burn_in=cfg.gibbs_burn_in,
            thin=cfg.gibbs_thin, chains=1, seed=int(seq.generate_state(1)[0]),
        )
        use_params = posterior_medians(gibbs_run(data, gcfg)).to_params(sigma=1.0)
        use_table = build_lfdr_table(data, use_params)

    rows = []
    theta = truth.theta_hyp
    for name in cfg.methods:
        dec = run_method(name, data, use_params, cfg.alpha, use_table, cfg.eta_value)
        R = dec.n_rejections
        TR = int((dec.delta_hyp & theta).sum())
        if name in SELECTIVE_METHODS:
            bayes, freq = pfdr_selective(dec, true_table), _selective_fdp(dec, truth)
        else:
            bayes, freq = pfdr_total(dec, true_table), (R - TR) / max(R, 1)
        rows.append((bayes, freq, R, TR, pfdr_between(dec, true_table)))
    return np.array(rows, dtype=float)


def _aggregate(cfg, grid_idx, reps):
    arr = np.stack(reps)  # (reps, methods, 5)
    n = arr.shape[0]
    mean = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    pi1 = cfg.pi1_grid[grid_idx]
    lam = float(lambda_group(pi1, cfg.pi2, cfg.n)) if 0 < pi1 < 1 else float("nan")
    cells = []
    for k, name in enumerate(cfg.methods):
        cells.append(MetricsCell(
            method=name, pi1=pi1, lam=lam, replications=n,
            bayes_fdr=float(mean[k, 0]), freq_fdr=float(mean[k, 1]),
            mean_rejections=float(mean[k, 2]), mean_true_rejections=float(mean[k, 3]),
            mcse_bayes_fdr=float(se[k, 0]), mcse_freq_fdr=float(se[k, 1]),
            mcse_rejections=float(se[k, 2]), mcse_true_rejections=float(se[k, 3]),
            bayes_fdr_between=float(mean[k, 4]), max_pfdr_between=float(arr[:, k, 4].max()),
        ))
    return cells


def _replicate_star(args):
    return _replicate(*args)


def run_benchmark(cfg: SimulationConfig, workers: int = 1) -> MetricsReport:
    """Run every (grid point, replication) and aggregate per method.

    Replication seeds derive from ``(cfg.seed, grid index, replication)``, and
    results are reduced in replication order, so the report does not depend on
    ``workers``.
    """
    start = time.perf_counter()
    jobs = [(cfg, g, r) for g in range(len(cfg.pi1_grid)) for r in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_replicate_star, jobs, chunksize=8))
    else:
        results = []
        for job in jobs:
            try:
                results.append(_replicate(*job))
            except Exception as exc:
                _, g, r = job
                raise RuntimeError(
                    f"replication failed at pi1={cfg.pi1_grid[g]} (grid {g}), rep {r}, seed {cfg.seed}"
                ) from exc
    cells = []
    for g in range(len(cfg.pi1_grid)):
        reps = results[g * cfg.replications:(g + 1) * cfg.replications]
        cells.extend(_aggregate(cfg, g, reps))
    return MetricsReport(cfg, cells, time.perf_counter() - start)
