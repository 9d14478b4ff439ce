"""Group-adjusted local false discovery rates for one-way classified hypotheses."""

__version__ = "0.1.0"

from .model import (
    DegenerateGroupError,
    DensitySpec,
    GammParams,
    GroupedObservations,
    LatentTruth,
    LfdrTable,
    NumericalError,
    brute_force_posterior,
    build_lfdr_table,
    generate_dataset,
    lambda_group,
    lfdr_cond,
    lfdr_group,
    lfdr_hypothesis,
    lfdr_star,
    tpbern_pmf,
    tpbern_sample,
)
from .gate import (
    DecisionSet,
    gate1,
    gate2,
    pfdr_between,
    pfdr_selective,
    pfdr_total,
    pfnr_between,
    pfnr_total,
    threshold_rule,
)
from .baselines import bb_method, gbh_method, naive_method, sc_method
from .gibbs import GibbsConfig, PosteriorSummary, fit_then_test, gibbs_run, posterior_medians
from .simulate import SimulationConfig, figure_config, run_benchmark
from .io import InputParseError, read_grouped_csv, read_params, write_params
