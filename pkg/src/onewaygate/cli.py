"""Command-line interface: ``onewaygate test|fit|simulate``.

Exit codes: 0 success, 2 usage or validation error, 3 input parse error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .gibbs import GibbsConfig, PosteriorSummary, fit_then_test, gibbs_run, posterior_medians, trace_csv
from .io import (
    InputParseError,
    build_test_report,
    dump_json,
    params_to_dict,
    read_grouped_csv,
    read_params,
)
from .model import NumericalError, build_lfdr_table
from .simulate import FIGURE_PRESETS, METHODS, SimulationConfig, figure_config, run_benchmark

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4
WORKERS_ENV = "ONEWAYGATE_WORKERS"

log = logging.getLogger("onewaygate")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name, "message": record.getMessage()})


def _setup_logging(quiet: bool, json_logs: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("onewaygate")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if quiet else logging.INFO)
    root.propagate = False


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def _add_gibbs_args(p):
    g = p.add_argument_group("Gibbs sampler")
    d = GibbsConfig()
    g.add_argument("--K", type=int, default=d.K, help="mixture components (default %(default)s)")
    g.add_argument("--sigma2", type=float, default=d.sigma2)
    g.add_argument("--iters", type=int, default=d.iters)
    g.add_argument("--burn-in", type=int, default=d.burn_in)
    g.add_argument("--thin", type=int, default=d.thin)
    g.add_argument("--chains", type=int, default=d.chains)
    g.add_argument("--sigma-mu2", type=float, default=d.sigma_mu2)
    g.add_argument("--seed", type=int, default=d.seed)


def _gibbs_config(args) -> GibbsConfig:
    return GibbsConfig(
        K=args.K, sigma2=args.sigma2, iters=args.iters, burn_in=args.burn_in,
        thin=args.thin, chains=args.chains, sigma_mu2=args.sigma_mu2, seed=args.seed,
    )


def _common(p):
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    p.add_argument("--json-logs", action="store_true", help="emit log records as JSON lines")
    p.add_argument("--workers", type=int, default=None,
                   help=f"parallel workers (default: ${WORKERS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onewaygate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run a testing procedure on grouped z-scores")
    t.add_argument("data", help="CSV with header group_id,unit_id,z")
    t.add_argument("--method", choices=METHODS, default="gate1")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--eta", type=float, default=None, help="GATE 2 selection level (default alpha/2)")
    t.add_argument("--params", help="parameter JSON; without it parameters are estimated by Gibbs sampling")
    t.add_argument("--output", "-o", default="-", help="report path (default stdout)")
    _add_gibbs_args(t)
    _common(t)

    f = sub.add_parser("fit", help="estimate model parameters by Gibbs sampling")
    f.add_argument("data")
    f.add_argument("--output", "-o", default="-", help="summary JSON path (default stdout)")
    f.add_argument("--trace", help="write the retained draws as CSV")
    f.add_argument("--use-true-params", metavar="PARAMS",
                   help="skip sampling and write these parameters unchanged")
    _add_gibbs_args(f)
    _common(f)

    s = sub.add_parser("simulate", help="run a Monte Carlo benchmark")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--config", help="SimulationConfig JSON")
    src.add_argument("--figure", choices=sorted(FIGURE_PRESETS), help="desk-scale design preset")
    s.add_argument("--replications", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--output-dir", "-o", default=".")
    s.add_argument("--prefix", default="metrics")
    s.add_argument("--timing", action="store_true", help="include wall-clock time in the JSON report")
    _common(s)
    return parser


def _write(text: str, dest: str):
    if dest == "-":
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text)


def _check_alpha(args):
    if not 0 < args.alpha < 1:
        raise ValueError("--alpha must lie in (0, 1)")
    if args.eta is not None and not 0 < args.eta < args.alpha:
        raise ValueError("--eta must lie in (0, alpha)")


def cmd_test(args) -> int:
    _check_alpha(args)
    data = read_grouped_csv(args.data)
    params = read_params(args.params) if args.params else None
    source = "supplied" if params is not None else "gibbs"
    log.info("read %d hypotheses in %d groups", data.N, data.m)
    dec, _, used, _ = fit_then_test(data, _gibbs_config(args), args.alpha, args.eta,
                                    args.method, params, _workers(args))
    table = build_lfdr_table(data, used)
    eta = args.eta if args.eta is not None else (args.alpha / 2 if args.method == "gate2" else None)
    report = build_test_report(data, table, dec, method=args.method, alpha=args.alpha, eta=eta,
                               params=used, parameter_source=source)
    log.info("%s rejected %d hypotheses in %d groups", args.method,
             report["summary"]["total_rejections"], report["summary"]["groups_with_rejections"])
    _write(dump_json(report), args.output)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _gibbs_config(args)
    data = read_grouped_csv(args.data)
    chains = []
    if args.use_true_params:
        params = read_params(args.use_true_params)
        summary = PosteriorSummary.from_params(params)
    else:
        chains = gibbs_run(data, cfg, _workers(args))
        summary = posterior_medians(chains)
        params = summary.to_params(float(np.sqrt(cfg.sigma2)))
        log.info("fit: pi1=%.4f pi2=%.4f from %d draws", summary.pi1, summary.pi2, summary.retained)
    out = params_to_dict(params)
    out["diagnostics"] = {"retained": summary.retained, "chain_spread": summary.chain_spread}
    out["gibbs_config"] = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    _write(dump_json(out), args.output)
    if args.trace:
        Path(args.trace).write_text(trace_csv(chains))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise InputParseError(f"{args.config}: invalid JSON ({exc})") from None
        cfg = SimulationConfig.from_dict(obj)
    elif args.figure:
        cfg = figure_config(args.figure)
    else:
        cfg = SimulationConfig()
    overrides = {k: v for k, v in (("replications", args.replications), ("seed", args.seed)) if v is not None}
    if overrides:
        cfg = SimulationConfig(**{**cfg.to_dict(), **overrides})
    log.info("simulate: %d grid points x %d replications", len(cfg.pi1_grid), cfg.replications)
    report = run_benchmark(cfg, _workers(args))
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{args.prefix}.csv").write_text(report.to_csv())
    (outdir / f"{args.prefix}.json").write_text(report.to_json(include_timing=args.timing))
    log.info("wrote %s.csv and %s.json in %.1fs", args.prefix, args.prefix, report.wall_clock_seconds)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.quiet, args.json_logs)
    handler = {"test": cmd_test, "fit": cmd_fit, "simulate": cmd_simulate}[args.command]
    try:
        return handler(args)
    except InputParseError as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except (FileNotFoundError, IsADirectoryError) as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_PARSE
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
