"""Command-line front end: ``storagerel {fit,analyze,simulate,compare,sweep}``.

Tables go to ``--out`` (or stdout) as CSV with ``#`` metadata lines and six
significant digits. Warnings are written both to stderr and to the ``flags``
column of the rows they concern.

Exit codes: 0 success, 2 configuration error, 3 three-state fit infeasible
(complex discriminant) without ``--allow-repair``, 4 state space larger than
the cap, 5 three-state fit with a negative rate without ``--allow-repair``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, with_overrides
from .ctmc import StateSpaceTooLarge
from .phfit import FitError, FourStateFitError
from .raid import MarkovReliabilityModel, fit_system, shape_sensitivity_sweep
from .sim import estimate_ddf

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_STATE_CAP = 4
EXIT_NEGATIVE_RATE = 5


def fmt(x) -> str:
    """Six significant digits; integers and strings pass through."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.6g}"


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _write_table(args, cfg: RunConfig, header: list, rows: list, meta: dict) -> None:
    buf = io.StringIO()
    buf.write(f"# storagerel {__version__}\n")
    buf.write(f"# command {args.command}\n")
    meta = {"seed": cfg.simulation.seed, "epsilon": cfg.analysis.epsilon, **meta}
    for key, value in meta.items():
        buf.write(f"# {key} {fmt(value)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fit_model(cfg: RunConfig) -> MarkovReliabilityModel:
    model = MarkovReliabilityModel(
        epsilon=cfg.analysis.epsilon,
        multiplier=cfg.analysis.group_multiplier,
        state_cap=cfg.analysis.state_cap,
    )
    model.fit(cfg.system)
    for flag in model.flags_:
        _warn(f"{flag.split(':', 1)[1]} three-state fit was infeasible and has been repaired")
    return model


def _analytic(cfg: RunConfig, args):
    model = _fit_model(cfg)
    if args.export_triplets:
        model.chain_.write_triplets(args.export_triplets)
    return model, model.predict_series(cfg.grid_hours)


def _simulated(cfg: RunConfig, fitted: Optional[dict] = None):
    sim = cfg.simulation
    series = estimate_ddf(
        cfg.system, cfg.grid_hours, sim.reps, sim.seed, cfg.sim_multiplier,
        clocks=sim.clocks, rebuild=sim.rebuild, fitted=fitted,
    )
    if "clopper-pearson-ci" in series.flags:
        _warn("few losses observed; exact binomial (Clopper-Pearson) intervals used")
    return series


# --- subcommands ----------------------------------------------------------------


def cmd_fit(cfg: RunConfig, args) -> int:
    clocks = fit_system(cfg.system)
    out = {}
    for name, clock in clocks.items():
        if clock.repaired:
            _warn(f"{name} three-state fit was infeasible and has been repaired")
        entry = {"method": clock.method, "phases": clock.phase_type.n_phases,
                 "mean": clock.phase_type.mean, "repaired": clock.repaired}
        if clock.report is not None:
            entry.update(clock.report.to_dict())
        out[name] = entry
        print(f"{name}: {clock.method}, {clock.phase_type.n_phases} phase(s), mean {fmt(clock.phase_type.mean)} h"
              + (" [repaired]" if clock.repaired else ""))
        if clock.report is not None:
            r = clock.report
            print(f"  cdf deviation band [{fmt(r.min_cdf_deficit)}, {fmt(r.max_cdf_excess)}],"
                  f" hazard limit {fmt(r.hazard_limit)} /h")
            for key, value in entry["params"].items():
                print(f"  {key} = {fmt(value)}")
            for i, b in enumerate(r.branches):
                print(f"  branch {i}: alpha = {fmt(b.alpha)}, sigma = {fmt(b.sigma)}, beta = {fmt(b.beta)}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"version": __version__, "clocks": out}, fh, indent=2, default=float)
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    model, series = _analytic(cfg, args)
    flags = ";".join(series.flags)
    rows = [[y, v, series.states, cfg.analysis.epsilon, flags]
            for y, v in zip(cfg.analysis.grid_years, series.values)]
    meta = {"n": cfg.system.n, "k": cfg.system.k, "ttop_fit": cfg.system.fit_plan.ttop,
            "states": series.states, "epsilon": cfg.analysis.epsilon,
            "per_groups": cfg.analysis.group_multiplier}
    _write_table(args, cfg, ["t_years", "ddf_analytic", "states", "epsilon", "flags"], rows, meta)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    series = _simulated(cfg)
    flags = ";".join(series.flags)
    rows = [[y, v, lo, hi, series.reps, series.seed, flags]
            for y, v, lo, hi in zip(cfg.analysis.grid_years, series.values, series.ci_low, series.ci_high)]
    meta = {"n": cfg.system.n, "k": cfg.system.k, "clocks": cfg.simulation.clocks,
            "rebuild": cfg.simulation.rebuild, "reps": series.reps, "seed": series.seed,
            "per_groups": cfg.sim_multiplier}
    _write_table(args, cfg, ["t_years", "ddf_sim", "ci_low", "ci_high", "reps", "seed", "flags"], rows, meta)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    if cfg.sim_multiplier != cfg.analysis.group_multiplier:
        raise ConfigError("compare: simulation.group_multiplier must equal analysis.group_multiplier")
    model, ana = _analytic(cfg, args)
    fitted = model.clocks_ if cfg.simulation.clocks == "phase-type" else None
    sim = _simulated(cfg, fitted)
    flags = ";".join(ana.flags + sim.flags)
    rows = []
    for y, a, s, lo, hi in zip(cfg.analysis.grid_years, ana.values, sim.values, sim.ci_low, sim.ci_high):
        sdev = 100.0 * (a - s) / s if s > 0 else float("nan")
        rows.append([y, a, s, lo, hi, sdev, flags])
    meta = {"n": cfg.system.n, "k": cfg.system.k, "ttop_fit": cfg.system.fit_plan.ttop,
            "states": ana.states, "epsilon": cfg.analysis.epsilon, "clocks": cfg.simulation.clocks,
            "reps": sim.reps, "seed": sim.seed, "per_groups": cfg.analysis.group_multiplier}
    _write_table(args, cfg, ["t_years", "ddf_analytic", "ddf_sim", "ci_low", "ci_high", "sdev_pct", "flags"],
                 rows, meta)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    sw = cfg.sweep
    if not sw.values:
        raise ConfigError("sweep.values: at least one shape value is required")
    systems = sw.systems or ((cfg.system.n, cfg.system.k),)
    rows = []
    for n, k in systems:
        try:
            system = replace(cfg.system, n=n, k=k)
        except ValueError as err:
            raise ConfigError(f"sweep.systems: {err}") from None
        started = time.perf_counter()
        points = shape_sensitivity_sweep(system, sw.values, sw.t_years * 8760.0,
                                         cfg.analysis.epsilon, cfg.analysis.state_cap)
        for p in points:
            if p.repaired:
                _warn(f"n={n} k={k} shape={fmt(p.shape)}: three-state fit repaired")
            rows.append([p.n, p.k, p.shape, p.probability, p.states, ";".join(p.flags)])
        print(f"n={n} k={k}: {len(points)} points in {time.perf_counter() - started:.2f} s", file=sys.stderr)
    meta = {"t_years": sw.t_years, "epsilon": cfg.analysis.epsilon, "ttop_fit": cfg.system.fit_plan.ttop}
    _write_table(args, cfg, ["n", "k", "shape", "dataloss_probability", "states", "flags"], rows, meta)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storagerel", description="Phase-type reliability analysis of RAID/MDS groups")
    parser.add_argument("--version", action="version", version=f"storagerel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
        p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
        p.add_argument("--reps", type=int, metavar="N", help="simulation replications")
        p.add_argument("--seed", type=int, metavar="N", help="simulation seed")
        p.add_argument("--epsilon", type=float, metavar="E", help="uniformization truncation bound")
        p.add_argument("--states", type=int, choices=(3, 4), help="phases used for the operational clock fit")
        p.add_argument("--erlang-stages", type=int, metavar="K", help="Erlang stages for rebuild and scrub")
        p.add_argument("--allow-repair", action="store_true", help="repair infeasible three-state fits")
        p.add_argument("--export-triplets", metavar="PATH", help="write the generator as (row, col, rate) triplets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.reps is not None and args.reps < 100:
            raise ConfigError("--reps: need at least 100 replications")
        if args.erlang_stages is not None and args.erlang_stages < 1:
            raise ConfigError("--erlang-stages: must be >= 1")
        if args.epsilon is not None and not 0 < args.epsilon < 1:
            raise ConfigError("--epsilon: must lie in (0, 1)")
        cfg = with_overrides(
            load_config(args.config), reps=args.reps, seed=args.seed, epsilon=args.epsilon,
            states=args.states, erlang_stages=args.erlang_stages, allow_repair=args.allow_repair,
        )
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as err:
        print(f"error: three-state fit infeasible ({err.kind}); rerun with --allow-repair "
              f"to use a repaired fit. {err}", file=sys.stderr)
        return EXIT_INFEASIBLE if err.kind == "complex_discriminant" else EXIT_NEGATIVE_RATE
    except FourStateFitError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StateSpaceTooLarge as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_STATE_CAP


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
