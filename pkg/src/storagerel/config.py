"""Run configuration documents (JSON) and their validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .distributions import WeibullSpec
from .raid import FitPlan, SystemConfig

HOURS_PER_YEAR = 8760.0


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "system": {"n", "k"},
    "distributions": {"ttop", "ttr", "ttld", "ttscr"},
    "fit_plan": {
        "ttop", "ttr", "ttscr", "ttld", "allow_repair", "three_state_branch",
        "four_state_grid", "four_state_starts", "four_state_seed", "horizon_years",
    },
    "model": {"scrub", "rebuild_to", "loss_trigger"},
    "analysis": {"grid_years", "epsilon", "group_multiplier", "state_cap"},
    "simulation": {"reps", "seed", "clocks", "rebuild", "group_multiplier"},
    "sweep": {"parameter", "values", "t_years", "systems"},
}
_DIST_KEYS = {"family", "shape", "scale", "offset"}


@dataclass(frozen=True)
class AnalysisOptions:
    grid_years: tuple = tuple(range(1, 11))
    epsilon: float = 1e-8
    group_multiplier: float = 1000.0
    state_cap: int = 5_000_000


@dataclass(frozen=True)
class SimulationOptions:
    reps: int = 10_000
    seed: int = 1
    clocks: str = "weibull"
    rebuild: str = "replace"
    group_multiplier: Optional[float] = None


@dataclass(frozen=True)
class SweepOptions:
    parameter: str = "ttop.shape"
    values: tuple = ()
    t_years: float = 10.0
    systems: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    simulation: SimulationOptions = field(default_factory=SimulationOptions)
    sweep: SweepOptions = field(default_factory=SweepOptions)

    @property
    def grid_hours(self) -> list:
        return [y * HOURS_PER_YEAR for y in self.analysis.grid_years]

    @property
    def sim_multiplier(self) -> float:
        return self.simulation.group_multiplier or self.analysis.group_multiplier


def _reject_unknown(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")


def _number(value, where, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return kind(value)


def _distribution(doc, where) -> Optional[WeibullSpec]:
    if doc is None:
        return None
    _reject_unknown(doc, _DIST_KEYS, where)
    family = doc.get("family", "weibull")
    try:
        if family == "exponential":
            if "shape" in doc and doc["shape"] != 1:
                raise ConfigError(f"{where}.shape: exponential family has shape 1")
            return WeibullSpec(1.0, _number(doc["scale"], f"{where}.scale"))
        if family == "weibull":
            return WeibullSpec(
                _number(doc["shape"], f"{where}.shape"),
                _number(doc["scale"], f"{where}.scale"),
                _number(doc.get("offset", 0.0), f"{where}.offset"),
            )
    except KeyError as err:
        raise ConfigError(f"{where}: missing key {err.args[0]!r}") from None
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from None
    raise ConfigError(f"{where}.family: unknown family {family!r}")


def parse_config(doc: dict) -> RunConfig:
    """Validate a decoded config document; errors name the offending key."""
    if not isinstance(doc, dict) or not doc:
        raise ConfigError("config must be a non-empty JSON object")
    _reject_unknown(doc, set(_SCHEMA), "config")
    for name, keys in _SCHEMA.items():
        if name in doc:
            _reject_unknown(doc[name], keys, name)
    for required in ("system", "distributions"):
        if required not in doc:
            raise ConfigError(f"config: missing key {required!r}")

    sysdoc, dists = doc["system"], doc["distributions"]
    for key in ("n", "k"):
        if key not in sysdoc:
            raise ConfigError(f"system: missing key {key!r}")
    for key in ("ttop", "ttr"):
        if key not in dists:
            raise ConfigError(f"distributions: missing key {key!r}")

    plan_doc = dict(doc.get("fit_plan", {}))
    if "horizon_years" in plan_doc:
        plan_doc["horizon"] = _number(plan_doc.pop("horizon_years"), "fit_plan.horizon_years") * HOURS_PER_YEAR
    try:
        plan = FitPlan(**plan_doc)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"fit_plan: {err}") from None

    try:
        system = SystemConfig(
            n=_number(sysdoc["n"], "system.n", int),
            k=_number(sysdoc["k"], "system.k", int),
            ttop=_distribution(dists["ttop"], "distributions.ttop"),
            ttr=_distribution(dists["ttr"], "distributions.ttr"),
            ttld=_distribution(dists.get("ttld"), "distributions.ttld"),
            ttscr=_distribution(dists.get("ttscr"), "distributions.ttscr"),
            fit_plan=plan,
            **doc.get("model", {}),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"system/model: {err}") from None

    an = doc.get("analysis", {})
    analysis = AnalysisOptions(
        grid_years=tuple(_number(y, "analysis.grid_years") for y in an.get("grid_years", range(1, 11))),
        epsilon=_number(an.get("epsilon", 1e-8), "analysis.epsilon"),
        group_multiplier=_number(an.get("group_multiplier", 1000.0), "analysis.group_multiplier"),
        state_cap=_number(an.get("state_cap", 5_000_000), "analysis.state_cap", int),
    )
    if any(y < 0 for y in analysis.grid_years) or list(analysis.grid_years) != sorted(analysis.grid_years):
        raise ConfigError("analysis.grid_years: must be non-negative and ascending")
    if not 0 < analysis.epsilon < 1:
        raise ConfigError("analysis.epsilon: must lie in (0, 1)")

    sm = doc.get("simulation", {})
    simulation = SimulationOptions(
        reps=_number(sm.get("reps", 10_000), "simulation.reps", int),
        seed=_number(sm.get("seed", 1), "simulation.seed", int),
        clocks=sm.get("clocks", "weibull"),
        rebuild=sm.get("rebuild", "replace"),
        group_multiplier=(_number(sm["group_multiplier"], "simulation.group_multiplier")
                          if "group_multiplier" in sm else None),
    )
    if simulation.clocks not in ("weibull", "phase-type"):
        raise ConfigError("simulation.clocks: must be 'weibull' or 'phase-type'")
    if simulation.rebuild not in ("replace", "repair"):
        raise ConfigError("simulation.rebuild: must be 'replace' or 'repair'")

    sw = doc.get("sweep", {})
    systems = []
    for i, s in enumerate(sw.get("systems", [])):
        _reject_unknown(s, {"n", "k"}, f"sweep.systems[{i}]")
        systems.append((_number(s["n"], f"sweep.systems[{i}].n", int), _number(s["k"], f"sweep.systems[{i}].k", int)))
    sweep = SweepOptions(
        parameter=sw.get("parameter", "ttop.shape"),
        values=tuple(_number(v, "sweep.values") for v in sw.get("values", ())),
        t_years=_number(sw.get("t_years", 10.0), "sweep.t_years"),
        systems=tuple(systems),
    )
    if sweep.parameter != "ttop.shape":
        raise ConfigError("sweep.parameter: only 'ttop.shape' is supported")
    return RunConfig(system, analysis, simulation, sweep)


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError(f"{path}: empty config file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from None
    return parse_config(doc)


def with_overrides(cfg: RunConfig, *, reps=None, seed=None, epsilon=None, states=None,
                   erlang_stages=None, allow_repair=None) -> RunConfig:
    """Apply command-line overrides on top of the file config."""
    plan = cfg.system.fit_plan
    if states is not None:
        plan = replace(plan, ttop={3: "three-state", 4: "four-state"}[states])
    if erlang_stages is not None:
        plan = replace(plan, ttr=f"erlang-{erlang_stages}", ttscr=f"erlang-{erlang_stages}")
    if allow_repair:
        plan = replace(plan, allow_repair=True)
    analysis = cfg.analysis if epsilon is None else replace(cfg.analysis, epsilon=epsilon)
    simulation = cfg.simulation
    if reps is not None:
        simulation = replace(simulation, reps=reps)
    if seed is not None:
        simulation = replace(simulation, seed=seed)
    return replace(cfg, system=replace(cfg.system, fit_plan=plan), analysis=analysis, simulation=simulation)
