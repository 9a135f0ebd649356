"""Disk models and data-loss predicates for RAID5/RAID6 and general MDS(n, k) groups."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ctmc import (
    DEFAULT_STATE_CAP,
    DdfSeries,
    DiskLocalModel,
    LocalState,
    LocalTransition,
    build_lumped_chain,
    loss_probability,
)
from .distributions import PhaseTypeSpec, WeibullSpec
from .phfit import (
    FitError,
    FitReport,
    build_report,
    fit_erlang,
    fit_four_state,
    fit_three_state,
    repair_infeasible_fit,
)
from .validation import check_time_grid

SCRUB_MODES = ("per-defect", "free-running")
REBUILD_TARGETS = ("new", "burnt-in")
LOSS_TRIGGERS = ("failure", "any")


def parse_method(method: str) -> tuple[str, Optional[int]]:
    """``"erlang-3"`` -> ``("erlang", 3)``; other method names pass through."""
    method = method.strip().lower()
    if method.startswith("erlang"):
        tail = method[len("erlang"):].lstrip("-:{").rstrip("}")
        stages = int(tail) if tail else 3
        if stages < 1:
            raise ValueError(f"Erlang stage count must be >= 1 in {method!r}")
        return "erlang", stages
    if method in ("three-state", "four-state", "exact-exponential", "exponential"):
        return method, None
    raise ValueError(f"unknown fit method {method!r}")


@dataclass(frozen=True)
class FitPlan:
    ttop: str = "three-state"
    ttr: str = "erlang-3"
    ttscr: str = "erlang-3"
    ttld: str = "exact-exponential"
    allow_repair: bool = False
    three_state_branch: int = 0
    four_state_grid: int = 1000
    four_state_starts: int = 16
    four_state_seed: int = 0
    horizon: float = 87600.0

    def __post_init__(self):
        for name in ("ttop", "ttr", "ttscr", "ttld"):
            parse_method(getattr(self, name))
        if parse_method(self.ttld)[0] != "exact-exponential":
            raise ValueError("TTLd must be modelled as exact-exponential")


@dataclass(frozen=True)
class SystemConfig:
    """An MDS(n, k) group: any ``n - k`` disks may be lost without data loss.

    ``ttld`` and ``ttscr`` may be ``None`` to switch latent defects off.
    """

    n: int
    k: int
    ttop: WeibullSpec
    ttr: WeibullSpec
    ttld: Optional[WeibullSpec] = None
    ttscr: Optional[WeibullSpec] = None
    fit_plan: FitPlan = field(default_factory=FitPlan)
    scrub: str = "per-defect"
    rebuild_to: str = "new"
    loss_trigger: str = "failure"

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and isinstance(self.k, (int, np.integer))):
            raise TypeError("n and k must be integers")
        if not 1 <= self.k < self.n:
            raise ValueError(f"need 1 <= k < n, got n={self.n}, k={self.k}")
        if (self.ttld is None) != (self.ttscr is None):
            raise ValueError("ttld and ttscr must be given together (or both omitted)")
        if self.ttld is not None and not self.ttld.is_exponential:
            raise ValueError("TTLd must be exponential (shape 1, offset 0)")
        if self.scrub not in SCRUB_MODES:
            raise ValueError(f"scrub must be one of {SCRUB_MODES}")
        if self.rebuild_to not in REBUILD_TARGETS:
            raise ValueError(f"rebuild_to must be one of {REBUILD_TARGETS}")
        if self.loss_trigger not in LOSS_TRIGGERS:
            raise ValueError(f"loss_trigger must be one of {LOSS_TRIGGERS}")

    @property
    def m(self) -> int:
        return self.n - self.k

    @property
    def latent_defects(self) -> bool:
        return self.ttld is not None


@dataclass(frozen=True)
class LossPredicate:
    """Data loss for fault tolerance ``m``, a function of label counts only.

    ``trigger="failure"`` only lets an operational failure cause loss (a
    defect must already be present when the m-th disk fails);
    ``trigger="any"`` also counts a defect appearing while ``m`` disks are down.
    """

    m: int
    trigger: str = "failure"

    def holds(self, failed: int, defective: int) -> bool:
        return failed > self.m or (failed == self.m and defective >= 1)

    def __call__(self, failed: int, defective: int, kind: str = "failure") -> bool:
        if self.trigger == "failure" and kind != "failure":
            return False
        return self.holds(failed, defective)


def mds_loss_predicate(cfg: SystemConfig) -> LossPredicate:
    return LossPredicate(cfg.m, cfg.loss_trigger)


# --- fitting every clock of a configuration ----------------------------------


@dataclass
class FittedClock:
    name: str
    method: str
    phase_type: PhaseTypeSpec
    report: Optional[FitReport] = None
    repaired: bool = False


def fit_clock(name: str, dist: WeibullSpec, method: str, plan: FitPlan) -> FittedClock:
    kind, stages = parse_method(method)
    if kind == "exact-exponential":
        if not dist.is_exponential:
            raise ValueError(f"{name}: exact-exponential needs shape 1 and offset 0")
        return FittedClock(name, method, PhaseTypeSpec.exponential(1.0 / dist.scale))
    if kind == "exponential":
        erl = fit_erlang(1, dist)
        return FittedClock(name, method, erl.to_phase_type(), build_report(erl, dist, method, horizon=plan.horizon))
    if kind == "erlang":
        erl = fit_erlang(stages, dist)
        return FittedClock(name, method, erl.to_phase_type(), build_report(erl, dist, method, horizon=plan.horizon))
    if kind == "three-state":
        if dist.is_exponential:
            # the closed form degenerates; one phase is the exact answer
            return FittedClock(name, method, PhaseTypeSpec.exponential(1.0 / dist.scale))
        moments = dist.moments()
        try:
            branches = fit_three_state(moments)
        except FitError as err:
            if not plan.allow_repair:
                raise
            params = repair_infeasible_fit(err, moments)
            note = ["infeasible closed form repaired: real parts, floored rates, mean rescaled"]
            report = build_report(params, dist, method, horizon=plan.horizon, repaired=True, notes=note)
            return FittedClock(name, method, params.to_phase_type(), report, repaired=True)
        params = branches[min(plan.three_state_branch, len(branches) - 1)]
        report = build_report(params, dist, method, horizon=plan.horizon, branches=branches)
        return FittedClock(name, method, params.to_phase_type(), report)
    params, residual = fit_four_state(
        dist, plan.horizon, plan.four_state_grid, plan.four_state_starts, plan.four_state_seed
    )
    report = build_report(params, dist, method, horizon=plan.horizon, residual=residual)
    return FittedClock(name, method, params.to_phase_type(), report)


def fit_system(cfg: SystemConfig) -> dict:
    plan = cfg.fit_plan
    clocks = {
        "ttop": fit_clock("ttop", cfg.ttop, plan.ttop, plan),
        "ttr": fit_clock("ttr", cfg.ttr, plan.ttr, plan),
    }
    if cfg.latent_defects:
        clocks["ttld"] = fit_clock("ttld", cfg.ttld, plan.ttld, plan)
        clocks["ttscr"] = fit_clock("ttscr", cfg.ttscr, plan.ttscr, plan)
    return clocks


# --- disk model ---------------------------------------------------------------


def _chain_start(ph: PhaseTypeSpec, name: str) -> int:
    nz = np.flatnonzero(ph.initial)
    if len(nz) != 1 or ph.initial[nz[0]] != 1.0:
        raise ValueError(f"{name}: phase-type must start in a single phase")
    return int(nz[0])


def _internal_moves(ph: PhaseTypeSpec):
    T = ph.subgen
    for a in range(ph.n_phases):
        for b in range(ph.n_phases):
            if a != b and T[a, b] > 0:
                yield a, b, float(T[a, b])


def build_disk_model(cfg: SystemConfig, clocks: Optional[dict] = None) -> DiskLocalModel:
    """Per-disk CTMC from the fitted failure, defect, scrub and rebuild clocks.

    Operational states combine the failure phase with the latent-defect
    status. With ``scrub="per-defect"`` the scrub clock starts when a
    defect appears (states: clean, or defect in scrub stage s); with
    ``"free-running"`` every disk always sits in some scrub stage and a
    completed pass clears the defect flag. A failure enters the rebuild
    chain; rebuild completion restores a clean disk either as a new disk
    (``rebuild_to="new"``, burn-in again) or in the last failure phase.
    """
    clocks = clocks or fit_system(cfg)
    fail_ph = clocks["ttop"].phase_type
    rebuild_ph = clocks["ttr"].phase_type
    start = _chain_start(fail_ph, "ttop")
    rb_start = _chain_start(rebuild_ph, "ttr")
    P = fail_ph.n_phases
    exits = fail_ph.exit_rates
    lse = cfg.latent_defects
    if lse:
        ld_rate = float(clocks["ttld"].phase_type.exit_rates[0])
        scrub_ph = clocks["ttscr"].phase_type
        scr_start = _chain_start(scrub_ph, "ttscr")
        S = scrub_ph.n_phases
        scr_exit = scrub_ph.exit_rates

    states, index = [], {}

    def add(key, **labels):
        index[key] = len(states)
        states.append(LocalState(**labels))

    def burn(p):
        return P > 1 and p < P - 1

    free = lse and cfg.scrub == "free-running"
    # initial state first
    if free:
        add(("op", start, False, scr_start), name=f"p{start}:clean:scr{scr_start}", phase=start,
            burn_in=burn(start), scrub_stage=scr_start)
    else:
        add(("op", start, None), name=f"p{start}:clean", phase=start, burn_in=burn(start))
    for p in range(P):
        if free:
            for d in (False, True):
                for s in range(S):
                    if ("op", p, d, s) not in index:
                        add(("op", p, d, s), name=f"p{p}:{'defect' if d else 'clean'}:scr{s}", phase=p,
                            defect=d, burn_in=burn(p), scrub_stage=s)
        else:
            if ("op", p, None) not in index:
                add(("op", p, None), name=f"p{p}:clean", phase=p, burn_in=burn(p))
            if lse:
                for s in range(S):
                    add(("op", p, s), name=f"p{p}:defect:scr{s}", phase=p, defect=True,
                        burn_in=burn(p), scrub_stage=s)
    for j in range(rebuild_ph.n_phases):
        add(("rb", j), name=f"rebuild{j}", failed=True, rebuild_stage=j)

    trans = []

    def link(a, b, rate, kind):
        if rate > 0:
            trans.append(LocalTransition(index[a], index[b], rate, kind))

    rb_entry = ("rb", rb_start)
    target_phase = start if cfg.rebuild_to == "new" else P - 1
    back = ("op", target_phase, False, scr_start) if free else ("op", target_phase, None)
    for key in list(index):
        if key[0] != "op":
            continue
        p = key[1]
        link(key, rb_entry, float(exits[p]), "failure")
        for a, b, rate in _internal_moves(fail_ph):
            if a == p:
                link(key, ("op", b) + key[2:], rate, "advance")
        if not lse:
            continue
        if free:
            _, _, d, s = key
            if not d:
                link(key, ("op", p, True, s), ld_rate, "defect")
            for a, b, rate in _internal_moves(scrub_ph):
                if a == s:
                    link(key, ("op", p, d, b), rate, "scrub")
            link(key, ("op", p, False, scr_start), float(scr_exit[s]), "scrub")
        else:
            s = key[2]
            if s is None:
                link(key, ("op", p, scr_start), ld_rate, "defect")
                continue
            for a, b, rate in _internal_moves(scrub_ph):
                if a == s:
                    link(key, ("op", p, b), rate, "scrub")
            link(key, ("op", p, None), float(scr_exit[s]), "scrub")
    for a, b, rate in _internal_moves(rebuild_ph):
        link(("rb", a), ("rb", b), rate, "rebuild")
    for j in range(rebuild_ph.n_phases):
        link(("rb", j), back, float(rebuild_ph.exit_rates[j]), "rebuild")
    return DiskLocalModel(tuple(states), tuple(trans), initial=0)


# --- analytic estimator -------------------------------------------------------


class MarkovReliabilityModel(BaseEstimator):
    """Fit phase-type clocks, build the lumped chain, predict DDF(t).

    Parameters
    ----------
    epsilon : float
        L1 truncation bound of the uniformization at each reported time.
    multiplier : float
        Group count DDF is reported per (1000 for RAID5 tables, 1e6 for RAID6).
    state_cap : int
        Maximum number of reachable lumped states.
    """

    def __init__(self, epsilon: float = 1e-8, multiplier: float = 1000.0, state_cap: int = DEFAULT_STATE_CAP):
        self.epsilon = epsilon
        self.multiplier = multiplier
        self.state_cap = state_cap

    def fit(self, cfg: SystemConfig, y=None):
        self.config_ = cfg
        self.clocks_ = fit_system(cfg)
        self.disk_model_ = build_disk_model(cfg, self.clocks_)
        self.loss_ = mds_loss_predicate(cfg)
        self.chain_ = build_lumped_chain(self.disk_model_, cfg.n, self.loss_, self.state_cap)
        self.flags_ = [f"repaired-fit:{name}" for name, c in self.clocks_.items() if c.repaired]
        return self

    @property
    def n_states_(self) -> int:
        check_is_fitted(self, "chain_")
        return self.chain_.n_states

    def predict_series(self, times) -> DdfSeries:
        check_is_fitted(self, "chain_")
        series = loss_probability(self.chain_, check_time_grid(times), self.multiplier, self.epsilon)
        series.flags = list(self.flags_)
        return series

    def predict(self, times) -> np.ndarray:
        return self.predict_series(times).values


# --- failure-shape sweep ------------------------------------------------------


@dataclass
class SweepPoint:
    n: int
    k: int
    shape: float
    probability: float
    states: int
    seconds: float
    repaired: bool
    flags: list = field(default_factory=list)


def mean_preserving_weibull(base: WeibullSpec, shape: float) -> WeibullSpec:
    """Weibull with a new shape whose mean equals ``base.mean`` (offset kept)."""
    scale = base.scale * math.gamma(1 + 1 / base.shape) / math.gamma(1 + 1 / shape)
    return WeibullSpec(shape, scale, base.offset)


def shape_sensitivity_sweep(
    cfg: SystemConfig,
    shapes,
    t: float = 87600.0,
    epsilon: float = 1e-8,
    state_cap: int = DEFAULT_STATE_CAP,
) -> list[SweepPoint]:
    """Data-loss probability by ``t`` for each TTOp shape, mean time to failure held fixed.

    Infeasible three-state fits are repaired and flagged rather than aborting the sweep.
    """
    plan = replace(cfg.fit_plan, allow_repair=True)
    points = []
    for shape in shapes:
        if not shape > 0:
            raise ValueError(f"shape values must be > 0, got {shape}")
        point_cfg = replace(cfg, ttop=mean_preserving_weibull(cfg.ttop, shape), fit_plan=plan)
        started = time.perf_counter()
        model = MarkovReliabilityModel(epsilon=epsilon, multiplier=1.0, state_cap=state_cap).fit(point_cfg)
        prob = float(model.predict([t])[-1])
        elapsed = time.perf_counter() - started
        points.append(
            SweepPoint(
                n=cfg.n, k=cfg.k, shape=float(shape), probability=prob, states=model.n_states_,
                seconds=elapsed, repaired=bool(model.flags_), flags=list(model.flags_),
            )
        )
    return points
