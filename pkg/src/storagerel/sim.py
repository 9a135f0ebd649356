"""Event-driven Monte Carlo simulation of one RAID/MDS group.

Each disk keeps its own clocks: an absolute failure time fixed when the
disk is installed, a latent-defect history generated lazily from its
install time, and (while failed) a rebuild completion time. Nothing is
resampled when an unrelated disk changes state, so ageing and partial
rebuild progress are tracked exactly. Data loss uses the same predicate
as the Markov model.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import beta as beta_dist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ctmc import DdfSeries
from .distributions import PhaseTypeSpec, WeibullSpec
from .raid import SystemConfig, fit_system, mds_loss_predicate
from .rng import stream
from .validation import check_time_grid

Z95 = 1.959963984540054
SMALL_COUNT = 30


class Clock:
    """Scalar sampler for one lifetime distribution, tuned for the event loop."""

    def __init__(self, dist):
        self.dist = dist
        if isinstance(dist, WeibullSpec):
            self._kind = "weibull"
        elif isinstance(dist, PhaseTypeSpec):
            T = dist.subgen
            p = dist.n_phases
            rate = -T[0, 0]
            erlang = (
                dist.initial[0] == 1.0
                and np.allclose(np.diag(T), -rate)
                and np.allclose(np.diag(T, 1), rate)
                and np.count_nonzero(T) == 2 * p - 1
            )
            if erlang:
                self._kind = "erlang"
                self._stages, self._scale = p, 1.0 / rate
            else:
                self._kind = "walk"
                self._out = -np.diag(T)
                jump = np.zeros((p, p + 1))
                jump[:, :p] = T - np.diag(np.diag(T))
                jump[:, p] = dist.exit_rates
                cum = np.cumsum(jump / jump.sum(axis=1, keepdims=True), axis=1)
                cum[:, -1] = 1.0
                self._cum = [row.tolist() for row in cum]
                self._init_cum = np.cumsum(dist.initial).tolist()
                self._absorb = p
        else:
            raise TypeError(f"unsupported clock distribution {type(dist).__name__}")

    def draw(self, rng: np.random.Generator) -> float:
        if self._kind == "weibull":
            d = self.dist
            return d.offset + d.scale * rng.standard_exponential() ** (1.0 / d.shape)
        if self._kind == "erlang":
            return rng.gamma(self._stages, self._scale)
        phase = bisect.bisect_right(self._init_cum, rng.random())
        total = 0.0
        while phase != self._absorb:
            total += rng.standard_exponential() / self._out[phase]
            phase = bisect.bisect_right(self._cum[phase], rng.random())
        return total

    def residual(self, age: float, rng: np.random.Generator) -> float:
        """Remaining life of a unit that has survived ``age`` hours."""
        if age <= 0:
            return self.draw(rng)
        return float(self.dist.sample_residual(age, rng))


class _DefectTrack:
    """Lazily generated latent-defect intervals of one disk since its install."""

    __slots__ = ("starts", "ends", "cursor", "next_scrub", "ld_rate", "scrub", "free", "rng")

    def __init__(self, installed: float, ld_rate: float, scrub: Clock, free_running: bool, rng):
        self.starts: list = []
        self.ends: list = []
        self.cursor = installed
        self.ld_rate = ld_rate
        self.scrub = scrub
        self.free = free_running
        self.rng = rng
        self.next_scrub = installed + scrub.draw(rng) if free_running else 0.0

    def _extend_past(self, t: float):
        rng = self.rng
        while self.cursor <= t:
            arrival = self.cursor + rng.standard_exponential() / self.ld_rate
            if self.free:
                while self.next_scrub <= arrival:
                    self.next_scrub += self.scrub.draw(rng)
                end = self.next_scrub
            else:
                end = arrival + self.scrub.draw(rng)
            self.starts.append(arrival)
            self.ends.append(end)
            self.cursor = end

    def first_defect_from(self, t: float) -> float:
        """Earliest time >= t at which the disk holds a latent defect."""
        self._extend_past(t)
        i = bisect.bisect_right(self.starts, t) - 1
        if i >= 0 and self.ends[i] > t:
            return t
        return self.starts[i + 1]

    def has_defect(self, t: float) -> bool:
        return self.first_defect_from(t) == t


def _clocks_for(cfg: SystemConfig, clocks: str, fitted: Optional[dict]) -> dict:
    if clocks == "weibull":
        out = {"ttop": Clock(cfg.ttop), "ttr": Clock(cfg.ttr)}
        if cfg.latent_defects:
            out["ttscr"] = Clock(cfg.ttscr)
            out["ld_rate"] = 1.0 / cfg.ttld.scale
        return out
    if clocks == "phase-type":
        fitted = fitted or fit_system(cfg)
        out = {"ttop": Clock(fitted["ttop"].phase_type), "ttr": Clock(fitted["ttr"].phase_type)}
        if cfg.latent_defects:
            out["ttscr"] = Clock(fitted["ttscr"].phase_type)
            out["ld_rate"] = float(fitted["ttld"].phase_type.exit_rates[0])
        return out
    raise ValueError(f"clocks must be 'weibull' or 'phase-type', got {clocks!r}")


def simulate_group(
    cfg: SystemConfig,
    horizon: float,
    rng: np.random.Generator,
    clocks: str = "weibull",
    rebuild: str = "replace",
    _prepared: Optional[dict] = None,
) -> float:
    """Time of the first data loss in ``[0, horizon]``, or ``inf`` if the group survives.

    ``rebuild="replace"`` installs a new disk (age 0) when a rebuild
    completes; ``"repair"`` returns the same disk with the age it had when
    it failed, so its next failure is drawn from the age-conditional law.
    """
    if rebuild not in ("replace", "repair"):
        raise ValueError("rebuild must be 'replace' or 'repair'")
    ck = _prepared or _clocks_for(cfg, clocks, None)
    loss = mds_loss_predicate(cfg)
    n = cfg.n
    ttop, ttr = ck["ttop"], ck["ttr"]
    lse = cfg.latent_defects
    free = cfg.scrub == "free-running"
    any_trigger = cfg.loss_trigger == "any"

    fail_at = [ttop.draw(rng) for _ in range(n)]
    age_at_install = [0.0] * n
    installed = [0.0] * n
    rebuild_end = [math.inf] * n
    tracks = [_DefectTrack(0.0, ck["ld_rate"], ck["ttscr"], free, rng) for _ in range(n)] if lse else None
    down = 0
    now = 0.0

    while True:
        nxt_fail = min(range(n), key=lambda i: fail_at[i])
        nxt_rb = min(range(n), key=lambda i: rebuild_end[i])
        t = min(fail_at[nxt_fail], rebuild_end[nxt_rb])
        if any_trigger and lse and down == loss.m:
            # critical window: a defect anywhere on a working disk loses data
            stop = min(t, horizon)
            first = min(tracks[i].first_defect_from(now) for i in range(n) if rebuild_end[i] == math.inf)
            if first < stop:
                return first
        if t > horizon:
            return math.inf
        now = t
        if rebuild_end[nxt_rb] <= fail_at[nxt_fail]:
            i = nxt_rb
            rebuild_end[i] = math.inf
            down -= 1
            installed[i] = t
            if rebuild == "replace":
                age_at_install[i] = 0.0
                fail_at[i] = t + ttop.draw(rng)
            else:
                fail_at[i] = t + ttop.residual(age_at_install[i], rng)
            if lse:
                tracks[i] = _DefectTrack(t, ck["ld_rate"], ck["ttscr"], free, rng)
            continue
        i = nxt_fail
        failed = down + 1
        defective = 0
        if lse and failed >= loss.m:
            defective = sum(
                1 for j in range(n) if j != i and rebuild_end[j] == math.inf and tracks[j].has_defect(t)
            )
        if loss(failed, defective, "failure"):
            return t
        age_at_install[i] += t - installed[i]
        fail_at[i] = math.inf
        rebuild_end[i] = t + ttr.draw(rng)
        down = failed


@dataclass
class SimEstimate:
    value: float
    half_width: float
    ci_low: float
    ci_high: float
    count: int
    reps: int
    seed: int
    method: str


def binomial_interval(count: int, reps: int) -> tuple[float, float, str]:
    """95% interval: normal approximation, or Clopper-Pearson when counts are small."""
    p = count / reps
    if min(count, reps - count) < SMALL_COUNT:
        lo = 0.0 if count == 0 else float(beta_dist.ppf(0.025, count, reps - count + 1))
        hi = 1.0 if count == reps else float(beta_dist.ppf(0.975, count + 1, reps - count))
        return lo, hi, "clopper-pearson"
    hw = Z95 * math.sqrt(p * (1 - p) / reps)
    return max(p - hw, 0.0), min(p + hw, 1.0), "normal"


def loss_times(
    cfg: SystemConfig,
    horizon: float,
    reps: int,
    seed: int,
    clocks: str = "weibull",
    rebuild: str = "replace",
    fitted: Optional[dict] = None,
) -> np.ndarray:
    """First-loss time of each replication (``inf`` = survived); replication i uses stream (seed, i)."""
    prepared = _clocks_for(cfg, clocks, fitted)
    return np.array(
        [simulate_group(cfg, horizon, stream(seed, i), clocks, rebuild, prepared) for i in range(reps)]
    )


def summarize(times: np.ndarray, grid: np.ndarray, reps: int, seed: int, multiplier: float) -> DdfSeries:
    finite = np.sort(times[np.isfinite(times)])
    counts = np.searchsorted(finite, grid, side="right")
    estimates, lows, highs, flags = [], [], [], []
    for c in counts:
        lo, hi, method = binomial_interval(int(c), reps)
        p = c / reps
        estimates.append(
            SimEstimate(p * multiplier, (hi - lo) / 2 * multiplier, lo * multiplier, hi * multiplier,
                        int(c), reps, seed, method)
        )
        lows.append(lo * multiplier)
        highs.append(hi * multiplier)
    if any(e.method != "normal" for e in estimates):
        flags.append("clopper-pearson-ci")
    return DdfSeries(
        times=grid,
        values=counts / reps * multiplier,
        multiplier=multiplier,
        ci_low=np.array(lows),
        ci_high=np.array(highs),
        reps=reps,
        seed=seed,
        flags=flags,
        estimates=estimates,
    )


def estimate_ddf(
    cfg: SystemConfig,
    grid,
    reps: int,
    seed: int,
    multiplier: float = 1000.0,
    clocks: str = "weibull",
    rebuild: str = "replace",
    fitted: Optional[dict] = None,
) -> DdfSeries:
    """Simulated DDF(t) per ``multiplier`` groups with 95% intervals at each grid time."""
    if reps < 100:
        raise ValueError("need at least 100 replications")
    grid = check_time_grid(grid)
    times = loss_times(cfg, float(grid[-1]), reps, seed, clocks, rebuild, fitted)
    return summarize(times, grid, reps, seed, multiplier)


def estimate_ddf_phasetype(cfg: SystemConfig, grid, reps: int, seed: int, multiplier: float = 1000.0,
                           fitted: Optional[dict] = None) -> DdfSeries:
    """Same simulator driven by the fitted phase-type clocks instead of the Weibulls."""
    return estimate_ddf(cfg, grid, reps, seed, multiplier, clocks="phase-type", fitted=fitted)


class MonteCarloReliability(BaseEstimator):
    def __init__(self, reps: int = 10_000, seed: int = 0, clocks: str = "weibull",
                 rebuild: str = "replace", multiplier: float = 1000.0):
        self.reps = reps
        self.seed = seed
        self.clocks = clocks
        self.rebuild = rebuild
        self.multiplier = multiplier

    def fit(self, cfg: SystemConfig, y=None):
        self.config_ = cfg
        self.fitted_clocks_ = fit_system(cfg) if self.clocks == "phase-type" else None
        return self

    def predict_series(self, times) -> DdfSeries:
        check_is_fitted(self, "config_")
        return estimate_ddf(self.config_, times, self.reps, self.seed, self.multiplier,
                            self.clocks, self.rebuild, self.fitted_clocks_)

    def predict(self, times) -> np.ndarray:
        return self.predict_series(times).values
