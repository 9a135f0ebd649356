"""Phase-type approximations of Weibull lifetimes.

Three fitting routes are provided:

* the closed-form three-state (burn-in / burnt-in / failed) moment match,
* mean-matched k-stage Erlang for repair-like distributions,
* a five-rate, three-phase Coxian fitted to the Weibull hazard curve.

Each route has a functional form and a scikit-learn style estimator
wrapper (``fit(target)`` returning ``self``, fitted attributes with a
trailing underscore, ``get_params``/``set_params`` for free).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .distributions import (
    ErlangSpec,
    MomentTriple,
    PhaseTypeSpec,
    ThreeStateParams,
    WeibullSpec,
    as_phase_type,
)
from .validation import check_positive

TEN_YEARS = 87600.0
RATE_FLOOR = 1e-12


class FitError(ValueError):
    """Closed-form three-state fit has no valid (real, positive) solution.

    ``kind`` is ``"complex_discriminant"`` or ``"negative_rate"``; ``raw``
    holds the unrepaired closed-form (alpha, sigma, beta) of each branch,
    possibly complex, so :func:`repair_infeasible_fit` can work from them.
    """

    def __init__(self, kind: str, raw: tuple, moments: MomentTriple, discriminant: float):
        self.kind = kind
        self.raw = raw
        self.moments = moments
        self.discriminant = discriminant
        super().__init__(
            f"three-state fit infeasible ({kind}): alpha, sigma, beta = {raw[0]}"
        )


class FourStateFitError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        self.best_residual = best_residual
        super().__init__(f"{message} (best residual {best_residual:.3e})")


@dataclass(frozen=True)
class FourStateParams:
    """Three transient phases in series; phase i fails at ``fail_i`` or advances at ``advance_i``."""

    advance1: float
    advance2: float
    fail1: float
    fail2: float
    fail3: float

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive rate, got {v}")

    def as_dict(self) -> dict:
        return {
            "advance1": self.advance1,
            "advance2": self.advance2,
            "fail1": self.fail1,
            "fail2": self.fail2,
            "fail3": self.fail3,
        }

    def to_phase_type(self) -> PhaseTypeSpec:
        a1, a2, f1, f2, f3 = (self.advance1, self.advance2, self.fail1, self.fail2, self.fail3)
        T = np.array([[-(a1 + f1), a1, 0.0], [0.0, -(a2 + f2), a2], [0.0, 0.0, -f3]])
        return PhaseTypeSpec(np.array([1.0, 0.0, 0.0]), T, ("phase1", "phase2", "phase3"))


@dataclass
class FitReport:
    params: Union[ThreeStateParams, ErlangSpec, FourStateParams]
    target: Optional[WeibullSpec]
    max_cdf_excess: float
    min_cdf_deficit: float
    hazard_limit: float
    method: str
    repaired: bool = False
    branches: tuple = ()
    residual: Optional[float] = None
    notes: list = field(default_factory=list)

    @property
    def deviation_band(self) -> float:
        return self.max_cdf_excess - self.min_cdf_deficit

    def to_dict(self) -> dict:
        def _params(p):
            if isinstance(p, ThreeStateParams):
                return {"alpha": p.alpha, "sigma": p.sigma, "beta": p.beta}
            if isinstance(p, ErlangSpec):
                return {"stages": p.stages, "rate": p.rate}
            return p.as_dict()

        out = {
            "method": self.method,
            "params": _params(self.params),
            "mean": as_phase_type(self.params).mean,
            "max_cdf_excess": self.max_cdf_excess,
            "min_cdf_deficit": self.min_cdf_deficit,
            "hazard_limit": self.hazard_limit,
            "repaired": self.repaired,
        }
        if self.target is not None:
            out["target"] = {
                "shape": self.target.shape,
                "scale": self.target.scale,
                "offset": self.target.offset,
                "mean": self.target.mean,
            }
        if self.branches:
            out["branches"] = [_params(b) for b in self.branches]
        if self.residual is not None:
            out["residual"] = self.residual
        if self.notes:
            out["notes"] = list(self.notes)
        return out


# --- three-state closed form -------------------------------------------------


def _confluent(p: ThreeStateParams) -> bool:
    return abs(p.sigma + p.alpha - p.beta) <= 1e-9 * p.beta


def three_state_pdf(p: ThreeStateParams, t):
    """Absorption density of the burn-in chain (mixture of two exponentials)."""
    t = np.asarray(t, dtype=float)
    a, s, b = p.alpha, p.sigma, p.beta
    r = s + a
    if _confluent(p):
        out = a * np.exp(-r * t) + s * r * t * np.exp(-r * t)
    else:
        out = (b * s * np.exp(-b * t) + (a - b) * r * np.exp(-r * t)) / (r - b)
    return float(out) if out.ndim == 0 else out


def three_state_sf(p: ThreeStateParams, t):
    t = np.asarray(t, dtype=float)
    a, s, b = p.alpha, p.sigma, p.beta
    r = s + a
    if _confluent(p):
        out = np.exp(-r * t) * (1.0 + s * t)
    else:
        out = (s * np.exp(-b * t) + (a - b) * np.exp(-r * t)) / (r - b)
    return float(out) if out.ndim == 0 else out


def _scaled_terms(p: ThreeStateParams, t):
    """Density and survival multiplied by ``exp(m t)``, ``m`` the slower decay rate.

    Factoring out the dominant exponential keeps ratios of the two finite
    long after both underflow on their own.
    """
    a, s, b = p.alpha, p.sigma, p.beta
    r = s + a
    if _confluent(p):
        return a + s * r * t, 1.0 + s * t, r, r
    m = min(r, b)
    eb, er = np.exp(-(b - m) * t), np.exp(-(r - m) * t)
    pdf = (b * s * eb + (a - b) * r * er) / (r - b)
    sf = (s * eb + (a - b) * er) / (r - b)
    return pdf, sf, m, r + b - m


def three_state_hazard(p: ThreeStateParams, t):
    t = np.asarray(t, dtype=float)
    pdf, sf, _, _ = _scaled_terms(p, t)
    out = np.asarray(pdf / sf)
    return float(out) if out.ndim == 0 else out


def hazard_slope_three_state(p: ThreeStateParams, t):
    """d/dt of the hazard; its sign is the sign of ``beta - alpha`` for every t."""
    t = np.asarray(t, dtype=float)
    a, s, b = p.alpha, p.sigma, p.beta
    _, sf, slow, fast = _scaled_terms(p, t)
    out = np.asarray(s * (b - a) * np.exp(-(fast - slow) * t) / sf ** 2)
    return float(out) if out.ndim == 0 else out


def fit_three_state(m: MomentTriple) -> tuple[ThreeStateParams, ...]:
    """Match three raw moments with the burn-in chain, in closed form.

    The density is a two-exponential mixture, so the reduced moments
    ``n_k = mu_k / k!`` satisfy a two-term linear recurrence. Its
    characteristic roots are the two decay rates {beta, sigma + alpha};
    assigning them either way round gives the two branches, and alpha
    (symmetric in the roots) is shared.

    Returns the feasible branches, the one with the smaller ``beta``
    first. Raises :class:`FitError` if neither branch is real and positive.
    """
    m1, m2, m3 = m.as_tuple()
    n1, n2, n3 = m1, m2 / 2.0, m3 / 6.0
    a_coef = n1 * n3 - n2 ** 2
    b_coef = n3 - n1 * n2
    c_coef = n2 - n1 ** 2
    disc = b_coef ** 2 - 4 * a_coef * c_coef
    if abs(c_coef) <= 1e-12 * n1 ** 2 or abs(a_coef) <= 1e-12 * n1 ** 4:
        # exponential moments: only the sigma -> 0 limit matches
        raw = ((1 / m1, 0.0, 1 / m1), (1 / m1, 0.0, 1 / m1))
        raise FitError("negative_rate", raw, m, disc)
    root = cmath.sqrt(disc)
    roots = ((b_coef - root) / (2 * a_coef), (b_coef + root) / (2 * a_coef))
    raw = []
    for beta, r in (roots, roots[::-1]):
        alpha = beta + r - beta * r * m1
        raw.append((alpha, r - alpha, beta))
    if disc < 0:
        raise FitError("complex_discriminant", tuple(raw), m, disc)
    raw = [tuple(float(x.real) for x in br) for br in raw]
    raw.sort(key=lambda br: br[2])
    feasible = [ThreeStateParams(*br) for br in raw if all(math.isfinite(x) and x > 0 for x in br)]
    if not feasible:
        raise FitError("negative_rate", tuple(raw), m, disc)
    return tuple(feasible)


def repair_infeasible_fit(err: FitError, m: MomentTriple) -> ThreeStateParams:
    """Nearest usable chain: real parts, rates floored at 1e-12/h, then one common rescale to restore mu1."""
    alpha, sigma, beta = (max(float(getattr(x, "real", x)), RATE_FLOOR) for x in err.raw[0])
    mu1 = (1.0 + sigma / beta) / (alpha + sigma)
    c = mu1 / m.mu1
    return ThreeStateParams(alpha * c, sigma * c, beta * c)


def three_state_hazard_limit(p: ThreeStateParams) -> float:
    return min(p.beta, p.sigma + p.alpha)


# --- Erlang ------------------------------------------------------------------


def fit_erlang(stages: int, target) -> ErlangSpec:
    """Mean-matched Erlang: ``rate = stages / mean(target)``."""
    if int(stages) != stages or stages < 1:
        raise ValueError(f"stages must be a positive integer, got {stages}")
    mean = target.mu1 if isinstance(target, MomentTriple) else target.mean
    return ErlangSpec(int(stages), stages / mean)


# --- four-state hazard fit ---------------------------------------------------


def _coxian_hazard(rates: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Hazard of the 3-phase Coxian on a uniform grid starting at ``times[0]``."""
    a1, a2, f1, f2, f3 = rates
    T = np.array([[-(a1 + f1), a1, 0.0], [0.0, -(a2 + f2), a2], [0.0, 0.0, -f3]])
    exit_rates = np.array([f1, f2, f3])
    step = expm(T * (times[1] - times[0]))
    v = np.array([1.0, 0.0, 0.0]) @ expm(T * times[0])
    out = np.empty(times.size)
    for i in range(times.size):
        out[i] = v @ exit_rates / v.sum()
        v = v @ step
    return out


def _coxian_mean(rates: np.ndarray) -> float:
    a1, a2, f1, f2, f3 = rates
    r1, r2 = a1 + f1, a2 + f2
    return 1 / r1 + (a1 / r1) * (1 / r2 + (a2 / r2) / f3)


def fit_four_state(
    target: WeibullSpec,
    horizon: float = TEN_YEARS,
    grid: int = 1000,
    n_starts: int = 16,
    seed: int = 0,
    mean_weight: float = 1.0,
    mean_tolerance: float = 0.05,
) -> tuple[FourStateParams, float]:
    """Least-squares fit of the Coxian hazard to the Weibull hazard on ``(0, horizon]``.

    Residuals are hazard differences at ``grid`` uniformly spaced times,
    scaled by the target mean, plus one mean-mismatch term so the tail
    beyond the horizon cannot drift. Starts are the three-state solution
    and ``n_starts - 1`` log-normal perturbations of it.

    Returns the best parameters and their residual cost.
    """
    check_positive(horizon, "horizon")
    if grid < 2:
        raise ValueError("grid needs at least 2 points")
    mu1 = target.mean
    times = horizon * np.arange(1, grid + 1) / grid
    h_target = target.hazard(times)

    def residuals(log_rates):
        rates = np.exp(log_rates)
        diff = (_coxian_hazard(rates, times) - h_target) * mu1 / math.sqrt(grid)
        return np.append(diff, mean_weight * (_coxian_mean(rates) / mu1 - 1.0))

    try:
        seed_fit = fit_three_state(target.moments())[0]
    except FitError as err:
        seed_fit = repair_infeasible_fit(err, target.moments())
    x0 = np.log([seed_fit.sigma, seed_fit.sigma, seed_fit.alpha, seed_fit.beta, seed_fit.beta])
    rng = np.random.default_rng(seed)
    best = None
    for i in range(n_starts):
        start = x0 if i == 0 else x0 + rng.normal(0.0, 1.0, 5)
        with np.errstate(all="ignore"):
            try:
                res = least_squares(residuals, start, xtol=1e-10, ftol=1e-12, gtol=1e-12, max_nfev=2000)
            except ValueError:
                continue
        if res.status > 0 and np.isfinite(res.cost) and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FourStateFitError("no least-squares start converged", float("inf"))
    rates = np.exp(best.x)
    if abs(_coxian_mean(rates) / mu1 - 1.0) > mean_tolerance:
        raise FourStateFitError("fitted mean outside tolerance", float(best.cost))
    return FourStateParams(*(float(r) for r in rates)), float(best.cost)


# --- approximation quality ---------------------------------------------------


def _cdf_on_grid(dist, times: np.ndarray) -> np.ndarray:
    try:
        ph = as_phase_type(dist)
    except TypeError:
        return np.asarray(dist.cdf(times), dtype=float)
    step = expm(ph.subgen * (times[1] - times[0]))
    v = ph.initial @ expm(ph.subgen * times[0])
    out = np.empty(times.size)
    for i in range(times.size):
        out[i] = 1.0 - v.sum()
        v = v @ step
    return out


def cdf_deviation(p, target, horizon: float = TEN_YEARS, points: int = 10_001) -> tuple[float, float]:
    """Extremes of ``approx_cdf - target_cdf`` over a uniform grid on ``[0, horizon]``."""
    check_positive(horizon, "horizon")
    times = np.linspace(0.0, horizon, points)
    diff = _cdf_on_grid(p, times) - _cdf_on_grid(target, times)
    return max(float(diff.max()), 0.0), min(float(diff.min()), 0.0)


def hazard_limit(p) -> float:
    """Asymptotic hazard: decay rate of the slowest phase reachable from the start."""
    if isinstance(p, ThreeStateParams):
        return three_state_hazard_limit(p)
    ph = as_phase_type(p)
    T = ph.subgen
    adjacent = (T - np.diag(np.diag(T))) > 0
    reach = ph.initial > 0
    while True:
        grown = reach | adjacent[reach].any(axis=0)
        if (grown == reach).all():
            break
        reach = grown
    return float(np.min(-np.diag(T)[reach]))


def build_report(params, target, method, *, horizon=TEN_YEARS, **extra) -> FitReport:
    if target is not None:
        excess, deficit = cdf_deviation(params, target, horizon)
    else:
        excess = deficit = float("nan")
    return FitReport(
        params=params,
        target=target,
        max_cdf_excess=excess,
        min_cdf_deficit=deficit,
        hazard_limit=hazard_limit(params),
        method=method,
        **extra,
    )


# --- estimators --------------------------------------------------------------


def _split_target(target):
    if isinstance(target, MomentTriple):
        return target, None
    if isinstance(target, WeibullSpec):
        return target.moments(), target
    if isinstance(target, PhaseTypeSpec):
        return target.moments(), None
    raise TypeError(f"cannot fit to {type(target).__name__}; pass a WeibullSpec or MomentTriple")


class _PhaseTypeApproximation(BaseEstimator):
    def to_phase_type(self) -> PhaseTypeSpec:
        check_is_fitted(self, "params_")
        return as_phase_type(self.params_)

    def pdf(self, t):
        return self.to_phase_type().pdf(t)

    def cdf(self, t):
        return self.to_phase_type().cdf(t)

    def hazard(self, t):
        return self.to_phase_type().hazard(t)

    def moments(self) -> MomentTriple:
        return self.to_phase_type().moments()


class ThreeStateApproximation(_PhaseTypeApproximation):
    """Closed-form moment match of the burn-in chain.

    Parameters
    ----------
    branch : int
        Which closed-form branch to keep (0 has the smaller beta).
    allow_repair : bool
        Repair infeasible moment sets instead of raising :class:`FitError`.
    horizon : float
        Window, in hours, for the CDF-deviation diagnostics.
    """

    def __init__(self, branch: int = 0, allow_repair: bool = False, horizon: float = TEN_YEARS):
        self.branch = branch
        self.allow_repair = allow_repair
        self.horizon = horizon

    def fit(self, target, y=None):
        moments, weibull = _split_target(target)
        try:
            branches = fit_three_state(moments)
            repaired = False
            params = branches[min(self.branch, len(branches) - 1)]
        except FitError as err:
            if not self.allow_repair:
                raise
            params = repair_infeasible_fit(err, moments)
            branches = (params,)
            repaired = True
        self.branches_ = branches
        self.params_ = params
        self.repaired_ = repaired
        notes = ["infeasible closed form repaired: real parts, floored rates, mean rescaled"] if repaired else []
        self.report_ = build_report(
            params, weibull, "three-state", horizon=self.horizon,
            repaired=repaired, branches=branches, notes=notes,
        )
        return self

    def pdf(self, t):
        check_is_fitted(self, "params_")
        return three_state_pdf(self.params_, t)


class ErlangApproximation(_PhaseTypeApproximation):
    def __init__(self, stages: int = 3, horizon: float = TEN_YEARS):
        self.stages = stages
        self.horizon = horizon

    def fit(self, target, y=None):
        _, weibull = _split_target(target)
        self.params_ = fit_erlang(self.stages, target)
        self.report_ = build_report(self.params_, weibull, f"erlang-{self.stages}", horizon=self.horizon)
        return self


class FourStateApproximation(_PhaseTypeApproximation):
    """Hazard-curve least-squares fit of a three-phase Coxian (five rates)."""

    def __init__(
        self,
        horizon: float = TEN_YEARS,
        grid: int = 1000,
        n_starts: int = 16,
        random_state: int = 0,
        mean_weight: float = 1.0,
    ):
        self.horizon = horizon
        self.grid = grid
        self.n_starts = n_starts
        self.random_state = random_state
        self.mean_weight = mean_weight

    def fit(self, target, y=None):
        if not isinstance(target, WeibullSpec):
            raise TypeError("four-state fit needs a WeibullSpec target (it matches the hazard curve)")
        self.params_, self.residual_ = fit_four_state(
            target, self.horizon, self.grid, self.n_starts, self.random_state, self.mean_weight
        )
        self.report_ = build_report(
            self.params_, target, "four-state", horizon=self.horizon, residual=self.residual_
        )
        return self
