"""Weibull, Erlang and general phase-type lifetime distributions.

All times are in hours. Every distribution exposes ``pdf``, ``cdf``,
``hazard``, ``moments`` and ``sample``; phase-type objects additionally
carry their absorbing-chain representation so they can be plugged into
the CTMC builder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import expm


@dataclass(frozen=True)
class MomentTriple:
    """First three raw moments (hours, hours**2, hours**3)."""

    mu1: float
    mu2: float
    mu3: float

    def __post_init__(self):
        vals = (self.mu1, self.mu2, self.mu3)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"moments must be finite, got {vals}")
        if self.mu1 <= 0 or self.mu3 <= 0:
            raise ValueError(f"mu1 and mu3 must be positive, got {vals}")
        if self.mu2 < self.mu1 ** 2 * (1 - 1e-12):
            raise ValueError("mu2 < mu1**2 implies negative variance")

    def as_tuple(self) -> tuple[float, float, float]:
        return self.mu1, self.mu2, self.mu3


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("time values must be finite")
    if np.any(t < 0):
        raise ValueError("time values must be non-negative")
    return t


def _scalar_or_array(values, like):
    return float(values) if np.ndim(like) == 0 else values


@dataclass(frozen=True)
class WeibullSpec:
    """Two- or three-parameter Weibull: ``F(t) = 1 - exp(-((t - offset)/scale)**shape)``."""

    shape: float
    scale: float
    offset: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.shape) and self.shape > 0):
            raise ValueError(f"Weibull shape must be > 0, got {self.shape}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"Weibull scale must be > 0, got {self.scale}")
        if not (math.isfinite(self.offset) and self.offset >= 0):
            raise ValueError(f"Weibull offset must be >= 0, got {self.offset}")

    @classmethod
    def exponential(cls, mean: float) -> "WeibullSpec":
        return cls(shape=1.0, scale=mean)

    @property
    def is_exponential(self) -> bool:
        return self.shape == 1.0 and self.offset == 0.0

    def _z(self, t):
        return np.maximum(t - self.offset, 0.0) / self.scale

    def pdf(self, t):
        t = _check_time(t)
        z = self._z(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = (self.shape / self.scale) * z ** (self.shape - 1) * np.exp(-(z ** self.shape))
        dens = np.where(t < self.offset, 0.0, dens)
        return _scalar_or_array(dens, t)

    def cdf(self, t):
        t = _check_time(t)
        return _scalar_or_array(-np.expm1(-(self._z(t) ** self.shape)), t)

    def sf(self, t):
        t = _check_time(t)
        return _scalar_or_array(np.exp(-(self._z(t) ** self.shape)), t)

    def hazard(self, t):
        t = _check_time(t)
        z = self._z(t)
        with np.errstate(divide="ignore"):
            h = (self.shape / self.scale) * z ** (self.shape - 1)
        h = np.where(t < self.offset, 0.0, h)
        return _scalar_or_array(h, t)

    def raw_moment(self, k: int) -> float:
        """E[T**k] by binomial expansion of the offset around the plain Weibull moments."""
        plain = [self.scale ** j * math.gamma(1 + j / self.shape) for j in range(k + 1)]
        return sum(math.comb(k, j) * self.offset ** (k - j) * plain[j] for j in range(k + 1))

    def moments(self) -> MomentTriple:
        return MomentTriple(*(self.raw_moment(k) for k in (1, 2, 3)))

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    def ppf_from_uniform(self, u):
        """Inverse transform ``offset + scale * (-ln u)**(1/shape)``; ``u`` is the survival quantile."""
        u = np.asarray(u, dtype=float)
        return self.offset + self.scale * (-np.log(u)) ** (1.0 / self.shape)

    def sample(self, rng: np.random.Generator, size=None):
        u = 1.0 - rng.random(size)  # (0, 1]
        out = self.ppf_from_uniform(u)
        return float(out) if size is None else out

    def sample_residual(self, age: float, rng: np.random.Generator, size=None):
        """Remaining life of a unit of age ``age``: law of ``T - age`` given ``T > age``."""
        if age < 0:
            raise ValueError("age must be non-negative")
        u = 1.0 - rng.random(size)
        if age <= self.offset:
            out = self.ppf_from_uniform(u) - age
        else:
            z0 = ((age - self.offset) / self.scale) ** self.shape
            out = self.offset + self.scale * (z0 - np.log(u)) ** (1.0 / self.shape) - age
        return float(out) if size is None else out


@dataclass(frozen=True, eq=False)
class PhaseTypeSpec:
    """Absorption time of a CTMC with transient sub-generator ``subgen`` started from ``initial``."""

    initial: np.ndarray
    subgen: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.initial, dtype=float))
        T = np.atleast_2d(np.asarray(self.subgen, dtype=float))
        p = a.shape[0]
        if T.shape != (p, p):
            raise ValueError(f"subgen must be {p}x{p}, got {T.shape}")
        if np.any(a < -1e-15) or abs(a.sum() - 1.0) > 1e-10:
            raise ValueError("initial must be a probability vector")
        off = T - np.diag(np.diag(T))
        if np.any(off < 0):
            raise ValueError("subgen off-diagonal rates must be >= 0")
        exit_rates = -T.sum(axis=1)
        if np.any(exit_rates < -1e-12 * np.abs(np.diag(T)).max()):
            raise ValueError("subgen row sums must be <= 0")
        if not np.any(exit_rates > 0):
            raise ValueError("phase-type needs at least one positive exit rate")
        a.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "initial", a)
        object.__setattr__(self, "subgen", T)
        if self.labels and len(self.labels) != p:
            raise ValueError("one label per phase required")

    @property
    def n_phases(self) -> int:
        return self.initial.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return np.maximum(-self.subgen.sum(axis=1), 0.0)

    @classmethod
    def exponential(cls, rate: float) -> "PhaseTypeSpec":
        return cls(np.array([1.0]), np.array([[-rate]]))

    def _state(self, t):
        """Row vector(s) ``initial @ expm(subgen * t)``, batched over ``t``."""
        t = _check_time(t)
        flat = t.reshape(-1)
        mats = expm(self.subgen[None, :, :] * flat[:, None, None])
        vecs = np.einsum("i,kij->kj", self.initial, mats)
        return t, vecs

    def sf(self, t):
        t, v = self._state(t)
        return _scalar_or_array(np.clip(v.sum(axis=1), 0.0, 1.0).reshape(t.shape), t)

    def cdf(self, t):
        t, v = self._state(t)
        return _scalar_or_array(np.clip(1.0 - v.sum(axis=1), 0.0, 1.0).reshape(t.shape), t)

    def pdf(self, t):
        t, v = self._state(t)
        return _scalar_or_array((v @ self.exit_rates).reshape(t.shape), t)

    def hazard(self, t):
        t, v = self._state(t)
        return _scalar_or_array((v @ self.exit_rates / v.sum(axis=1)).reshape(t.shape), t)

    def raw_moment(self, k: int) -> float:
        return ph_moments(self, k)

    def moments(self) -> MomentTriple:
        return MomentTriple(*(ph_moments(self, k) for k in (1, 2, 3)))

    @property
    def mean(self) -> float:
        return ph_moments(self, 1)

    def conditioned(self, age: float) -> "PhaseTypeSpec":
        """Residual-life distribution of a unit that survived to ``age``."""
        _, v = self._state(np.array([age]))
        v = v[0]
        return PhaseTypeSpec(v / v.sum(), self.subgen, self.labels)

    def sample(self, rng: np.random.Generator, size=None):
        """Sample absorption times by walking the phases explicitly."""
        n = 1 if size is None else int(np.prod(size))
        p = self.n_phases
        out_rates = -np.diag(self.subgen)
        # jump distribution per phase: columns 0..p-1 are phases, column p is absorption
        jump = np.zeros((p, p + 1))
        jump[:, :p] = self.subgen - np.diag(np.diag(self.subgen))
        jump[:, p] = self.exit_rates
        jump /= jump.sum(axis=1, keepdims=True)
        cum = np.cumsum(jump, axis=1)
        cum[:, -1] = 1.0
        phase = rng.choice(p, size=n, p=self.initial)
        total = np.zeros(n)
        alive = np.arange(n)
        while alive.size:
            ph = phase[alive]
            total[alive] += rng.exponential(1.0, alive.size) / out_rates[ph]
            u = rng.random(alive.size)
            nxt = (u[:, None] > cum[ph]).sum(axis=1)
            absorbed = nxt == p
            phase[alive] = nxt
            alive = alive[~absorbed]
        if size is None:
            return float(total[0])
        return total.reshape(size)

    def sample_residual(self, age: float, rng: np.random.Generator, size=None):
        return self.conditioned(age).sample(rng, size)


@dataclass(frozen=True)
class ErlangSpec:
    """Sum of ``stages`` i.i.d. exponentials with rate ``rate``."""

    stages: int
    rate: float

    def __post_init__(self):
        if int(self.stages) != self.stages or self.stages < 1:
            raise ValueError(f"Erlang stages must be a positive integer, got {self.stages}")
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"Erlang rate must be > 0, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.stages / self.rate

    @property
    def variance(self) -> float:
        return self.stages / self.rate ** 2

    def to_phase_type(self) -> PhaseTypeSpec:
        k = self.stages
        T = -self.rate * np.eye(k) + self.rate * np.eye(k, k=1)
        a = np.zeros(k)
        a[0] = 1.0
        return PhaseTypeSpec(a, T, tuple(f"stage{i}" for i in range(k)))


@dataclass(frozen=True)
class ThreeStateParams:
    """Burn-in/working/failed chain: burn-in fails at ``alpha`` or matures at ``sigma``; working fails at ``beta``."""

    alpha: float
    sigma: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "sigma", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive rate, got {v}")

    def to_phase_type(self) -> PhaseTypeSpec:
        T = np.array([[-(self.alpha + self.sigma), self.sigma], [0.0, -self.beta]])
        return PhaseTypeSpec(np.array([1.0, 0.0]), T, ("burn-in", "burnt-in"))


Distribution = Union[WeibullSpec, PhaseTypeSpec]


def as_phase_type(dist) -> PhaseTypeSpec:
    """Coerce an Erlang, three/four-state parameter set or exponential Weibull to a PhaseTypeSpec."""
    if isinstance(dist, PhaseTypeSpec):
        return dist
    if hasattr(dist, "to_phase_type"):
        return dist.to_phase_type()
    if isinstance(dist, WeibullSpec) and dist.is_exponential:
        return PhaseTypeSpec.exponential(1.0 / dist.scale)
    raise TypeError(f"{type(dist).__name__} has no phase-type representation")


def weibull_eval(spec: WeibullSpec, t: float, which: str = "pdf") -> float:
    """Evaluate ``pdf``, ``cdf`` or ``hazard`` of a Weibull at a single time."""
    if not math.isfinite(t):
        raise ValueError(f"t must be finite, got {t}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if which == "pdf":
        return spec.pdf(t)
    if which == "cdf":
        return spec.cdf(t)
    if which == "hazard":
        if spec.cdf(t) >= 1.0:
            raise ValueError("hazard undefined where cdf == 1")
        return spec.hazard(t)
    raise ValueError(f"which must be pdf, cdf or hazard, got {which!r}")


def weibull_moments(spec: WeibullSpec) -> MomentTriple:
    return spec.moments()


def ph_moments(ph: PhaseTypeSpec, k: int) -> float:
    """Raw moment ``k! * initial @ (-subgen)^-k @ 1``."""
    if k < 1:
        raise ValueError("moment order must be >= 1")
    A = -np.asarray(ph.subgen)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("sub-generator is singular: some phase never absorbs")
    x = np.ones(A.shape[0])
    for _ in range(k):
        x = np.linalg.solve(A, x)
    return math.factorial(k) * float(ph.initial @ x)


def sample(dist, rng: np.random.Generator, size=None):
    """Draw from a Weibull or any distribution with a phase-type representation."""
    if isinstance(dist, WeibullSpec):
        return dist.sample(rng, size)
    return as_phase_type(dist).sample(rng, size)
