"""Symmetry-reduced CTMCs of identical disks and their transient solution.

A system of ``n`` exchangeable disks is represented by occupancy vectors:
entry ``i`` counts the disks currently in local state ``i``. Every local
transition ``i -> j`` of rate ``r`` fires from occupancy ``s`` at rate
``s[i] * r``; if the successor is a data-loss configuration the mass goes
to a single absorbing LOSS state instead.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .validation import check_probability, check_time_grid

DEFAULT_STATE_CAP = 5_000_000
MAX_UNIFORMIZED_RATE = 1e10


class StateSpaceTooLarge(RuntimeError):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"reachable state space exceeds the cap of {cap} states")


@dataclass(frozen=True)
class LocalState:
    """One per-disk state with the labels the loss predicate and reports need."""

    name: str
    failed: bool = False
    defect: bool = False
    burn_in: bool = False
    phase: Optional[int] = None
    rebuild_stage: Optional[int] = None
    scrub_stage: Optional[int] = None

    @property
    def operational(self) -> bool:
        return not self.failed


@dataclass(frozen=True)
class LocalTransition:
    src: int
    dst: int
    rate: float
    kind: str  # failure | advance | defect | scrub | rebuild


@dataclass(frozen=True)
class DiskLocalModel:
    states: tuple
    transitions: tuple
    initial: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, name: str) -> int:
        for i, s in enumerate(self.states):
            if s.name == name:
                return i
        raise KeyError(name)

    def validate(self):
        n = len(self.states)
        if not 0 <= self.initial < n:
            raise ValueError("initial state index out of range")
        init = self.states[self.initial]
        if init.failed or init.defect or init.rebuild_stage is not None:
            raise ValueError("initial state must be an operational, defect-free state")
        names = [s.name for s in self.states]
        if len(set(names)) != n:
            raise ValueError("local state names must be unique")
        adj = [[] for _ in range(n)]
        for tr in self.transitions:
            if not (0 <= tr.src < n and 0 <= tr.dst < n):
                raise ValueError(f"transition {tr} refers to an unknown state")
            if tr.src == tr.dst:
                raise ValueError(f"self-loop on {self.states[tr.src].name}")
            if not (math.isfinite(tr.rate) and tr.rate > 0):
                raise ValueError(f"non-positive rate on {self.states[tr.src].name} -> {self.states[tr.dst].name}")
            adj[tr.src].append(tr.dst)
        for i, s in enumerate(self.states):
            if s.failed and not self._reaches_operational(i, adj):
                raise ValueError(f"failed state {s.name} has no rebuild path back to service")

    def _reaches_operational(self, start, adj) -> bool:
        seen, todo = {start}, [start]
        while todo:
            for j in adj[todo.pop()]:
                if self.states[j].operational:
                    return True
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        return False

    def generator(self) -> np.ndarray:
        """Dense local generator, useful for product-chain checks on small models."""
        Q = np.zeros((self.n_states, self.n_states))
        for tr in self.transitions:
            Q[tr.src, tr.dst] += tr.rate
        Q -= np.diag(Q.sum(axis=1))
        return Q


# (failed count, defective-operational count, transition kind) -> loss?
LossFunction = Callable[[int, int, str], bool]


@dataclass
class LumpedChain:
    states: list
    generator: sp.csr_matrix
    n_disks: int
    disk: Optional[DiskLocalModel] = None
    initial_index: int = 0
    labels: Optional[list] = None

    @property
    def n_states(self) -> int:
        return self.generator.shape[0]

    @property
    def loss_index(self) -> int:
        return self.n_states - 1

    def initial_distribution(self) -> np.ndarray:
        p0 = np.zeros(self.n_states)
        p0[self.initial_index] = 1.0
        return p0

    def write_triplets(self, path) -> None:
        """Sparse ``row col rate`` listing of the generator (diagonal included)."""
        Q = self.generator.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# states {self.n_states} (LOSS = {self.loss_index})\n")
            fh.write(f"# disks {self.n_disks}\n")
            for r, c, v in sorted(zip(Q.row.tolist(), Q.col.tolist(), Q.data.tolist())):
                fh.write(f"{r} {c} {v:.17g}\n")


def read_triplets(path) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["states"]:
                    n = int(parts[1])
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    if n is None:
        n = max(max(rows), max(cols)) + 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _assemble(rows, cols, vals, n) -> sp.csr_matrix:
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Q.sum_duplicates()
    out_rates = np.asarray(Q.sum(axis=1)).ravel()
    return (Q - sp.diags(out_rates)).tocsr()


def build_lumped_chain(
    disk: DiskLocalModel,
    n: int,
    loss: LossFunction,
    state_cap: int = DEFAULT_STATE_CAP,
) -> LumpedChain:
    """Breadth-first construction of the reachable occupancy chain.

    ``loss(failed, defective, kind)`` is evaluated on the successor of every
    transition, where ``failed`` counts failed disks, ``defective`` counts
    operational disks holding a latent defect and ``kind`` is the local
    transition kind that fired.
    """
    if n < 1:
        raise ValueError("need at least one disk")
    L = disk.n_states
    failed = np.array([s.failed for s in disk.states], dtype=int)
    defective = np.array([s.operational and s.defect for s in disk.states], dtype=int)
    moves = [[] for _ in range(L)]
    for tr in disk.transitions:
        moves[tr.src].append(
            (tr.dst, tr.rate, tr.kind, failed[tr.dst] - failed[tr.src], defective[tr.dst] - defective[tr.src])
        )

    init = [0] * L
    init[disk.initial] = n
    init = tuple(init)
    index = {init: 0}
    order = [init]
    counts = [(0, 0)]
    rows, cols, vals = [], [], []
    LOSS = -1
    queue = deque([0])
    while queue:
        q = queue.popleft()
        s = order[q]
        f0, d0 = counts[q]
        for i in range(L):
            c = s[i]
            if not c:
                continue
            for j, rate, kind, df, dd in moves[i]:
                f, d = f0 + df, d0 + dd
                if loss(f, d, kind):
                    dest = LOSS
                else:
                    t = list(s)
                    t[i] -= 1
                    t[j] += 1
                    t = tuple(t)
                    dest = index.get(t)
                    if dest is None:
                        if len(order) >= state_cap:
                            raise StateSpaceTooLarge(state_cap)
                        dest = len(order)
                        index[t] = dest
                        order.append(t)
                        counts.append((f, d))
                        queue.append(dest)
                rows.append(q)
                cols.append(dest)
                vals.append(c * rate)
    N = len(order) + 1
    cols = [N - 1 if c == LOSS else c for c in cols]
    return LumpedChain(order, _assemble(rows, cols, vals, N), n, disk)


def build_naive_chain(
    m: int,
    n: int,
    lam: float,
    mu: float,
    h: float = 0.0,
    bypass_rate: Optional[float] = None,
) -> LumpedChain:
    """Classic birth-death chain over the number of failed disks.

    State ``i`` (``i`` failed, ``0 <= i <= m``) moves to ``i + 1`` at
    ``(n - i) * lam`` and back to ``i - 1`` at ``mu``; a failure in state
    ``m`` is data loss. With sector errors, a failure from state ``m - 1``
    goes straight to LOSS with probability ``h`` (rate
    ``(n - m + 1) * lam * h``), or at ``bypass_rate`` when that is given.
    """
    if not 1 <= m < n:
        raise ValueError("need 1 <= m < n")
    check_probability(h, "h")
    rows, cols, vals = [], [], []
    loss = m + 1
    for i in range(m + 1):
        up = (n - i) * lam
        if i == m:
            rows.append(i); cols.append(loss); vals.append(up)
        elif i == m - 1 and bypass_rate is not None:
            rows += [i, i]; cols += [i + 1, loss]; vals += [up, bypass_rate]
        elif i == m - 1 and h > 0:
            rows += [i, i]; cols += [i + 1, loss]; vals += [up * (1 - h), up * h]
        else:
            rows.append(i); cols.append(i + 1); vals.append(up)
        if i > 0 and mu > 0:
            rows.append(i); cols.append(i - 1); vals.append(mu)
    keep = [k for k, v in enumerate(vals) if v > 0]
    Q = _assemble([rows[k] for k in keep], [cols[k] for k in keep], [vals[k] for k in keep], m + 2)
    states = [(n - i, i) for i in range(m + 1)]
    return LumpedChain(states, Q, n, labels=["up", "down"])


# --- transient solution ------------------------------------------------------


def poisson_window(lam: float, epsilon: float) -> tuple[int, np.ndarray]:
    """Poisson(lam) weights on ``[left, left + len)`` with total discarded mass below ``epsilon``.

    Weights are built outward from the mode with the ratio recurrence,
    anchored by the log-pmf at the mode, so nothing under- or overflows.
    Tails are bounded geometrically. Returned weights are renormalized.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"Poisson rate must be finite and >= 0, got {lam}")
    if lam == 0:
        return 0, np.ones(1)
    mode = int(math.floor(lam))
    log_mode = -lam + mode * math.log(lam) - gammaln(mode + 1)
    w_mode = math.exp(log_mode)
    half = epsilon / 2.0

    right = [1.0]
    k, w = mode, 1.0
    while True:
        ratio = lam / (k + 1)
        if ratio < 1 and w_mode * w * ratio / (1 - ratio) < half:
            break
        w *= ratio
        k += 1
        right.append(w)

    left = []
    k, w = mode, 1.0
    while k > 0:
        ratio = k / lam
        if ratio < 1 and w_mode * w * ratio / (1 - ratio) < half:
            break
        w *= ratio
        k -= 1
        left.append(w)

    weights = np.array(left[::-1] + right) * w_mode
    return k, weights / weights.sum()


@dataclass
class TransientResult:
    times: np.ndarray
    probabilities: np.ndarray  # (len(times), n_states)
    epsilon: float
    uniformization_rate: float
    loss_index: int

    @property
    def loss(self) -> np.ndarray:
        return self.probabilities[:, self.loss_index]


def _step(QT: sp.csr_matrix, q: float, v: np.ndarray, dt: float, epsilon: float) -> np.ndarray:
    lam = q * dt
    if lam > MAX_UNIFORMIZED_RATE:
        raise OverflowError(
            f"q*t = {lam:.3g} exceeds {MAX_UNIFORMIZED_RATE:.0e}; split the horizon into shorter steps"
        )
    left, weights = poisson_window(lam, epsilon)
    acc = np.zeros_like(v)
    for k in range(left + len(weights)):
        if k >= left:
            acc += weights[k - left] * v
        v = v + (QT @ v) / q
    return acc


def uniformize(
    chain,
    t,
    epsilon: float = 1e-8,
    p0: Optional[np.ndarray] = None,
) -> TransientResult:
    """Transient distribution ``p0 @ expm(Q t)`` at each time in ``t`` by uniformization.

    ``chain`` is a :class:`LumpedChain` or a square generator matrix. The
    grid is solved incrementally; each interval gets an equal share of
    ``epsilon`` so the L1 error at every reported time is below ``epsilon``.
    """
    check_probability(epsilon, "epsilon", open_interval=True)
    times = check_time_grid(t)
    if isinstance(chain, LumpedChain):
        Q = chain.generator
        loss_index = chain.loss_index
        if p0 is None:
            p0 = chain.initial_distribution()
    else:
        Q = sp.csr_matrix(chain)
        loss_index = Q.shape[0] - 1
        if p0 is None:
            raise ValueError("p0 is required when passing a bare generator")
    QT = Q.T.tocsr()
    q = float(np.max(-Q.diagonal())) if Q.shape[0] else 0.0
    q = q * 1.02 if q > 0 else 1.0
    per_step = epsilon / max(len(times), 1)
    out = np.empty((len(times), Q.shape[0]))
    v = np.asarray(p0, dtype=float).copy()
    now = 0.0
    for i, ti in enumerate(times):
        if ti > now:
            v = _step(QT, q, v, ti - now, per_step)
            now = ti
        out[i] = v
    return TransientResult(times, out, epsilon, q, loss_index)


@dataclass
class DdfSeries:
    """DDF(t) on a time grid: analytic values and/or simulated estimates with CIs."""

    times: np.ndarray
    values: np.ndarray
    multiplier: float = 1.0
    ci_low: Optional[np.ndarray] = None
    ci_high: Optional[np.ndarray] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    states: Optional[int] = None
    epsilon: Optional[float] = None
    flags: list = field(default_factory=list)
    estimates: list = field(default_factory=list)

    @property
    def years(self) -> np.ndarray:
        return self.times / 8760.0

    @property
    def probabilities(self) -> np.ndarray:
        return self.values / self.multiplier


def loss_probability(
    chain: LumpedChain,
    grid: Sequence[float],
    multiplier: float = 1.0,
    epsilon: float = 1e-8,
) -> DdfSeries:
    """``multiplier * P(LOSS by t)`` for each ``t`` in ``grid`` (hours)."""
    res = uniformize(chain, grid, epsilon)
    loss = np.clip(res.loss, 0.0, 1.0)
    # absorbing LOSS: enforce the monotonicity truncation noise could break
    loss = np.maximum.accumulate(loss)
    return DdfSeries(
        times=res.times,
        values=loss * multiplier,
        multiplier=multiplier,
        states=chain.n_states,
        epsilon=epsilon,
    )
