import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose
from scipy.linalg import expm
from scipy.stats import poisson

from storagerel.ctmc import (
    DiskLocalModel,
    LocalState,
    LocalTransition,
    StateSpaceTooLarge,
    build_lumped_chain,
    build_naive_chain,
    loss_probability,
    poisson_window,
    read_triplets,
    uniformize,
)


def up_down_disk(lam, mu):
    states = (LocalState("up"), LocalState("down", failed=True, rebuild_stage=0))
    transitions = (LocalTransition(0, 1, lam, "failure"), LocalTransition(1, 0, mu, "rebuild"))
    return DiskLocalModel(states, transitions)


def reduced_disk():
    """Six local states: burn-in and burnt-in phases, each clean or defective, and a two-stage rebuild."""
    states = (
        LocalState("b0", burn_in=True, phase=0),
        LocalState("b0d", burn_in=True, phase=0, defect=True),
        LocalState("b1", phase=1),
        LocalState("b1d", phase=1, defect=True),
        LocalState("r0", failed=True, rebuild_stage=0),
        LocalState("r1", failed=True, rebuild_stage=1),
    )
    T = LocalTransition
    transitions = (
        T(0, 2, 0.3, "advance"), T(1, 3, 0.3, "advance"),
        T(0, 1, 0.5, "defect"), T(2, 3, 0.5, "defect"),
        T(1, 0, 0.9, "scrub"), T(3, 2, 0.9, "scrub"),
        T(0, 4, 0.2, "failure"), T(1, 4, 0.2, "failure"),
        T(2, 4, 0.1, "failure"), T(3, 4, 0.1, "failure"),
        T(4, 5, 1.5, "rebuild"), T(5, 0, 1.5, "rebuild"),
    )
    return DiskLocalModel(states, transitions)


def failure_loss(m):
    def loss(failed, defective, kind):
        if kind != "failure":
            return False
        return failed > m or (failed == m and defective > 0)
    return loss


def product_loss_probability(disk, n, loss, times):
    """Brute-force oracle on the full L**n product chain with an absorbing LOSS state."""
    L = disk.n_states
    tuples = list(itertools.product(range(L), repeat=n))
    index = {s: i for i, s in enumerate(tuples)}
    N = len(tuples) + 1
    Q = np.zeros((N, N))
    failed = [int(s.failed) for s in disk.states]
    defect = [int(s.operational and s.defect) for s in disk.states]
    for s in tuples:
        for pos in range(n):
            for tr in disk.transitions:
                if tr.src != s[pos]:
                    continue
                t = list(s)
                t[pos] = tr.dst
                f = sum(failed[x] for x in t)
                d = sum(defect[x] for x in t)
                dest = N - 1 if loss(f, d, tr.kind) else index[tuple(t)]
                Q[index[s], dest] += tr.rate
    Q -= np.diag(Q.sum(axis=1))
    p0 = np.zeros(N)
    p0[index[(disk.initial,) * n]] = 1.0
    return np.array([(p0 @ expm(Q * t))[-1] for t in times])


@pytest.mark.parametrize("n", [2, 3])
def test_lumped_matches_product_chain(n):
    disk = reduced_disk()
    loss = failure_loss(1)
    times = [0.5, 2.0, 7.0, 20.0]
    chain = build_lumped_chain(disk, n, loss)
    lumped = uniformize(chain, times, epsilon=1e-12).loss
    assert_allclose(lumped, product_loss_probability(disk, n, loss, times), atol=1e-9)


def test_lumped_state_count_is_occupancy_count():
    disk = reduced_disk()
    chain = build_lumped_chain(disk, 3, lambda f, d, k: False)
    # every multiset of 3 disks over 6 local states, plus LOSS
    assert chain.n_states == 56 + 1


def test_up_down_pair_equals_birth_death_chain():
    lam, mu = 0.01, 0.5
    lumped = build_lumped_chain(up_down_disk(lam, mu), 2, failure_loss(1))
    naive = build_naive_chain(1, 2, lam, mu)
    assert_allclose(lumped.generator.toarray(), naive.generator.toarray(), rtol=1e-15)


def test_single_disk_up_down():
    lam, mu = 0.2, 1.3
    chain = build_lumped_chain(up_down_disk(lam, mu), 1, lambda f, d, k: False)
    t = 0.8
    res = uniformize(chain, [t], epsilon=1e-12)
    # P(up) for the alternating renewal process
    up = mu / (lam + mu) + lam / (lam + mu) * np.exp(-(lam + mu) * t)
    assert res.probabilities[0, 0] == pytest.approx(up, abs=1e-11)


def test_two_state_analytic():
    a, b = 0.7, 0.2
    Q = np.array([[-a, a], [b, -b]])
    t = np.array([0.1, 1.0, 10.0])
    res = uniformize(Q, t, epsilon=1e-12, p0=np.array([1.0, 0.0]))
    expected = b / (a + b) + a / (a + b) * np.exp(-(a + b) * t)
    assert_allclose(res.probabilities[:, 0], expected, atol=1e-11)


def random_generator(rng, n):
    Q = rng.exponential(1.0, (n, n)) * (rng.random((n, n)) < 0.5)
    np.fill_diagonal(Q, 0.0)
    Q[-1] = 0.0  # absorbing last state
    Q -= np.diag(Q.sum(axis=1))
    return Q


@pytest.mark.parametrize("seed", range(20))
def test_uniformization_matches_expm(seed):
    rng = np.random.default_rng(seed)
    Q = random_generator(rng, 10)
    p0 = rng.dirichlet(np.ones(10))
    times = [0.05, 0.7, 3.0, 12.0]
    res = uniformize(Q, times, epsilon=1e-10, p0=p0)
    for t, row in zip(times, res.probabilities):
        assert np.abs(row - p0 @ expm(Q * t)).sum() <= 1e-8


def test_error_shrinks_with_epsilon():
    rng = np.random.default_rng(99)
    Q = random_generator(rng, 10)
    p0 = np.eye(10)[0]
    exact = p0 @ expm(Q * 5.0)
    errors = [np.abs(uniformize(Q, [5.0], epsilon=e, p0=p0).probabilities[0] - exact).sum() for e in (1e-3, 1e-6, 1e-9)]
    assert errors[0] <= 1e-3 and errors[1] <= 1e-6 and errors[2] <= 1e-9
    assert errors[2] <= errors[0]


@pytest.mark.parametrize("lam", [0.0, 0.3, 5.0, 250.0, 4e4])
def test_poisson_window_mass(lam):
    left, w = poisson_window(lam, 1e-10)
    assert w.sum() == pytest.approx(1.0)
    k = np.arange(left, left + len(w))
    covered = poisson.cdf(k[-1], lam) - (poisson.cdf(left - 1, lam) if left > 0 else 0.0)
    assert covered >= 1 - 1e-10
    assert_allclose(w, poisson.pmf(k, lam) / covered, rtol=1e-8, atol=1e-300)


def test_naive_chain_without_repair():
    lam = 1e-3
    chain = build_naive_chain(1, 2, lam, 0.0)
    t = np.array([10.0, 500.0, 3000.0])
    # both disks must fail: (1 - exp(-lam t))**2
    assert_allclose(uniformize(chain, t, epsilon=1e-12).loss, (1 - np.exp(-lam * t)) ** 2, atol=1e-11)


def test_naive_chain_h_split():
    lam, mu, h = 1e-3, 0.05, 0.2
    with_h = build_naive_chain(1, 3, lam, mu, h=h).generator.toarray()
    assert with_h[0, 1] == pytest.approx(3 * lam * (1 - h))
    assert with_h[0, 2] == pytest.approx(3 * lam * h)
    assert_allclose(build_naive_chain(1, 3, lam, mu, h=0.0).generator.toarray(),
                    build_naive_chain(1, 3, lam, mu).generator.toarray())


def test_generator_rows_sum_to_zero():
    chain = build_lumped_chain(reduced_disk(), 4, failure_loss(1))
    assert_allclose(np.asarray(chain.generator.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    assert chain.generator[chain.loss_index].nnz == 0


def test_loss_probability_monotone_and_scaled():
    chain = build_lumped_chain(reduced_disk(), 3, failure_loss(1))
    grid = np.linspace(0, 40, 21)
    series = loss_probability(chain, grid, multiplier=1000.0, epsilon=1e-10)
    assert series.values[0] == 0.0
    assert np.all(np.diff(series.values) >= 0)
    assert_allclose(series.probabilities, series.values / 1000.0)
    assert series.states == chain.n_states


def test_triplet_round_trip(tmp_path):
    chain = build_lumped_chain(reduced_disk(), 3, failure_loss(1))
    path = tmp_path / "q.txt"
    chain.write_triplets(path)
    back = read_triplets(path)
    assert back.shape == chain.generator.shape
    assert abs(back - chain.generator).max() == 0.0


def test_state_cap():
    with pytest.raises(StateSpaceTooLarge):
        build_lumped_chain(reduced_disk(), 5, lambda f, d, k: False, state_cap=50)


def test_disk_model_validation():
    states = (LocalState("up"), LocalState("down", failed=True))
    with pytest.raises(ValueError, match="rebuild path"):
        DiskLocalModel(states, (LocalTransition(0, 1, 1.0, "failure"),))
    with pytest.raises(ValueError):
        DiskLocalModel(states, (LocalTransition(0, 1, -1.0, "failure"), LocalTransition(1, 0, 1.0, "rebuild")))


def test_uniformize_rejects_bad_input():
    Q = sp.csr_matrix(np.array([[-1.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        uniformize(Q, [1.0])  # missing p0
    with pytest.raises(ValueError):
        uniformize(Q, [2.0, 1.0], p0=np.array([1.0, 0.0]))
    with pytest.raises(OverflowError):
        uniformize(Q * 1e6, [1e5], p0=np.array([1.0, 0.0]))
