import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from storagerel.distributions import (
    ErlangSpec,
    MomentTriple,
    PhaseTypeSpec,
    ThreeStateParams,
    WeibullSpec,
    ph_moments,
    weibull_eval,
)
from storagerel.rng import stream

TTOP = WeibullSpec(1.12, 461386.0)
TTR = WeibullSpec(2.0, 12.0, 6.0)
TTSCR = WeibullSpec(3.0, 168.0, 6.0)


def test_exponential_pdf_at_zero():
    assert WeibullSpec(1.0, 100.0).pdf(0.0) == pytest.approx(0.01)


def test_cdf_zero_below_offset():
    assert TTR.cdf(5.0) == 0.0
    assert TTR.pdf(5.0) == 0.0


@pytest.mark.parametrize("shape", [0.5, 1.0, 1.12, 2.0, 3.0])
def test_cdf_at_scale_is_one_minus_inv_e(shape):
    assert WeibullSpec(shape, 461386.0).cdf(461386.0) == pytest.approx(1 - math.exp(-1), rel=1e-12)


@pytest.mark.parametrize("spec", [TTOP, TTR, TTSCR, WeibullSpec(0.7, 50.0, 2.0)])
def test_cdf_is_integral_of_pdf(spec):
    for t in spec.offset + spec.scale * np.array([0.1, 0.5, 1.0, 2.5]):
        val, _ = integrate.quad(spec.pdf, spec.offset, t, limit=200)
        assert val == pytest.approx(spec.cdf(t), rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("spec", [TTOP, TTR, TTSCR])
def test_hazard_is_pdf_over_sf(spec):
    t = spec.offset + spec.scale * np.linspace(0.05, 2.0, 9)
    assert_allclose(spec.hazard(t), spec.pdf(t) / spec.sf(t), rtol=1e-12)


def test_vectorized_matches_scalar():
    t = np.array([0.0, 3.0, 7.0, 20.0, 200.0])
    assert_allclose(TTR.cdf(t), [TTR.cdf(float(x)) for x in t])
    assert np.isscalar(TTR.cdf(7.0))


def test_scipy_weibull_agrees():
    t = np.linspace(0, 2e6, 11)
    ref = stats.weibull_min(c=1.12, scale=461386.0)
    assert_allclose(TTOP.cdf(t), ref.cdf(t), rtol=1e-12, atol=1e-15)
    assert_allclose(TTOP.pdf(t[1:]), ref.pdf(t[1:]), rtol=1e-10)


def test_exponential_moments():
    m = WeibullSpec(1.0, 100.0).moments()
    assert_allclose(m.as_tuple(), (100.0, 2e4, 6e6), rtol=1e-12)


@pytest.mark.parametrize("spec", [TTOP, TTR, TTSCR])
def test_moments_against_quadrature(spec):
    # integrate in units of the scale so quad sees an O(1) integrand
    def integrand(x, k):
        t = spec.offset + spec.scale * x
        return t**k * spec.pdf(t) * spec.scale

    for k in (1, 2, 3):
        val, _ = integrate.quad(integrand, 0.0, 60.0, args=(k,), limit=400)
        assert spec.raw_moment(k) == pytest.approx(val, rel=1e-7)


def test_scrub_mean_value():
    assert TTSCR.mean == pytest.approx(168 * math.gamma(4 / 3) + 6, rel=1e-12)
    assert TTSCR.mean == pytest.approx(156.03, abs=0.01)
    assert TTOP.mean == pytest.approx(4.43e5, rel=2e-3)


@pytest.mark.parametrize("spec,u,expected", [(WeibullSpec(1.0, 100.0), math.exp(-1), 100.0), (TTR, math.exp(-1), 18.0)])
def test_inverse_transform(spec, u, expected):
    assert spec.ppf_from_uniform(u) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("bad", [dict(shape=0, scale=1), dict(shape=1, scale=-1), dict(shape=1, scale=1, offset=-1)])
def test_weibull_validation(bad):
    with pytest.raises(ValueError):
        WeibullSpec(**bad)


@pytest.mark.parametrize("t", [-1.0, float("nan"), float("inf")])
def test_weibull_eval_rejects_bad_time(t):
    with pytest.raises(ValueError):
        weibull_eval(TTOP, t, "pdf")


def test_moment_triple_validation():
    with pytest.raises(ValueError):
        MomentTriple(-1.0, 1.0, 1.0)


def test_erlang_mean_and_variance():
    e = ErlangSpec(3, 0.5)
    assert e.mean == pytest.approx(6.0)
    assert e.variance == pytest.approx(12.0)
    ph = e.to_phase_type()
    assert ph.mean == pytest.approx(6.0, rel=1e-12)
    t = np.array([0.5, 2.0, 9.0])
    assert_allclose(ph.cdf(t), stats.gamma(a=3, scale=2.0).cdf(t), rtol=1e-10)


def test_three_state_phase_type_structure():
    p = ThreeStateParams(alpha=1e-3, sigma=2e-3, beta=5e-4)
    ph = p.to_phase_type()
    assert_allclose(ph.subgen, [[-3e-3, 2e-3], [0, -5e-4]])
    assert_allclose(ph.exit_rates, [1e-3, 5e-4])
    assert_allclose(ph.initial, [1.0, 0.0])


def test_phase_type_moments_exponential():
    ph = PhaseTypeSpec.exponential(0.25)
    assert [ph_moments(ph, k) for k in (1, 2, 3)] == pytest.approx([4.0, 32.0, 384.0])


def test_phase_type_rejects_bad_generator():
    with pytest.raises(ValueError):
        PhaseTypeSpec(np.array([1.0, 0.0]), np.array([[-1.0, 2.0], [0.0, -1.0]]))


def test_weibull_sampling_ks():
    x = TTR.sample(stream(7), 20_000)
    assert stats.kstest(x, TTR.cdf).pvalue > 1e-3


def test_weibull_sample_mean_large():
    x = TTOP.sample(stream(11), 1_000_000)
    sem = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - TTOP.mean) < 4 * sem


@pytest.mark.parametrize("age", [0.0, 5e4, 4e5, 1e6])
def test_weibull_residual_sampling_ks(age):
    x = TTOP.sample_residual(age, stream(3, int(age)), 20_000)
    cond = lambda r: 1.0 - TTOP.sf(age + r) / TTOP.sf(age)
    assert stats.kstest(x, cond).pvalue > 1e-3


def test_phase_type_walk_sampling_ks():
    ph = ThreeStateParams(alpha=1e-3, sigma=2e-3, beta=5e-4).to_phase_type()
    x = ph.sample(stream(5), 20_000)
    assert stats.kstest(x, ph.cdf).pvalue > 1e-3


def test_phase_type_residual_sampling_ks():
    ph = ThreeStateParams(alpha=1e-3, sigma=2e-3, beta=5e-4).to_phase_type()
    age = 700.0
    x = ph.sample_residual(age, stream(6), 20_000)
    cond = lambda r: 1.0 - ph.sf(age + r) / ph.sf(age)
    assert stats.kstest(x, cond).pvalue > 1e-3


def test_streams_are_reproducible_and_distinct():
    a = stream(42, 0).random(5)
    assert_allclose(a, stream(42, 0).random(5))
    assert not np.allclose(a, stream(42, 1).random(5))
