import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from saesci.errors import DomainError, SingularMatrix
from saesci.numerics import (
    RngStream,
    derive_seed,
    gauss_hermite,
    log_gamma,
    order_statistic_index,
    sample_binomial,
    sample_gamma,
    sample_normal,
    sample_poisson,
    solve,
    solve_spd,
    upper_quantile,
)


def test_log_gamma_known_values():
    assert log_gamma(1.0) == 0.0
    assert_allclose(log_gamma(0.5), 0.5 * math.log(math.pi), rtol=1e-15)
    assert_allclose(log_gamma(np.array([2.0, 5.0])), [0.0, math.log(24.0)], atol=1e-14)


def test_log_gamma_recurrence():
    x = np.random.default_rng(1).uniform(1e-3, 200.0, 1000)
    assert_allclose(log_gamma(x + 1) - log_gamma(x), np.log(x), rtol=0, atol=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_log_gamma_domain(bad):
    with pytest.raises(DomainError):
        log_gamma(bad)


def test_gauss_hermite_weights_sum():
    for q in (1, 2, 5, 15, 40, 100):
        _, w = gauss_hermite(q)
        assert_allclose(w.sum(), math.sqrt(math.pi), rtol=1e-12)


def test_gauss_hermite_second_moment():
    for q in range(2, 30):
        t, w = gauss_hermite(q)
        assert_allclose(np.sum(w * t**2), math.sqrt(math.pi) / 2, rtol=1e-13)


def test_gauss_hermite_cosine_against_adaptive_quadrature():
    t, w = gauss_hermite(15)
    # the integrand is below 1e-40 outside [-10, 10]
    oracle, _ = integrate.quad(lambda s: math.exp(-s * s) * math.cos(s), -10, 10, epsabs=1e-15, epsrel=1e-13, limit=200)
    assert_allclose(np.sum(w * np.cos(t)), oracle, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(q=st.integers(1, 20), data=st.data())
def test_gauss_hermite_polynomial_exactness(q, data):
    k = data.draw(st.integers(0, 2 * q - 1))
    t, w = gauss_hermite(q)
    exact = 0.0 if k % 2 else math.gamma((k + 1) / 2)
    assert np.sum(w * t**k) == pytest.approx(exact, rel=1e-10, abs=1e-10 * math.gamma((k + 2) / 2))


def test_gauss_hermite_symmetric_and_bounds():
    t, w = gauss_hermite(16)
    assert_allclose(t, -t[::-1], atol=0)
    assert np.all(w > 0)
    for q in (0, 101):
        with pytest.raises(DomainError):
            gauss_hermite(q)


def test_stream_reproducible_regardless_of_interleaving():
    a1, b1 = RngStream(7, 3, 0), RngStream(7, 4, 0)
    seq_a = [sample_normal(a1) for _ in range(5)]
    seq_b = [sample_normal(b1) for _ in range(5)]
    a2, b2 = RngStream(7, 3, 0), RngStream(7, 4, 0)
    mixed_a, mixed_b = [], []
    for _ in range(5):
        mixed_b.append(sample_normal(b2))
        mixed_a.append(sample_normal(a2))
    assert seq_a == mixed_a and seq_b == mixed_b
    assert seq_a != seq_b


def test_stream_keys_are_uncorrelated():
    x = sample_normal(RngStream(1, 1), size=20000)
    y = sample_normal(RngStream(1, 2), size=20000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(20000)
    assert RngStream(1, 2).child(5).key == (2, 5)


def test_derive_seed_deterministic():
    assert derive_seed(3, 1) == derive_seed(3, 1)
    assert derive_seed(3, 1) != derive_seed(3, 2)
    assert 0 <= derive_seed(3, 1) < 2**63


@pytest.mark.parametrize("a", [0.5, 2.48, 10.0])
def test_gamma_mean_and_ks(a):
    x = sample_gamma(RngStream(11, int(a * 100)), a, a, size=100_000)
    se = math.sqrt(1 / a / x.size)
    assert abs(x.mean() - 1.0) < 3 * se
    assert stats.kstest(x, stats.gamma(a, scale=1 / a).cdf).pvalue > 1e-3


def test_normal_ks():
    x = sample_normal(RngStream(12), 1.5, 2.0, size=100_000)
    assert stats.kstest(x, stats.norm(1.5, 2.0).cdf).pvalue > 1e-3


def _discrete_gof(x, pmf, top):
    # KS is not distribution-free for discrete laws: chi-square on 0..top,
    # with the upper tail pooled into the last cell
    counts = np.bincount(np.minimum(x, top), minlength=top + 1).astype(float)
    probs = pmf(np.arange(top + 1))
    probs[-1] += 1.0 - probs.sum()
    return stats.chisquare(counts, probs * x.size).pvalue


def test_poisson_gof():
    x = sample_poisson(RngStream(13), 4.2, size=100_000)
    assert _discrete_gof(x, stats.poisson(4.2).pmf, 14) > 1e-3


def test_binomial_gof():
    x = sample_binomial(RngStream(14), 30, 0.3, size=100_000)
    assert _discrete_gof(x, stats.binom(30, 0.3).pmf, 20) > 1e-3


def test_poisson_zero_mean():
    assert np.all(sample_poisson(RngStream(1), 0.0, size=1000) == 0)


def test_sampler_domain_errors():
    s = RngStream(0)
    with pytest.raises(DomainError):
        sample_gamma(s, 0.0, 1.0)
    with pytest.raises(DomainError):
        sample_gamma(s, 1.0, -1.0)
    with pytest.raises(DomainError):
        sample_poisson(s, -1.0)
    with pytest.raises(DomainError):
        sample_binomial(s, 5, 1.5)
    with pytest.raises(DomainError):
        sample_normal(s, 0.0, -1.0)
    with pytest.raises(DomainError):
        RngStream(-1)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_solve_multiply_back(n, seed):
    g = np.random.default_rng(seed)
    M = g.normal(size=(n, n))
    A = M @ M.T + n * np.eye(n)
    b = g.normal(size=n)
    x = solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
    An = A + 0.5 * (M - M.T)  # non-symmetric, LU path
    x = solve(An, b, assume_pd=False)
    assert np.linalg.norm(An @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_singular():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrix):
        solve(A, np.ones(2))
    with pytest.raises(SingularMatrix):
        solve_spd(-np.eye(2), np.ones(2))


def test_order_statistic_index():
    assert order_statistic_index(0.05, 1000) == 951
    assert order_statistic_index(0.05, 500) == 476
    assert order_statistic_index(0.05, 100) == 96
    assert order_statistic_index(0.5, 3) == 3


def test_upper_quantile_picks_order_statistic():
    v = np.arange(1000, 0, -1, dtype=float)
    assert upper_quantile(v, 0.05) == 951.0
    m = np.column_stack([v, 2 * v])
    assert_allclose(upper_quantile(m, 0.05, axis=0), [951.0, 1902.0])
