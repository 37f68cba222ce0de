import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, special

from saesci.data import UnitDataset, UnitRecord
from saesci.designs import UNIT_BETA, UNIT_DELTA, unit_design
from saesci.errors import DomainError, MissingClassSizes
from saesci.unit import (
    AGQConfig,
    LogitParams,
    bernoulli_loglik,
    conditional_mode,
    fit_unit_model,
    logit_hessian_agq,
    logit_loglik_agq,
    logit_score_agq,
    unit_cells,
    unit_ebp,
)


def toy_units(seed=0, D=3, n=(6, 9, 4)):
    g = np.random.default_rng(seed)
    classes = ((1.0, 0.0), (1.0, 1.0))
    units = []
    for d in range(D):
        for _ in range(n[d % len(n)]):
            x = classes[int(g.integers(2))]
            units.append(UnitRecord(f"a{d}", int(g.integers(0, 2)), x, 1, 10.0))
    sizes = np.full((D, 2), 50.0)
    return UnitDataset(tuple(units), classes, sizes)


def area_integral_oracle(data, params):
    """Sum over areas of log int prod_j p(y_dj | u) phi(u) du by adaptive
    quadrature on the real line, plus the binomial constants."""
    beta, delta = params.beta, params.delta
    total = 0.0
    for a in data.area_ids:
        us = [u for u in data.units if u.area_id == a]
        eta = np.array([np.dot(u.x, beta) for u in us])
        y = np.array([u.y for u in us], dtype=float)
        m = np.array([u.m for u in us], dtype=float)

        def logf(v):
            e = eta + delta * v
            return float(np.sum(y * e - m * np.logaddexp(0.0, e))) - 0.5 * v * v - 0.5 * math.log(2 * math.pi)

        grid = np.linspace(-10, 10, 2001)
        top = max(logf(v) for v in grid)
        val, _ = integrate.quad(lambda v: math.exp(logf(v) - top), -np.inf, np.inf, epsabs=0.0, epsrel=1e-13, limit=500)
        total += top + math.log(val)
        total += float(np.sum(special.gammaln(m + 1) - special.gammaln(y + 1) - special.gammaln(m - y + 1)))
    return total


def test_agq_at_zero_delta_is_logistic():
    data = unit_design(D=10)
    data = data.with_outcomes(np.random.default_rng(1).integers(0, 2, data.n))
    beta = np.array(UNIT_BETA)
    assert_allclose(logit_loglik_agq(data, LogitParams(beta, 0.0)), bernoulli_loglik(data, beta), rtol=1e-14)


def test_agq_against_quadrature_oracle():
    data = toy_units()
    params = LogitParams([-0.4, 0.8], 1.3)
    oracle = area_integral_oracle(data, params)
    assert_allclose(logit_loglik_agq(data, params, AGQConfig(q=25)), oracle, rtol=1e-8)
    errs = [abs(logit_loglik_agq(data, params, AGQConfig(q=q)) - oracle) for q in (5, 10, 15, 25)]
    # accuracy improves with q until it reaches the oracle's own precision
    floor = 1e-12 * abs(oracle)
    assert all(b <= a or b <= floor for a, b in zip(errs, errs[1:]))
    assert errs[0] > errs[-1]


def _fd(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        out[i] = (f(x + e) - f(x - e)) / (2 * e[i])
    return out


def test_agq_score_and_hessian_match_finite_differences():
    g = np.random.default_rng(2)
    design = unit_design(D=8)
    for _ in range(10):
        data = design.with_outcomes(g.integers(0, 2, design.n))
        cells = unit_cells(data)
        theta = np.append(np.array(UNIT_BETA) + g.normal(0, 0.2, 5), g.uniform(0.1, 1.5))
        cfg = AGQConfig(q=15)
        s = logit_score_agq(cells, LogitParams.from_theta(theta), cfg)
        fd = _fd(lambda th: logit_loglik_agq(cells, LogitParams.from_theta(th), cfg), theta)
        assert np.max(np.abs(fd - s)) <= 1e-4 * np.max(np.abs(s))
        H = logit_hessian_agq(cells, LogitParams.from_theta(theta), cfg)
        Hfd = np.array([_fd(lambda th: logit_score_agq(cells, LogitParams.from_theta(th), cfg)[i], theta)
                        for i in range(theta.size)])
        assert np.max(np.abs(H - Hfd)) <= 1e-4 * np.max(np.abs(H))


def test_conditional_mode_is_stationary():
    cells = unit_cells(toy_units(3))
    beta = np.array([0.2, -0.5])
    u, sig = conditional_mode(cells, beta, 0.9)
    from scipy.special import expit

    pr = expit(cells.X @ beta + 0.9 * u[:, None])
    grad = 0.9 * np.sum(cells.y - cells.m * pr, axis=1) - u
    assert_allclose(grad, 0.0, atol=1e-9)
    assert np.all(sig > 0) and np.all(sig <= 1)


def _simulate(design, params, seed):
    g = np.random.default_rng(seed)
    u = g.normal(size=design.D)
    eta = design.X @ params.beta + params.delta * u[design.area_index]
    return design.with_outcomes(g.binomial(1, special.expit(eta)))


def test_fit_score_and_recovery():
    design = unit_design(D=26)
    truth = LogitParams(UNIT_BETA, UNIT_DELTA)
    fits = [fit_unit_model(_simulate(design, truth, s)) for s in range(6)]
    for f in fits:
        assert f.converged and f.score_norm <= 1e-6
    est = np.array([f.params.theta for f in fits])
    assert abs(est[:, 0].mean() - UNIT_BETA[0]) < 0.5
    assert np.all(est[:, -1] >= 0)


def test_fit_warm_start_agrees_with_cold():
    design = unit_design(D=26)
    data = _simulate(design, LogitParams(UNIT_BETA, UNIT_DELTA), 11)
    cold = fit_unit_model(data)
    warm = fit_unit_model(data, start=LogitParams(cold.params.beta + 0.05, cold.params.delta * 1.3))
    assert_allclose(warm.params.theta, cold.params.theta, rtol=1e-5, atol=1e-6)


def test_zero_delta_truth_gives_small_estimate():
    # large binomial cells (m = 2000 per area and class) keep the test cheap
    g = np.random.default_rng(4)
    classes = ((1.0, 0.0), (1.0, 1.0))
    small = 0
    for rep in range(8):
        units = []
        for d in range(30):
            for z in classes:
                p = special.expit(-0.5 + 0.8 * z[1])
                units.append(UnitRecord(f"a{d}", int(g.binomial(2000, p)), z, 2000, 1.0))
        fit = fit_unit_model(UnitDataset(tuple(units), classes))
        small += fit.params.delta <= 0.05
    assert small >= 7


def test_ebp_zero_delta_is_logistic():
    data = toy_units()
    params = LogitParams([-0.4, 0.8], 0.0)
    pred = unit_ebp(data, params)
    assert_array_equal(pred.r_hat, np.broadcast_to(special.expit([-0.4, 0.4]), (3, 2)))
    assert_array_equal(pred.u_hat, 0.0)


def test_ebp_monte_carlo_against_quadrature_oracle():
    units = tuple(UnitRecord("a", y, (1.0,), 1, 1.0) for y in (1, 0, 1, 1, 0, 1, 1))
    data = UnitDataset(units, ((1.0,),), np.array([[100.0]]))
    beta, delta = -0.3, 1.1
    ys = sum(u.y for u in units)
    n = len(units)

    def integrand(v, k):
        e = beta + delta * v
        return special.expit(e) ** k * math.exp(ys * e - n * np.logaddexp(0, e) - 0.5 * v * v)

    A, _ = integrate.quad(integrand, -np.inf, np.inf, args=(1,), epsabs=0, epsrel=1e-12)
    C, _ = integrate.quad(integrand, -np.inf, np.inf, args=(0,), epsabs=0, epsrel=1e-12)
    oracle = A / C
    params = LogitParams([beta], delta)
    reps = np.array([unit_ebp(data, params, seed=s).r_hat[0, 0] for s in range(40)])
    se = reps.std(ddof=1)
    assert abs(reps[0] - oracle) < 3 * se
    assert abs(reps.mean() - oracle) < 3 * se / math.sqrt(reps.size) + 1e-4 * se
    quad = unit_ebp(data, params, method="quadrature").r_hat[0, 0]
    assert_allclose(quad, oracle, rtol=1e-9)


@settings(max_examples=25, deadline=None)
@given(b0=st.floats(-6, 6), b1=st.floats(-3, 3), delta=st.floats(0.0, 4.0), seed=st.integers(0, 10**6))
def test_ebp_proportions_inside_unit_interval(b0, b1, delta, seed):
    data = toy_units(seed)
    pred = unit_ebp(data, LogitParams([b0, b1], delta), AGQConfig(mc_draws=200), seed=seed)
    assert np.all((pred.prop_hat > 0) & (pred.prop_hat < 1))
    assert np.all((pred.r_hat > 0) & (pred.r_hat < 1))


def test_ebp_reproducible_and_keyed():
    data = toy_units()
    params = LogitParams([-0.4, 0.8], 0.7)
    a = unit_ebp(data, params, seed=5, key=(1, 0))
    b = unit_ebp(data, params, seed=5, key=(1, 0))
    c = unit_ebp(data, params, seed=5, key=(2, 0))
    assert_array_equal(a.mu_hat, b.mu_hat)
    assert not np.array_equal(a.mu_hat, c.mu_hat)


def test_ebp_requires_class_sizes():
    data = toy_units()
    bare = UnitDataset(data.units, data.classes)
    with pytest.raises(MissingClassSizes):
        unit_ebp(bare, LogitParams([0.0, 0.0], 0.5))


def test_params_and_config_validation():
    with pytest.raises(DomainError):
        LogitParams([0.0], -0.1)
    assert LogitParams.from_theta([0.0, -0.3]).delta == 0.3
    with pytest.raises(DomainError):
        AGQConfig(q=2)
