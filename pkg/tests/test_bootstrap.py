import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import small_area_data
from saesci.area import fit_area_model, g1_closed
from saesci.bootstrap import (
    BootstrapConfig,
    SigmaKind,
    bootstrap_area,
    bootstrap_unit,
    mse_bootstrap,
    mtp_from_ensemble,
    paired_difference_contrast,
    parallel_map,
    sci,
)
from saesci.errors import (
    BootstrapFailure,
    DimensionMismatch,
    DomainError,
    MissingSecondStage,
    OddLength,
    ValidationError,
)
from saesci.designs import unit_design
from saesci.numerics import order_statistic_index
from saesci.unit import LogitParams, fit_unit_model, unit_cells


@pytest.fixture(scope="module")
def area_ensemble():
    data, _ = small_area_data(5, D=15)
    fit = fit_area_model(data)
    ens = bootstrap_area(data, fit, BootstrapConfig(B1=300, B2=1, seed=9))
    return data, fit, ens


def test_config_validation():
    with pytest.raises(DomainError):
        BootstrapConfig(B1=50)
    with pytest.raises(DomainError):
        BootstrapConfig(alpha=1.0)
    with pytest.raises(DomainError):
        BootstrapConfig(B2=-1)
    with pytest.raises(ValidationError):
        SigmaKind.parse("bogus")
    assert SigmaKind.parse("mse-boot-bc") is SigmaKind.BOOT_BC
    assert SigmaKind.parse("G") is SigmaKind.G1


def _square(ctx, i):
    return ctx * i * i


def test_parallel_map_preserves_order():
    assert parallel_map(_square, 3, range(10), threads=1) == parallel_map(_square, 3, range(10), threads=2)


def test_bootstrap_identical_for_thread_counts():
    data, _ = small_area_data(2, D=8)
    fit = fit_area_model(data)
    a = bootstrap_area(data, fit, BootstrapConfig(B1=120, B2=1, seed=4, threads=1))
    b = bootstrap_area(data, fit, BootstrapConfig(B1=120, B2=1, seed=4, threads=2))
    assert_array_equal(a.mu_boot, b.mu_boot)
    assert_array_equal(a.mse2, b.mse2)
    c = bootstrap_area(data, fit, BootstrapConfig(B1=120, B2=1, seed=5))
    assert not np.array_equal(a.mu_boot, c.mu_boot)


def test_ensemble_shapes_and_g1_star(area_ensemble):
    data, fit, ens = area_ensemble
    assert ens.mu_boot.shape == (ens.n_ok, data.D)
    assert ens.n_ok + ens.failures == 300
    for i in (0, 17, ens.n_ok - 1):
        th = ens.theta_star[i]
        lam = np.exp(data.X @ th[:-1])
        assert_allclose(ens.g1_star[i], g1_closed(lam, th[-1]), rtol=1e-12)
    v = ens.vcov_theta
    assert_allclose(v, v.T)
    assert np.all(np.linalg.eigvalsh(v) > 0)


def test_mse_bc_needs_second_stage():
    data, _ = small_area_data(3, D=8)
    ens = bootstrap_area(data, fit_area_model(data), BootstrapConfig(B1=100, B2=0))
    assert mse_bootstrap(ens)[1] is None
    with pytest.raises(MissingSecondStage):
        ens.mse_boot_bc()


@pytest.mark.parametrize("kind", list(SigmaKind))
def test_sci_contains_ici(area_ensemble, kind):
    _, _, ens = area_ensemble
    r = sci(ens, sigma_kind=kind)
    assert np.all(r.q_ici <= r.q_sci)
    assert np.all(r.sci_lower <= r.ici_lower) and np.all(r.ici_upper <= r.sci_upper)
    assert r.order_index == order_statistic_index(0.05, ens.n_ok)
    assert np.all(r.sigma > 0)


def test_sci_quantile_is_order_statistic(area_ensemble):
    _, _, ens = area_ensemble
    r = sci(ens, sigma_kind="g1")
    stat = np.sort(np.max(np.abs(ens.errors) / np.sqrt(ens.g1_star), axis=1))
    assert r.q_sci == stat[r.order_index - 1]


def test_sci_raw_statistic_has_constant_width(area_ensemble):
    _, _, ens = area_ensemble
    r = sci(ens, statistic="R")
    w = r.sci_upper - r.sci_lower
    assert_allclose(w, w[0])
    with pytest.raises(ValueError):
        sci(ens, statistic="T")


def test_sigma_kinds_agree_roughly(area_ensemble):
    # all four variability measures estimate the same prediction MSE
    _, _, ens = area_ensemble
    s = {k: ens.sigma(k)[0] for k in SigmaKind}
    for k in SigmaKind:
        assert_allclose(s[k], s[SigmaKind.G1], rtol=0.5)
    assert np.all(s[SigmaKind.PLUGIN] >= s[SigmaKind.G1])


def test_mtp_identity_at_estimate_gives_zero(area_ensemble):
    data, _, ens = area_ensemble
    res = mtp_from_ensemble(ens, np.eye(data.D), ens.mu_hat / ens.N)
    assert res.t_H == 0.0 and not res.reject
    assert res.q_H > 0


def test_mtp_rejects_far_target(area_ensemble):
    data, _, ens = area_ensemble
    res = mtp_from_ensemble(ens, np.eye(data.D), ens.mu_hat / ens.N + 0.5)
    assert res.reject


def test_mtp_dimension_checks(area_ensemble):
    data, _, ens = area_ensemble
    with pytest.raises(DimensionMismatch):
        mtp_from_ensemble(ens, np.eye(data.D + 1), np.zeros(data.D + 1))
    with pytest.raises(DimensionMismatch):
        mtp_from_ensemble(ens, np.eye(data.D), np.zeros(3))


def test_paired_difference_contrast():
    C = paired_difference_contrast(6)
    assert C.shape == (3, 6)
    assert_array_equal(C @ np.array([1, 1, 2, 2, 5, 5]), 0.0)
    assert_array_equal(C.sum(axis=1), 0.0)
    with pytest.raises(OddLength):
        paired_difference_contrast(5)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 20))
def test_paired_contrast_rows(n):
    C = paired_difference_contrast(2 * n)
    assert_array_equal(np.abs(C).sum(axis=1), 2.0)
    assert_array_equal(np.abs(C).sum(axis=0), 1.0)


def test_bootstrap_failure_when_refits_break(monkeypatch):
    import saesci.bootstrap as bs
    from saesci.errors import NumericalError

    def broken(*a, **k):
        raise NumericalError("forced")

    monkeypatch.setattr(bs, "_area_refit", broken)
    data, _ = small_area_data(1, D=6)
    with pytest.raises(BootstrapFailure):
        bootstrap_area(data, fit_area_model(data), BootstrapConfig(B1=100, B2=0))


def test_unit_bootstrap_small():
    design = unit_design(D=6, n_range=(10, 15))
    g = np.random.default_rng(3)
    data = design.with_outcomes(g.integers(0, 2, design.n))
    cells = unit_cells(data)
    fit = fit_unit_model(cells)
    cfg = BootstrapConfig(B1=100, B2=0, seed=2)
    ens = bootstrap_unit(cells, fit, cfg, area_ids=data.area_ids)
    assert ens.mu_boot.shape == (ens.n_ok, 6)
    r = sci(ens, sigma_kind="boot")
    assert np.all(r.q_ici <= r.q_sci)
    with pytest.raises(ValidationError):
        ens.sigma("g1")
    again = bootstrap_unit(cells, fit, cfg, area_ids=data.area_ids)
    assert_array_equal(ens.mu_boot, again.mu_boot)
    assert isinstance(fit.params, LogitParams)
