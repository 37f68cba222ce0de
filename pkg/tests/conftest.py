import numpy as np
import pytest

from saesci.area import ModelParams
from saesci.data import AreaDataset
from saesci.designs import AREA_BETA, AREA_DELTA
from saesci.simulate import Scenario, generate_replicate


def small_area_data(seed, D=12, p=3, lam_range=(2.0, 60.0), delta=3.0):
    """Random NB data with moderate means; returns (data, true params)."""
    g = np.random.default_rng(seed)
    Z = g.uniform(-1.0, 1.0, size=(D, p - 1))
    X = np.column_stack([np.ones(D), Z])
    lo, hi = np.log(lam_range)
    beta = np.concatenate([[0.5 * (lo + hi)], g.uniform(-0.5, 0.5, p - 1) * (hi - lo) / max(p - 1, 1)])
    lam = np.exp(X @ beta)
    w = g.gamma(delta, 1.0 / delta, D)
    y = g.poisson(lam * w)
    N = np.ceil(5 * lam + 10).astype(int)
    data = AreaDataset.from_arrays([f"d{i}" for i in range(D)], y, X, N)
    return data, ModelParams(beta, delta)


@pytest.fixture(scope="session")
def paper_area_data():
    """One synthetic replicate of the 52-area design at the published values."""
    sc = Scenario.area_default(K=1)
    data, truth = generate_replicate(sc, 0)
    return data, truth, ModelParams(AREA_BETA, AREA_DELTA)


# acceptance criterion number -> one-line verdict, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
