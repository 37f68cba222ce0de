import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from saesci.data import (
    AreaDataset,
    UnitDataset,
    UnitRecord,
    direct_estimators,
    load_area_csv,
    load_unit_csv,
    write_area_csv,
    write_unit_csv,
)
from saesci.designs import area_design, unit_design
from saesci.errors import (
    DuplicateAreaId,
    EmptyArea,
    MissingColumn,
    NonIntegerCount,
    NonPositivePopulation,
    UnknownClass,
    ValidationError,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_52_area_file(tmp_path):
    design = area_design()
    write_area_csv(design, tmp_path / "area.csv")
    data = load_area_csv(tmp_path / "area.csv")
    assert (data.D, data.p) == (52, 5)
    assert data.covariate_names == ("intercept", "ls2", "ed2", "age2", "sm1")
    assert_array_equal(data.X[:, 0], 1.0)


def test_negative_count_rejected(tmp_path):
    f = _write(tmp_path / "a.csv", "area,y,N,x1\nA,3,10,0.5\nB,-1,10,0.2\n")
    with pytest.raises(NonIntegerCount):
        load_area_csv(f)


def test_fractional_count_rejected(tmp_path):
    f = _write(tmp_path / "a.csv", "area,y,N,x1\nA,3.5,10,0.5\nB,1,10,0.2\n")
    with pytest.raises(NonIntegerCount):
        load_area_csv(f)


def test_minimal_two_rows(tmp_path):
    f = _write(tmp_path / "a.csv", "area,y,N,x1\nA,3,10,0.5\nB,0,4,0.2\n")
    data = load_area_csv(f)
    assert data.D == 2
    assert data.ids == ("A", "B")
    assert_array_equal(data.y, [3, 0])


@pytest.mark.parametrize(
    "text, exc",
    [
        ("area,y,x1\nA,3,0.5\nB,1,0.2\n", MissingColumn),
        ("area,y,N,x1\nA,3,0,0.5\nB,1,4,0.2\n", NonPositivePopulation),
        ("area,y,N,x1\nA,3,5,0.5\nA,1,4,0.2\n", DuplicateAreaId),
        ("area,y,N,x1\nA,3,5,0.5\n", ValidationError),
        ("area,y,N,x1\nA,3,5,abc\nB,1,4,0.2\n", ValidationError),
    ],
)
def test_area_validation_errors(tmp_path, text, exc):
    with pytest.raises(exc):
        load_area_csv(_write(tmp_path / "a.csv", text))


@settings(max_examples=25, deadline=None)
@given(
    D=st.integers(2, 8),
    p=st.integers(1, 4),
    seed=st.integers(0, 10**6),
)
def test_area_round_trip(tmp_path_factory, D, p, seed):
    g = np.random.default_rng(seed)
    X = np.column_stack([np.ones(D), g.normal(size=(D, p - 1)) * 10 ** g.uniform(-3, 3)])
    data = AreaDataset.from_arrays([f"a{d}" for d in range(D)], g.integers(0, 1000, D), X,
                                   g.integers(1, 10**6, D))
    path = tmp_path_factory.mktemp("rt") / "area.csv"
    write_area_csv(data, path)
    back = load_area_csv(path)
    assert back == data


def _units_text():
    return (
        "area,y,m,w,x1,x2\n"
        "A,1,1,2.0,1,0\n"
        "A,0,1,3.0,0,1\n"
        "B,1,1,1.0,1,1\n"
        "B,1,1,1.0,0,0\n"
        "B,0,1,1.0,1,1\n"
    )


def test_unit_classes_from_design(tmp_path):
    design = unit_design(D=26)
    write_unit_csv(design, tmp_path / "u.csv", tmp_path / "s.csv")
    data = load_unit_csv(tmp_path / "u.csv", tmp_path / "s.csv")
    assert data.L == 16
    assert data.D == 26
    assert_array_equal(data.class_sizes, design.class_sizes)
    assert_array_equal(data.sample_class_counts.sum(axis=1), data.n_d)


def test_single_area_single_class(tmp_path):
    u = _write(tmp_path / "u.csv", "area,y,m,w,x1\nA,1,1,1.5,1\nA,0,1,1.5,1\n")
    s = _write(tmp_path / "s.csv", "area,class,N\nA,1,7\n")
    data = load_unit_csv(u, s)
    assert data.L == 1 and data.D == 1
    assert data.class_sizes[0, 0] == 7


def test_unknown_class(tmp_path):
    u = _write(tmp_path / "u.csv", _units_text())
    s = _write(tmp_path / "s.csv", "area,class,N\nA,1:0,10\nA,0:1,10\nB,1:1,10\nB,0:0,10\n")
    load_unit_csv(u, s)
    s2 = _write(tmp_path / "s2.csv", "area,class,N\nA,1:0,10\nA,0:1,10\nB,1:1,10\n")
    with pytest.raises(UnknownClass):
        load_unit_csv(u, s2)


def test_unit_record_bounds():
    with pytest.raises(NonIntegerCount):
        UnitRecord("A", 2, (1.0,), m=1)
    with pytest.raises(ValidationError):
        UnitRecord("A", 0, (1.0,), w=0.0)


def test_direct_hand_computation(tmp_path):
    data = load_unit_csv(_write(tmp_path / "u.csv", _units_text()))
    est = direct_estimators(data)
    assert_allclose(est.Y[0], 2.0)
    assert_allclose(est.N[0], 5.0)
    # x for the two A units: (1, 0) and (0, 1)
    assert_allclose(est.X_mean[0, 1:], [(2 * 1 + 3 * 0) / 5, (2 * 0 + 3 * 1) / 5])


def test_direct_unit_weights_reproduce_counts(tmp_path):
    text = _units_text().replace(",2.0,", ",1.0,").replace(",3.0,", ",1.0,")
    data = load_unit_csv(_write(tmp_path / "u.csv", text))
    est = direct_estimators(data)
    assert_allclose(est.Y, [1.0, 2.0])
    assert_allclose(est.N, [2.0, 3.0])
    assert_allclose(est.X_mean[:, 1], [0.5, 2 / 3])


def test_direct_class_totals_partition():
    design = unit_design(D=6)
    est = direct_estimators(design)
    assert_allclose(est.N_class.sum(axis=1), est.N, rtol=1e-12)
    # one-hot coding of the 16 classes is an exhaustive category set
    onehot = est.N_class / est.N[:, None]
    assert_allclose(onehot.sum(axis=1), 1.0, rtol=1e-12)
    # and the unweighted sample proportions come back with unit weights
    ones = UnitDataset(tuple(UnitRecord(u.area_id, u.y, u.x, u.m, 1.0) for u in design.units))
    est1 = direct_estimators(ones)
    assert_allclose(est1.N, design.n_d)


def test_direct_to_area_dataset(tmp_path):
    data = load_unit_csv(_write(tmp_path / "u.csv", _units_text()))
    area = direct_estimators(data).to_area_dataset()
    assert area.D == 2 and area.p == 3
    assert_array_equal(area.N, [5, 3])
    assert_array_equal(area.y, [2, 2])


def test_empty_area():
    with pytest.raises(EmptyArea):
        UnitDataset((UnitRecord("A", 0, (1.0,)),), area_ids=("A", "B"))
