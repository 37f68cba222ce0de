"""Domain records, CSV ingestion and weighted direct estimators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateAreaId,
    EmptyArea,
    InconsistentClassCount,
    MissingClassSizes,
    MissingColumn,
    NonIntegerCount,
    NonPositivePopulation,
    UnknownClass,
    ValidationError,
)


# ---------------------------------------------------------------------------
# Area level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AreaRecord:
    area_id: str
    y: int
    x: tuple[float, ...]
    N: int

    def __post_init__(self):
        if isinstance(self.y, bool) or int(self.y) != self.y or self.y < 0:
            raise NonIntegerCount(f"area {self.area_id!r}: y must be a non-negative integer, got {self.y!r}")
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise NonPositivePopulation(f"area {self.area_id!r}: N must be a positive integer, got {self.N!r}")
        if len(self.x) == 0 or float(self.x[0]) != 1.0:
            raise ValidationError(f"area {self.area_id!r}: x[0] must be the intercept 1")
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))


@dataclass(frozen=True)
class AreaDataset:
    areas: tuple[AreaRecord, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        areas = tuple(self.areas)
        object.__setattr__(self, "areas", areas)
        if len(areas) < 2:
            raise ValidationError("an area dataset needs at least two areas")
        p = len(areas[0].x)
        if any(len(a.x) != p for a in areas):
            raise ValidationError("all areas must have the same covariate dimension")
        seen = set()
        for a in areas:
            if a.area_id in seen:
                raise DuplicateAreaId(f"duplicate area id {a.area_id!r}")
            seen.add(a.area_id)
        names = tuple(self.covariate_names) or ("intercept",) + tuple(f"x{i}" for i in range(1, p))
        if len(names) != p:
            raise ValidationError("covariate_names must have one entry per column of x")
        object.__setattr__(self, "covariate_names", names)

    @property
    def D(self) -> int:
        return len(self.areas)

    @property
    def p(self) -> int:
        return len(self.areas[0].x)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(a.area_id for a in self.areas)

    @cached_property
    def X(self) -> np.ndarray:
        X = np.array([a.x for a in self.areas], dtype=float)
        X.setflags(write=False)
        return X

    @cached_property
    def y(self) -> np.ndarray:
        y = np.array([a.y for a in self.areas], dtype=float)
        y.setflags(write=False)
        return y

    @cached_property
    def N(self) -> np.ndarray:
        N = np.array([a.N for a in self.areas], dtype=float)
        N.setflags(write=False)
        return N

    def with_counts(self, y: Sequence[int]) -> "AreaDataset":
        """Same design (ids, covariates, N) with new counts."""
        if len(y) != self.D:
            raise ValidationError("count vector length differs from the number of areas")
        areas = tuple(
            AreaRecord(a.area_id, int(v), a.x, a.N) for a, v in zip(self.areas, y)
        )
        return AreaDataset(areas, self.covariate_names)

    def subset(self, index: Sequence[int], ids: Sequence[str] | None = None) -> "AreaDataset":
        """Areas picked by position; ``ids`` relabels them (duplicates allowed)."""
        index = list(index)
        if ids is None:
            ids = [self.areas[i].area_id for i in index]
        areas = tuple(
            AreaRecord(str(new_id), self.areas[i].y, self.areas[i].x, self.areas[i].N)
            for i, new_id in zip(index, ids)
        )
        return AreaDataset(areas, self.covariate_names)

    @classmethod
    def from_arrays(cls, ids, y, X, N, covariate_names=()) -> "AreaDataset":
        X = np.asarray(X, dtype=float)
        areas = tuple(
            AreaRecord(str(i), _as_count(v, i), tuple(row), _as_pop(n, i))
            for i, v, row, n in zip(ids, y, X, N)
        )
        return cls(areas, tuple(covariate_names))


def _as_count(v, area_id) -> int:
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise NonIntegerCount(f"area {area_id!r}: y={v!r} is not a number") from None
    if not math.isfinite(f) or f != int(f) or f < 0:
        raise NonIntegerCount(f"area {area_id!r}: y={v!r} is not a non-negative integer")
    return int(f)


def _as_pop(v, area_id) -> int:
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise NonPositivePopulation(f"area {area_id!r}: N={v!r} is not a number") from None
    if not math.isfinite(f) or f != int(f) or f < 1:
        raise NonPositivePopulation(f"area {area_id!r}: N={v!r} is not a positive integer")
    return int(f)


def _parse_float(value: str, what: str) -> float:
    try:
        f = float(value)
    except ValueError:
        raise ValidationError(f"{what}: {value!r} is not a number") from None
    if not math.isfinite(f):
        raise ValidationError(f"{what}: {value!r} is not finite")
    return f


def _read_rows(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise MissingColumn(f"{path}: empty file")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    rows = [dict(r) for r in reader]
    for r in rows:
        if None in r or any(v is None for v in r.values()):
            raise ValidationError(f"{path}: ragged row {r}")
    return header, rows


def _covariate_columns(header: list[str], fixed: Sequence[str], path) -> list[str]:
    missing = [c for c in fixed if c not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
    return [h for h in header if h not in fixed]


def load_area_csv(path) -> AreaDataset:
    """Read ``area,y,N,x1..xk``; an intercept column is prepended."""
    header, rows = _read_rows(path)
    covs = _covariate_columns(header, ("area", "y", "N"), path)
    areas = []
    for r in rows:
        aid = r["area"].strip()
        x = (1.0,) + tuple(_parse_float(r[c], f"{path}: area {aid!r} column {c}") for c in covs)
        areas.append(AreaRecord(aid, _as_count(r["y"], aid), x, _as_pop(r["N"], aid)))
    return AreaDataset(tuple(areas), ("intercept",) + tuple(covs))


def write_area_csv(data: AreaDataset, path) -> None:
    """Inverse of :func:`load_area_csv` (the intercept column is dropped)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area", "y", "N", *data.covariate_names[1:]])
        for a in data.areas:
            w.writerow([a.area_id, a.y, a.N, *(repr(v) for v in a.x[1:])])


# ---------------------------------------------------------------------------
# Unit level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitRecord:
    area_id: str
    y: int
    x: tuple[float, ...]
    m: int = 1
    w: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise NonIntegerCount(f"unit in area {self.area_id!r}: m must be a positive integer")
        if int(self.y) != self.y or not 0 <= self.y <= self.m:
            raise NonIntegerCount(f"unit in area {self.area_id!r}: need 0 <= y <= m, got y={self.y}, m={self.m}")
        if not self.w > 0 or not math.isfinite(self.w):
            raise ValidationError(f"unit in area {self.area_id!r}: weight must be positive, got {self.w}")
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))


def class_label(z: Sequence[float]) -> str:
    """Canonical label of a covariate class: x1..xk joined by ':'."""
    return ":".join(_fmt_num(v) for v in z[1:])


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def parse_class_label(label: str, k: int) -> tuple[float, ...]:
    parts = label.strip().split(":") if k > 0 else []
    if len(parts) != k:
        raise InconsistentClassCount(f"class label {label!r} does not have {k} components")
    return (1.0,) + tuple(_parse_float(p, f"class label {label!r}") for p in parts)


@dataclass(frozen=True, eq=False)
class UnitDataset:
    """Unit records plus (optionally) the population sizes of each covariate
    class per area.

    Areas are ordered by first appearance in ``units`` unless ``area_ids`` is
    given.  ``class_sizes[d, l]`` is N_dl for area ``area_ids[d]`` and class
    ``classes[l]``; it is ``None`` when only the sample is known.
    """

    units: tuple[UnitRecord, ...]
    classes: tuple[tuple[float, ...], ...] = ()
    class_sizes: np.ndarray | None = None
    area_ids: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        units = tuple(self.units)
        object.__setattr__(self, "units", units)
        if not units:
            raise ValidationError("a unit dataset needs at least one unit")
        p = len(units[0].x)
        for u in units:
            if len(u.x) != p:
                raise ValidationError("all units must have the same covariate dimension")
            if u.x[0] != 1.0:
                raise ValidationError("unit covariates must start with the intercept 1")
        ids = tuple(self.area_ids) or tuple(dict.fromkeys(u.area_id for u in units))
        object.__setattr__(self, "area_ids", ids)
        idset = set(ids)
        if len(idset) != len(ids):
            raise DuplicateAreaId("duplicate area ids")
        for u in units:
            if u.area_id not in idset:
                raise InconsistentClassCount(f"unit area {u.area_id!r} is not in area_ids")
        present = {u.area_id for u in units}
        for a in ids:
            if a not in present:
                raise EmptyArea(f"area {a!r} has no sampled units")
        classes = tuple(tuple(float(v) for v in z) for z in self.classes)
        if not classes:
            classes = tuple(dict.fromkeys(u.x for u in units))
        if len(set(classes)) != len(classes):
            raise InconsistentClassCount("duplicate covariate classes")
        object.__setattr__(self, "classes", classes)
        lookup = {z: l for l, z in enumerate(classes)}
        for u in units:
            if u.x not in lookup:
                raise UnknownClass(f"unit in area {u.area_id!r} has covariates {u.x} matching no class")
        names = tuple(self.covariate_names) or ("intercept",) + tuple(f"x{i}" for i in range(1, p))
        object.__setattr__(self, "covariate_names", names)
        if self.class_sizes is not None:
            sizes = np.array(self.class_sizes, dtype=float)
            if sizes.shape != (len(ids), len(classes)):
                raise InconsistentClassCount(
                    f"class_sizes has shape {sizes.shape}, expected {(len(ids), len(classes))}"
                )
            if np.any(sizes < 0) or np.any(sizes != np.round(sizes)):
                raise InconsistentClassCount("class sizes must be non-negative integers")
            if np.any(sizes.sum(axis=1) < 1):
                raise NonPositivePopulation("every area needs a positive population")
            counts = self.sample_class_counts
            bad = np.argwhere(counts > sizes)
            if bad.size:
                d, l = bad[0]
                raise InconsistentClassCount(
                    f"area {ids[d]!r} class {class_label(classes[l])!r}: "
                    f"{int(counts[d, l])} sampled units exceed population size {int(sizes[d, l])}"
                )
            sizes.setflags(write=False)
            object.__setattr__(self, "class_sizes", sizes)

    @property
    def D(self) -> int:
        return len(self.area_ids)

    @property
    def L(self) -> int:
        return len(self.classes)

    @property
    def p(self) -> int:
        return len(self.units[0].x)

    @property
    def n(self) -> int:
        return len(self.units)

    @cached_property
    def area_index(self) -> np.ndarray:
        pos = {a: d for d, a in enumerate(self.area_ids)}
        return np.array([pos[u.area_id] for u in self.units], dtype=int)

    @cached_property
    def class_index(self) -> np.ndarray:
        lookup = {z: l for l, z in enumerate(self.classes)}
        return np.array([lookup[u.x] for u in self.units], dtype=int)

    @cached_property
    def Z(self) -> np.ndarray:
        return np.array(self.classes, dtype=float)

    @cached_property
    def X(self) -> np.ndarray:
        return np.array([u.x for u in self.units], dtype=float)

    @cached_property
    def y(self) -> np.ndarray:
        return np.array([u.y for u in self.units], dtype=float)

    @cached_property
    def m(self) -> np.ndarray:
        return np.array([u.m for u in self.units], dtype=float)

    @cached_property
    def w(self) -> np.ndarray:
        return np.array([u.w for u in self.units], dtype=float)

    @cached_property
    def n_d(self) -> np.ndarray:
        return np.bincount(self.area_index, minlength=self.D)

    @cached_property
    def sample_class_counts(self) -> np.ndarray:
        """n_dl: number of sampled units of class l in area d."""
        out = np.zeros((self.D, self.L))
        np.add.at(out, (self.area_index, self.class_index), 1.0)
        return out

    @property
    def N_d(self) -> np.ndarray:
        return self.require_class_sizes().sum(axis=1)

    def require_class_sizes(self) -> np.ndarray:
        if self.class_sizes is None:
            raise MissingClassSizes(
                "class sizes N_dl are required for class-based prediction; "
                "supply a class-size file (covariates must be categorical)"
            )
        return self.class_sizes

    def with_outcomes(self, y: Sequence[int]) -> "UnitDataset":
        """Same design with new outcomes (validated against m)."""
        y = np.asarray(y)
        if y.shape != (self.n,):
            raise ValidationError("outcome vector length differs from the number of units")
        units = tuple(
            UnitRecord(u.area_id, int(v), u.x, u.m, u.w) for u, v in zip(self.units, y)
        )
        return UnitDataset(units, self.classes, self.class_sizes, self.area_ids, self.covariate_names)


def load_unit_csv(path, class_sizes_path=None) -> UnitDataset:
    """Read ``area,y,m,w,x1..xk`` and, optionally, ``area,class,N`` class sizes.

    Class labels are the x1..xk values of the class joined by ``:``
    (e.g. ``0:1:1:0``).  Classes are ordered by first appearance in the
    class-size file, followed by any sampled pattern not listed there (which
    raises :class:`UnknownClass`).
    """
    header, rows = _read_rows(path)
    covs = _covariate_columns(header, ("area", "y", "m", "w"), path)
    units = []
    for r in rows:
        aid = r["area"].strip()
        where = f"{path}: area {aid!r}"
        y = _parse_float(r["y"], f"{where} column y")
        m = _parse_float(r["m"], f"{where} column m") if r["m"].strip() else 1.0
        if y != int(y) or m != int(m):
            raise NonIntegerCount(f"{where}: y and m must be integers")
        x = (1.0,) + tuple(_parse_float(r[c], f"{where} column {c}") for c in covs)
        units.append(UnitRecord(aid, int(y), x, int(m), _parse_float(r["w"], f"{where} column w")))
    names = ("intercept",) + tuple(covs)
    if class_sizes_path is None:
        return UnitDataset(tuple(units), covariate_names=names)

    _, crow = _read_rows(class_sizes_path)
    if crow and not {"area", "class", "N"} <= set(crow[0]):
        raise MissingColumn(f"{class_sizes_path}: need columns area,class,N")
    area_ids = tuple(dict.fromkeys(u.area_id for u in units))
    extra = [r["area"].strip() for r in crow if r["area"].strip() not in set(area_ids)]
    if extra:
        raise InconsistentClassCount(f"{class_sizes_path}: area {extra[0]!r} has no sampled units")
    classes: dict[tuple[float, ...], int] = {}
    entries = {}
    for r in crow:
        z = parse_class_label(r["class"], len(covs))
        classes.setdefault(z, len(classes))
        key = (r["area"].strip(), z)
        if key in entries:
            raise InconsistentClassCount(f"{class_sizes_path}: duplicate row for {key[0]!r}, {r['class']!r}")
        n_val = _parse_float(r["N"], f"{class_sizes_path}: N")
        if n_val != int(n_val) or n_val < 0:
            raise InconsistentClassCount(f"{class_sizes_path}: N must be a non-negative integer")
        entries[key] = int(n_val)
    for u in units:
        if u.x not in classes:
            raise UnknownClass(
                f"unit in area {u.area_id!r} has class {class_label(u.x)!r} absent from {class_sizes_path}"
            )
    pos = {a: d for d, a in enumerate(area_ids)}
    sizes = np.zeros((len(area_ids), len(classes)))
    for (a, z), n_val in entries.items():
        sizes[pos[a], classes[z]] = n_val
    return UnitDataset(tuple(units), tuple(classes), sizes, area_ids, names)


def write_unit_csv(data: UnitDataset, path, class_sizes_path=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area", "y", "m", "w", *data.covariate_names[1:]])
        for u in data.units:
            w.writerow([u.area_id, u.y, u.m, repr(u.w), *(repr(v) for v in u.x[1:])])
    if class_sizes_path is not None:
        sizes = data.require_class_sizes()
        with open(class_sizes_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["area", "class", "N"])
            for d, a in enumerate(data.area_ids):
                for l, z in enumerate(data.classes):
                    w.writerow([a, class_label(z), int(sizes[d, l])])


# ---------------------------------------------------------------------------
# Direct estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DirectEstimates:
    """Design-weighted area totals and means from the sampled units."""

    area_ids: tuple[str, ...]
    covariate_names: tuple[str, ...]
    classes: tuple[tuple[float, ...], ...]
    Y: np.ndarray  # (D,)
    N: np.ndarray  # (D,)
    N_class: np.ndarray  # (D, L)
    X_total: np.ndarray  # (D, p)
    X_mean: np.ndarray = field(repr=False, default=None)  # (D, p)

    def to_area_dataset(
        self,
        columns: Iterable[str] | None = None,
        N: Sequence[int] | None = None,
        *,
        use_direct_N: bool = False,
    ) -> AreaDataset:
        """Area-level dataset: counts round(Y_d), covariates the weighted
        means of ``columns``.  Population sizes come from ``N`` unless
        ``use_direct_N`` (or no ``N`` is supplied), in which case round(N_d)
        is used."""
        names = list(self.covariate_names[1:]) if columns is None else list(columns)
        idx = [self.covariate_names.index(c) for c in names]
        X = np.column_stack([np.ones(len(self.area_ids)), self.X_mean[:, idx]])
        if N is None or use_direct_N:
            N = np.round(self.N)
        return AreaDataset.from_arrays(
            self.area_ids, np.round(self.Y), X, N, ("intercept", *names)
        )


def direct_estimators(units: UnitDataset) -> DirectEstimates:
    D, L = units.D, units.L
    d_idx, w = units.area_index, units.w
    if np.any(w <= 0):
        raise ValidationError("all sampling weights must be positive")
    if np.any(units.n_d == 0):
        raise EmptyArea("every area needs at least one sampled unit")
    Y = np.bincount(d_idx, weights=w * units.y, minlength=D)
    N = np.bincount(d_idx, weights=w, minlength=D)
    N_class = np.zeros((D, L))
    np.add.at(N_class, (d_idx, units.class_index), w)
    X_total = np.zeros((D, units.p))
    np.add.at(X_total, d_idx, w[:, None] * units.X)
    X_mean = X_total / N[:, None]
    return DirectEstimates(
        units.area_ids, units.covariate_names, units.classes, Y, N, N_class, X_total, X_mean
    )
