"""Synthetic stand-in designs for the reliability study.

The original survey covariates are confidential, so area and unit designs
are drawn once from fixed generators with ranges chosen to give linear
predictors and proportions of the same order as the published fits.
"""

from __future__ import annotations

import numpy as np

from .data import AreaDataset, UnitDataset, UnitRecord
from .numerics import RngStream

AREA_BETA = (10.038, 7.747, -3.136, 11.317, -2.466)
AREA_DELTA = 2.480
UNIT_BETA = (-2.048, 0.989, 0.172, 0.760, 0.100)
UNIT_DELTA = 0.348

AREA_DESIGN_SEED = 20240501
UNIT_DESIGN_SEED = 20240502
AREA_COVARIATES = ("intercept", "ls2", "ed2", "age2", "sm1")
_AREA_RANGES = ((0.04, 0.12), (0.25, 0.45), (0.07, 0.12), (0.3, 1.0))


def area_design(D_mode: str = "original", seed: int = AREA_DESIGN_SEED, D: int = 52) -> AreaDataset:
    """Covariates and population sizes for the area-level study.

    ``original`` has D=52 areas; ``half`` keeps 26 of them sampled without
    replacement; ``extended`` appends 26 randomly chosen duplicates (78
    areas, each entering at most twice).  Counts are set to 0 and replaced
    by :func:`saesci.simulate.generate_replicate`.
    """
    g = RngStream(seed, 0).generator
    lo = np.array([r[0] for r in _AREA_RANGES])
    hi = np.array([r[1] for r in _AREA_RANGES])
    Z = g.uniform(lo, hi, size=(D, len(lo)))
    X = np.column_stack([np.ones(D), Z])
    lam = np.exp(X @ np.array(AREA_BETA))
    rate = g.uniform(0.12, 0.30, size=D)  # proportion of the population in the count
    N = np.maximum(np.round(lam / rate), 1.0)
    ids = [f"A{d + 1:02d}" for d in range(D)]
    base = AreaDataset.from_arrays(ids, np.zeros(D, dtype=int), X, N.astype(int), AREA_COVARIATES)
    mode = D_mode.lower()
    if mode in ("original", "52"):
        return base
    sel = RngStream(seed, 1).generator
    if mode in ("half", "26"):
        idx = np.sort(sel.choice(D, size=D // 2, replace=False))
        return base.subset(idx)
    if mode in ("extended", "78"):
        dup = np.sort(sel.choice(D, size=D // 2, replace=False))
        idx = np.concatenate([np.arange(D), dup])
        ids_ext = list(ids) + [f"{ids[i]}b" for i in dup]
        return base.subset(idx, ids=ids_ext)
    raise ValueError(f"unknown D_mode {D_mode!r}")


def unit_design(D: int = 26, n_range=(20, 50), N_range=(2000, 20000), seed: int = UNIT_DESIGN_SEED) -> UnitDataset:
    """Unit-level skeleton: four binary covariates (16 classes), known class
    sizes per area and a sample of 20-50 units per area drawn without
    replacement from the class population; weights are N_d / n_d."""
    g = RngStream(seed, 0).generator
    bits = np.array([[(l >> k) & 1 for k in range(4)] for l in range(16)], dtype=float)
    classes = tuple((1.0,) + tuple(z) for z in bits)
    units = []
    sizes = np.zeros((D, 16), dtype=int)
    for d in range(D):
        prob1 = g.uniform(0.2, 0.6, size=4)
        cp = np.prod(np.where(bits == 1, prob1, 1 - prob1), axis=1)
        Nd = int(g.integers(N_range[0], N_range[1] + 1))
        sizes[d] = g.multinomial(Nd, cp / cp.sum())
        nd = int(g.integers(n_range[0], n_range[1] + 1))
        counts = g.multivariate_hypergeometric(sizes[d], nd)
        for l in np.repeat(np.arange(16), counts):
            units.append(UnitRecord(f"U{d + 1:02d}", 0, classes[l], 1, Nd / nd))
    ids = tuple(f"U{d + 1:02d}" for d in range(D))
    return UnitDataset(tuple(units), classes, sizes, ids, ("intercept", "x1", "x2", "x3", "x4"))
