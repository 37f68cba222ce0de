"""Reliability study: repeated simulation from a known model, refitting,
bootstrap intervals and tests, summarized as ECP / WS / VS, RBIAS / RRMSE,
per-area bias and MSE, and power tables."""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .area import ModelParams, fit_area_model
from .bootstrap import (
    BootstrapConfig,
    SigmaKind,
    bootstrap_area,
    bootstrap_unit,
    mtp_from_ensemble,
    parallel_map,
    sci,
)
from .data import AreaDataset, UnitDataset
from .designs import AREA_BETA, AREA_DELTA, UNIT_BETA, UNIT_DELTA, area_design, unit_design
from .errors import DegenerateDispersionWarning, NumericalError, ValidationError
from .numerics import RngStream, derive_seed
from .unit import AGQConfig, LogitParams, fit_unit_model, true_area_counts, unit_cells, unit_ebp

AREA_KINDS = (SigmaKind.BOOT, SigmaKind.BOOT_BC, SigmaKind.PLUGIN, SigmaKind.G1)
UNIT_KINDS = (SigmaKind.BOOT, SigmaKind.BOOT_BC)


@dataclass(eq=False)
class Scenario:
    model: str  # "area" | "unit"
    true_params: ModelParams | LogitParams
    design: AreaDataset | UnitDataset
    K: int = 500
    cfg: BootstrapConfig = field(default_factory=lambda: BootstrapConfig(B1=500, B2=1))
    D_mode: str = "original"
    seed: int = 1
    sigma_kinds: tuple[SigmaKind, ...] | None = None
    power_deltas: tuple[float, ...] = ()
    agq: AGQConfig = field(default_factory=AGQConfig)
    threads: int = 1

    def __post_init__(self):
        if self.model not in ("area", "unit"):
            raise ValidationError("model must be 'area' or 'unit'")
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.sigma_kinds is None:
            kinds = AREA_KINDS if self.model == "area" else UNIT_KINDS
            if self.cfg.B2 == 0:
                kinds = tuple(k for k in kinds if k is not SigmaKind.BOOT_BC)
            self.sigma_kinds = kinds
        else:
            self.sigma_kinds = tuple(SigmaKind.parse(k) for k in self.sigma_kinds)

    @property
    def D(self) -> int:
        return self.design.D

    @classmethod
    def area_default(cls, D_mode="original", **kw) -> "Scenario":
        return cls("area", ModelParams(AREA_BETA, AREA_DELTA), area_design(D_mode), D_mode=D_mode, **kw)

    @classmethod
    def unit_default(cls, D=26, **kw) -> "Scenario":
        kw.setdefault("K", 100)
        kw.setdefault("cfg", BootstrapConfig(B1=200, B2=1))
        return cls("unit", LogitParams(UNIT_BETA, UNIT_DELTA), unit_design(D), **kw)

    @classmethod
    def from_dict(cls, spec: dict) -> "Scenario":
        model = spec.get("model", "area").lower()
        if model in ("areapoissongamma", "area"):
            model = "area"
        elif model in ("unitlogit", "unit"):
            model = "unit"
        cfg = BootstrapConfig(B1=spec.get("B1", 500), B2=spec.get("B2", 1), alpha=spec.get("alpha", 0.05),
                              seed=spec.get("seed", 1))
        common = dict(K=spec.get("K", 500 if model == "area" else 100), cfg=cfg, seed=spec.get("seed", 1),
                      sigma_kinds=spec.get("sigma_kinds"), power_deltas=tuple(spec.get("power_deltas", ())),
                      threads=spec.get("threads", 1))
        if model == "area":
            D_mode = spec.get("D_mode", "original")
            params = ModelParams(spec.get("beta", AREA_BETA), spec.get("delta", AREA_DELTA))
            design = area_design(D_mode, seed=spec.get("design_seed", 20240501))
            return cls("area", params, design, D_mode=D_mode, **common)
        params = LogitParams(spec.get("beta", UNIT_BETA), spec.get("delta", UNIT_DELTA))
        n_max = spec.get("n_max", 50)
        design = unit_design(spec.get("D", 26), n_range=(min(20, n_max), n_max),
                             seed=spec.get("design_seed", 20240502))
        agq = AGQConfig(spec.get("q", 15), spec.get("mc_draws", 2000))
        return cls("unit", params, design, agq=agq, **common)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "model": self.model, "K": self.K, "D": self.D, "D_mode": self.D_mode, "seed": self.seed,
            "beta": self.true_params.beta.tolist(), "delta": self.true_params.delta,
            "sigma_kinds": [k.value for k in self.sigma_kinds], "power_deltas": list(self.power_deltas),
            **{k: v for k, v in self.cfg.to_dict().items() if k != "sigma_kind"},
        }


def generate_replicate(scenario: Scenario, k: int):
    """Synthetic dataset of run ``k`` and the true area counts.

    Area model: w ~ Gamma(delta, delta), y ~ Poisson(lambda w), truth
    lambda w.  Unit model: u ~ N(0, 1), y ~ Bin(m, p), truth
    sum_l N_dl r_dl at the realized u.
    """
    g = RngStream(derive_seed(scenario.seed, k), 0).generator
    params = scenario.true_params
    if scenario.model == "area":
        des = scenario.design
        lam = params.lam(des.X)
        mu = lam * g.gamma(params.delta, 1.0 / params.delta, size=des.D)
        y = g.poisson(mu)
        return des.with_counts(y), mu
    des = scenario.design
    u = g.standard_normal(des.D)
    pr = special.expit(des.X @ params.beta + params.delta * u[des.area_index])
    y = g.binomial(des.m.astype(np.int64), pr)
    truth = true_area_counts(np.asarray(des.Z, dtype=float), des.require_class_sizes(), params, u)
    return des.with_outcomes(y), truth


def _run(scenario: Scenario, k: int):
    """One simulation run; ``None`` when the fit or bootstrap fails."""
    data, truth = generate_replicate(scenario, k)
    run_seed = derive_seed(scenario.seed, k)
    cfg = BootstrapConfig(scenario.cfg.B1, scenario.cfg.B2, scenario.cfg.alpha, run_seed,
                          scenario.cfg.sigma_kind, 1, scenario.cfg.max_fail_rate)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDispersionWarning)
            if scenario.model == "area":
                fit = fit_area_model(data)
                if not (fit.converged or fit.boundary):
                    return k, None
                ens = bootstrap_area(data, fit, cfg)
            else:
                cells = unit_cells(data)
                fit = fit_unit_model(cells, scenario.agq)
                ens = bootstrap_unit(cells, fit, cfg, scenario.agq, area_ids=data.area_ids)
    except (NumericalError, ValidationError):
        return k, None
    N = ens.N
    out = {"theta": fit.params.theta, "mu_hat": ens.mu_hat, "truth": truth, "N": N, "kinds": {}}
    for kind in scenario.sigma_kinds:
        r = sci(ens, alpha=cfg.alpha, sigma_kind=kind)
        out["kinds"][kind.value] = {
            "q_sci": r.q_sci,
            "width": r.width_prop,
            "sci_cover": r.covers(truth),
            "ici_cover": r.covers(truth, simultaneous=False),
            "ici_inside_sci": bool(np.all(r.q_ici <= r.q_sci)),
        }
    if scenario.power_deltas:
        h = truth / N
        eye = np.eye(ens.D)
        out["reject"] = np.array([mtp_from_ensemble(ens, eye, h + d, cfg.alpha).reject
                                  for d in scenario.power_deltas])
    return k, out


@dataclass(eq=False)
class SimReport:
    scenario: dict
    runs_ok: int
    runs_failed: int
    ecp: dict
    ecp_ici: dict
    ws: dict
    vs: dict
    vs_flag: bool
    rbias: np.ndarray
    rrmse: np.ndarray
    B_d: np.ndarray
    E_d: np.ndarray
    power: dict
    ici_nested: bool
    per_run: list = field(default_factory=list, repr=False)

    @property
    def B(self) -> float:
        return float(np.mean(np.abs(self.B_d)))

    @property
    def E(self) -> float:
        return float(np.mean(np.abs(self.E_d)))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "runs_ok": self.runs_ok,
            "runs_failed": self.runs_failed,
            "ecp": self.ecp,
            "ecp_ici": self.ecp_ici,
            "ws": self.ws,
            "vs": self.vs,
            "vs_undefined": self.vs_flag,
            "rbias": self.rbias.tolist(),
            "rrmse": self.rrmse.tolist(),
            "B_d": self.B_d.tolist(),
            "E_d": self.E_d.tolist(),
            "B": self.B,
            "E": self.E,
            "power": {repr(float(k)): v for k, v in self.power.items()},
            "ici_nested_in_sci": self.ici_nested,
        }

    def write(self, out_dir, provenance: dict | None = None) -> None:
        """report.json plus tidy CSV tables (coverage, per-area, power)."""
        os.makedirs(out_dir, exist_ok=True)
        payload = self.to_dict()
        if provenance:
            payload = {"provenance": provenance, **payload}
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        head = [f"# {k}={v}\n" for k, v in sorted((provenance or {}).items())]
        with open(os.path.join(out_dir, "coverage.csv"), "w", newline="", encoding="utf-8") as fh:
            fh.writelines(head)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "ecp", "ecp_ici", "ws", "vs"])
            for kind in self.ecp:
                w.writerow([SigmaKind(kind).label, repr(self.ecp[kind]), repr(self.ecp_ici[kind]),
                            repr(self.ws[kind]), repr(self.vs[kind])])
        with open(os.path.join(out_dir, "areas.csv"), "w", newline="", encoding="utf-8") as fh:
            fh.writelines(head)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["d", "B_d", "E_d"])
            for d, (b, e) in enumerate(zip(self.B_d, self.E_d), start=1):
                w.writerow([d, repr(float(b)), repr(float(e))])
        if self.power:
            with open(os.path.join(out_dir, "power.csv"), "w", newline="", encoding="utf-8") as fh:
                fh.writelines(head)
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["delta", "rejection_rate"])
                for dlt, rate in self.power.items():
                    w.writerow([repr(float(dlt)), repr(float(rate))])


def summarize(scenario: Scenario, results: list) -> SimReport:
    ok = [r for _, r in results if r is not None]
    failed = len(results) - len(ok)
    if not ok:
        raise NumericalError("every simulation run failed")
    K = len(ok)
    theta_true = scenario.true_params.theta
    theta = np.array([r["theta"] for r in ok])
    rbias = np.mean(theta - theta_true, axis=0) / np.abs(theta_true)
    rrmse = np.sqrt(np.mean((theta - theta_true) ** 2, axis=0)) / np.abs(theta_true)
    err = np.array([(r["mu_hat"] - r["truth"]) / r["N"] for r in ok])
    ecp, ecp_ici, ws, vs = {}, {}, {}, {}
    nested = True
    for kind in scenario.sigma_kinds:
        rows = [r["kinds"][kind.value] for r in ok]
        ecp[kind.value] = 100.0 * float(np.mean([x["sci_cover"].all() for x in rows]))
        ecp_ici[kind.value] = 100.0 * float(np.mean([x["ici_cover"].all() for x in rows]))
        widths = np.array([x["width"] for x in rows])  # (K, D)
        ws[kind.value] = float(widths.mean())
        vs[kind.value] = float(np.sum((widths - widths.mean(axis=0)) ** 2) / (widths.shape[1] * (K - 1))) if K > 1 else 0.0
        nested &= all(x["ici_inside_sci"] for x in rows)
    power = {}
    if scenario.power_deltas:
        rej = np.array([r["reject"] for r in ok])
        power = {float(d): float(rej[:, i].mean()) for i, d in enumerate(scenario.power_deltas)}
    return SimReport(scenario.to_dict(), K, failed, ecp, ecp_ici, ws, vs, K == 1, rbias, rrmse,
                     err.mean(axis=0), np.mean(err**2, axis=0), power, nested, ok)


def run_reliability(scenario: Scenario) -> SimReport:
    """Run all K simulations (in parallel over runs when
    ``scenario.threads > 1``; results are identical for any thread count)."""
    results = parallel_map(_run, scenario, range(scenario.K), scenario.threads)
    return summarize(scenario, results)


def run_power(scenario: Scenario, deltas) -> dict:
    """Rejection rate of the max-type test of H0: zeta = h against shifted
    targets h + delta, h being each run's true proportions."""
    sc = Scenario(scenario.model, scenario.true_params, scenario.design, scenario.K, scenario.cfg,
                  scenario.D_mode, scenario.seed, scenario.sigma_kinds, tuple(deltas), scenario.agq,
                  scenario.threads)
    return run_reliability(sc).power


def estimate_only(scenario: Scenario, k: int):
    """Fit-only run used for parameter RBIAS / RRMSE studies."""
    data, truth = generate_replicate(scenario, k)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDispersionWarning)
            if scenario.model == "area":
                fit = fit_area_model(data)
                mu_hat = fit.params.lam(data.X) * (data.y + fit.params.delta) / (fit.params.lam(data.X) + fit.params.delta)
                N = data.N
            else:
                cells = unit_cells(data)
                fit = fit_unit_model(cells, scenario.agq)
                pred = unit_ebp(cells, fit.params, scenario.agq, seed=derive_seed(scenario.seed, k))
                mu_hat, N = pred.mu_hat, pred.N
    except (NumericalError, ValidationError):
        return k, None
    return k, {"theta": fit.params.theta, "mu_hat": mu_hat, "truth": truth, "N": N, "kinds": {}}


def run_estimation(scenario: Scenario) -> SimReport:
    """RBIAS / RRMSE of the ML estimates and B_d / E_d of the EBP, without
    the bootstrap (much cheaper than :func:`run_reliability`)."""
    sc = Scenario(scenario.model, scenario.true_params, scenario.design, scenario.K, scenario.cfg,
                  scenario.D_mode, scenario.seed, (), (), scenario.agq, scenario.threads)
    results = parallel_map(estimate_only, sc, range(sc.K), sc.threads)
    return summarize(sc, results)

