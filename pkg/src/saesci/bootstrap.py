"""Parametric bootstrap, simultaneous intervals and max-type tests.

A :class:`BootstrapEnsemble` stores, for every first-stage replicate, the
bootstrap truth, its EBP and the refitted parameters; every variability
kind (g1, plug-in, bootstrap, bias-corrected bootstrap) is derived from the
same ensemble, so intervals of different kinds share their random draws.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from .area import (
    AreaFitResult,
    ModelParams,
    PredictionSet,
    c_term,
    g1_closed,
    refit_area,
)
from .data import AreaDataset, UnitDataset
from .errors import (
    BootstrapFailure,
    DegenerateDispersionWarning,
    DimensionMismatch,
    DomainError,
    MissingSecondStage,
    NumericalError,
    OddLength,
    ValidationError,
    ZeroSigma,
)
from .numerics import RngStream, order_statistic_index, upper_quantile
from .unit import (
    AGQConfig,
    LogitParams,
    UnitCells,
    UnitFitResult,
    fit_unit_model,
    true_area_counts,
    unit_cells,
    unit_ebp,
)


class SigmaKind(str, Enum):
    G1 = "g1"
    PLUGIN = "plugin"
    BOOT = "boot"
    BOOT_BC = "boot-bc"

    @classmethod
    def parse(cls, value) -> "SigmaKind":
        if isinstance(value, SigmaKind):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {
            "g": cls.G1, "g1": cls.G1,
            "p": cls.PLUGIN, "plugin": cls.PLUGIN, "mseplugin": cls.PLUGIN, "mse-plugin": cls.PLUGIN,
            "b": cls.BOOT, "boot": cls.BOOT, "mseboot": cls.BOOT, "mse-boot": cls.BOOT,
            "bc": cls.BOOT_BC, "boot-bc": cls.BOOT_BC, "msebootbc": cls.BOOT_BC, "mse-boot-bc": cls.BOOT_BC,
        }
        if key not in aliases:
            raise ValidationError(f"unknown sigma kind {value!r}")
        return aliases[key]

    @property
    def label(self) -> str:
        return {"g1": "G", "plugin": "P", "boot": "B", "boot-bc": "BC"}[self.value]


@dataclass(frozen=True)
class BootstrapConfig:
    B1: int = 1000
    B2: int = 1
    alpha: float = 0.05
    seed: int = 0
    sigma_kind: SigmaKind = SigmaKind.G1
    threads: int = 1
    max_fail_rate: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "sigma_kind", SigmaKind.parse(self.sigma_kind))
        if int(self.B1) != self.B1 or self.B1 < 100:
            raise DomainError("B1 must be an integer >= 100")
        if int(self.B2) != self.B2 or self.B2 < 0:
            raise DomainError("B2 must be an integer >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {"B1": self.B1, "B2": self.B2, "alpha": self.alpha, "seed": self.seed,
                "sigma_kind": self.sigma_kind.value}


# ---------------------------------------------------------------------------
# Parallel map with order-preserving results
# ---------------------------------------------------------------------------


def _run_chunk(args):
    func, ctx, chunk = args
    return [func(ctx, i) for i in chunk]


def parallel_map(func, ctx, indices, threads: int = 1) -> list:
    """``[func(ctx, i) for i in indices]``, optionally on worker processes.

    Each work item draws only from its own keyed stream, so the result list
    is identical for every ``threads`` value.
    """
    indices = list(indices)
    if threads <= 1 or len(indices) < 2:
        return [func(ctx, i) for i in indices]
    n_chunks = min(len(indices), 4 * threads)
    chunks = [c.tolist() for c in np.array_split(np.array(indices), n_chunks)]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(_run_chunk, [(func, ctx, c) for c in chunks]))
    return [r for part in parts for r in part]


# ---------------------------------------------------------------------------
# Ensemble
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BootstrapEnsemble:
    """Surviving first-stage replicates (rows) for every area (columns)."""

    model: str
    area_ids: tuple[str, ...]
    N: np.ndarray
    mu_hat: np.ndarray
    theta_hat: np.ndarray
    theta_star: np.ndarray
    mu_true: np.ndarray
    mu_boot: np.ndarray
    replicate: np.ndarray
    B1: int
    B2: int
    failures: int
    g1_star: np.ndarray | None = None
    mse2: np.ndarray | None = None
    X: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_ok(self) -> int:
        return self.mu_boot.shape[0]

    @property
    def D(self) -> int:
        return self.mu_hat.size

    @property
    def vcov_theta(self) -> np.ndarray:
        """B1^-1 sum (theta* - theta_bar)(theta* - theta_bar)'."""
        dev = self.theta_star - self.theta_star.mean(axis=0)
        v = dev.T @ dev / self.n_ok
        return 0.5 * (v + v.T)

    @property
    def errors(self) -> np.ndarray:
        return self.mu_boot - self.mu_true

    @property
    def mse_boot(self) -> np.ndarray:
        return np.mean(self.errors**2, axis=0)

    def mse_boot_bc(self) -> tuple[np.ndarray, np.ndarray]:
        """Bias-corrected estimate floored at 0, and the flag of floored areas."""
        if self.mse2 is None or self.B2 == 0:
            raise MissingSecondStage("mse_BC needs a second-stage bootstrap (B2 >= 1)")
        raw = 2.0 * self.mse_boot - np.mean(self.mse2, axis=0)
        flag = raw <= 0.0
        return np.where(flag, 0.0, raw), flag

    def g1_hat(self) -> np.ndarray:
        if self.model != "area":
            raise ValidationError("g1 is only available for the area-level model")
        params = ModelParams.from_theta(self.theta_hat)
        return g1_closed(params.lam(self.X), params.delta)

    def mse_plugin(self) -> np.ndarray:
        if self.model != "area":
            raise ValidationError("the plug-in MSE is only available for the area-level model")
        params = ModelParams.from_theta(self.theta_hat)
        return self.g1_hat() + c_term(params, self.X, self.vcov_theta)

    def sigma(self, kind) -> tuple[np.ndarray, np.ndarray]:
        """(sigma_hat per area, sigma_star per replicate and area) on the
        count scale.

        G and P are re-evaluated at every theta*; P reuses the ensemble
        covariance.  B and BC have no per-replicate analogue with B2 = 1,
        so the sample value is used in every replicate.
        """
        kind = SigmaKind.parse(kind)
        if kind in (SigmaKind.G1, SigmaKind.PLUGIN) and self.model != "area":
            raise ValidationError(f"sigma kind {kind.value!r} is only available for the area-level model")
        if kind is SigmaKind.G1:
            return np.sqrt(self.g1_hat()), np.sqrt(self.g1_star)
        if kind is SigmaKind.PLUGIN:
            vcov = self.vcov_theta
            star = np.empty_like(self.g1_star)
            for i, th in enumerate(self.theta_star):
                star[i] = self.g1_star[i] + c_term(ModelParams.from_theta(th), self.X, vcov)
            return np.sqrt(self.mse_plugin()), np.sqrt(star)
        if kind is SigmaKind.BOOT:
            s = np.sqrt(self.mse_boot)
        else:
            bc, flag = self.mse_boot_bc()
            s = np.sqrt(np.where(flag, self.mse_boot, bc))
        return s, np.broadcast_to(s, self.mu_boot.shape)

    def predictions(self) -> PredictionSet:
        ps = PredictionSet(self.area_ids, self.mu_hat.copy(), self.N.copy())
        if self.model == "area":
            ps.g1 = self.g1_hat()
            ps.mse_plugin = self.mse_plugin()
        ps.mse_boot = self.mse_boot
        if self.mse2 is not None and self.B2 > 0:
            ps.mse_boot_bc = self.mse_boot_bc()[0]
        return ps


def _collect(model, results, cfg: BootstrapConfig, **fixed) -> BootstrapEnsemble:
    ok = [(b, r) for b, r in results if r is not None]
    failures = len(results) - len(ok)
    if failures > cfg.max_fail_rate * cfg.B1:
        raise BootstrapFailure(f"{failures} of {cfg.B1} bootstrap replicates failed to fit")
    if not ok:
        raise BootstrapFailure("every bootstrap replicate failed")
    stack = {k: np.array([r[k] for _, r in ok]) for k in ok[0][1]}
    return BootstrapEnsemble(
        model=model,
        theta_star=stack["theta"],
        mu_true=stack["mu_true"],
        mu_boot=stack["mu_boot"],
        replicate=np.array([b for b, _ in ok]),
        B1=cfg.B1,
        B2=cfg.B2,
        failures=failures,
        g1_star=stack.get("g1"),
        mse2=stack.get("mse2"),
        **fixed,
    )


# -- area level --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _AreaCtx:
    X: np.ndarray
    params: ModelParams
    B2: int
    seed: int


def _area_refit(X, y, start: ModelParams) -> ModelParams:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDispersionWarning)
        fit = refit_area(X, y, start)
    if not (fit.converged or fit.boundary):
        raise NumericalError("refit did not converge")
    return fit.params


def _area_draw(stream: RngStream, lam, delta):
    g = stream.generator
    w = g.gamma(delta, 1.0 / delta, size=lam.size)
    mu = lam * w
    return mu, g.poisson(mu)


def _area_replicate(ctx: _AreaCtx, b: int):
    X, params = ctx.X, ctx.params
    lam = params.lam(X)
    mu, y = _area_draw(RngStream(ctx.seed, b, 0), lam, params.delta)
    try:
        est = _area_refit(X, y, params)
        lam_s = est.lam(X)
        d_s = est.delta
        mu_boot = lam_s * (y + d_s) / (lam_s + d_s)
        out = {"theta": est.theta, "mu_true": mu, "mu_boot": mu_boot, "g1": g1_closed(lam_s, d_s)}
        if ctx.B2 > 0:
            sq = np.zeros(lam.size)
            for b2 in range(1, ctx.B2 + 1):
                mu2, y2 = _area_draw(RngStream(ctx.seed, b, b2), lam_s, d_s)
                est2 = _area_refit(X, y2, est)
                lam2 = est2.lam(X)
                sq += (lam2 * (y2 + est2.delta) / (lam2 + est2.delta) - mu2) ** 2
            out["mse2"] = sq / ctx.B2
    except (NumericalError, ValidationError):
        return b, None
    return b, out


def bootstrap_area(data: AreaDataset, fit: AreaFitResult | ModelParams, cfg: BootstrapConfig) -> BootstrapEnsemble:
    """Parametric bootstrap under the fitted Poisson-gamma model.

    Replicate ``b`` draws ``w* ~ Gamma(delta, delta)`` and ``y* ~
    Poisson(lambda w*)`` from stream ``(seed, b, 0)``, refits (warm-started
    at the original estimate) and records the EBP, the truth ``lambda w*``
    and ``g1`` at the refit.  With ``B2 > 0`` each replicate also runs the
    second stage from streams ``(seed, b, b2)``.
    """
    params = fit.params if isinstance(fit, AreaFitResult) else fit
    if isinstance(fit, AreaFitResult) and not (fit.converged or fit.boundary):
        raise ValidationError("bootstrap needs a converged fit")
    ctx = _AreaCtx(data.X, params, cfg.B2, cfg.seed)
    results = parallel_map(_area_replicate, ctx, range(1, cfg.B1 + 1), cfg.threads)
    lam = params.lam(data.X)
    mu_hat = lam * (data.y + params.delta) / (lam + params.delta)
    return _collect("area", results, cfg, area_ids=data.ids, N=data.N.copy(), mu_hat=mu_hat,
                    theta_hat=params.theta, X=data.X.copy())


# -- unit level ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _UnitCtx:
    cells: UnitCells
    params: LogitParams
    agq: AGQConfig
    B2: int
    seed: int


def _unit_draw(stream: RngStream, cells: UnitCells, params: LogitParams):
    g = stream.generator
    u = g.standard_normal(cells.D)
    pr = special.expit(cells.X @ params.beta + params.delta * u[:, None])
    y = g.binomial(cells.m.astype(np.int64), pr)
    mu = true_area_counts(cells.Z, cells.class_sizes, params, u)
    return mu, cells.with_y(y)


def _unit_replicate(ctx: _UnitCtx, b: int):
    cells, params = ctx.cells, ctx.params
    mu, c1 = _unit_draw(RngStream(ctx.seed, b, 0), cells, params)
    try:
        est = fit_unit_model(c1, ctx.agq, start=params).params
        pred = unit_ebp(c1, est, ctx.agq, seed=ctx.seed, key=(b, 0))
        out = {"theta": est.theta, "mu_true": mu, "mu_boot": pred.mu_hat}
        if ctx.B2 > 0:
            sq = np.zeros(cells.D)
            for b2 in range(1, ctx.B2 + 1):
                mu2, c2 = _unit_draw(RngStream(ctx.seed, b, b2), cells, est)
                est2 = fit_unit_model(c2, ctx.agq, start=est).params
                sq += (unit_ebp(c2, est2, ctx.agq, seed=ctx.seed, key=(b, b2)).mu_hat - mu2) ** 2
            out["mse2"] = sq / ctx.B2
    except (NumericalError, ValidationError):
        return b, None
    return b, out


def bootstrap_unit(data: UnitDataset | UnitCells, fit: UnitFitResult | LogitParams, cfg: BootstrapConfig,
                   agq: AGQConfig = AGQConfig(), area_ids=None) -> BootstrapEnsemble:
    """Parametric bootstrap under the fitted logit-normal model: u* ~ N(0,1),
    y* ~ Bin(m, p*), truth sum_l N_dl r*_dl, refit and Monte-Carlo EBP."""
    params = fit.params if isinstance(fit, UnitFitResult) else fit
    cells = data if isinstance(data, UnitCells) else unit_cells(data)
    if cells.class_sizes is None:
        raise ValidationError("the unit bootstrap needs class sizes")
    ids = area_ids or (data.area_ids if isinstance(data, UnitDataset) else tuple(str(d) for d in range(cells.D)))
    ctx = _UnitCtx(cells, params, agq, cfg.B2, cfg.seed)
    results = parallel_map(_unit_replicate, ctx, range(1, cfg.B1 + 1), cfg.threads)
    pred = unit_ebp(cells, params, agq, seed=cfg.seed, key=(0,))
    return _collect("unit", results, cfg, area_ids=tuple(ids), N=pred.N, mu_hat=pred.mu_hat,
                    theta_hat=params.theta)


def mse_bootstrap(ensemble: BootstrapEnsemble) -> tuple[np.ndarray, np.ndarray | None]:
    """(mse_B, mse_BC) per area; mse_BC is ``None`` without a second stage."""
    bc = ensemble.mse_boot_bc()[0] if ensemble.B2 > 0 and ensemble.mse2 is not None else None
    return ensemble.mse_boot, bc


# ---------------------------------------------------------------------------
# Simultaneous and individual intervals
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SimultaneousResult:
    area_ids: tuple[str, ...]
    mu_hat: np.ndarray
    N: np.ndarray
    sigma: np.ndarray
    q_sci: float
    q_ici: np.ndarray
    sigma_kind: SigmaKind
    alpha: float
    vcov_theta: np.ndarray
    order_index: int
    n_replicates: int
    statistic: str = "S"

    @property
    def sci_lower(self):
        return self.mu_hat - self.q_sci * self.sigma

    @property
    def sci_upper(self):
        return self.mu_hat + self.q_sci * self.sigma

    @property
    def ici_lower(self):
        return self.mu_hat - self.q_ici * self.sigma

    @property
    def ici_upper(self):
        return self.mu_hat + self.q_ici * self.sigma

    @property
    def prop_hat(self):
        return self.mu_hat / self.N

    def prop(self, name: str) -> np.ndarray:
        """Any bound (``sci_lower``, ``ici_upper``, ...) or ``sigma`` on the
        proportion scale."""
        return getattr(self, name) / self.N

    @property
    def width_prop(self) -> np.ndarray:
        return 2.0 * self.q_sci * self.sigma / self.N

    def covers(self, truth, simultaneous: bool = True) -> np.ndarray:
        """Per-area indicator that the count-scale truth lies in the interval."""
        lo, hi = (self.sci_lower, self.sci_upper) if simultaneous else (self.ici_lower, self.ici_upper)
        truth = np.asarray(truth, dtype=float)
        return (lo <= truth) & (truth <= hi)

    def to_rows(self) -> list[list]:
        rows = []
        for d, a in enumerate(self.area_ids):
            n = self.N[d]
            vals = [self.mu_hat[d], self.prop_hat[d], self.sigma[d], self.ici_lower[d], self.ici_upper[d],
                    self.sci_lower[d], self.sci_upper[d], self.sigma[d] / n, self.ici_lower[d] / n,
                    self.ici_upper[d] / n, self.sci_lower[d] / n, self.sci_upper[d] / n]
            rows.append([a] + [repr(float(v)) for v in vals])
        return rows

    CSV_HEADER = ("area", "ebp", "prop", "sigma", "ici_lo", "ici_hi", "sci_lo", "sci_hi",
                  "sigma_prop", "ici_lo_prop", "ici_hi_prop", "sci_lo_prop", "sci_hi_prop")

    def write_csv(self, path, provenance: list[str] | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in provenance or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_HEADER)
            w.writerows(self.to_rows())

    def to_dict(self) -> dict:
        return {
            "q_sci": self.q_sci,
            "q_ici": self.q_ici.tolist(),
            "sigma_kind": self.sigma_kind.value,
            "alpha": self.alpha,
            "order_index": self.order_index,
            "n_replicates": self.n_replicates,
            "statistic": self.statistic,
            "vcov_theta": self.vcov_theta.tolist(),
        }


def _check_sigma(sigma_hat, sigma_star):
    if not (np.all(np.isfinite(sigma_hat)) and np.all(sigma_hat > 0)):
        raise ZeroSigma("variability estimate is zero or non-finite for some area")
    if not (np.all(np.isfinite(sigma_star)) and np.all(sigma_star > 0)):
        raise ZeroSigma("bootstrap variability estimate is zero or non-finite")


def sci(ensemble: BootstrapEnsemble, predictions: PredictionSet | None = None,
        cfg: BootstrapConfig | None = None, *, alpha: float | None = None, sigma_kind=None,
        statistic: str = "S") -> SimultaneousResult:
    """Max-type bootstrap SCIs and the individual intervals from the same
    replicates.

    ``statistic="S"`` studentizes each area's absolute error by sigma*;
    ``"R"`` uses the raw maximum absolute error (constant-width bands).
    """
    alpha = alpha if alpha is not None else (cfg.alpha if cfg else 0.05)
    kind = SigmaKind.parse(sigma_kind if sigma_kind is not None else (cfg.sigma_kind if cfg else SigmaKind.G1))
    mu_hat = ensemble.mu_hat if predictions is None else np.asarray(predictions.mu_hat, dtype=float)
    N = ensemble.N if predictions is None else np.asarray(predictions.N, dtype=float)
    if mu_hat.shape != (ensemble.D,):
        raise DimensionMismatch("predictions do not match the ensemble areas")
    ad = np.abs(ensemble.errors)
    if statistic == "S":
        sigma_hat, sigma_star = ensemble.sigma(kind)
        _check_sigma(sigma_hat, sigma_star)
        ratio = ad / sigma_star
    elif statistic == "R":
        ratio = ad
        sigma_hat = np.ones(ensemble.D)
    else:
        raise ValueError("statistic must be 'S' or 'R'")
    n = ratio.shape[0]
    k = order_statistic_index(alpha, n)
    q_sci = float(upper_quantile(ratio.max(axis=1), alpha))
    q_ici = upper_quantile(ratio, alpha, axis=0)
    return SimultaneousResult(ensemble.area_ids, mu_hat, N, sigma_hat, q_sci, q_ici, kind, alpha,
                              ensemble.vcov_theta, k, n, statistic)


def bonferroni_quantiles(ensemble: BootstrapEnsemble, alpha: float, sigma_kind) -> np.ndarray:
    """Per-area bootstrap quantiles at level alpha / D (diagnostic only)."""
    sigma_hat, sigma_star = ensemble.sigma(sigma_kind)
    _check_sigma(sigma_hat, sigma_star)
    return upper_quantile(np.abs(ensemble.errors) / sigma_star, alpha / ensemble.D, axis=0)


# ---------------------------------------------------------------------------
# Multiple testing
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MtpResult:
    B: np.ndarray
    b: np.ndarray
    t_H: float
    q_H: float
    reject: bool
    t_contrast: np.ndarray
    sigma_contrast: np.ndarray
    alpha: float

    def to_dict(self) -> dict:
        return {
            "t_H": self.t_H,
            "q_H": self.q_H,
            "reject": self.reject,
            "alpha": self.alpha,
            "t_contrast": self.t_contrast.tolist(),
            "sigma_contrast": self.sigma_contrast.tolist(),
            "b": self.b.tolist(),
        }


def _contrast_shapes(B, b, D):
    B = np.atleast_2d(np.asarray(B, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if B.shape[1] != D:
        raise DimensionMismatch(f"contrast matrix has {B.shape[1]} columns, expected D={D}")
    if b.size != B.shape[0]:
        raise DimensionMismatch(f"target vector has length {b.size}, contrast has {B.shape[0]} rows")
    return B, b


def mtp_from_ensemble(ensemble: BootstrapEnsemble, B, b, alpha: float = 0.05,
                      scale: str = "prop", sigma_contrast=None) -> MtpResult:
    """Max-type test of H0: B zeta = b, zeta being the area proportions
    (``scale="prop"``) or counts (``"count"``).

    Each contrast is studentized by the bootstrap standard deviation of
    B(zeta_hat* - zeta*); the critical value is the upper order statistic of
    the bootstrap maxima.
    """
    B, b = _contrast_shapes(B, b, ensemble.D)
    div = ensemble.N if scale == "prop" else np.ones(ensemble.D)
    zeta_hat = ensemble.mu_hat / div
    err = (ensemble.errors / div) @ B.T  # (n, D')
    sig = np.sqrt(np.mean((err - err.mean(axis=0)) ** 2, axis=0)) if sigma_contrast is None else sigma_contrast
    if not np.all(sig > 0):
        raise ZeroSigma("a contrast has zero bootstrap variability")
    t_contrast = np.abs(B @ zeta_hat - b) / sig
    t_H = float(t_contrast.max())
    q_H = float(upper_quantile(np.max(np.abs(err) / sig, axis=1), alpha))
    return MtpResult(B, b, t_H, q_H, bool(t_H >= q_H), t_contrast, sig, alpha)


def mtp(data: AreaDataset, fit: AreaFitResult, B, b, cfg: BootstrapConfig, scale: str = "prop") -> MtpResult:
    _contrast_shapes(B, b, data.D)
    ens = bootstrap_area(data, fit, cfg)
    return mtp_from_ensemble(ens, B, b, cfg.alpha, scale)


def paired_difference_contrast(n: int) -> np.ndarray:
    """(n/2) x n matrix with rows e_{2d-1} - e_{2d}."""
    if n % 2:
        raise OddLength(f"paired differences need an even number of entries, got {n}")
    C = np.zeros((n // 2, n))
    i = np.arange(n // 2)
    C[i, 2 * i] = 1.0
    C[i, 2 * i + 1] = -1.0
    return C


def gender_style_contrast(D: int) -> np.ndarray:
    """D x 2D contrast of paired (e.g. male/female) entries per area."""
    return paired_difference_contrast(2 * int(D))


def write_json(obj: dict, path, provenance: dict | None = None) -> None:
    payload = {"provenance": provenance, **obj} if provenance else obj
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "BootstrapConfig", "BootstrapEnsemble", "SigmaKind", "SimultaneousResult", "MtpResult",
    "bootstrap_area", "bootstrap_unit", "mse_bootstrap", "sci", "mtp", "mtp_from_ensemble",
    "paired_difference_contrast", "gender_style_contrast", "bonferroni_quantiles", "parallel_map",
    "write_json",
]
