"""Unit-level logit-normal mixed model.

``y_dj | u_d ~ Bin(m_dj, p_dj)`` with ``logit p_dj = x_dj' beta + delta u_d``
and ``u_d ~ N(0, 1)``.  The per-area integral over ``u_d`` is evaluated by
adaptive Gauss-Hermite quadrature centred at the conditional mode.  Units
that share an area and a covariate pattern contribute identically, so all
computations run on (area, class) cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .data import UnitDataset
from .errors import (
    DegenerateWeights,
    DomainError,
    MissingClassSizes,
    ModeSearchFailure,
    NonConvergence,
    NonFiniteResult,
    ValidationError,
)
from .numerics import RngStream, gauss_hermite, solve

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_ZERO_DELTA = 1e-3  # below this the quasi-Newton stage may have stalled at delta = 0


@dataclass(frozen=True, eq=False)
class LogitParams:
    beta: np.ndarray
    delta: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise DomainError("beta must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        delta = float(self.delta)
        if not (delta >= 0 and math.isfinite(delta)):
            raise DomainError(f"delta must be >= 0, got {self.delta!r}")
        object.__setattr__(self, "delta", delta)

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.beta, self.delta)

    @classmethod
    def from_theta(cls, theta) -> "LogitParams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], abs(float(theta[-1])))

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "delta": self.delta}


@dataclass(frozen=True)
class AGQConfig:
    q: int = 15
    mc_draws: int = 2000

    def __post_init__(self):
        if self.q < 3:
            raise DomainError("AGQ needs q >= 3")
        if self.mc_draws < 100:
            raise DomainError("mc_draws must be >= 100")


# ---------------------------------------------------------------------------
# Cell representation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UnitCells:
    """Padded (D, K) arrays of summed outcomes ``y`` and trials ``m`` per
    (area, sampled class); ``X`` is (D, K, p) and padding has m = 0."""

    y: np.ndarray
    m: np.ndarray
    X: np.ndarray
    cls: np.ndarray  # (D, K) class index of each cell, -1 for padding
    log_binom: float  # sum over units of log C(m_dj, y_dj)
    Z: np.ndarray  # (L, p) class covariate vectors
    class_sizes: np.ndarray | None  # (D, L)

    @property
    def D(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    def with_y(self, y: np.ndarray, log_binom: float | None = None) -> "UnitCells":
        y = np.asarray(y, dtype=float)
        if log_binom is None:
            # cell sums of Bernoulli units: the unit-level constant is 0 when m_dj = 1
            log_binom = 0.0
        return UnitCells(y, self.m, self.X, self.cls, log_binom, self.Z, self.class_sizes)


def unit_cells(data: UnitDataset) -> UnitCells:
    D, p = data.D, data.p
    area, cls = data.area_index, data.class_index
    L = data.L
    ysum = np.zeros((D, L))
    msum = np.zeros((D, L))
    np.add.at(ysum, (area, cls), data.y)
    np.add.at(msum, (area, cls), data.m)
    present = msum > 0
    K = int(present.sum(axis=1).max())
    Z = np.asarray(data.Z, dtype=float)
    cy = np.zeros((D, K))
    cm = np.zeros((D, K))
    cX = np.zeros((D, K, p))
    ci = np.full((D, K), -1, dtype=int)
    for d in range(D):
        ls = np.flatnonzero(present[d])
        k = ls.size
        cy[d, :k] = ysum[d, ls]
        cm[d, :k] = msum[d, ls]
        cX[d, :k] = Z[ls]
        ci[d, :k] = ls
    log_binom = float(np.sum(special.gammaln(data.m + 1.0) - special.gammaln(data.y + 1.0)
                             - special.gammaln(data.m - data.y + 1.0)))
    sizes = None if data.class_sizes is None else np.asarray(data.class_sizes, dtype=float)
    return UnitCells(cy, cm, cX, ci, log_binom, Z, sizes)


def _as_cells(data) -> UnitCells:
    return data if isinstance(data, UnitCells) else unit_cells(data)


def _softplus(e):
    """log(1 + exp(e)) without overflow."""
    return np.maximum(e, 0.0) + np.log1p(np.exp(-np.abs(e)))


# ---------------------------------------------------------------------------
# Mode search and AGQ
# ---------------------------------------------------------------------------


def conditional_mode(cells: UnitCells, beta: np.ndarray, delta: float,
                     tol: float = 1e-10, max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Per-area maximizer of log g(y_d | u) + log phi(u) and the curvature
    scale sigma = (-f'')^(-1/2) at the mode."""
    eta = cells.X @ beta
    y, m = cells.y, cells.m
    u = np.zeros(cells.D)

    def f(uu):
        e = eta + delta * uu[:, None]
        return np.sum(y * e - m * _softplus(e), axis=1) - 0.5 * uu * uu

    fu = f(u)
    for _ in range(max_iter):
        pr = special.expit(eta + delta * u[:, None])
        g = delta * np.sum(y - m * pr, axis=1) - u
        h = -(delta * delta) * np.sum(m * pr * (1.0 - pr), axis=1) - 1.0
        step = -g / h
        if np.max(np.abs(step)) <= tol:
            break
        t = np.ones_like(u)
        for _ in range(40):
            cand = u + t * step
            fc = f(cand)
            bad = fc < fu - 1e-12 * np.abs(fu)
            if not bad.any():
                break
            t = np.where(bad, 0.5 * t, t)
        u, fu = cand, fc
    else:
        raise ModeSearchFailure("conditional mode search did not converge in 50 iterations")
    if not np.all(np.isfinite(u)):
        raise ModeSearchFailure("non-finite conditional mode")
    pr = special.expit(eta + delta * u[:, None])
    h = (delta * delta) * np.sum(m * pr * (1.0 - pr), axis=1) + 1.0
    return u, 1.0 / np.sqrt(h)


def _agq_terms(cells: UnitCells, beta, delta, q):
    """Node locations and log-integrand terms of the AGQ sum per area."""
    t, w = gauss_hermite(q)
    uhat, sig = conditional_mode(cells, beta, delta)
    scale = math.sqrt(2.0) * sig
    u = uhat[:, None] + scale[:, None] * t[None, :]  # (D, q)
    e = (cells.X @ beta)[:, :, None] + delta * u[:, None, :]  # (D, K, q)
    f = np.sum(cells.y[:, :, None] * e - cells.m[:, :, None] * _softplus(e), axis=1) - 0.5 * u * u
    logterm = np.log(w)[None, :] + (t * t)[None, :] + f
    return u, e, logterm, scale


def logit_loglik_agq(data, params: LogitParams, cfg: AGQConfig = AGQConfig()) -> float:
    """AGQ approximation of the marginal log-likelihood, including the
    binomial coefficients and the -(D/2) log 2 pi constant."""
    cells = _as_cells(data)
    _, _, logterm, scale = _agq_terms(cells, params.beta, params.delta, cfg.q)
    per_area = np.log(scale) + special.logsumexp(logterm, axis=1)
    value = float(np.sum(per_area)) - cells.D * _LOG_SQRT_2PI + cells.log_binom
    if not math.isfinite(value):
        raise NonFiniteResult("non-finite AGQ log-likelihood")
    return value


def _loglik_score_hessian(cells: UnitCells, beta, delta, q, hessian=True):
    u, e, logterm, scale = _agq_terms(cells, beta, delta, q)
    lse = special.logsumexp(logterm, axis=1)
    ll = float(np.sum(np.log(scale) + lse)) - cells.D * _LOG_SQRT_2PI + cells.log_binom
    post = np.exp(logterm - lse[:, None])  # (D, q) posterior weights at the nodes
    pr = special.expit(e)
    resid = cells.y[:, :, None] - cells.m[:, :, None] * pr  # (D, K, q)
    # derivative of the log integrand at every node
    g_beta = np.einsum("dkr,dkp->drp", resid, cells.X)
    g_delta = u * resid.sum(axis=1)
    g = np.concatenate([g_beta, g_delta[:, :, None]], axis=2)  # (D, q, p+1)
    mean_g = np.einsum("dr,drj->dj", post, g)
    score = mean_g.sum(axis=0)
    if not hessian:
        return ll, score, None
    # Louis identity: E[d2 f] + Var[d f] under the node weights
    v = cells.m[:, :, None] * pr * (1.0 - pr) * post[:, None, :]  # (D, K, q)
    vk = v.sum(axis=2)  # (D, K)
    vu = np.einsum("dkr,dr->dk", v, u)
    vuu = np.einsum("dkr,dr->d", v, u * u)
    p = cells.p
    d2 = np.empty((p + 1, p + 1))
    d2[:p, :p] = -np.einsum("dk,dki,dkj->ij", vk, cells.X, cells.X, optimize=True)
    d2[:p, p] = d2[p, :p] = -np.einsum("dk,dki->i", vu, cells.X)
    d2[p, p] = -vuu.sum()
    gw = (g * post[:, :, None]).reshape(-1, p + 1)
    second = gw.T @ g.reshape(-1, p + 1) - mean_g.T @ mean_g
    return ll, score, d2 + second


def logit_score_agq(data, params: LogitParams, cfg: AGQConfig = AGQConfig()) -> np.ndarray:
    """Score in (beta, delta): posterior expectations of the integrand
    derivatives under the AGQ node weights."""
    cells = _as_cells(data)
    return _loglik_score_hessian(cells, params.beta, params.delta, cfg.q, hessian=False)[1]


def logit_hessian_agq(data, params: LogitParams, cfg: AGQConfig = AGQConfig()) -> np.ndarray:
    cells = _as_cells(data)
    return _loglik_score_hessian(cells, params.beta, params.delta, cfg.q)[2]


def bernoulli_loglik(data, beta) -> float:
    """Log-likelihood of the fixed-effects logistic regression (delta = 0)."""
    cells = _as_cells(data)
    e = cells.X @ np.asarray(beta, dtype=float)
    return float(np.sum(cells.y * e - cells.m * _softplus(e))) + cells.log_binom


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class UnitFitResult:
    params: LogitParams
    loglik: float
    converged: bool
    iterations: int
    score: np.ndarray

    @property
    def score_norm(self) -> float:
        return float(np.max(np.abs(self.score)))

    def to_dict(self) -> dict:
        return {
            "model": "unit",
            "beta": self.params.beta.tolist(),
            "delta": self.params.delta,
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "score_max_norm": self.score_norm,
        }


def logistic_irls(cells: UnitCells, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Binomial logistic regression by iteratively reweighted least squares."""
    mask = cells.m > 0
    X = cells.X[mask]
    y = cells.y[mask]
    m = cells.m[mask]
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        pr = special.expit(X @ beta)
        s = X.T @ (y - m * pr)
        H = X.T @ ((m * pr * (1.0 - pr))[:, None] * X)
        step = solve(H, s)
        beta = beta + step
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(beta))):
            return beta
    raise NonConvergence("logistic regression did not converge (separation?)")


def _newton_polish(cells, theta, q, tol, max_iter=30):
    """Newton iterations with the Louis-identity Hessian and step halving.
    The likelihood is even in delta, so a negative delta is reflected."""
    ll, s, H = _loglik_score_hessian(cells, theta[:-1], theta[-1], q)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(s)) <= tol:
            return theta, ll, s, it, True
        # saddle-free Newton: delta = 0 is always stationary, and near it the
        # Hessian can be indefinite, so flip negative curvature directions
        evals, evecs = np.linalg.eigh(-H)
        if not np.all(np.isfinite(evals)):
            return theta, ll, s, it, False
        evals = np.maximum(np.abs(evals), 1e-8 * max(np.abs(evals).max(), 1e-300))
        step = evecs @ ((evecs.T @ s) / evals)
        t = 1.0
        for _ in range(12):
            cand = theta + t * step
            cand[-1] = abs(cand[-1])
            try:
                out = _loglik_score_hessian(cells, cand[:-1], cand[-1], q)
            except (ModeSearchFailure, NonFiniteResult, FloatingPointError):
                out = None
            if out is not None and out[0] >= ll - 1e-10 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            return theta, ll, s, it, False
        theta = cand
        ll, s, H = out
    return theta, ll, s, it, bool(np.max(np.abs(s)) <= tol)


def _escape_zero_delta(cells, theta, q):
    """delta = 0 is stationary for every beta because the likelihood is even
    in delta.  When it is a local minimum in delta, restart from the best
    delta of a bounded one-dimensional search at the current beta."""
    _, _, H = _loglik_score_hessian(cells, theta[:-1], 0.0, q)
    if H[-1, -1] <= 0.0:
        return theta

    def neg_ll(d):
        try:
            return -_loglik_score_hessian(cells, theta[:-1], d, q, hessian=False)[0]
        except (ModeSearchFailure, NonFiniteResult):
            return np.inf

    res = optimize.minimize_scalar(neg_ll, bounds=(0.0, 5.0), method="bounded", options={"xatol": 1e-6})
    out = theta.copy()
    out[-1] = float(res.x)
    return out


def fit_unit_model(data, cfg: AGQConfig = AGQConfig(), start: LogitParams | None = None,
                   tol_score: float = 1e-8, accept_score: float = 1e-6) -> UnitFitResult:
    """Maximum likelihood under the AGQ likelihood.

    From the logistic-regression start with delta = 0.5, L-BFGS-B (delta
    bounded below by 0) brings the estimate close, and Newton steps with the
    analytic Hessian drive the score to ``tol_score``.  With ``start`` the
    quasi-Newton stage is skipped (used for bootstrap refits).
    """
    cells = _as_cells(data)
    if cells.D < 2:
        raise ValidationError("the unit model needs at least 2 areas")
    Xflat = cells.X[cells.m > 0]
    if np.linalg.matrix_rank(Xflat) < cells.p:
        raise ValidationError("unit design is not of full column rank")
    q = cfg.q
    iterations = 0
    if start is not None:
        theta, ll, s, it, ok = _newton_polish(cells, start.theta.copy(), q, tol_score)
        iterations += it
        if ok:
            return UnitFitResult(LogitParams.from_theta(theta), ll, True, iterations, s)

    theta0 = np.append(logistic_irls(cells), 0.5)

    def objective(th):
        try:
            ll, s, _ = _loglik_score_hessian(cells, th[:-1], th[-1], q, hessian=False)
        except (ModeSearchFailure, NonFiniteResult):
            return np.inf, np.zeros_like(th)
        return -ll, -s

    bounds = [(None, None)] * cells.p + [(0.0, None)]
    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 1000, "gtol": 1e-9, "ftol": 1e-15})
    iterations += int(res.nit)
    theta = np.array(res.x, dtype=float)
    if theta[-1] < _ZERO_DELTA:
        theta = _escape_zero_delta(cells, theta, q)
    theta, ll, s, it, ok = _newton_polish(cells, theta, q, tol_score)
    iterations += it
    converged = bool(np.max(np.abs(s)) <= accept_score)
    if not converged:
        raise NonConvergence(
            "unit-level fit did not reach the score tolerance",
            {"theta": theta.tolist(), "score": s.tolist(), "loglik": ll},
        )
    return UnitFitResult(LogitParams.from_theta(theta), ll, converged, iterations, s)


# ---------------------------------------------------------------------------
# Empirical best prediction
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class UnitPrediction:
    area_ids: tuple[str, ...] | None
    r_hat: np.ndarray  # (D, L) class probabilities
    mu_hat: np.ndarray  # (D,) expected count sum_l N_dl r_dl
    N: np.ndarray  # (D,)
    u_hat: np.ndarray

    @property
    def prop_hat(self) -> np.ndarray:
        return self.mu_hat / self.N

    def to_rows(self) -> list[dict]:
        ids = self.area_ids or tuple(str(d) for d in range(len(self.mu_hat)))
        rows = []
        for d, a in enumerate(ids):
            for l in range(self.r_hat.shape[1]):
                rows.append({"area": a, "class": l, "r_hat": float(self.r_hat[d, l])})
        return rows


def _ebp_weights_mc(cells: UnitCells, beta, delta, draws: int, seed: int, key=()):
    half = (draws + 1) // 2
    z = np.stack([RngStream(seed, *key, d).generator.standard_normal(half) for d in range(cells.D)])
    u = np.concatenate([z, -z], axis=1)  # antithetic pairs
    e = (cells.X @ beta)[:, :, None] + delta * u[:, None, :]
    logw = delta * cells.y.sum(axis=1)[:, None] * u - np.sum(cells.m[:, :, None] * _softplus(e), axis=1)
    if not np.all(np.isfinite(logw)):
        raise DegenerateWeights("Monte Carlo weights are not finite")
    wts = np.exp(logw - logw.max(axis=1, keepdims=True))
    tot = wts.sum(axis=1, keepdims=True)
    if not np.all(tot > 0):
        raise DegenerateWeights("Monte Carlo weights underflow")
    return u, wts / tot


def _ebp_weights_quadrature(cells: UnitCells, beta, delta, q: int):
    u, _, logterm, _ = _agq_terms(cells, beta, delta, q)
    post = np.exp(logterm - special.logsumexp(logterm, axis=1)[:, None])
    return u, post


def unit_ebp(data, params: LogitParams, cfg: AGQConfig = AGQConfig(), seed: int = 0,
             method: str = "mc", key: tuple = (), class_sizes=None, q: int = 40) -> UnitPrediction:
    """EBP of the class probabilities r_dl, the area count sum_l N_dl r_dl
    and of u_d.

    ``method="mc"`` averages over ``cfg.mc_draws`` antithetic standard
    normal draws per area (stream ``(seed, *key, d)``); ``"quadrature"``
    uses a ``q``-node adaptive rule instead.
    """
    cells = _as_cells(data)
    sizes = class_sizes if class_sizes is not None else cells.class_sizes
    if sizes is None:
        raise MissingClassSizes("class sizes are needed for the class-based EBP")
    sizes = np.asarray(sizes, dtype=float)
    beta, delta = params.beta, params.delta
    lin = cells.Z @ beta  # (L,)
    if delta == 0.0:
        r = np.broadcast_to(special.expit(lin), sizes.shape).copy()
        u_hat = np.zeros(cells.D)
    else:
        if method == "mc":
            u, wts = _ebp_weights_mc(cells, beta, delta, cfg.mc_draws, seed, key)
        elif method == "quadrature":
            u, wts = _ebp_weights_quadrature(cells, beta, delta, q)
        else:
            raise ValueError(f"unknown EBP method {method!r}")
        r = np.einsum("ds,dls->dl", wts, special.expit(lin[None, :, None] + delta * u[:, None, :]))
        u_hat = np.sum(wts * u, axis=1)
    mu = np.sum(sizes * r, axis=1)
    ids = data.area_ids if isinstance(data, UnitDataset) else None
    return UnitPrediction(ids, r, mu, sizes.sum(axis=1), u_hat)


def true_area_counts(Z: np.ndarray, sizes: np.ndarray, params: LogitParams, u: np.ndarray) -> np.ndarray:
    """sum_l N_dl logistic(z_l' beta + delta u_d) at realized effects u."""
    r = special.expit((Z @ params.beta)[None, :] + params.delta * np.asarray(u)[:, None])
    return np.sum(sizes * r, axis=1)
