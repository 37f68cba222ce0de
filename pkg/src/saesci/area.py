"""Area-level Poisson-gamma (negative binomial) model.

Counts follow ``y_d | w_d ~ Poisson(lambda_d w_d)`` with
``lambda_d = exp(x_d' beta)`` and ``w_d ~ Gamma(delta, delta)``, so that
marginally ``y_d ~ NB`` with mean ``lambda_d`` and variance
``lambda_d + lambda_d^2 / delta``.  The dispersion is also used in the
``alpha = 1/delta`` parameterization, which is the coordinate of the score
and information matrices below.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .data import AreaDataset, AreaRecord
from .errors import (
    DegenerateDispersion,
    DegenerateDispersionWarning,
    DomainError,
    NonConvergence,
    NonFiniteResult,
    SingularMatrix,
    ValidationError,
)
from .numerics import solve, solve_spd

ALPHA_MIN = 1e-6
ALPHA_MAX = 1e3
DELTA_CAP = 1.0 / ALPHA_MIN
TAIL_MASS = 1e-12
# second-moment series weight the tail by j^2, so they truncate further out
MOMENT_TAIL_MASS = 1e-20
_ETA_MAX = 700.0
# _nb_sums switches to explicit summation below these thresholds
_DIRECT_MAX_Y = 64
_DIRECT_DELTA_RATIO = 0.1


@dataclass(frozen=True, eq=False)
class ModelParams:
    beta: np.ndarray
    delta: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise DomainError("beta must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        delta = float(self.delta)
        if not (delta > 0 and math.isfinite(delta)):
            raise DomainError(f"delta must be positive and finite, got {self.delta!r}")
        object.__setattr__(self, "delta", delta)

    @property
    def alpha(self) -> float:
        return 1.0 / self.delta

    @property
    def theta(self) -> np.ndarray:
        """(beta, delta) as one vector."""
        return np.append(self.beta, self.delta)

    @classmethod
    def from_theta(cls, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], float(theta[-1]))

    def lam(self, X: np.ndarray) -> np.ndarray:
        return _lam(X, self.beta)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "delta": self.delta, "alpha": self.alpha}


def _lam(X, beta) -> np.ndarray:
    eta = np.asarray(X, dtype=float) @ beta
    if not np.all(np.isfinite(eta)) or np.max(eta) > _ETA_MAX:
        raise NonFiniteResult("exp(x'beta) overflows: divergent parameters")
    return np.exp(eta)


def _check_params(params: ModelParams, p: int):
    if params.beta.shape != (p,):
        raise DomainError(f"beta has length {params.beta.size}, data has p={p}")


# ---------------------------------------------------------------------------
# Likelihood, score, information
# ---------------------------------------------------------------------------


def _nb_sums(y: np.ndarray, delta: float):
    """The finite sums over j = 1..y-1 appearing in the log-likelihood and
    its derivatives, via log-gamma / polygamma identities:

    s0 = sum log(1 + j/delta)
    s1 = sum j / (1 + j/delta)
    s2 = sum (j / (1 + j/delta))^2

    All three are exactly 0 for y in {0, 1}.  The identities cancel badly
    when delta is large relative to y, so small counts and large delta use
    cumulative sums over j = 1..max(y) - 1 instead.
    """
    y = np.asarray(y, dtype=float)
    dy = delta + y
    d1 = delta + 1.0
    with np.errstate(invalid="ignore"):
        s0 = special.gammaln(dy) - special.gammaln(d1) - (y - 1.0) * math.log(delta)
        dpsi = special.digamma(dy) - special.digamma(d1)
        dtri = special.zeta(2.0, d1) - special.zeta(2.0, dy)  # trigamma difference
    s1 = delta * ((y - 1.0) - delta * dpsi)
    s2 = delta**2 * ((y - 1.0) - 2.0 * delta * dpsi + delta**2 * dtri)
    small = y <= 1
    if np.any(small):
        s0 = np.where(small, 0.0, s0)
        s1 = np.where(small, 0.0, s1)
        s2 = np.where(small, 0.0, s2)
    direct = ~small & ((y < _DIRECT_MAX_Y) | (delta > _DIRECT_DELTA_RATIO * y))
    if np.any(direct):
        s0, s1, s2 = np.array(s0, dtype=float), np.array(s1, dtype=float), np.array(s2, dtype=float)
        idx = (y[direct] - 1.0).astype(np.int64)
        j = np.arange(1, int(idx.max()) + 1, dtype=float)
        r = j / (1.0 + j / delta)
        for out, terms in ((s0, np.log1p(j / delta)), (s1, r), (s2, r * r)):
            out[direct] = np.concatenate(([0.0], np.cumsum(terms)))[idx]
    return s0, s1, s2


def nb_sums_direct(y: int, delta: float) -> tuple[float, float, float]:
    """Direct summation of the same three sums (reference path)."""
    j = np.arange(1, int(y), dtype=float)
    a = 1.0 / delta
    r = j / (1.0 + a * j)
    return float(np.sum(np.log1p(a * j))), float(np.sum(r)), float(np.sum(r * r))


def _loglik_terms(y, lam, delta, s0):
    return s0 + special.xlogy(y, lam) - (y + delta) * np.log1p(lam / delta)


def nb_loglik(data: AreaDataset, params: ModelParams) -> float:
    """Log-likelihood up to the additive constant -sum log(y_d!)."""
    _check_params(params, data.p)
    lam = params.lam(data.X)
    s0, _, _ = _nb_sums(data.y, params.delta)
    value = float(np.sum(_loglik_terms(data.y, lam, params.delta, s0)))
    if not math.isfinite(value):
        raise NonFiniteResult("non-finite log-likelihood")
    return value


def nb_log_pmf(y, lam, delta):
    """Full NB log-pmf (including the -log y! term)."""
    y = np.asarray(y, dtype=float)
    return (
        special.gammaln(y + delta)
        - special.gammaln(delta)
        - special.gammaln(y + 1.0)
        + delta * (np.log(delta) - np.log(delta + lam))
        + special.xlogy(y, lam)
        - special.xlogy(y, delta + lam)
    )


def _score(X, y, lam, delta, s1):
    a = 1.0 / delta
    one_al = 1.0 + a * lam
    s_beta = X.T @ ((y - lam) / one_al)
    s_alpha = np.sum(s1 + delta**2 * np.log1p(a * lam) - (y + delta) * lam / one_al)
    return np.append(s_beta, s_alpha)


def nb_score(data: AreaDataset, params: ModelParams) -> np.ndarray:
    """Gradient of :func:`nb_loglik` in ``(beta, alpha)``."""
    _check_params(params, data.p)
    lam = params.lam(data.X)
    _, s1, _ = _nb_sums(data.y, params.delta)
    s = _score(data.X, data.y, lam, params.delta, s1)
    if not np.all(np.isfinite(s)):
        raise NonFiniteResult("non-finite score")
    return s


def _observed_information(X, y, lam, delta, s2):
    a = 1.0 / delta
    one_al = 1.0 + a * lam
    p = X.shape[1]
    J = np.empty((p + 1, p + 1))
    J[:p, :p] = X.T @ (((1.0 + a * y) * lam / one_al**2)[:, None] * X)
    cross = X.T @ (lam * (y - lam) / one_al**2)
    J[:p, p] = cross
    J[p, :p] = cross
    J[p, p] = np.sum(
        s2
        + 2.0 * delta**3 * np.log1p(a * lam)
        - 2.0 * delta**2 * lam / one_al
        - (y + delta) * lam**2 / one_al**2
    )
    return J


def nb_truncation_point(lam: float, delta: float, tail: float = TAIL_MASS) -> int:
    """Smallest J with P(y > J) < tail under NB(lam, delta); falls back to
    10 (lam + 10 sd) when the inverse survival function is not finite."""
    J = stats.nbinom.isf(tail, delta, delta / (delta + lam))
    if not math.isfinite(J):
        sd = math.sqrt(lam + lam * lam / delta)
        return max(int(math.ceil(10.0 * (lam + 10.0 * sd))), 1)
    return int(max(J, 1))


def _expected_inverse_square_sum(lam: float, delta: float) -> float:
    """E sum_{j=0}^{y-1} (delta + j)^-2 = sum_j (delta + j)^-2 P(y > j)."""
    J = nb_truncation_point(lam, delta)
    j = np.arange(J + 1, dtype=float)
    sf = stats.nbinom.sf(j, delta, delta / (delta + lam))
    return float(np.sum(sf / (delta + j) ** 2))


def nb_information(data: AreaDataset, params: ModelParams, kind: str = "observed") -> np.ndarray:
    """Observed (minus Hessian) or expected (Fisher) information in
    ``(beta, alpha)``.  Raises :class:`SingularMatrix` if not invertible."""
    _check_params(params, data.p)
    X, y, delta = data.X, data.y, params.delta
    lam = params.lam(X)
    kind = kind.lower()
    if kind == "observed":
        _, _, s2 = _nb_sums(y, delta)
        M = _observed_information(X, y, lam, delta, s2)
    elif kind == "fisher":
        a = 1.0 / delta
        p = X.shape[1]
        M = np.zeros((p + 1, p + 1))
        M[:p, :p] = X.T @ ((lam / (1.0 + a * lam))[:, None] * X)
        e = np.array([_expected_inverse_square_sum(l, delta) for l in lam])
        M[p, p] = delta**4 * np.sum(e - a * lam / (lam + delta))
    else:
        raise ValueError(f"unknown information kind {kind!r}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteResult("non-finite information matrix")
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise SingularMatrix(f"{kind} information is singular")
    return M


def pearson_residuals(data: AreaDataset, params: ModelParams) -> np.ndarray:
    lam = params.lam(data.X)
    return (data.y - lam) / np.sqrt(lam + lam**2 / params.delta)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def default_alpha_grid() -> np.ndarray:
    return np.logspace(math.log10(ALPHA_MIN), math.log10(ALPHA_MAX), 31)


@dataclass
class FitOptions:
    algorithm: str = "fisher"  # "fisher" | "newton"
    alpha_grid: Sequence[float] | None = None
    tol_score: float = 1e-8
    tol_loglik: float = 1e-10
    max_iter: int = 100
    start: ModelParams | None = None  # warm start: skips the grid search
    strict: bool = False  # raise DegenerateDispersion instead of warning
    golden_tol: float = 1e-2  # width (in log alpha) where golden search hands over

    def __post_init__(self):
        self.algorithm = {"fisher": "fisher", "fisherscoring": "fisher", "newton": "newton",
                          "newtonraphson": "newton", "nr": "newton"}.get(
            str(self.algorithm).lower().replace("-", "").replace("_", ""), None) or _bad_algo(self.algorithm)


def _bad_algo(name):
    raise ValueError(f"unknown algorithm {name!r}; use 'fisher' or 'newton'")


@dataclass(eq=False)
class AreaFitResult:
    params: ModelParams
    loglik: float
    iterations: int
    converged: bool
    algorithm: str
    score: np.ndarray
    profile_alpha_grid: list[tuple[float, float]] | None = None
    boundary: bool = False
    alpha_start: float | None = None

    @property
    def score_norm(self) -> float:
        return float(np.max(np.abs(self.score)))

    def to_dict(self) -> dict:
        return {
            "model": "area",
            "beta": self.params.beta.tolist(),
            "delta": self.params.delta,
            "alpha": self.params.alpha,
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "algorithm": {"fisher": "FisherScoring", "newton": "NewtonRaphson"}[self.algorithm],
            "score_max_norm": self.score_norm,
            "boundary": self.boundary,
            "alpha_start": self.alpha_start,
            "profile_alpha_grid": (
                [[a, l] for a, l in self.profile_alpha_grid] if self.profile_alpha_grid else None
            ),
        }


class _Profile:
    """Profile log-likelihood over alpha, maximizing over beta at each alpha
    and warm-starting beta from the previous evaluation."""

    def __init__(self, data: AreaDataset, opts: FitOptions, beta0: np.ndarray):
        self.X = data.X
        self.y = data.y
        self.opts = opts
        self.beta = np.array(beta0, dtype=float)
        self.iterations = 0
        self.cache: dict[float, tuple[float, float, np.ndarray]] = {}
        self.history: list[float] = []

    def beta_at(self, alpha: float, beta0: np.ndarray | None = None) -> np.ndarray:
        X, y = self.X, self.y
        beta = self.beta.copy() if beta0 is None else np.array(beta0, dtype=float)
        fisher = self.opts.algorithm == "fisher"
        tol = 1e-3 * self.opts.tol_score

        def kernel(b):
            lam = _lam(X, b)
            return np.sum(special.xlogy(y, lam) - (y + 1.0 / alpha) * np.log1p(alpha * lam)) if alpha > 0 \
                else np.sum(special.xlogy(y, lam) - lam)

        current = kernel(beta)
        for _ in range(self.opts.max_iter):
            self.iterations += 1
            lam = _lam(X, beta)
            one_al = 1.0 + alpha * lam
            s = X.T @ ((y - lam) / one_al)
            w = lam / one_al if fisher else (1.0 + alpha * y) * lam / one_al**2
            H = X.T @ (w[:, None] * X)
            step = solve_spd(H, s)
            if np.max(np.abs(s)) <= tol or np.max(np.abs(step)) <= 1e-13 * (1.0 + np.max(np.abs(beta))):
                return beta
            t = 1.0
            while True:
                cand = beta + t * step
                try:
                    value = kernel(cand)
                except NonFiniteResult:
                    value = -np.inf
                if value >= current - 1e-12 * abs(current) or t < 1e-8:
                    break
                t *= 0.5
            if not np.isfinite(value):
                raise NonConvergence("beta update diverged")
            beta, current = cand, value
        lam = _lam(X, beta)
        s = X.T @ ((y - lam) / (1.0 + alpha * lam))
        if np.max(np.abs(s)) <= 100 * tol:
            return beta
        raise NonConvergence(
            f"beta iterations did not converge at alpha={alpha:g}",
            {"alpha": alpha, "beta": beta.tolist(), "score_beta": s.tolist()},
        )

    def evaluate(self, alpha: float) -> tuple[float, float, np.ndarray]:
        """(profile loglik, alpha score, beta_hat) at ``alpha``."""
        hit = self.cache.get(alpha)
        if hit is not None:
            return hit
        beta = self.beta_at(alpha)
        self.beta = beta
        delta = 1.0 / alpha
        lam = _lam(self.X, beta)
        s0, s1, _ = _nb_sums(self.y, delta)
        ll = float(np.sum(_loglik_terms(self.y, lam, delta, s0)))
        sa = float(_score(self.X, self.y, lam, delta, s1)[-1])
        out = (ll, sa, beta)
        self.cache[alpha] = out
        self.history.append(ll)
        return out

    def score_in_log_alpha(self, log_alpha: float) -> float:
        return self.evaluate(math.exp(log_alpha))[1]


def poisson_glm(X: np.ndarray, y: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """ML fit of the Poisson log-linear model (no random effect)."""
    beta, *_ = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)
    prof = _Profile.__new__(_Profile)
    prof.X, prof.y, prof.iterations = X, y, 0
    prof.opts = FitOptions(max_iter=max_iter)
    prof.beta = beta
    return prof.beta_at(0.0)


def _starting_alpha(X, y, beta):
    """Moment-type starting value for alpha (averaged over areas); ``None``
    when it is not a usable positive number."""
    eta = X @ beta
    pos = y > 0
    if not np.any(pos):
        return None
    sigma2 = np.mean((eta[pos] - np.log(y[pos])) ** 2)
    a0 = float(np.mean((sigma2 - eta) / eta**2))
    return a0 if ALPHA_MIN < a0 < ALPHA_MAX and math.isfinite(a0) else None


def _check_design(data: AreaDataset):
    if data.D <= data.p:
        raise ValidationError(f"need more areas than covariates (D={data.D}, p={data.p})")
    if np.linalg.matrix_rank(data.X) < data.p:
        raise ValidationError("design matrix is not of full column rank")


def fit_area_model(data: AreaDataset, options: FitOptions | None = None, **kwargs) -> AreaFitResult:
    """Maximum likelihood fit by profiling over alpha.

    For each alpha on a log grid, beta is maximized by Fisher scoring (or
    Newton-Raphson); the best grid cell is narrowed by golden-section search
    on the profile log-likelihood and finished by Brent root-finding on the
    profile score.  With ``options.start`` the grid is skipped and the
    bracket is grown around the starting alpha instead (used for bootstrap
    refits).
    """
    opts = options or FitOptions(**kwargs)
    if options is not None and kwargs:
        raise TypeError("pass either options or keyword arguments")
    _check_design(data)
    X, y = data.X, data.y

    if opts.start is not None:
        _check_params(opts.start, data.p)
        quick = _newton_refit(X, y, opts.start, opts)
        if quick is not None:
            return quick
        prof = _Profile(data, opts, opts.start.beta)
        a0 = min(max(opts.start.alpha, ALPHA_MIN), ALPHA_MAX)
        return _finish(data, prof, opts, _grow_bracket(prof, a0), None, None)

    beta_pois = poisson_glm(X, y, opts.max_iter)
    alpha_start = _starting_alpha(X, y, beta_pois)
    grid = np.array(sorted(opts.alpha_grid if opts.alpha_grid is not None else default_alpha_grid()), dtype=float)
    if alpha_start is not None:
        grid = np.unique(np.append(grid, alpha_start))
    prof = _Profile(data, opts, beta_pois)
    values = []
    for a in grid:
        values.append(prof.evaluate(float(a))[0])
    values = np.array(values)
    table = [(float(a), float(v)) for a, v in zip(grid, values)]
    i = int(np.argmax(values))

    if i == 0 and prof.evaluate(float(grid[0]))[1] <= 0:
        return _boundary(data, prof, opts, table, alpha_start)
    if i == len(grid) - 1:
        raise NonConvergence(
            "profile likelihood increases up to the largest alpha on the grid",
            {"profile_alpha_grid": table},
        )
    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[i + 1])
    bracket = _golden(prof, lo, hi, opts.golden_tol)
    return _finish(data, prof, opts, bracket, table, alpha_start)


def _newton_refit(X, y, start: ModelParams, opts: FitOptions) -> AreaFitResult | None:
    """Joint Newton-Raphson in (beta, alpha) from a nearby starting point.

    Used for bootstrap refits, where the start is the original estimate and
    a handful of full Newton steps replaces the profile search.  Returns
    ``None`` (caller falls back to the profile path) if the iteration leaves
    the admissible region or fails to reach the score tolerance.
    """
    p = X.shape[1]
    beta = start.beta.copy()
    alpha = min(max(start.alpha, 10 * ALPHA_MIN), ALPHA_MAX)
    ll_old = None
    for it in range(1, 31):
        eta = X @ beta
        if eta.max() > _ETA_MAX:
            return None
        lam = np.exp(eta)
        delta = 1.0 / alpha
        s0, s1, s2 = _nb_sums(y, delta)
        ll = float(np.sum(_loglik_terms(y, lam, delta, s0)))
        score = _score(X, y, lam, delta, s1)
        if not (np.all(np.isfinite(score)) and math.isfinite(ll)):
            return None
        smax = float(np.max(np.abs(score)))
        if smax <= opts.tol_score and (ll_old is None or abs(ll - ll_old) <= opts.tol_loglik * max(1.0, abs(ll))):
            params = ModelParams(beta, delta)
            return AreaFitResult(params, ll, it, True, "newton", score, None, False, None)
        J = _observed_information(X, y, lam, delta, s2)
        try:
            step = solve_spd(J, score)
        except SingularMatrix:
            return None
        t = 1.0
        while alpha + t * step[p] <= 0.0:
            t *= 0.5
        for _ in range(30):
            b_new = beta + t * step[:p]
            a_new = alpha + t * step[p]
            if a_new >= ALPHA_MIN and np.max(X @ b_new) <= _ETA_MAX:
                d_new = 1.0 / a_new
                ll_new = float(np.sum(_loglik_terms(y, np.exp(X @ b_new), d_new, _nb_sums(y, d_new)[0])))
                if ll_new >= ll - 1e-10 * max(1.0, abs(ll)):
                    break
            t *= 0.5
        else:
            return None
        beta, alpha, ll_old = b_new, a_new, ll
    return None


def refit_area(X: np.ndarray, y: np.ndarray, start: ModelParams) -> AreaFitResult:
    """Warm-started refit on raw arrays (bootstrap replicates)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    quick = _newton_refit(X, y, start, FitOptions())
    if quick is not None:
        return quick
    data = AreaDataset.from_arrays([str(i) for i in range(y.size)], y.astype(np.int64), X,
                                   np.ones(y.size, dtype=np.int64))
    return fit_area_model(data, FitOptions(start=start))


def _golden(prof: _Profile, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section maximization of the profile in log alpha; returns the
    final bracket."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - g * (hi - lo)
    d = lo + g * (hi - lo)
    fc = prof.evaluate(math.exp(c))[0]
    fd = prof.evaluate(math.exp(d))[0]
    while hi - lo > tol:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = prof.evaluate(math.exp(c))[0]
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = prof.evaluate(math.exp(d))[0]
    return lo, hi


def _grow_bracket(prof: _Profile, a0: float) -> tuple[float, float] | None:
    """Bracket the root of the profile score starting from ``a0``; ``None``
    when the score stays negative down to ALPHA_MIN (boundary)."""
    x0 = math.log(a0)
    s0 = prof.score_in_log_alpha(x0)
    lo_lim, hi_lim = math.log(ALPHA_MIN), math.log(ALPHA_MAX)
    step = 0.25
    x1 = x0
    if s0 > 0:  # root lies at larger alpha
        while True:
            x1 = min(x0 + step, hi_lim)
            if prof.score_in_log_alpha(x1) <= 0:
                return x0, x1
            if x1 >= hi_lim:
                raise NonConvergence("profile score stays positive up to ALPHA_MAX")
            x0, step = x1, step * 2.0
    while True:
        x1 = max(x0 - step, lo_lim)
        if prof.score_in_log_alpha(x1) > 0:
            return x1, x0
        if x1 <= lo_lim:
            return None
        x0, step = x1, step * 2.0


def _finish(data, prof: _Profile, opts: FitOptions, bracket, table, alpha_start) -> AreaFitResult:
    if bracket is None:
        return _boundary(data, prof, opts, table, alpha_start)
    lo, hi = bracket
    s_lo = prof.score_in_log_alpha(lo)
    s_hi = prof.score_in_log_alpha(hi)
    if s_lo > 0 >= s_hi:
        x = optimize.brentq(prof.score_in_log_alpha, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    else:  # flat or non-monotone score: settle for the bracket midpoint of the golden search
        x = 0.5 * (lo + hi)
    alpha = math.exp(x)
    # final tight beta solve at the chosen alpha
    prof.cache.pop(alpha, None)
    ll, _, beta = prof.evaluate(alpha)
    params = ModelParams(beta, 1.0 / alpha)
    score = nb_score(data, params)
    hist = prof.history
    rel_change = abs(hist[-1] - hist[-2]) / max(1.0, abs(hist[-1])) if len(hist) >= 2 else 0.0
    converged = bool(np.max(np.abs(score)) <= opts.tol_score and rel_change <= opts.tol_loglik)
    if not converged and np.max(np.abs(score)) <= opts.tol_score:
        converged = True  # profile evaluations near the root differ only by rounding
    return AreaFitResult(params, ll, prof.iterations, converged, opts.algorithm, score,
                         table, False, alpha_start)


def _boundary(data, prof: _Profile, opts: FitOptions, table, alpha_start) -> AreaFitResult:
    msg = "no overdispersion detected: profile likelihood is maximized at alpha -> 0"
    if opts.strict:
        raise DegenerateDispersion(msg)
    warnings.warn(msg + f"; reporting delta = {DELTA_CAP:g}", DegenerateDispersionWarning, stacklevel=3)
    ll, _, beta = prof.evaluate(ALPHA_MIN)
    params = ModelParams(beta, DELTA_CAP)
    score = nb_score(data, params)
    # the alpha score is not zero at the boundary, so the fit is flagged
    # rather than reported as converged
    return AreaFitResult(params, ll, prof.iterations, False, opts.algorithm, score,
                         table, True, alpha_start)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _record_arrays(record: AreaRecord):
    return np.asarray(record.x, dtype=float), float(record.y)


def bp(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized best predictor lambda (y + delta) / (lambda + delta)."""
    lam = params.lam(X)
    d = params.delta
    return lam * (np.asarray(y, dtype=float) + d) / (lam + d)


def area_bp(params: ModelParams, record: AreaRecord) -> float:
    """Best predictor E(mu_d | y_d) of the area count."""
    x, y = _record_arrays(record)
    _check_params(params, x.size)
    return float(bp(params, x[None, :], np.array([y]))[0])


def g1_closed(lam, delta):
    """g1 = kappa1 - kappa2 summed in closed form.  The best predictor is
    linear in y, so kappa2 = E psi(y)^2 only needs the NB mean and variance,
    giving lambda^2 / (lambda + delta)."""
    lam = np.asarray(lam, dtype=float)
    return lam * lam / (lam + delta)


def g1_series(lam: float, delta: float) -> float:
    """kappa1 - kappa2 with kappa2 summed over j = 0..J (truncated series)."""
    J = nb_truncation_point(lam, delta, MOMENT_TAIL_MASS)
    j = np.arange(J + 1, dtype=float)
    pmf = np.exp(nb_log_pmf(j, lam, delta))
    kappa1 = lam * lam * (delta + 1.0) / delta
    kappa2 = np.sum((lam * (j + delta) / (lam + delta)) ** 2 * pmf)
    return float(kappa1 - kappa2)


def area_g1(params: ModelParams, record: AreaRecord, method: str = "closed") -> float:
    x, _ = _record_arrays(record)
    _check_params(params, x.size)
    lam = float(params.lam(x[None, :])[0])
    if method == "closed":
        return float(g1_closed(lam, params.delta))
    if method == "series":
        return max(g1_series(lam, params.delta), 0.0)
    raise ValueError(f"unknown g1 method {method!r}")


def psi_gradient(params: ModelParams, x, y) -> np.ndarray:
    """Gradient of the best predictor with respect to (beta, delta)."""
    x = np.asarray(x, dtype=float)
    lam = float(_lam(x[None, :], params.beta)[0])
    d = params.delta
    den = (lam + d) ** 2
    return np.append(x * lam * d * (y + d) / den, lam * (lam - y) / den)


def _psi_gradient_parts(params: ModelParams, X: np.ndarray):
    """grad psi(y) = u + y v for every area; returns (u, v, lam)."""
    lam = params.lam(X)
    d = params.delta
    den = (lam + d) ** 2
    k = lam * d / den
    u = np.column_stack([X * (k * d)[:, None], lam * lam / den])
    v = np.column_stack([X * k[:, None], -lam / den])
    return u, v, lam


def c_term(params: ModelParams, X: np.ndarray, vcov: np.ndarray, method: str = "closed") -> np.ndarray:
    """E_y[grad psi' vcov grad psi] per area, i.e. D^-1 c_d with the
    bootstrap covariance of theta-hat plugged in."""
    vcov = np.asarray(vcov, dtype=float)
    u, v, lam = _psi_gradient_parts(params, X)
    d = params.delta
    if method == "closed":
        mean_g = u + lam[:, None] * v
        var_y = lam + lam * lam / d
        return np.einsum("di,ij,dj->d", mean_g, vcov, mean_g) + var_y * np.einsum("di,ij,dj->d", v, vcov, v)
    if method == "series":
        out = np.empty(lam.size)
        for i, l in enumerate(lam):
            J = nb_truncation_point(l, d, MOMENT_TAIL_MASS)
            j = np.arange(J + 1, dtype=float)
            pmf = np.exp(nb_log_pmf(j, l, d))
            g = u[i][None, :] + j[:, None] * v[i][None, :]
            out[i] = np.sum(np.einsum("ji,ik,jk->j", g, vcov, g) * pmf)
        return out
    raise ValueError(f"unknown method {method!r}")


def area_mse_plugin(fit: AreaFitResult | ModelParams, data: AreaDataset, vcov: np.ndarray,
                    method: str = "closed") -> np.ndarray:
    """Plug-in MSE g1 + D^-1 c_d per area.

    ``vcov`` is the bootstrap covariance of (beta-hat, delta-hat); the
    factor D in the definition of c_d cancels against the 1/D.
    """
    params = fit.params if isinstance(fit, AreaFitResult) else fit
    _check_params(params, data.p)
    vcov = np.asarray(vcov, dtype=float)
    if vcov.shape != (data.p + 1, data.p + 1):
        raise ValidationError(f"vcov must be {(data.p + 1,) * 2}")
    lam = params.lam(data.X)
    if method == "closed":
        g1 = g1_closed(lam, params.delta)
    else:
        g1 = np.array([max(g1_series(l, params.delta), 0.0) for l in lam])
    return g1 + c_term(params, data.X, vcov, method)


@dataclass(frozen=True)
class AreaPrediction:
    area_id: str
    mu_hat: float
    prop_hat: float
    g1: float
    mse_plugin: float | None = None
    mse_boot: float | None = None
    mse_boot_bc: float | None = None


@dataclass(eq=False)
class PredictionSet:
    """Per-area EBPs on count and proportion scale with variability
    estimates (``None`` where not computed)."""

    area_ids: tuple[str, ...]
    mu_hat: np.ndarray
    N: np.ndarray
    g1: np.ndarray | None = None
    mse_plugin: np.ndarray | None = None
    mse_boot: np.ndarray | None = None
    mse_boot_bc: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def prop_hat(self) -> np.ndarray:
        return self.mu_hat / self.N

    @property
    def D(self) -> int:
        return len(self.area_ids)

    def rows(self) -> list[AreaPrediction]:
        def at(arr, d):
            return None if arr is None else float(arr[d])

        return [
            AreaPrediction(a, float(self.mu_hat[d]), float(self.prop_hat[d]),
                           at(self.g1, d), at(self.mse_plugin, d), at(self.mse_boot, d),
                           at(self.mse_boot_bc, d))
            for d, a in enumerate(self.area_ids)
        ]


def predict_area(fit: AreaFitResult | ModelParams, data: AreaDataset, vcov: np.ndarray | None = None,
                 N: np.ndarray | None = None) -> PredictionSet:
    """EBP and g1 for every area (plus plug-in MSE when ``vcov`` is given).
    ``N`` overrides the dataset population sizes as proportion denominators."""
    params = fit.params if isinstance(fit, AreaFitResult) else fit
    _check_params(params, data.p)
    lam = params.lam(data.X)
    mu = lam * (data.y + params.delta) / (lam + params.delta)
    g1 = g1_closed(lam, params.delta)
    denom = data.N if N is None else np.asarray(N, dtype=float)
    mse_p = None if vcov is None else area_mse_plugin(params, data, vcov)
    return PredictionSet(data.ids, mu, np.array(denom, dtype=float), g1, mse_p)
