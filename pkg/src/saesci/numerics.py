"""Shared numeric kernel: special functions, Gauss-Hermite rules, seeded
random streams and the small dense solves used by the scoring iterations."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy import special

from .errors import DomainError, SingularMatrix

SQRT_PI = float(np.sqrt(np.pi))


def log_gamma(x):
    """ln Gamma(x) for x > 0 (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("log_gamma requires x > 0")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _gauss_hermite(q: int) -> tuple[np.ndarray, np.ndarray]:
    if q == 1:
        nodes, weights = np.zeros(1), np.array([SQRT_PI])
    else:
        # Golub-Welsch: the Jacobi matrix of the (physicists') Hermite
        # recurrence has zero diagonal and off-diagonal sqrt(k/2).
        off = np.sqrt(np.arange(1, q) / 2.0)
        nodes, vecs = scipy.linalg.eigh_tridiagonal(np.zeros(q), off)
        weights = SQRT_PI * vecs[0, :] ** 2
        # symmetrize to kill eigen-solver asymmetry in the last bits
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the q-point rule for the weight exp(-t^2)."""
    q = int(q)
    if not 1 <= q <= 100:
        raise DomainError(f"gauss_hermite needs 1 <= q <= 100, got {q}")
    return _gauss_hermite(q)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RngStream:
    """Counter-based (Philox) random stream addressed by an integer key.

    The same ``(seed, *key)`` always yields the same sequence, and distinct
    keys give independent streams, so replicate ``b`` of a bootstrap draws
    identical numbers no matter which worker runs it or in what order.
    """

    def __init__(self, seed: int, *key: int):
        seed = int(seed)
        if seed < 0 or any(int(k) < 0 for k in key):
            raise DomainError("stream seed and key components must be >= 0")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, *self.key, *key)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed derived by hashing ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def sample_gamma(stream: RngStream, shape, rate, size=None):
    """Gamma(shape, rate) draws (mean shape/rate).

    numpy's sampler is Marsaglia-Tsang squeeze acceptance, with the
    U^(1/a) boost for shape < 1, so it is valid for every shape > 0.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)) or np.any(~np.isfinite(shape * rate)):
        raise DomainError("gamma needs finite shape > 0 and rate > 0")
    return stream.generator.gamma(shape, 1.0 / rate, size=size)


def sample_poisson(stream: RngStream, mean, size=None):
    mean = np.asarray(mean, dtype=float)
    if np.any(~(mean >= 0)) or np.any(~np.isfinite(mean)):
        raise DomainError("poisson needs a finite mean >= 0")
    return stream.generator.poisson(mean, size=size)


def sample_normal(stream: RngStream, loc=0.0, scale=1.0, size=None):
    scale = np.asarray(scale, dtype=float)
    if np.any(~(scale >= 0)):
        raise DomainError("normal needs scale >= 0")
    return stream.generator.normal(loc, scale, size=size)


def sample_binomial(stream: RngStream, n, p, size=None):
    n = np.asarray(n)
    p = np.asarray(p, dtype=float)
    if np.any(n < 0) or np.any(~((p >= 0) & (p <= 1))):
        raise DomainError("binomial needs n >= 0 and 0 <= p <= 1")
    return stream.generator.binomial(n, p, size=size)


# ---------------------------------------------------------------------------
# Dense solves
# ---------------------------------------------------------------------------


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky."""
    try:
        c = scipy.linalg.cho_factor(A, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularMatrix(str(exc)) from exc
    return scipy.linalg.cho_solve(c, b)


def solve(A: np.ndarray, b: np.ndarray, *, assume_pd: bool = True) -> np.ndarray:
    """Cholesky when the matrix is PD, LU otherwise."""
    if assume_pd:
        try:
            return solve_spd(A, b)
        except SingularMatrix:
            pass
    try:
        with np.errstate(all="raise"):
            x = scipy.linalg.solve(A, b, check_finite=True)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        raise SingularMatrix(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("non-finite solution")
    return x


def order_statistic_index(alpha: float, n: int) -> int:
    """1-based index ceil((1-alpha) n + 1), capped at n."""
    k = int(np.ceil((1.0 - alpha) * n + 1.0 - 1e-9))
    return min(max(k, 1), n)


def upper_quantile(values: np.ndarray, alpha: float, axis: int = 0) -> np.ndarray:
    """The order-statistic (1-alpha) quantile used for critical values."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    k = order_statistic_index(alpha, n)
    return np.take(np.sort(values, axis=axis), k - 1, axis=axis)
