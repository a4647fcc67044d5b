"""
Numerical Kernels
Cholesky helpers, Kummer's function, unit-interval quadrature, seeded random
streams and the truncated extended gamma sampler.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg
from scipy.optimize import brentq
from scipy.special import gammainc, gammaincinv, gammaln, logsumexp

from .errors import NotPositiveDefiniteError, NumericalError, QuadratureError

logger = logging.getLogger(__name__)

KUMMER_SWITCH = 50.0
# Largest relative size of the last kept term of the large-z expansion.
KUMMER_ASYMPTOTIC_TOL = 1e-10
# Above this z the fallback is the integral form instead of the series.
KUMMER_SERIES_MAX = 1e4

GL_ORDER = 15
DEFAULT_TOL = 1e-10
DEFAULT_MAX_DEPTH = 30
DEFAULT_PANELS = 64
# Pivots below this fraction of their diagonal entry count as rank deficiency.
PIVOT_TOL = 1e-10

# Panels live on t in [-T_MAX, T_MAX] under u = 1 / (1 + exp(-pi sinh t)).
# At |t| = 6.5 the map is far beyond double precision underflow.
T_MAX = 6.5

TEG_MAX_PROPOSALS = 1000

_GL_NODES, _GL_WEIGHTS = leggauss(GL_ORDER)

ArrayLike = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# Dense linear algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with positive diagonal, L @ L.T = source."""
    L: np.ndarray

    @property
    def dim(self) -> int:
        return self.L.shape[0]


def cholesky(m: np.ndarray) -> CholeskyFactor:
    """
    Factor a symmetric positive definite matrix.

    Args:
        m: Dense symmetric matrix

    Returns:
        CholeskyFactor holding the lower factor

    Raises:
        ValueError: If m is not square or not symmetric
        NotPositiveDefiniteError: If the factorization breaks down
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix has non-finite entries")

    scale = max(float(np.abs(m).max()), np.finfo(float).tiny)
    if float(np.abs(m - m.T).max()) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")

    try:
        L = linalg.cholesky(m, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(m.shape[0]) from exc
    if not np.all(np.diag(L) ** 2 > PIVOT_TOL * np.diag(m)):
        raise NotPositiveDefiniteError(m.shape[0])
    return CholeskyFactor(L)


def logdet_from_cholesky(f: CholeskyFactor) -> float:
    """Log-determinant of the factored matrix, 2 * sum(log diag L)."""
    if f.dim == 0:
        return 0.0
    return float(2.0 * np.sum(np.log(np.diag(f.L))))


def solve_spd(f: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs given the Cholesky factor of M."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != f.dim:
        raise ValueError(f"dimension mismatch: factor is {f.dim}, rhs has {rhs.shape[0]} rows")
    if f.dim == 0:
        return rhs.copy()
    return linalg.cho_solve((f.L, True), rhs, check_finite=False)


# ---------------------------------------------------------------------------
# Kummer's confluent hypergeometric function
# ---------------------------------------------------------------------------


def kummer_log_M(a0: float, b0: float, z: float) -> float:
    """
    log M(a0, b0, z) for a0, b0 > 0 and z >= 0.

    The power series is summed in log space below KUMMER_SWITCH; above it the
    large-z expansion M ~ Gamma(b0)/Gamma(a0) z^(a0-b0) e^z sum_s
    (b0-a0)_s (1-a0)_s / (s! z^s) is truncated at its smallest term. When
    that term is not small enough (b0 - a0 large against z) the series is
    used up to KUMMER_SERIES_MAX and the integral form beyond it.
    """
    for name, value in (("a0", a0), ("b0", b0), ("z", z)):
        if not math.isfinite(value):
            raise NumericalError(f"{name} must be finite, got {value}")
    if a0 <= 0 or b0 <= 0:
        raise ValueError("a0 and b0 must be > 0")
    if z < 0:
        raise ValueError("z must be >= 0")

    if z == 0:
        return 0.0
    if z < KUMMER_SWITCH:
        return kummer_log_series(a0, b0, z)
    value = kummer_log_asymptotic(a0, b0, z)
    if value is not None:
        return value
    if z > KUMMER_SERIES_MAX and b0 > a0:
        return log_kummer_integral(a0, b0, z)
    return kummer_log_series(a0, b0, z)


def kummer_log_series(a0: float, b0: float, z: float) -> float:
    """Series branch of log M; every term is positive."""
    if z == 0:
        return 0.0
    n_terms = int(z + 40.0 * math.sqrt(z + 1.0) + 60)
    log_z = math.log(z)
    while True:
        k = np.arange(n_terms - 1, dtype=float)
        log_ratio = np.log(a0 + k) - np.log(b0 + k) + log_z - np.log1p(k)
        log_terms = np.concatenate(([0.0], np.cumsum(log_ratio)))
        if log_terms[-1] < log_terms.max() - 40.0 and log_ratio[-1] < 0:
            return float(logsumexp(log_terms))
        n_terms *= 2
        if n_terms > 200_000:
            raise NumericalError(f"Kummer series did not converge for z={z}")


def kummer_log_asymptotic(a0: float, b0: float, z: float) -> Optional[float]:
    """
    Large-z branch of log M.

    Returns None when the smallest term of the expansion is above
    KUMMER_ASYMPTOTIC_TOL relative to the sum.
    """
    total = 1.0
    term = 1.0
    for s in range(1, 400):
        nxt = term * (b0 - a0 + s - 1) * (1.0 - a0 + s - 1) / (s * z)
        if abs(nxt) >= abs(term):
            break
        term = nxt
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
    if total <= 0 or abs(term) > KUMMER_ASYMPTOTIC_TOL * total:
        return None
    return float(gammaln(b0) - gammaln(a0) + (a0 - b0) * math.log(z) + z + math.log(total))


def log_kummer_integral(a0: float, b0: float, z: float, tol: float = 1e-12) -> float:
    """log M(a0, b0, z) from its integral representation (requires b0 > a0)."""
    if b0 <= a0:
        raise ValueError("integral representation needs b0 > a0")

    def log_f(u, w):
        return z * u + (a0 - 1.0) * np.log(u) + (b0 - a0 - 1.0) * np.log(w)

    log_int = log_integrate_unit_interval(log_f, tol=tol)
    return float(gammaln(b0) - gammaln(a0) - gammaln(b0 - a0) + log_int)


# ---------------------------------------------------------------------------
# Quadrature on (0, 1)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Fixed nodes on (0, 1), their exact complements 1 - u, and positive weights."""
    nodes: np.ndarray
    complements: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return int(self.nodes.size)


class _ShiftTooSmall(Exception):
    def __init__(self, new_shift: float):
        self.new_shift = new_shift


def _unit_map(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map t to (u, 1 - u, log du/dt), all computed without cancellation."""
    x = math.pi * np.sinh(t)
    log_u = -np.logaddexp(0.0, -x)
    log_w = -np.logaddexp(0.0, x)
    log_jac = log_u + log_w + np.log(math.pi * np.cosh(t))
    return np.exp(log_u), np.exp(log_w), log_jac


def _panel_sums(values: Callable[[np.ndarray], np.ndarray], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    f = values(t.ravel()).reshape(t.shape)
    return half * (f @ _GL_WEIGHTS)


def _adaptive_panels(
    values: Callable[[np.ndarray], np.ndarray],
    tol: float,
    max_depth: int,
    n_panels: int,
) -> float:
    """Breadth-first composite Gauss-Legendre refinement on [-T_MAX, T_MAX]."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if n_panels < 1:
        raise ValueError("n_panels must be >= 1")

    edges = np.linspace(-T_MAX, T_MAX, n_panels + 1)
    a, b = edges[:-1], edges[1:]
    span = 2.0 * T_MAX
    coarse = _panel_sums(values, a, b)
    accepted = 0.0
    estimate = float(coarse.sum())

    for _ in range(max_depth + 1):
        mid = 0.5 * (a + b)
        left = _panel_sums(values, a, mid)
        right = _panel_sums(values, mid, b)
        fine = left + right
        if not np.all(np.isfinite(fine)):
            raise NumericalError("integrand produced non-finite values")

        estimate = accepted + float(fine.sum())
        allowance = tol * max(abs(estimate), np.finfo(float).tiny) * (b - a) / span
        ok = np.abs(fine - coarse) <= allowance
        accepted += float(fine[ok].sum())
        if ok.all():
            return accepted

        bad = ~ok
        coarse = np.concatenate((left[bad], right[bad]))
        a, b = np.concatenate((a[bad], mid[bad])), np.concatenate((mid[bad], b[bad]))

    raise QuadratureError(partial_estimate=estimate, depth=max_depth)


def integrate_unit_interval(
    f: Callable[[np.ndarray], ArrayLike],
    tol: float = DEFAULT_TOL,
    max_depth: int = DEFAULT_MAX_DEPTH,
    n_panels: int = DEFAULT_PANELS,
) -> float:
    """
    Integrate f over (0, 1).

    Integrable endpoint singularities are allowed; the double-exponential
    substitution turns them into rapidly decaying tails.

    Args:
        f: Vectorised integrand, called with an array of nodes in (0, 1)
        tol: Relative tolerance between successive panel estimates
        max_depth: Maximum number of panel bisections
        n_panels: Initial panel count

    Returns:
        The integral

    Raises:
        QuadratureError: On non-convergence, carrying the partial estimate
    """
    def values(t):
        u, w, log_jac = _unit_map(t)
        out = np.zeros_like(t)
        live = (u > 0) & (w > 0)
        if live.any():
            fu = np.broadcast_to(np.asarray(f(u[live]), dtype=float), (int(live.sum()),))
            out[live] = fu * np.exp(log_jac[live])
        return out

    return float(_adaptive_panels(values, tol, max_depth, n_panels))


def log_integrate_unit_interval(
    log_f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    tol: float = DEFAULT_TOL,
    max_depth: int = DEFAULT_MAX_DEPTH,
    n_panels: int = DEFAULT_PANELS,
) -> float:
    """
    log of the integral of exp(log_f(u, 1 - u)) over (0, 1).

    The integrand is evaluated in log space and shifted by its largest value,
    so integrands far outside the double range are fine.
    """
    def log_values(t):
        u, w, log_jac = _unit_map(t)
        out = np.full(t.shape, -np.inf)
        live = (u > 0) & (w > 0)
        if live.any():
            with np.errstate(divide="ignore"):
                lf = np.asarray(log_f(u[live], w[live]), dtype=float)
            if np.any(np.isnan(lf)):
                raise NumericalError("log integrand returned NaN")
            out[live] = lf + log_jac[live]
        return out

    pilot_t = np.linspace(-T_MAX, T_MAX, n_panels * GL_ORDER)
    pilot = log_values(pilot_t)
    finite = pilot[np.isfinite(pilot)]
    shift = float(finite.max()) if finite.size else -np.inf
    if np.any(pilot == np.inf):
        raise NumericalError("log integrand is +inf")

    for _ in range(5):
        current = shift if np.isfinite(shift) else 0.0

        def values(t, current=current):
            lv = log_values(t)
            top = lv.max()
            if top == np.inf:
                raise NumericalError("log integrand is +inf")
            if top - current > 600.0:
                raise _ShiftTooSmall(float(top))
            return np.exp(lv - current)

        try:
            total = _adaptive_panels(values, tol, max_depth, n_panels)
        except _ShiftTooSmall as exc:
            shift = exc.new_shift
            continue
        except QuadratureError as exc:
            raise QuadratureError(
                partial_estimate=current + math.log(exc.partial_estimate)
                if exc.partial_estimate > 0 else -math.inf,
                depth=exc.depth,
            ) from exc
        if total <= 0:
            return -math.inf
        return current + math.log(total)

    raise NumericalError("could not stabilise the log-integrand shift")


def unit_interval_rule(n_panels: int = 128) -> QuadratureRule:
    """Fixed composite rule for vectorised integration over (0, 1)."""
    if n_panels < 1:
        raise ValueError("n_panels must be >= 1")
    edges = np.linspace(-T_MAX, T_MAX, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    t = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wt = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    u, w, log_jac = _unit_map(t)
    keep = (u > 0) & (w > 0)
    return QuadratureRule(u[keep], w[keep], wt[keep] * np.exp(log_jac[keep]))


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RandomStream:
    """Seeded variate generator. Each chain owns exactly one."""

    def __init__(self, seed: Optional[int] = None, chain_index: int = 0):
        """
        Args:
            seed: Master seed (64-bit)
            chain_index: Sub-stream index; (seed, chain_index) is hashed by SeedSequence
        """
        self.seed = seed
        self.chain_index = chain_index
        entropy = None if seed is None else [int(seed), int(chain_index)]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def normal(self, mu: float = 0.0, sigma: float = 1.0, size=None):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        return self.generator.normal(mu, sigma, size)

    def gamma(self, shape: float, rate: float = 1.0, size=None):
        if shape <= 0 or rate <= 0:
            raise ValueError("gamma shape and rate must be > 0")
        return self.generator.gamma(shape, 1.0 / rate, size)

    def inverse_gamma(self, shape: float, scale: float, size=None):
        if shape <= 0 or scale <= 0:
            raise ValueError("inverse gamma shape and scale must be > 0")
        return 1.0 / self.generator.gamma(shape, 1.0 / scale, size)

    def beta(self, a: float, b: float, size=None):
        if a <= 0 or b <= 0:
            raise ValueError("beta parameters must be > 0")
        return self.generator.beta(a, b, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        if high < low:
            raise ValueError("uniform needs low <= high")
        return self.generator.uniform(low, high, size)

    def integers(self, high: int) -> int:
        if high < 1:
            raise ValueError("integers needs high >= 1")
        return int(self.generator.integers(high))

    def categorical(self, weights) -> int:
        """Index drawn with probability proportional to weights."""
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        cumulative = np.cumsum(w)
        total = cumulative[-1]
        if total <= 0:
            raise ValueError("weights must have a positive sum")
        idx = int(np.searchsorted(cumulative, self.generator.uniform() * total, side="right"))
        return min(idx, w.size - 1)

    def categorical_log(self, log_weights) -> int:
        """Categorical draw from unnormalised log weights."""
        lw = np.asarray(log_weights, dtype=float)
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log weights must not be NaN or +inf")
        top = lw.max()
        if top == -np.inf:
            raise ValueError("all log weights are -inf")
        return self.categorical(np.exp(lw - top))


# ---------------------------------------------------------------------------
# Truncated extended gamma
# ---------------------------------------------------------------------------


def _truncated_gamma(shape: float, rate: float, upper: float, rng: RandomStream) -> float:
    """Gamma(shape, rate) restricted to (0, upper), by inverse CDF."""
    mass = gammainc(shape, rate * upper)
    if mass > 1e-280:
        q = rng.uniform() * mass
        if q > 0:
            x = gammaincinv(shape, q) / rate
            if 0 < x <= upper:
                return float(x)
    # vanishing mass: power-law proposal on (0, upper) corrected by exp(-rate x)
    for _ in range(10_000):
        x = upper * rng.uniform() ** (1.0 / shape)
        if rng.uniform() <= math.exp(-rate * x):
            return float(x)
    raise NumericalError(f"truncated gamma sampler failed (shape={shape}, rate={rate}, upper={upper})")


def _teg_log_density_sqrt(x: np.ndarray, shape: float, tilt: float) -> np.ndarray:
    # density of x = sqrt(t): x^(2s-1) exp(-x^2 - 2 tilt x)
    return (2.0 * shape - 1.0) * np.log(x) - x * x - 2.0 * tilt * x


def _teg_log_mass(upper_root: float, shape: float, tilt: float) -> float:
    def log_f(u, w):
        return _teg_log_density_sqrt(upper_root * u, shape, tilt)
    return log_integrate_unit_interval(log_f, tol=1e-12) + math.log(upper_root)


def truncated_extended_gamma_cdf(t: float, shape: float, tilt: float, trunc: float) -> float:
    """CDF of t^(shape-1) exp(-t - 2 tilt sqrt(t)) on (0, trunc), by quadrature."""
    if t <= 0:
        return 0.0
    if t >= trunc:
        return 1.0
    log_total = _teg_log_mass(math.sqrt(trunc), shape, tilt)
    return float(math.exp(_teg_log_mass(math.sqrt(t), shape, tilt) - log_total))


def teg_inverse_cdf(shape: float, tilt: float, trunc: float, q: float) -> float:
    """Quantile of the truncated extended gamma at q in (0, 1)."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    root_c = math.sqrt(trunc)
    log_total = _teg_log_mass(root_c, shape, tilt)
    log_q = math.log(q)

    def gap(log_y):
        return _teg_log_mass(math.exp(log_y), shape, tilt) - log_total - log_q

    hi = math.log(root_c)
    lo = hi - 30.0
    while gap(lo) > 0:
        lo -= 30.0
        if lo < -700.0:
            return float(math.exp(2.0 * lo))
    log_y = brentq(gap, lo, hi, xtol=1e-13, rtol=1e-12)
    return float(math.exp(2.0 * log_y))


def sample_truncated_extended_gamma(
    shape: float,
    tilt: float,
    trunc: float,
    rng: RandomStream,
    max_proposals: int = TEG_MAX_PROPOSALS,
) -> float:
    """
    Draw t with density proportional to t^(shape-1) exp(-t - 2 tilt sqrt(t)) on (0, trunc).

    With tilt = 0 this is a truncated Gamma(shape, 1) drawn by inverse CDF.
    Otherwise x = sqrt(t) is proposed from a Gamma(2 shape, rate) truncated at
    sqrt(trunc), rate = tilt + sqrt(tilt^2 + 4 shape), which centres the proposal
    on the mode for either sign of tilt; the acceptance ratio is
    exp(-x^2 - (2 tilt - rate) x) over its maximum on the support. If no
    proposal is accepted within max_proposals the quantile is found by
    quadrature instead.

    Args:
        shape: Shape parameter (> 0)
        tilt: Tilt parameter (any finite sign)
        trunc: Upper truncation point (> 0)
        rng: Random stream

    Returns:
        Draw in (0, trunc)
    """
    for name, value in (("shape", shape), ("tilt", tilt), ("trunc", trunc)):
        if not math.isfinite(value):
            raise NumericalError(f"{name} must be finite, got {value}")
    if shape <= 0:
        raise ValueError("shape must be > 0")
    if trunc <= 0:
        raise ValueError("trunc must be > 0")

    if tilt == 0.0:
        return _truncated_gamma(shape, 1.0, trunc, rng)

    root_c = math.sqrt(trunc)
    rate = tilt + math.sqrt(tilt * tilt + 4.0 * shape)
    slope = rate - 2.0 * tilt
    x_star = min(0.5 * slope, root_c)
    log_bound = -x_star * x_star + slope * x_star

    for _ in range(max_proposals):
        x = _truncated_gamma(2.0 * shape, rate, root_c, rng)
        if math.log(rng.uniform()) <= -x * x + slope * x - log_bound:
            return x * x

    logger.warning(
        "truncated extended gamma: no acceptance in %d proposals "
        "(shape=%.4g, tilt=%.4g, trunc=%.4g); using quadrature inverse CDF",
        max_proposals, shape, tilt, trunc,
    )
    q = rng.uniform()
    while q <= 0.0:
        q = rng.uniform()
    return teg_inverse_cdf(shape, tilt, trunc, q)


# ---------------------------------------------------------------------------
# Diagnostics and combinatorics
# ---------------------------------------------------------------------------


def effective_sample_size(x) -> float:
    """Effective sample size from Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    if not np.any(xc):
        return float(n)
    spectrum = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / n
    rho = acov / acov[0]

    pair_sum = 0.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair_sum += pair
        k += 1
    tau = max(2.0 * pair_sum - 1.0, 1.0 / n)
    return float(min(n / tau, n * math.log10(max(n, 10))))


def batch_means_se(x, n_batches: int = 50) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    if n_batches < 2:
        raise ValueError("n_batches must be >= 2")
    size = x.size // n_batches
    if size < 1:
        raise ValueError(f"need at least {n_batches} draws for {n_batches} batches")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def set_partitions(n_items: int) -> Iterator[Tuple[int, ...]]:
    """All set partitions of n_items as canonical 1-based label tuples."""
    if n_items < 0:
        raise ValueError("n_items must be >= 0")
    if n_items == 0:
        yield ()
        return

    def extend(prefix: List[int], top: int):
        if len(prefix) == n_items:
            yield tuple(prefix)
            return
        for label in range(1, top + 2):
            yield from extend(prefix + [label], max(top, label))

    yield from extend([1], 1)
