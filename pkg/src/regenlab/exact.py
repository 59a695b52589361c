"""
Exact oracles: moments of exponential functionals, the law of ``K_n``,
poissonized recursions and asymptotic constants.

The law of the number of blocks ``K_n`` follows from the first-block
decomposition of a regenerative composition: the leftmost block of ``n``
points has size ``m`` with probability

    q(n, m) = (Phi(n:m) + d n [m = 1]) / (d n + Phi(n)),

after which the remaining ``n - m`` points are composed afresh.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy import special, stats

from .errors import DomainError, PrecisionError, PreconditionError, UnsupportedFamilyError
from .levy import (
    TWO_PARAMETER,
    LevyModel,
    laplace_exponent_mp,
    laplace_exponent_total,
    phi_partial_mp,
    phi_partial_row,
    tauberian_difference,
)
from .rng import make_rng

__all__ = [
    "MomentTable",
    "KnDistribution",
    "moments_L",
    "moment_table",
    "moments_diversity",
    "moment_recursion_check",
    "tail_moments_A",
    "decrement_row",
    "dist_Kn",
    "mean_Kn_dp",
    "mean_Kn_exact",
    "p1_series",
    "poissonized_p",
    "poissonized_factorial_moment",
    "poissonized_mean_exact",
    "recursion_residual_p",
    "recursion_residual_f",
    "factorial_moment_constant",
    "tauberian_gap",
    "sample_area_series",
    "write_moments_csv",
    "write_distribution_csv",
]

POISSON_TAIL = 1e-12
DEFAULT_DPS = 40


# -- exponential functionals ---------------------------------------------------


@dataclass(frozen=True)
class MomentTable:
    """Moments ``m_0, ..., m_K`` of ``L = int exp(-alpha S_u) du``.

    ``certified_rel_error`` is the largest relative change of any entry when
    the table is recomputed with 20 more digits.
    """

    model: LevyModel
    alpha: float
    values: tuple
    dps: int
    certified_rel_error: float

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k):
        return self.values[k]


def _moments_mp(model, alpha, k_max, dps):
    with mpmath.workdps(dps):
        a = mpmath.mpf(alpha)
        out = [mpmath.mpf(1)]
        for k in range(1, k_max + 1):
            phi = laplace_exponent_mp(model, a * k, dps=dps)
            if not phi > 0:
                raise DomainError(f"Phi({alpha * k:g}) must be positive")
            out.append(out[-1] * k / phi)
        return out


def moments_L(model: LevyModel, alpha: float, k: int, dps: int = DEFAULT_DPS) -> float:
    """``E L^k = k! / prod_{j=1}^k Phi(alpha j)`` for ``L = int_0^inf exp(-alpha S_u) du``.

    ``Phi`` includes the drift, ``Phi(s) = d s + int (1 - (1 - x)^s) nu~(dx)``.
    The product is evaluated with ``dps`` significant digits.

    Examples
    --------
    >>> round(moments_L(LevyModel.two_parameter(0.5), 0.5, 1), 12)
    0.636619772368
    """
    if k < 0:
        raise DomainError(f"k must be nonnegative, got {k}")
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    return float(_moments_mp(model, alpha, int(k), dps)[-1])


def moment_table(model: LevyModel, alpha: float, k_max: int, dps: int = DEFAULT_DPS) -> MomentTable:
    """All moments up to ``k_max``, with a precision certificate."""
    lo = _moments_mp(model, alpha, k_max, dps)
    hi = _moments_mp(model, alpha, k_max, dps + 20)
    err = max(float(abs(a / b - 1)) for a, b in zip(lo, hi))
    return MomentTable(model, float(alpha), tuple(float(v) for v in hi), dps + 20, err)


def moments_diversity(model: LevyModel, k: int) -> float:
    """``k``-th moment of ``Gamma(1 - alpha) L`` for the two-parameter family.

    Closed form ``Gamma(theta + 1) prod_{i<k} (i alpha + theta) / (alpha^k Gamma(k alpha + theta))``;
    for ``theta = 0`` these are the Mittag-Leffler moments ``k! / Gamma(1 + k alpha)``.
    """
    if model.family != TWO_PARAMETER:
        raise UnsupportedFamilyError("the diversity moments are closed-form for the two-parameter family only")
    if k < 0:
        raise DomainError(f"k must be nonnegative, got {k}")
    if k == 0:
        return 1.0
    a, th = mpmath.mpf(model.alpha), mpmath.mpf(model.theta)
    with mpmath.workdps(DEFAULT_DPS):
        num = mpmath.gamma(th + 1) * mpmath.fprod(i * a + th for i in range(1, k))
        return float(num / (a ** k * mpmath.gamma(k * a + th)))


def moment_recursion_check(model: LevyModel, k: int, dps: int = DEFAULT_DPS) -> float:
    """Relative residual of ``m_k Phi(k) = k m_{k-1}`` for the moments of ``A = int exp(-S_u) du``."""
    if k < 1:
        raise DomainError(f"k must be at least 1, got {k}")
    with mpmath.workdps(dps):
        mk = _moments_mp(model, 1, k, dps)
        lhs = mk[k] * laplace_exponent_mp(model, k, dps=dps)
        rhs = k * mk[k - 1]
        return float(abs(lhs - rhs) / rhs)


def tail_moments_A(model: LevyModel, t: float, k: int):
    """``(E A(t, inf)^k, E A(t))`` for ``A(t, inf) = int_t^inf exp(-S_u) du`` and ``A(t) = int_0^t``."""
    if not t >= 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    if k < 1:
        raise DomainError(f"k must be at least 1, got {k}")
    phi_k = laplace_exponent_total(model, k)
    phi_1 = laplace_exponent_total(model, 1)
    tail = moments_L(model, 1, k) * math.exp(-t * phi_k)
    return tail, -math.expm1(-t * phi_1) / phi_1


def sample_area_series(model: LevyModel, size: int, seed, tol: float = 1e-13) -> np.ndarray:
    """Draw ``A = int_0^inf exp(-S_u) du`` through its stick-breaking series.

    For a finite measure of mass ``c`` the range of ``1 - exp(-S)`` is the
    stick-breaking sequence with i.i.d. breaks ``X_i ~ nu~ / c``, so
    ``A = sum_k (E_k / c) prod_{i<k} (1 - X_i)`` with i.i.d. standard
    exponentials ``E_k``.  Terms are added until the remaining stick is
    below ``tol``.
    """
    if not model.is_atomic:
        raise UnsupportedFamilyError("the series representation needs a finite Lévy measure")
    if model.drift > 0:
        raise PreconditionError("the series representation is for drift-free subordinators")
    rng = make_rng(seed)
    c = model.total_mass
    locs = np.array([x for x, _ in model.atoms])
    probs = np.array([w for _, w in model.atoms]) / c
    total = np.zeros(size)
    stick = np.ones(size)
    active = np.arange(size)
    while len(active):
        total[active] += stick[active] * rng.exponential(1.0 / c, len(active))
        x = locs[rng.choice(len(locs), size=len(active), p=probs)]
        stick[active] *= 1.0 - x
        active = active[stick[active] >= tol]
    return total


# -- the law of K_n -------------------------------------------------------------


@dataclass(frozen=True)
class KnDistribution:
    """``P(K_n = j)`` for ``j = 1..n`` (index ``j - 1`` of ``probs``)."""

    n: int
    probs: np.ndarray
    provenance: str = "DP"

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.n + 1), self.probs))

    def pmf(self, j: int) -> float:
        return float(self.probs[j - 1]) if 1 <= j <= self.n else 0.0


@functools.lru_cache(maxsize=4096)
def _decrement_row(model: LevyModel, n: int) -> np.ndarray:
    row = phi_partial_row(model, n).astype(float)
    row[0] += model.drift * n
    total = math.fsum(row)
    if not total > 0:
        raise DomainError(f"Phi({n}) must be positive")
    out = row / total
    out.flags.writeable = False
    return out


def decrement_row(model: LevyModel, n: int) -> np.ndarray:
    """``[q(n, 1), ..., q(n, n)]``, the law of the first block size.

    Rows are normalised by their sum, which equals ``d n + Phi(n)``.
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    return _decrement_row(model, int(n)).copy()


@functools.lru_cache(maxsize=32)
def _kn_table(model: LevyModel, n_max: int) -> np.ndarray:
    """``P[n, j] = P(K_n = j)`` for ``0 <= j, n <= n_max``."""
    P = np.zeros((n_max + 1, n_max + 1))
    P[0, 0] = 1.0
    for n in range(1, n_max + 1):
        q = _decrement_row(model, n)
        # rows n-1, ..., 0 correspond to first blocks m = 1, ..., n
        P[n, 1:n + 1] = q @ P[n - 1::-1, :n]
    P.flags.writeable = False
    return P


def dist_Kn(model: LevyModel, n: int) -> KnDistribution:
    """Exact law of the number of blocks ``K_n`` by dynamic programming.

    ``P(K_n = j) = sum_m q(n, m) P(K_{n-m} = j - 1)`` with ``P(K_0 = 0) = 1``.
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    P = _kn_table(model, int(n))
    return KnDistribution(int(n), P[n, 1:n + 1].copy())


def mean_Kn_dp(model: LevyModel, n_max: int) -> np.ndarray:
    """``[E K_0, ..., E K_{n_max}]`` from ``E K_n = 1 + sum_m q(n, m) E K_{n-m}``."""
    mean = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        mean[n] = 1.0 + np.dot(_decrement_row(model, n), mean[n - 1::-1])
    return mean


def _one_block_ratio_mp(model, j, dps):
    """``q(j, j)`` in extended precision."""
    with mpmath.workdps(dps):
        num = phi_partial_mp(model, j, j, dps=dps)
        if j == 1:
            num += mpmath.mpf(model.drift)
        return num / laplace_exponent_mp(model, j, dps=dps)


def _alternating_mean(model, n, dps):
    with mpmath.workdps(dps):
        return mpmath.fsum((-1) ** (j + 1) * mpmath.binomial(n, j) * _one_block_ratio_mp(model, j, dps)
                           for j in range(1, n + 1))


def mean_Kn_exact(model: LevyModel, n: int, rtol: float = 1e-9, max_bits: int = 8192) -> float:
    """``E K_n = sum_{j=1}^n (-1)^(j+1) C(n, j) q(j, j)`` in extended precision.

    The binomial cancellation costs about ``n`` bits, so the sum is evaluated
    with ``1.5 n + 64`` working bits and certified by repeating it with 64
    more bits.

    Raises
    ------
    PrecisionError
        If the two evaluations differ by more than ``rtol`` or the required
        precision exceeds ``max_bits``.
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    bits = int(1.5 * n) + 64
    if bits + 64 > max_bits:
        raise PrecisionError(f"n = {n} needs {bits + 64} bits, above the budget of {max_bits}")
    dps = int(bits * math.log10(2)) + 1
    first = _alternating_mean(model, n, dps)
    second = _alternating_mean(model, n, dps + 20)
    achieved = float(abs(first / second - 1))
    if not achieved <= rtol:
        raise PrecisionError(f"alternating sum for n = {n} certified only to {achieved:.3g}", achieved=achieved)
    return float(second)


# -- poissonization --------------------------------------------------------------


def _poisson_range(rho: float) -> int:
    """Smallest ``n_max`` with ``P(Poisson(rho) > n_max) < POISSON_TAIL``."""
    return int(stats.poisson.isf(POISSON_TAIL, rho)) + 1 if rho > 0 else 0


def _poisson_weights(rho, n_max):
    return stats.poisson.pmf(np.arange(n_max + 1), rho)


def p1_series(model: LevyModel, rho: float) -> float:
    """Probability that the poissonized composition has exactly one block.

    ``p_1(rho) = exp(-rho) sum_{n >= 1} rho^n / n! q(n, n)``, truncated where
    the Poisson tail drops below ``1e-12``.
    """
    if not rho >= 0:
        raise DomainError(f"rho must be nonnegative, got {rho}")
    if rho == 0:
        return 0.0
    n_max = _poisson_range(rho)
    w = _poisson_weights(rho, n_max)
    return math.fsum(w[n] * _decrement_row(model, n)[-1] for n in range(1, n_max + 1))


def poissonized_p(model: LevyModel, j: int, rho: float) -> float:
    """``p_j(rho) = P(K_hat_rho = j)`` from the exact fixed-``n`` laws."""
    if j < 0:
        raise DomainError(f"j must be nonnegative, got {j}")
    if rho == 0:
        return 1.0 if j == 0 else 0.0
    n_max = max(_poisson_range(rho), j)
    P = _kn_table(model, n_max)
    return math.fsum(_poisson_weights(rho, n_max) * P[:, j])


def _falling(j, m):
    return special.poch(j - m + 1, m) if m else np.ones_like(j, dtype=float)


def poissonized_factorial_moment(model: LevyModel, m: int, rho: float) -> float:
    """``f^(m)(rho) = E K_hat (K_hat - 1) ... (K_hat - m + 1)``."""
    if m < 0:
        raise DomainError(f"m must be nonnegative, got {m}")
    if m == 0:
        return 1.0
    if rho == 0:
        return 0.0
    n_max = _poisson_range(rho)
    P = _kn_table(model, n_max)
    j = np.arange(n_max + 1, dtype=float)
    fn = P @ np.where(j >= m, _falling(j, m), 0.0)
    return math.fsum(_poisson_weights(rho, n_max) * fn)


def poissonized_mean_exact(model: LevyModel, rho: float) -> float:
    """``E K_hat_rho = sum_n P(n(rho) = n) E K_n`` with the exact fixed-``n`` means."""
    if rho == 0:
        return 0.0
    n_max = _poisson_range(rho)
    return math.fsum(_poisson_weights(rho, n_max) * mean_Kn_dp(model, n_max))


def _require_atomic(model):
    if not model.is_atomic:
        raise UnsupportedFamilyError("the recursion residuals are finite sums for atomic measures only")


def recursion_residual_p(model: LevyModel, j: int, rho: float, p=None) -> float:
    """Left minus right side of the integral recursion for ``p_j``.

    ``int (p_j(rho) - e^{-rho x} p_j(rho (1-x))) nu~(dx)
    = int (1 - e^{-rho x}) p_{j-1}(rho (1-x)) nu~(dx)``.

    ``p(j, rho)`` defaults to :func:`poissonized_p`.
    """
    _require_atomic(model)
    if j < 1:
        raise DomainError(f"j must be at least 1, got {j}")
    p = p or (lambda jj, r: poissonized_p(model, jj, r))
    pj = p(j, rho)
    lhs = math.fsum(w * (pj - math.exp(-rho * x) * p(j, rho * (1 - x))) for x, w in model.atoms)
    rhs = math.fsum(w * -math.expm1(-rho * x) * p(j - 1, rho * (1 - x)) for x, w in model.atoms)
    return lhs - rhs


def recursion_residual_f(model: LevyModel, m: int, rho: float, f=None) -> float:
    """Left minus right side of the integral recursion for the factorial moments.

    ``int (f^(m)(rho) - f^(m)(rho (1-x))) nu~(dx)
    = m int (1 - e^{-rho x}) f^(m-1)(rho (1-x)) nu~(dx)``.

    ``f(m, rho)`` defaults to :func:`poissonized_factorial_moment`.
    """
    _require_atomic(model)
    if m < 1:
        raise DomainError(f"m must be at least 1, got {m}")
    f = f or (lambda mm, r: poissonized_factorial_moment(model, mm, r))
    fm = f(m, rho)
    lhs = math.fsum(w * (fm - f(m, rho * (1 - x))) for x, w in model.atoms)
    rhs = m * math.fsum(w * -math.expm1(-rho * x) * f(m - 1, rho * (1 - x)) for x, w in model.atoms)
    return lhs - rhs


# -- constants -------------------------------------------------------------------


def factorial_moment_constant(model: LevyModel, m: int) -> float:
    """``c^(m) = prod_{j=1}^m j Gamma(1 - alpha) / Phi(alpha j)``.

    For ``alpha = 1`` the gamma factors are dropped.
    """
    if model.is_atomic:
        raise UnsupportedFamilyError("the constant needs regular-variation parameters")
    if m < 0:
        raise DomainError(f"m must be nonnegative, got {m}")
    a = model.alpha
    g = 1.0 if a == 1.0 else math.gamma(1.0 - a)
    return g ** m * moments_L(model, a, m)


def tauberian_gap(model: LevyModel, s: float) -> float:
    """``Phi(s) - Phi_hat(s)``, which lies in ``[0, Phi(1) / e]`` and vanishes as ``s`` grows."""
    return tauberian_difference(model, s)


# -- CSV dumps ---------------------------------------------------------------------


def _writer(target):
    own = isinstance(target, str)
    fh = open(target, "w", newline="") if own else target
    return fh, own, csv.writer(fh, lineterminator="\n")


def write_moments_csv(values, target) -> None:
    """Rows ``k,value`` for ``k = 0, 1, ...``."""
    fh, own, w = _writer(target)
    try:
        w.writerow(["k", "value"])
        for k, v in enumerate(values):
            w.writerow([k, f"{v:.17g}"])
    finally:
        if own:
            fh.close()


def write_distribution_csv(dist: KnDistribution, target) -> None:
    """Rows ``j,probability`` for ``j = 1..n``."""
    fh, own, w = _writer(target)
    try:
        w.writerow(["j", "probability"])
        for j, p in enumerate(dist.probs, start=1):
            w.writerow([j, f"{p:.17g}"])
    finally:
        if own:
            fh.close()
