"""
Lévy-measure families on the multiplicative scale.

A drift-free subordinator ``S`` with Lévy measure ``nu`` on ``]0, inf]`` is
described here through the image measure ``nu~`` on ``]0, 1]`` under
``x = 1 - exp(-y)``.  All Bernstein functions are integrals against ``nu~``:

    Phi(s)      = int (1 - (1 - x)^s) nu~(dx)
    Phi_hat(s)  = int (1 - exp(-s x)) nu~(dx)
    Phi(n:m)    = C(n, m) int x^m (1 - x)^(n - m) nu~(dx)

For continuous families the integrals are evaluated through the tail
``T(x) = nu~[x, 1]`` using ``int g d nu~ = int g'(x) T(x) dx`` (valid for
``g(0) = 0``), which keeps atoms at ``x = 1`` (killing) inside the same
formula.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, special

from .errors import DomainError, PreconditionError, QuadratureError, UnsupportedFamilyError

__all__ = [
    "SlowlyVarying",
    "LevyModel",
    "tail",
    "laplace_exponent",
    "laplace_exponent_total",
    "phi_partial",
    "poissonized_laplace",
    "ell_star",
    "scaling_psi",
    "small_jump_moment",
    "potter_threshold",
]

TWO_PARAMETER = "two-param"
STABLE_LIKE = "stable"
FINITE_ATOMIC = "atomic"

_QUAD_RTOL = 1e-12
_PHI_RTOL = 1e-10


@dataclass(frozen=True)
class SlowlyVarying:
    """Slowly varying function ``c`` or ``max(log t, 1) ** rho``.

    The floor at 1 keeps the function positive and finite on ``]0, inf[``;
    only the behaviour at infinity matters for the limit laws.
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "const":
            if not self.value > 0:
                raise DomainError(f"constant slowly varying function needs c > 0, got {self.value}")
        elif self.kind != "logpow":
            raise DomainError(f"unknown slowly varying kind {self.kind!r}")

    @classmethod
    def const(cls, c: float = 1.0) -> "SlowlyVarying":
        return cls("const", float(c))

    @classmethod
    def logpow(cls, rho: float) -> "SlowlyVarying":
        return cls("logpow", float(rho))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            out = np.full(t.shape, self.value)
        else:
            with np.errstate(divide="ignore"):
                out = np.maximum(np.log(t), 1.0) ** self.value
        return out if out.ndim else float(out)

    def mp(self, t):
        """Evaluate with mpmath numbers (for extended precision quadrature)."""
        if self.kind == "const":
            return mpmath.mpf(self.value)
        if t == 0:
            return mpmath.mpf(1)
        return mpmath.power(max(mpmath.log(t), mpmath.mpf(1)), self.value)

    @property
    def log_integrable(self) -> bool:
        """Whether ``int^inf l(y) / y dy`` converges."""
        return self.kind == "logpow" and self.value < -1.0

    def __str__(self):
        return f"const:{self.value:g}" if self.kind == "const" else f"logpow:{self.value:g}"


@dataclass(frozen=True)
class LevyModel:
    """A Lévy measure family together with a drift coefficient.

    Use the constructors :meth:`two_parameter`, :meth:`stable_like` and
    :meth:`finite_atomic` rather than calling the class directly.
    """

    family: str
    alpha: float = float("nan")
    theta: float = 0.0
    ell: SlowlyVarying | None = None
    atoms: tuple = field(default=())
    drift: float = 0.0

    def __post_init__(self):
        if not self.drift >= 0:
            raise DomainError(f"drift must be nonnegative, got {self.drift}")
        if self.family == TWO_PARAMETER:
            if not 0 < self.alpha < 1:
                raise DomainError(f"two-parameter family needs 0 < alpha < 1, got {self.alpha}")
            if not self.theta >= 0:
                raise DomainError(f"two-parameter family needs theta >= 0, got {self.theta}")
        elif self.family == STABLE_LIKE:
            if not 0 < self.alpha <= 1:
                raise DomainError(f"stable-like family needs 0 < alpha <= 1, got {self.alpha}")
            if self.ell is None:
                raise DomainError("stable-like family needs a slowly varying function")
        elif self.family == FINITE_ATOMIC:
            if not self.atoms:
                raise DomainError("finite atomic family needs at least one atom")
            for loc, w in self.atoms:
                if not 0 < loc <= 1:
                    raise DomainError(f"atom location must lie in (0, 1], got {loc}")
                if not w > 0:
                    raise DomainError(f"atom weight must be positive, got {w}")
        else:
            raise DomainError(f"unknown family {self.family!r}")

    @classmethod
    def two_parameter(cls, alpha: float, theta: float = 0.0, drift: float = 0.0) -> "LevyModel":
        """Tail ``x^-alpha (1 - x)^theta``; for ``theta = 0`` this has an atom of mass 1 at ``x = 1``."""
        return cls(TWO_PARAMETER, float(alpha), float(theta), None, (), float(drift))

    @classmethod
    def stable_like(cls, alpha: float, ell: SlowlyVarying | None = None, drift: float = 0.0) -> "LevyModel":
        """Additive tail ``l(1/y) y^-alpha`` transported to ``]0, 1]``."""
        ell = SlowlyVarying.const(1.0) if ell is None else ell
        return cls(STABLE_LIKE, float(alpha), 0.0, ell, (), float(drift))

    @classmethod
    def finite_atomic(cls, atoms, drift: float = 0.0) -> "LevyModel":
        atoms = tuple(sorted((float(x), float(w)) for x, w in atoms))
        return cls(FINITE_ATOMIC, float("nan"), 0.0, None, atoms, float(drift))

    @property
    def is_atomic(self) -> bool:
        return self.family == FINITE_ATOMIC

    @property
    def total_mass(self) -> float:
        """Total mass of ``nu~`` (infinite for the regularly varying families)."""
        if self.is_atomic:
            return math.fsum(w for _, w in self.atoms)
        return math.inf

    @property
    def slowly_varying(self) -> SlowlyVarying:
        if self.family == TWO_PARAMETER:
            return SlowlyVarying.const(1.0)
        if self.family == STABLE_LIKE:
            return self.ell
        raise UnsupportedFamilyError("finite atomic measures have no regular-variation parameters")

    def scaled(self, c: float) -> "LevyModel":
        """The model with Lévy data ``(c nu~, c d)``; only atomic measures are rescaled exactly."""
        if not self.is_atomic:
            raise UnsupportedFamilyError("scaling is implemented for finite atomic measures only")
        return LevyModel.finite_atomic([(x, c * w) for x, w in self.atoms], drift=c * self.drift)

    def describe(self) -> str:
        if self.family == TWO_PARAMETER:
            return f"two-param(alpha={self.alpha:g}, theta={self.theta:g}, d={self.drift:g})"
        if self.family == STABLE_LIKE:
            return f"stable(alpha={self.alpha:g}, ell={self.ell}, d={self.drift:g})"
        pts = ", ".join(f"({x:g}, {w:g})" for x, w in self.atoms)
        return f"atomic({pts}, d={self.drift:g})"

    # -- vectorised internals, no domain checks -------------------------------

    def tail_array(self, x):
        """``nu~[x, 1]`` for an array of ``x`` in ``]0, 1]``."""
        x = np.asarray(x, dtype=float)
        if self.family == TWO_PARAMETER:
            return x ** -self.alpha * (1.0 - x) ** self.theta
        if self.family == STABLE_LIKE:
            with np.errstate(divide="ignore"):
                y = -np.log1p(-x)
                return self._ell(1.0 / y) * y ** -self.alpha
        locs = np.array([a for a, _ in self.atoms])
        cw = np.cumsum([w for _, w in self.atoms][::-1])[::-1]
        idx = np.searchsorted(locs, x, side="left")
        out = np.zeros(x.shape)
        ok = idx < len(locs)
        out[ok] = cw[idx[ok]]
        return out

    def log_tail_array(self, lx):
        """``log nu~[x, 1]`` at ``x = exp(lx)`` for the regularly varying families."""
        lx = np.asarray(lx, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == TWO_PARAMETER:
                out = -self.alpha * lx
                if self.theta:
                    out = out + self.theta * np.log(-np.expm1(lx))
                return out
            if self.family == STABLE_LIKE:
                y = np.where(lx < -0.5, -np.log1p(-np.exp(lx)), -np.log(-np.expm1(lx)))
                ly = np.log(y)
                if self.ell.kind == "const":
                    log_ell = math.log(self.ell.value)
                else:
                    log_ell = self.ell.value * np.log(np.maximum(-ly, self.floor_log))
                return np.where(np.isinf(y), -np.inf, log_ell - self.alpha * ly)
        raise UnsupportedFamilyError("log tail is defined for the regularly varying families")

    @property
    def floor_log(self) -> float:
        """Where the floor of the model's slowly varying factor sets in, in ``log t``.

        This is 1 as for :class:`SlowlyVarying`, except for ``logpow`` with
        ``rho < -alpha``: there the floor at 1 would make the additive tail
        increase for ``log(1/y)`` between 1 and ``-rho/alpha``, so the floor
        moves to ``-rho/alpha``.  Small jumps are unaffected.
        """
        if self.family == STABLE_LIKE and self.ell.kind == "logpow" and self.ell.value < -self.alpha:
            return -self.ell.value / self.alpha
        return 1.0

    def _ell(self, t):
        """The model's slowly varying factor ``l(t)``, floored at :attr:`floor_log`."""
        if self.family != STABLE_LIKE:
            return 1.0
        if self.ell.kind == "const":
            return self.ell.value
        with np.errstate(divide="ignore"):
            return np.maximum(np.log(t), self.floor_log) ** self.ell.value

    def _ell_mp(self, t):
        if self.ell.kind == "const":
            return mpmath.mpf(self.ell.value)
        if t == 0:
            return mpmath.power(mpmath.mpf(self.floor_log), self.ell.value)
        return mpmath.power(max(mpmath.log(t), mpmath.mpf(self.floor_log)), self.ell.value)

    @property
    def _kink(self) -> float:
        """Multiplicative jump size where the floor sets in."""
        return -math.expm1(-math.exp(-self.floor_log))

    def _x_tail(self, u):
        """``x T(x)`` at ``x = exp(-u)``, finite even where ``x`` underflows."""
        if u < 700.0:
            x = math.exp(-u)
            return float(self.tail_array(x)) * x
        if self.family == FINITE_ATOMIC:
            return 0.0
        # here y = x to double precision, so T(x) = l(1/x) x^-alpha
        if self.family == STABLE_LIKE and self.ell.kind == "logpow":
            lv = max(u, self.floor_log) ** self.ell.value
        else:
            lv = float(self._ell(math.e))
        return lv * math.exp(-(1.0 - self.alpha) * u)

    def _tail_additive(self, y):
        """``nu~[x, 1]`` at ``x = 1 - exp(-y)``, accurate for large ``y``."""
        if self.family == TWO_PARAMETER:
            return (-math.expm1(-y)) ** -self.alpha * math.exp(-self.theta * y)
        if self.family == STABLE_LIKE:
            return float(self._ell(1.0 / y)) * y ** -self.alpha if math.isfinite(y) else 0.0
        return float(self.tail_array(-math.expm1(-y)))

    def _tail_mp(self, x):
        if self.family == TWO_PARAMETER:
            return mpmath.power(x, -self.alpha) * mpmath.power(1 - x, self.theta)
        if self.family == STABLE_LIKE:
            if x == 1:
                return mpmath.mpf(0)
            y = -mpmath.log1p(-x)
            return self._ell_mp(1 / y) * mpmath.power(y, -self.alpha)
        return mpmath.fsum(mpmath.mpf(w) for loc, w in self.atoms if loc >= x)


# -- quadrature ---------------------------------------------------------------


class _Accumulator:
    def __init__(self):
        self.value = 0.0
        self.error = 0.0

    def add(self, func, a, b, **kw):
        out = integrate.quad(func, a, b, epsabs=0.0, epsrel=_QUAD_RTOL, limit=400, full_output=1, **kw)
        self.value += out[0]
        self.error += out[1]


def _tail_integral(model: LevyModel, h, right_exp: float = 0.0, scale: float = 1.0,
                   upper: float = 1.0, rtol: float = _PHI_RTOL) -> float:
    """Integrate ``h(x) (1 - x)^right_exp (T(x) - T(upper))`` over ``[0, upper]``.

    The piece near zero is mapped to ``u = -log x`` so that the algebraic and
    logarithmic singularities of ``T`` become smooth exponential decay.
    """
    acc = _Accumulator()
    cut = min(0.5, upper)
    t_up = model.tail_array(upper) if upper < 1.0 else 0.0

    def left(u):
        x = math.exp(-u)
        return h(x) * (1.0 - x) ** right_exp * (model._x_tail(u) - t_up * x)

    breaks = {-math.log(cut)}
    if model.family == STABLE_LIKE and model._kink < cut:
        breaks.add(-math.log(model._kink))
    if scale > 1.0:
        ls = math.log(scale)
        breaks.update(ls + k for k in (-3.0, 0.0, 3.0))
    breaks = sorted(b for b in breaks if b >= -math.log(cut))
    for a, b in zip(breaks, breaks[1:]):
        acc.add(left, a, b)
    acc.add(left, breaks[-1], math.inf)

    if upper > cut:
        if upper < 1.0:
            acc.add(lambda x: h(x) * (1.0 - x) ** right_exp * (model.tail_array(x) - t_up), cut, upper)
        else:
            # additive variable y = -log(1 - x): (1 - x)^r dx = exp(-(r + 1) y) dy
            def right(y):
                return h(-math.expm1(-y)) * math.exp(-(right_exp + 1.0) * y) * model._tail_additive(y)

            y0 = math.log(2.0)
            y1 = y0 + 10.0 / max(right_exp + 1.0, 1e-3)
            acc.add(right, y0, y1)
            acc.add(right, y1, math.inf)

    if not math.isfinite(acc.value) or acc.error > max(rtol * abs(acc.value), 1e-300):
        raise QuadratureError(
            f"tail quadrature for {model.describe()} reached error {acc.error:.3g} "
            f"on value {acc.value:.6g}", achieved=acc.error / max(abs(acc.value), 1e-300))
    return acc.value


def _tail_integral_mp(model: LevyModel, h, right_exp, n_hint: float = 1.0):
    """mpmath counterpart of :func:`_tail_integral` for the stable-like family."""
    a = mpmath.mpf(model.alpha)
    r = mpmath.mpf(right_exp)

    def t_add(y):
        return model._ell_mp(1 / y) * mpmath.power(y, -a)

    def left(u):
        x = mpmath.exp(-u)
        y = -mpmath.log1p(-x)
        return h(x) * mpmath.power(1 - x, r) * t_add(y) * x

    def right(y):
        return h(-mpmath.expm1(-y)) * mpmath.exp(-(r + 1) * y) * t_add(y)

    ln2 = mpmath.log(2)
    ubreaks = {ln2, -mpmath.log(-mpmath.expm1(-mpmath.exp(-model.floor_log)))}
    if n_hint > 2:
        ls = mpmath.log(n_hint)
        ubreaks.update(ls + k for k in (-3, 0, 3))
    ubreaks = sorted(b for b in ubreaks if b >= ln2) + [mpmath.inf]
    y1 = ln2 + 10 / max(r + 1, mpmath.mpf("1e-3"))
    return mpmath.quad(left, ubreaks) + mpmath.quad(right, [ln2, y1, mpmath.inf])


def _check_unit(x, name="x"):
    if not 0 < x <= 1:
        raise DomainError(f"{name} must lie in (0, 1], got {x}")


# -- public operations ---------------------------------------------------------


def tail(model: LevyModel, x: float) -> float:
    """Return ``nu~[x, 1]``.

    Examples
    --------
    >>> tail(LevyModel.two_parameter(0.5, 1.0), 0.25)
    1.5
    """
    _check_unit(x)
    return float(model.tail_array(float(x)))


def laplace_exponent(model: LevyModel, s: float) -> float:
    """Laplace exponent ``Phi(s)`` of the jump part (drift excluded)."""
    if not s >= 0:
        raise DomainError(f"s must be nonnegative, got {s}")
    s = float(s)
    if s == 0.0:
        return 0.0
    if model.is_atomic:
        return math.fsum(w * -math.expm1(s * math.log1p(-x)) if x < 1 else w for x, w in model.atoms)
    if model.family == TWO_PARAMETER:
        a, th = model.alpha, model.theta
        return math.exp(math.log(s) + special.gammaln(1 - a) + special.gammaln(s + th)
                        - special.gammaln(s + 1 - a + th))
    return _tail_integral(model, lambda x: s, right_exp=s - 1.0, scale=s)


def laplace_exponent_total(model: LevyModel, s: float) -> float:
    """``d s + Phi(s)``, the exponent governing ``E exp(-s S_t)``."""
    return model.drift * s + laplace_exponent(model, s)


def phi_partial(model: LevyModel, n: int, m: int) -> float:
    """``Phi(n:m) = C(n, m) int x^m (1 - x)^(n - m) nu~(dx)``.

    Summing over ``m = 1..n`` recovers ``Phi(n)``.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise DomainError(f"n must be a positive integer, got {n}")
    if not (isinstance(m, (int, np.integer)) and 1 <= m <= n):
        raise DomainError(f"m must be an integer in 1..{n}, got {m}")
    n, m = int(n), int(m)
    if model.is_atomic:
        return math.fsum(w * special.binom(n, m) * x ** m * (1 - x) ** (n - m) for x, w in model.atoms)
    if model.family == TWO_PARAMETER:
        return float(_phi_partial_two_param(model.alpha, model.theta, n, np.array([m]))[0])
    return float(phi_partial_row(model, n)[m - 1])


def _phi_partial_two_param(a, th, n, m):
    m = np.asarray(m, dtype=float)
    k = n - m
    logc = special.gammaln(n + 1) - special.gammaln(m + 1) - special.gammaln(k + 1)
    out = a * np.exp(logc + special.betaln(m - a, k + th + 1))
    if th > 0:
        out = out + th * np.exp(logc + special.betaln(m - a + 1, k + th))
    else:
        out = out + (m == n)
    return out


def phi_partial_row(model: LevyModel, n: int) -> np.ndarray:
    """Vector ``[Phi(n:1), ..., Phi(n:n)]``."""
    n = int(n)
    ms = np.arange(1, n + 1)
    if model.is_atomic:
        out = np.zeros(n)
        for x, w in model.atoms:
            out += w * special.binom(n, ms) * x ** ms * (1 - x) ** (n - ms) if x < 1 else w * (ms == n)
        return out
    if model.family == TWO_PARAMETER:
        return _phi_partial_two_param(model.alpha, model.theta, n, ms)
    return _stable_partial_row(model, n).copy()


def _phi_partial_quad(model: LevyModel, n: int, m: int) -> float:
    """``Phi(n:m)`` by adaptive quadrature through the tail (reference implementation)."""
    # d/dx [C(n,m) x^m (1-x)^(n-m)] = n [b(m-1; n-1, x) - b(m; n-1, x)] with binomial pmf b
    def h(x):
        return n * (special.binom(n - 1, m - 1) * x ** (m - 1) * (1 - x) ** (n - m)
                    - (special.binom(n - 1, m) * x ** m * (1 - x) ** (n - m - 1) if m < n else 0.0))

    return _tail_integral(model, h, scale=n / m)


# composite Gauss-Legendre rule in v = log y for the stable-like jump density
_RULE_V_MIN = -70.0
_RULE_V_MAX = math.log(80.0)
_RULE_N_MAX = 2000
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@functools.lru_cache(maxsize=8)
def _stable_rule(model: LevyModel):
    """Nodes ``y`` and log-weights for ``int f(y) nu(dy) = sum w f(y)``.

    The weights absorb the density ``-y d/dy nu_bar(y)`` of ``nu`` in ``dv``.
    Panels are fine where binomial kernels with ``n <= _RULE_N_MAX`` peak.
    """
    v_fine = -math.log(_RULE_N_MAX) - 8.0
    kink = -model.floor_log
    edges = np.concatenate((np.arange(_RULE_V_MIN, v_fine, 1.0),
                            np.arange(v_fine, _RULE_V_MAX, 0.05), [_RULE_V_MAX, kink]))
    edges = np.unique(edges)
    lo, hi = edges[:-1, None], edges[1:, None]
    v = (0.5 * (hi + lo) + 0.5 * (hi - lo) * _GL_NODES).ravel()
    w = (0.5 * (hi - lo) * _GL_WEIGHTS).ravel()
    y = np.exp(v)
    nu_bar = model._ell(1.0 / y) * y ** -model.alpha
    if model.ell.kind == "logpow":
        u = -v
        slope = np.where(u > model.floor_log, model.alpha + model.ell.value / np.where(u > 0, u, 1.0), model.alpha)
    else:
        slope = np.full(v.shape, model.alpha)
    log_w = np.log(w * nu_bar * slope)
    # end pieces: below y_min only m = 1 matters, above y_max only m = n
    y_min, y_max = math.exp(_RULE_V_MIN), math.exp(_RULE_V_MAX)
    low = small_jump_moment(model, y_min)
    high = float(model._ell(1.0 / y_max)) * y_max ** -model.alpha
    return y, np.log(-np.expm1(-y)), log_w, low, high


@functools.lru_cache(maxsize=4096)
def _stable_partial_row(model: LevyModel, n: int) -> np.ndarray:
    if n > _RULE_N_MAX:
        raise DomainError(f"stable-like partial exponents are tabulated for n <= {_RULE_N_MAX}, got {n}")
    y, log_x, log_w, low, high = _stable_rule(model)
    m = np.arange(1, n + 1, dtype=float)[:, None]
    logc = special.gammaln(n + 1) - special.gammaln(m + 1) - special.gammaln(n - m + 1)
    out = np.exp(logc + m * log_x - (n - m) * y + log_w).sum(axis=1)
    out[0] += n * low
    out[-1] += high
    out.flags.writeable = False
    return out


def poissonized_laplace(model: LevyModel, rho: float) -> float:
    """``Phi_hat(rho) = int (1 - exp(-rho x)) nu~(dx)``."""
    if not rho >= 0:
        raise DomainError(f"rho must be nonnegative, got {rho}")
    rho = float(rho)
    if rho == 0.0:
        return 0.0
    if model.is_atomic:
        return math.fsum(w * -math.expm1(-rho * x) for x, w in model.atoms)
    return _tail_integral(model, lambda x: rho * math.exp(-rho * x), scale=rho)


def poissonized_laplace_array(model: LevyModel, rho) -> np.ndarray:
    """Vectorised :func:`poissonized_laplace`; atomic models avoid quadrature entirely."""
    rho = np.asarray(rho, dtype=float)
    if model.is_atomic:
        out = np.zeros(rho.shape)
        for x, w in model.atoms:
            out += w * -np.expm1(-rho * x)
        return out
    out = np.empty(rho.shape)
    lo, hi, spline = _laplace_hat_table(model)
    inside = (rho >= lo) & (rho <= hi)
    out[inside] = np.exp(spline(np.log(rho[inside])))
    for i in zip(*np.nonzero(~inside)):
        out[i] = poissonized_laplace(model, rho[i])
    return out


_TABLE_DECADES = (-6, 8)
_TABLE_PER_DECADE = 80


@functools.lru_cache(maxsize=64)
def _laplace_hat_table(model: LevyModel):
    """Cubic spline of ``log Phi_hat`` against ``log rho`` (relative error below 1e-9)."""
    from scipy.interpolate import CubicSpline

    a, b = _TABLE_DECADES
    lr = np.linspace(a * math.log(10), b * math.log(10), (b - a) * _TABLE_PER_DECADE + 1)
    vals = np.log([poissonized_laplace(model, math.exp(v)) for v in lr])
    return 10.0 ** a, 10.0 ** b, CubicSpline(lr, vals)


def tauberian_difference(model: LevyModel, s: float) -> float:
    """``Phi(s) - Phi_hat(s)`` integrated directly, without cancellation."""
    if not s >= 0:
        raise DomainError(f"s must be nonnegative, got {s}")
    s = float(s)
    if s == 0.0:
        return 0.0
    if model.is_atomic:
        out = []
        for x, w in model.atoms:
            # exp(-s x) - (1 - x)^s = exp(-s x) * (1 - exp(s x + s log(1 - x)))
            tail_ = -math.expm1(s * x + s * math.log1p(-x)) if x < 1 else 1.0
            out.append(w * math.exp(-s * x) * tail_)
        return math.fsum(out)

    if s < 1.0:
        # no cancellation problem at this scale, and (1 - x)^(s - 1) is singular at 1
        return laplace_exponent(model, s) - poissonized_laplace(model, s)

    def h(x):
        # derivative of exp(-s x) - (1 - x)^s, written to avoid cancellation
        if x >= 1.0:
            return s * ((1.0 if s == 1.0 else 0.0) - math.exp(-s))
        return s * math.exp(-s * x) * math.expm1((s - 1) * math.log1p(-x) + s * x)

    return _tail_integral(model, h, scale=s, rtol=1e-8)


def ell_star(ell: SlowlyVarying, t: float) -> float:
    """``l*(t) = int_0^inf exp(-1/y) l(t y) / y dy``.

    Requires ``int^inf l(y)/y dy < inf`` (``logpow`` with ``rho < -1``).
    """
    if not ell.log_integrable:
        raise PreconditionError(f"l*(t) diverges for l = {ell}; need logpow with rho < -1")
    if not t > 1:
        raise DomainError(f"t must exceed 1, got {t}")
    log_t = math.log(t)
    rho = ell.value

    def low(v):
        # y = 1/v on [0, 1]
        return math.exp(-v) / v * max(log_t - math.log(v), 1.0) ** rho

    def high(u):
        # y = exp(u) on [1, inf)
        return math.exp(-math.exp(-u)) * max(log_t + u, 1.0) ** rho

    acc = _Accumulator()
    kink = t / math.e
    if 1.0 < kink < 800.0:
        acc.add(low, 1.0, kink)
        acc.add(low, kink, math.inf)
    else:
        acc.add(low, 1.0, math.inf)
    if log_t < 1.0:
        acc.add(high, 0.0, 1.0 - log_t)
        acc.add(high, 1.0 - log_t, math.inf)
    else:
        acc.add(high, 0.0, 50.0)
        acc.add(high, 50.0, math.inf)
    if acc.error > 1e-8 * acc.value:
        raise QuadratureError(f"l* quadrature error {acc.error:.3g}", achieved=acc.error / acc.value)
    return acc.value


def scaling_psi(model: LevyModel, x: float) -> float:
    """Gap-count normaliser ``psi(x) = x^-alpha l(1/x)``."""
    if model.is_atomic:
        raise UnsupportedFamilyError("psi needs regular-variation parameters; atomic measures have none")
    if not 0 < x < 1:
        raise DomainError(f"x must lie in (0, 1), got {x}")
    return x ** -model.alpha * model.slowly_varying(1.0 / x)


def small_jump_moment(model: LevyModel, eps: float, power: int = 1, additive: bool = False) -> float:
    """Moment of the measure restricted to jumps below the truncation level.

    Returns ``int_{x < x_eps} f(x) nu~(dx)`` with ``f(x) = x^power`` (or the
    additive size ``-log(1 - x)`` when ``additive``), where
    ``x_eps = 1 - exp(-eps)`` is the multiplicative size of an additive jump ``eps``.
    """
    if eps <= 0:
        return 0.0
    x_eps = -math.expm1(-eps)
    if model.is_atomic:
        f = (lambda x: -math.log1p(-x)) if additive else (lambda x: x ** power)
        return math.fsum(w * f(x) for x, w in model.atoms if x < x_eps)
    if additive:
        h = lambda x: 1.0 / (1.0 - x)  # noqa: E731
    else:
        h = lambda x: power * x ** (power - 1)  # noqa: E731
    return _tail_integral(model, h, upper=x_eps, rtol=1e-8)


def potter_threshold(ell: SlowlyVarying, A: float, delta: float, grid) -> float | None:
    """Smallest grid point ``X`` beyond which the Potter bound holds on the grid.

    Checks ``l(y)/l(x) <= A max((y/x)^delta, (y/x)^-delta)`` for all grid pairs
    ``x, y >= X``; returns ``None`` when no such grid point exists.
    """
    g = np.sort(np.asarray(grid, dtype=float))
    vals = ell(g)
    ratio = vals[None, :] / vals[:, None]
    q = g[None, :] / g[:, None]
    ok = ratio <= A * np.maximum(q ** delta, q ** -delta) * (1 + 1e-12)
    # ok_from[i] is True when all pairs with indices >= i satisfy the bound
    for i in range(len(g)):
        if ok[i:, i:].all():
            return float(g[i])
    return None


# -- extended precision --------------------------------------------------------


def laplace_exponent_mp(model: LevyModel, s, dps: int = 40):
    """``d s + Phi(s)`` as an mpmath number at ``dps`` significant digits."""
    with mpmath.workdps(dps):
        s = mpmath.mpf(s)
        if s == 0:
            return mpmath.mpf(0)
        drift = mpmath.mpf(model.drift) * s
        if model.is_atomic:
            return drift + mpmath.fsum(mpmath.mpf(w) * (1 - mpmath.power(1 - mpmath.mpf(x), s))
                                       for x, w in model.atoms)
        if model.family == TWO_PARAMETER:
            a, th = mpmath.mpf(model.alpha), mpmath.mpf(model.theta)
            return drift + s * mpmath.gamma(1 - a) * mpmath.gamma(s + th) / mpmath.gamma(s + 1 - a + th)
        return drift + _tail_integral_mp(model, lambda x: s, s - 1, n_hint=s)


def phi_partial_mp(model: LevyModel, n: int, m: int, dps: int = 40):
    """``Phi(n:m)`` as an mpmath number (drift excluded)."""
    with mpmath.workdps(dps):
        c = mpmath.binomial(n, m)
        if model.is_atomic:
            return mpmath.fsum(mpmath.mpf(w) * c * mpmath.power(mpmath.mpf(x), m)
                               * mpmath.power(1 - mpmath.mpf(x), n - m) for x, w in model.atoms)
        if model.family == TWO_PARAMETER:
            a, th = mpmath.mpf(model.alpha), mpmath.mpf(model.theta)
            k = n - m
            out = c * a * mpmath.beta(m - a, k + th + 1)
            if th > 0:
                out += c * th * mpmath.beta(m - a + 1, k + th)
            elif m == n:
                out += 1
            return out

        def h(x):
            left = mpmath.binomial(n - 1, m - 1) * mpmath.power(x, m - 1) * mpmath.power(1 - x, n - m)
            right = (mpmath.binomial(n - 1, m) * mpmath.power(x, m) * mpmath.power(1 - x, n - m - 1)
                     if m < n else 0)
            return n * (left - right)

        return _tail_integral_mp(model, h, 0, n_hint=n / m)
