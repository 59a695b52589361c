"""
Subordinator paths, their transformed ranges, and pathwise functionals.

Paths are compound Poisson approximations: jumps of additive size at least
``eps`` are simulated exactly, smaller ones are either dropped or, with
``compensate=True``, replaced by their mean contribution as extra drift.
Jump sizes are drawn by inverse transform on the multiplicative tail
``nu~[x, 1]`` with a bracketed root finder, so every family shares one
sampler.

An additive jump of size ``inf`` (multiplicative size 1) kills the path:
``S`` is infinite afterwards and the transformed range is complete.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, HorizonExceededError, PreconditionError
from .levy import LevyModel, laplace_exponent_total, poissonized_laplace_array
from .levy import small_jump_moment
from .rng import make_rng

__all__ = [
    "Diffeomorphism",
    "FixedTime",
    "MultiplicativeRemainder",
    "FirstPassage",
    "SubordinatorPath",
    "make_rng",
    "simulate_path",
    "transform_gaps",
    "count_gaps",
    "count_additive_jumps",
    "functional_L",
    "tail_correction",
    "area_process",
    "lebesgue_of_range",
    "compensator",
    "first_passage",
    "is_integrable",
    "write_path_csv",
]

MAX_JUMPS = 10**8
EXPONENTIAL = "exp"
POWER_TAIL = "power"


@dataclass(frozen=True)
class Diffeomorphism:
    """Increasing map of ``[0, inf]`` onto ``[0, 1]``.

    ``exp``: ``phi(y) = 1 - exp(-y)``; ``power``: ``phi(y) = 1 - (1 + y)^-beta``.
    """

    kind: str = EXPONENTIAL
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, POWER_TAIL):
            raise DomainError(f"unknown diffeomorphism {self.kind!r}")
        if self.kind == POWER_TAIL and not self.beta > 0:
            raise DomainError(f"power-tail diffeomorphism needs beta > 0, got {self.beta}")

    @classmethod
    def exponential(cls) -> "Diffeomorphism":
        return cls(EXPONENTIAL)

    @classmethod
    def power_tail(cls, beta: float) -> "Diffeomorphism":
        return cls(POWER_TAIL, float(beta))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == EXPONENTIAL:
            out = -np.expm1(-y)
        else:
            out = -np.expm1(-self.beta * np.log1p(y))
        return out if out.ndim else float(out)

    def complement(self, y):
        """``1 - phi(y)`` without cancellation."""
        y = np.asarray(y, dtype=float)
        out = np.exp(-y) if self.kind == EXPONENTIAL else (1.0 + y) ** -self.beta
        return out if out.ndim else float(out)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == EXPONENTIAL:
            out = np.exp(-y)
        else:
            out = self.beta * (1.0 + y) ** (-self.beta - 1.0)
        return out if out.ndim else float(out)

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind == EXPONENTIAL:
                out = -np.log1p(-x)
            else:
                out = np.expm1(-np.log1p(-x) / self.beta)
        return out if out.ndim else float(out)

    def increment(self, y0, dy):
        """``phi(y0 + dy) - phi(y0)`` accurately, also for tiny results."""
        y0 = np.asarray(y0, dtype=float)
        dy = np.asarray(dy, dtype=float)
        with np.errstate(invalid="ignore"):
            if self.kind == EXPONENTIAL:
                out = np.exp(-y0) * -np.expm1(-dy)
            else:
                out = (1.0 + y0) ** -self.beta * -np.expm1(-self.beta * np.log1p(dy / (1.0 + y0)))
        out = np.where(np.isinf(y0), 0.0, out)
        return out if out.ndim else float(out)

    def __str__(self):
        return "exp" if self.kind == EXPONENTIAL else f"power:{self.beta:g}"


@dataclass(frozen=True)
class FixedTime:
    T: float


@dataclass(frozen=True)
class MultiplicativeRemainder:
    """Stop once ``1 - phi(S_t) < delta`` for the exponential map."""

    delta: float


@dataclass(frozen=True)
class FirstPassage:
    """Stop at the first time ``S_t`` reaches ``level`` (additive scale)."""

    level: float


@dataclass(frozen=True, eq=False)
class SubordinatorPath:
    """A realised path on ``[0, horizon]``.

    ``S_t = (drift + small_jump_drift) t + sum of jumps with epoch <= t``.
    ``small_jump_drift`` is the compensation for the jumps below ``eps`` and
    is zero for uncompensated paths.
    """

    epochs: np.ndarray
    jumps: np.ndarray
    drift: float
    horizon: float
    eps: float
    model: LevyModel | None = None
    seed: object = None
    small_jump_drift: float = 0.0
    stop: object = None
    _cum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=float)
        jumps = np.asarray(self.jumps, dtype=float)
        if epochs.shape != jumps.shape:
            raise DomainError("epochs and jumps must have equal length")
        if len(epochs) and (np.any(np.diff(epochs) <= 0) or epochs[0] <= 0 or epochs[-1] > self.horizon):
            raise DomainError("epochs must be strictly increasing in (0, horizon]")
        if np.any(jumps <= 0):
            raise DomainError("jumps must be positive")
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "_cum", np.cumsum(jumps))

    @property
    def total_drift(self) -> float:
        return self.drift + self.small_jump_drift

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    @property
    def S_after(self) -> np.ndarray:
        """``S`` at each jump epoch (after the jump)."""
        return self.total_drift * self.epochs + self._cum

    @property
    def S_before(self) -> np.ndarray:
        """``S`` just before each jump."""
        prev = np.concatenate(([0.0], self._cum[:-1]))
        return self.total_drift * self.epochs + prev

    def S_at(self, t):
        """``S_t`` (right-continuous) for scalar or array ``t``."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.epochs, t, side="right")
        cum = np.concatenate(([0.0], self._cum))
        out = self.total_drift * t + cum[k]
        return out if out.ndim else float(out)

    @property
    def S_end(self) -> float:
        return self.S_at(self.horizon)

    @property
    def killed(self) -> bool:
        return bool(len(self.jumps)) and math.isinf(self._cum[-1])

    def restrict(self, t: float) -> "SubordinatorPath":
        """The same path observed on ``[0, t]``."""
        if not 0 <= t <= self.horizon:
            raise DomainError(f"t must lie in [0, {self.horizon}], got {t}")
        k = np.searchsorted(self.epochs, t, side="right")
        return replace(self, epochs=self.epochs[:k], jumps=self.jumps[:k], horizon=float(t), _cum=None)


def _jump_sampler(model: LevyModel, x_min: float):
    """Return ``(rate, draw)`` for jumps with multiplicative size ``>= x_min``."""
    if model.is_atomic:
        locs = np.array([x for x, _ in model.atoms if x >= x_min])
        ws = np.array([w for x, w in model.atoms if x >= x_min])
        rate = float(ws.sum()) if len(ws) else 0.0
        probs = ws / rate if rate else ws

        def draw(rng, size):
            return locs[rng.choice(len(locs), size=size, p=probs)]

        return rate, draw

    rate = float(model.tail_array(x_min))
    top = float(model.tail_array(1.0))
    inverse = _InverseTail(model, math.log(x_min))
    log_top = math.log(top) if top > 0 else -math.inf

    def draw(rng, size):
        lv = math.log(rate) + np.log1p(-rng.random(size))
        x = np.ones(size)
        inner = lv > log_top
        x[inner] = np.exp(inverse(lv[inner]))
        return x

    return rate, draw


class _InverseTail:
    """Solve ``log T(exp(lx)) = lv`` for ``lx`` on ``[lx_min, 0]``.

    A table of ``log T`` brackets each root within one cell; the Illinois
    variant of regula falsi then shrinks the bracket to ``XTOL`` in ``lx``,
    i.e. to that relative accuracy in ``x``.  Cells where an endpoint value is
    infinite fall back to bisection steps.
    """

    GRID = 1025
    XTOL = 1e-13
    MAX_STEPS = 100

    def __init__(self, model: LevyModel, lx_min: float):
        self.model = model
        self.grid = np.linspace(lx_min, 0.0, self.GRID)
        self.grid[0] = lx_min
        self.values = model.log_tail_array(self.grid)

    def __call__(self, lv):
        lv = np.asarray(lv, dtype=float)
        # values decrease along the grid; find k with values[k] >= lv > values[k+1]
        k = np.searchsorted(-self.values, -lv, side="right") - 1
        k = np.clip(k, 0, self.GRID - 2)
        a = self.grid[k].copy()
        b = self.grid[k + 1].copy()
        fa = self.values[k] - lv
        fb = self.values[k + 1] - lv
        side = np.zeros(lv.shape, dtype=np.int8)
        active = np.flatnonzero(b - a > self.XTOL)
        for _ in range(self.MAX_STEPS):
            if not len(active):
                break
            aa, bb, fa_, fb_ = a[active], b[active], fa[active], fb[active]
            with np.errstate(invalid="ignore", divide="ignore"):
                c = bb - fb_ * (bb - aa) / (fb_ - fa_)
            bad = ~np.isfinite(c) | (c <= aa) | (c >= bb)
            c[bad] = 0.5 * (aa[bad] + bb[bad])
            fc = self.model.log_tail_array(c) - lv[active]
            right = fc >= 0  # root lies in [c, b]
            s = side[active]
            a[active] = np.where(right, c, aa)
            fa[active] = np.where(right, fc, np.where(s == -1, 0.5 * fa_, fa_))
            b[active] = np.where(right, bb, c)
            fb[active] = np.where(right, np.where(s == 1, 0.5 * fb_, fb_), fc)
            side[active] = np.where(right, 1, -1)
            done = (b[active] - a[active] <= self.XTOL) | (fc == 0)
            a[active[fc == 0]] = c[fc == 0]
            active = active[~done]
        return a


def simulate_path(model: LevyModel, eps: float, stop, seed, drift: float | None = None,
                  compensate: bool = False, replicate: int | None = None,
                  max_jumps: int = MAX_JUMPS) -> SubordinatorPath:
    """Simulate a subordinator path until ``stop``.

    Parameters
    ----------
    model : LevyModel
    eps : float
        Additive truncation level; jumps of size ``>= eps`` are simulated.
        Must be positive unless the measure is finite.
    stop : FixedTime | MultiplicativeRemainder | FirstPassage
    seed : int or numpy.random.Generator
    drift : float, optional
        Overrides ``model.drift``.
    compensate : bool
        Add the mean of the dropped jumps as extra drift.
    replicate : int, optional
        Replicate index, combined with ``seed`` into an independent stream.

    Raises
    ------
    HorizonExceededError
        If the stop rule is not met within ``max_jumps`` jumps.
    """
    drift = model.drift if drift is None else float(drift)
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps}")
    if eps == 0 and not model.is_atomic:
        raise PreconditionError("eps = 0 is only allowed for finite Lévy measures")
    rng = make_rng(seed, replicate)
    x_min = -math.expm1(-eps) if eps > 0 else 0.0
    rate, draw = _jump_sampler(model, x_min)
    comp = small_jump_moment(model, eps, additive=True) if compensate else 0.0
    d = drift + comp
    seed_record = (seed if not isinstance(seed, np.random.Generator) else None, replicate)
    common = dict(drift=drift, eps=float(eps), model=model, seed=seed_record, small_jump_drift=comp, stop=stop)

    if isinstance(stop, FixedTime):
        T = float(stop.T)
        if not T >= 0:
            raise DomainError(f"horizon must be nonnegative, got {T}")
        count = int(rng.poisson(rate * T)) if rate > 0 else 0
        if count > max_jumps:
            raise HorizonExceededError(f"{count} jumps exceed the cap {max_jumps}")
        epochs = np.sort(rng.uniform(0.0, T, count))
        sizes = draw(rng, count)
        with np.errstate(divide="ignore"):
            jumps = -np.log1p(-sizes)
        # a jump to infinity ends the path; later jumps are invisible
        dead = np.flatnonzero(np.isinf(jumps))
        if len(dead):
            epochs, jumps = epochs[: dead[0] + 1], jumps[: dead[0] + 1]
        return SubordinatorPath(epochs, jumps, horizon=T, **common)

    if isinstance(stop, MultiplicativeRemainder):
        if not 0 < stop.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {stop.delta}")
        level = -math.log(stop.delta)
    elif isinstance(stop, FirstPassage):
        level = float(stop.level)
    else:
        raise DomainError(f"unknown stop rule {stop!r}")

    if level <= 0:
        return SubordinatorPath(np.empty(0), np.empty(0), horizon=0.0, **common)

    if rate == 0:
        if d <= 0:
            raise HorizonExceededError("no jumps and no drift: the stop rule can never be met",
                                       partial=SubordinatorPath(np.empty(0), np.empty(0), horizon=0.0, **common))
        return SubordinatorPath(np.empty(0), np.empty(0), horizon=level / d, **common)

    # the chunk size depends on the model only, so a stricter stop rule
    # with the same seed extends the same path
    chunk = int(np.clip(2 ** math.ceil(math.log2(max(rate, 1.0))), 64, 8192))
    t_chunks, j_chunks = [], []
    t_last, s_last, total = 0.0, 0.0, 0
    while True:
        epochs = t_last + np.cumsum(rng.exponential(1.0 / rate, chunk))
        with np.errstate(divide="ignore"):
            jumps = -np.log1p(-draw(rng, chunk))
        cum = np.cumsum(jumps)
        drift_part = s_last + d * (epochs - t_last)
        s_after = drift_part + cum
        s_before = drift_part + np.concatenate(([0.0], cum[:-1]))
        hit_drift = s_before >= level
        hit_jump = s_after >= level
        hit = np.flatnonzero(hit_drift | hit_jump)
        if total + (hit[0] + 1 if len(hit) else chunk) > max_jumps:
            keep = max_jumps - total
            t_chunks.append(epochs[:keep])
            j_chunks.append(jumps[:keep])
            partial = SubordinatorPath(np.concatenate(t_chunks), np.concatenate(j_chunks),
                                       horizon=float(epochs[keep - 1]) if keep else t_last, **common)
            raise HorizonExceededError(f"stop rule not met within {max_jumps} jumps", partial=partial)
        if len(hit):
            i = hit[0]
            if hit_drift[i]:
                prev_t = epochs[i - 1] if i else t_last
                prev_s = s_after[i - 1] if i else s_last
                horizon = prev_t + (level - prev_s) / d
                t_chunks.append(epochs[:i])
                j_chunks.append(jumps[:i])
            else:
                horizon = epochs[i]
                t_chunks.append(epochs[: i + 1])
                j_chunks.append(jumps[: i + 1])
            return SubordinatorPath(np.concatenate(t_chunks), np.concatenate(j_chunks), horizon=float(horizon), **common)
        t_chunks.append(epochs)
        j_chunks.append(jumps)
        total += chunk
        t_last, s_last = float(epochs[-1]), float(s_after[-1])


def transform_gaps(path: SubordinatorPath, phi: Diffeomorphism | None = None):
    """Gaps ``(phi(S_t-), phi(S_t))`` of the transformed range, one per jump."""
    from .composition import GapSet

    phi = phi or Diffeomorphism.exponential()
    sb = path.S_before
    lefts = phi(sb)
    rights = phi(path.S_after)
    lengths = phi.increment(sb, path.jumps)
    keep = lengths > 0
    s_end = path.S_end
    frontier = phi(s_end)
    resolved = path.killed or frontier >= 1.0
    return GapSet(lefts[keep], rights[keep], frontier=1.0 if resolved else float(frontier),
                  residual="complete" if resolved else "unresolved",
                  lengths=lengths[keep], epochs=path.epochs[keep])


def count_gaps(gaps, x: float, up_to_frontier: float | None = None) -> int:
    """Number of gaps of length ``>= x``, optionally only those left of a frontier."""
    if not 0 < x <= 1:
        raise DomainError(f"x must lie in (0, 1], got {x}")
    sel = gaps.lengths >= x
    if up_to_frontier is not None:
        sel &= gaps.rights <= up_to_frontier
    return int(np.count_nonzero(sel))


def count_additive_jumps(path: SubordinatorPath, y: float, t: float | None = None) -> int:
    """``N_y(t)``: jumps of additive size ``>= y`` with epoch ``<= t``."""
    if y < path.eps:
        raise PreconditionError(f"threshold {y} lies below the truncation level {path.eps}")
    t = path.horizon if t is None else t
    if t > path.horizon:
        raise DomainError(f"t = {t} exceeds the simulated horizon {path.horizon}")
    k = np.searchsorted(path.epochs, t, side="right")
    return int(np.count_nonzero(path.jumps[:k] >= y))


def is_integrable(phi: Diffeomorphism, alpha: float) -> bool:
    """Whether ``int_0^inf phi'(y)^alpha dy`` is finite."""
    if phi.kind == EXPONENTIAL:
        return alpha > 0
    return alpha * (phi.beta + 1.0) > 1.0


def _segments(path: SubordinatorPath, t: float):
    """Constant-jump segments of ``[0, t]``: start times, durations, ``S`` at segment start."""
    k = np.searchsorted(path.epochs, t, side="right")
    starts = np.concatenate(([0.0], path.epochs[:k]))
    ends = np.concatenate((path.epochs[:k], [t]))
    s0 = np.concatenate(([0.0], path.S_after[:k]))
    return starts, ends - starts, s0


def functional_L(path: SubordinatorPath, phi: Diffeomorphism | None = None, alpha: float = 1.0,
                 t: float = math.inf) -> float:
    """``L(t) = int_0^t phi'(S_u)^alpha du``.

    For ``t = inf`` (exponential map only) the integral up to the horizon is
    completed with :func:`tail_correction`, the conditional mean of the rest.
    """
    phi = phi or Diffeomorphism.exponential()
    if math.isinf(t):
        if phi.kind != EXPONENTIAL:
            raise PreconditionError("t = inf needs the exponential map; no tail bound is certified otherwise")
        return _integral_L(path, phi, alpha, path.horizon) + tail_correction(path, alpha)
    if t > path.horizon:
        raise DomainError(f"t = {t} exceeds the simulated horizon {path.horizon}")
    return _integral_L(path, phi, alpha, t)


def _integral_L(path, phi, alpha, t):
    _, dt, s0 = _segments(path, t)
    d = path.total_drift
    live = np.isfinite(s0)
    dt, s0 = dt[live], s0[live]
    if d == 0:
        return float(np.sum(phi.derivative(s0) ** alpha * dt))
    if phi.kind == EXPONENTIAL:
        # int_0^dt exp(-alpha (s0 + d u)) du
        return float(np.sum(np.exp(-alpha * s0) * -np.expm1(-alpha * d * dt) / (alpha * d)))
    # int_0^dt (beta (1 + s0 + d u)^-(beta+1))^alpha du, in closed form
    b = phi.beta
    p = alpha * (b + 1.0)
    a0 = 1.0 + s0
    a1 = a0 + d * dt
    if p == 1.0:
        seg = np.log(a1 / a0)
    else:
        seg = (a0 ** (1.0 - p) - a1 ** (1.0 - p)) / (p - 1.0)
    return float(np.sum(b ** alpha * seg / d))


def tail_correction(path: SubordinatorPath, alpha: float) -> float:
    """``E[int_T^inf exp(-alpha S_u) du | S_T] = exp(-alpha S_T) / Phi_total(alpha)``."""
    s_end = path.S_end
    if math.isinf(s_end):
        return 0.0
    if path.model is None:
        raise PreconditionError("tail correction needs the path's Lévy model")
    phi_a = laplace_exponent_total(path.model, alpha)
    return math.exp(-alpha * s_end) / phi_a


def area_process(path: SubordinatorPath, t: float = math.inf) -> float:
    """``A(t) = int_0^t (1 - S~_u) du``."""
    return functional_L(path, Diffeomorphism.exponential(), 1.0, t)


def lebesgue_of_range(path: SubordinatorPath, phi: Diffeomorphism | None = None) -> float:
    """Lebesgue measure of ``phi(range)``: ``d int_0^inf phi'(S_t) dt``."""
    if path.drift == 0:
        return 0.0
    return path.drift * functional_L(path, phi, 1.0, math.inf)


def compensator(path: SubordinatorPath, rho: float, t: float | None = None) -> float:
    """``C_t = int_0^t Phi_hat(rho (1 - S~_u)) du`` on the exponential scale."""
    t = path.horizon if t is None else t
    if t > path.horizon:
        raise DomainError(f"t = {t} exceeds the simulated horizon {path.horizon}")
    if rho == 0 or t == 0:
        return 0.0
    model = path.model
    _, dt, s0 = _segments(path, t)
    live = np.isfinite(s0) & (dt > 0)
    dt, s0 = dt[live], s0[live]
    d = path.total_drift
    hat = _truncated_laplace_hat(model, path.eps)
    if d == 0:
        return float(np.sum(hat(rho * np.exp(-s0)) * dt))
    from scipy import integrate

    total = 0.0
    for a, w in zip(s0, dt):
        val, _ = integrate.quad(lambda u: float(hat(rho * math.exp(-(a + d * u)))),
                                0.0, w, epsabs=0.0, epsrel=1e-10, limit=200)
        total += val
    return total


def _truncated_laplace_hat(model, eps):
    """``r -> int_{x >= x_eps} (1 - exp(-r x)) nu~(dx)``, the rate seen by a path truncated at ``eps``.

    The removed part is expanded to third order in ``r x``, accurate while
    ``r x_eps`` is small.
    """
    if eps <= 0:
        return lambda r: poissonized_laplace_array(model, r)
    if model.is_atomic:
        x_eps = -math.expm1(-eps)
        kept = [(x, w) for x, w in model.atoms if x >= x_eps]
        if not kept:
            return lambda r: np.zeros(np.shape(r))
        return lambda r: poissonized_laplace_array(LevyModel.finite_atomic(kept), r)
    m1, m2, m3 = (small_jump_moment(model, eps, k) for k in (1, 2, 3))

    def hat(r):
        r = np.asarray(r, dtype=float)
        return poissonized_laplace_array(model, r) - (r * m1 - r ** 2 * m2 / 2 + r ** 3 * m3 / 6)

    return hat


def first_passage(path: SubordinatorPath, phi: Diffeomorphism | None, z: float) -> float | None:
    """First time with ``phi(S_t) >= z``; ``None`` if the level is not reached by the horizon."""
    phi = phi or Diffeomorphism.exponential()
    if not 0 <= z < 1:
        raise DomainError(f"z must lie in [0, 1), got {z}")
    if z == 0:
        return 0.0
    level = phi.inverse(z)
    if path.S_end < level:
        return None
    d = path.total_drift
    s_after = path.S_after
    starts = np.concatenate(([0.0], path.epochs))
    s_start = np.concatenate(([0.0], s_after))
    hits = np.flatnonzero((path.S_before >= level) | (s_after >= level))
    if len(hits) and path.S_before[hits[0]] < level:
        return float(path.epochs[hits[0]])
    # crossed continuously by the drift inside segment i
    i = hits[0] if len(hits) else len(path.epochs)
    return float(starts[i] + (level - s_start[i]) / d)


def write_path_csv(path: SubordinatorPath, target, phi: Diffeomorphism | None = None) -> None:
    """Dump one row per jump: ``epoch,jump_additive,S_after,gap_left,gap_right``."""
    phi = phi or Diffeomorphism.exponential()
    lefts = phi(path.S_before)
    rights = phi(path.S_after)
    own = isinstance(target, str)
    fh = open(target, "w", newline="") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "jump_additive", "S_after", "gap_left", "gap_right"])
        for row in zip(path.epochs, path.jumps, path.S_after, np.atleast_1d(lefts), np.atleast_1d(rights)):
            w.writerow([f"{v:.17g}" for v in row])
    finally:
        if own:
            fh.close()
