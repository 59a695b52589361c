"""
Compositions of a point sample separated by a random closed set.

The set enters through its gaps (open intervals of the complement) and a
frontier ``r`` up to which the gap structure is known.  Points sharing a gap
form one block, points outside every gap are singleton blocks.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, PreconditionError, UnresolvedRegionError
from .rng import make_rng

__all__ = [
    "UNRESOLVED",
    "IN_RANGE",
    "COMPLETE",
    "GapSet",
    "Composition",
    "compose",
    "part_counts",
    "sample_uniform",
    "sample_poisson",
    "partial_counts",
    "conditional_expected_parts",
    "conditional_expected_r_parts",
    "classify_singletons",
    "write_compositions",
    "read_compositions",
]

UNRESOLVED = "unresolved"
IN_RANGE = "in_range"
COMPLETE = "complete"


@dataclass(frozen=True, eq=False)
class GapSet:
    """Ordered disjoint gaps ``(lefts[i], rights[i])`` inside ``[0, frontier]``.

    Parameters
    ----------
    lefts, rights : array_like
        Gap endpoints, ordered left to right.
    frontier : float
        The structure is resolved on ``[0, frontier]``.
    residual : {"unresolved", "in_range", "complete"}
        What is known about ``]frontier, 1]``: nothing, that it lies in the
        closed set, or that ``frontier = 1`` and nothing remains.
    lengths : array_like, optional
        Gap lengths computed without cancellation; defaults to
        ``rights - lefts``.
    epochs : array_like, optional
        Emission time of each gap, needed by :func:`partial_counts`.
    """

    lefts: np.ndarray
    rights: np.ndarray
    frontier: float = 1.0
    residual: str = COMPLETE
    lengths: np.ndarray = None
    epochs: np.ndarray = None
    _tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        a = np.asarray(self.lefts, dtype=float)
        b = np.asarray(self.rights, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise DomainError("lefts and rights must be 1-d arrays of equal length")
        if self.residual not in (UNRESOLVED, IN_RANGE, COMPLETE):
            raise DomainError(f"unknown residual flag {self.residual!r}")
        if not 0 <= self.frontier <= 1:
            raise DomainError(f"frontier must lie in [0, 1], got {self.frontier}")
        # gaps narrower than one ulp may have equal rounded endpoints
        if len(a) and (np.any(a > b) or np.any(b[:-1] > a[1:]) or a[0] < 0 or b[-1] > self.frontier + self._tol):
            raise DomainError("gaps must be ordered, disjoint and inside [0, frontier]")
        lengths = b - a if self.lengths is None else np.asarray(self.lengths, dtype=float)
        object.__setattr__(self, "lefts", a)
        object.__setattr__(self, "rights", b)
        object.__setattr__(self, "lengths", lengths)
        if self.epochs is not None:
            object.__setattr__(self, "epochs", np.asarray(self.epochs, dtype=float))

    @classmethod
    def from_intervals(cls, intervals, frontier: float | None = None, residual: str | None = None) -> "GapSet":
        """Build from ``[(a, b), ...]``; the frontier defaults to the last right end."""
        arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
        if frontier is None:
            frontier = float(arr[-1, 1]) if len(arr) else 0.0
        if residual is None:
            residual = COMPLETE if frontier == 1.0 else UNRESOLVED
        return cls(arr[:, 0], arr[:, 1], frontier=frontier, residual=residual)

    def __len__(self):
        return len(self.lefts)

    @property
    def total_length(self) -> float:
        return math.fsum(self.lengths)

    @property
    def unresolved_mass(self) -> float:
        """Length of ``[0, 1]`` not covered by gaps and not known to be in the set."""
        if self.residual == IN_RANGE:
            return 0.0
        return max(0.0, 1.0 - self.total_length)

    def locate(self, points) -> np.ndarray:
        """Index of the gap containing each point, ``-1`` for points in the closed set.

        Gap endpoints belong to the closed set.
        """
        p = np.asarray(points, dtype=float)
        idx = np.searchsorted(self.lefts, p, side="left") - 1
        ok = idx >= 0
        safe = np.where(ok, idx, 0)
        if len(self.lefts):
            inside = ok & (p < self.rights[safe]) & (p > self.lefts[safe])
        else:
            inside = np.zeros(p.shape, dtype=bool)
        return np.where(inside, idx, -1)

    def check_resolved(self, points) -> None:
        if self.residual != UNRESOLVED or not np.size(points):
            return
        top = float(np.max(points))
        if top > self.frontier:
            raise UnresolvedRegionError(
                f"sample point {top!r} lies beyond the resolved frontier {self.frontier!r}",
                frontier=self.frontier, max_point=top)

    def restrict_epochs(self, t: float, frontier: float | None = None) -> "GapSet":
        """Gaps emitted up to time ``t``, resolved up to ``frontier``."""
        if self.epochs is None:
            raise PreconditionError("gap set carries no emission times")
        keep = self.epochs <= t
        if frontier is None:
            frontier = float(self.rights[keep][-1]) if keep.any() else 0.0
        return GapSet(self.lefts[keep], self.rights[keep], frontier=frontier, residual=UNRESOLVED,
                      lengths=self.lengths[keep], epochs=self.epochs[keep])


@dataclass(frozen=True)
class Composition:
    """Block sizes ordered from left to right."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(int(b) for b in self.blocks)
        if any(b < 1 for b in blocks):
            raise DomainError("blocks must be positive integers")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return sum(self.blocks)

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def multiplicities(self) -> dict:
        """``{r: K_r}`` for every part size ``r`` that occurs."""
        return dict(sorted(Counter(self.blocks).items()))

    def K_r(self, r: int) -> int:
        return sum(1 for b in self.blocks if b == r)

    def to_line(self) -> str:
        return ",".join(map(str, self.blocks))

    @classmethod
    def from_line(cls, line: str) -> "Composition":
        line = line.strip()
        return cls(tuple(int(tok) for tok in line.split(",")) if line else ())

    def __str__(self):
        return "(" + ",".join(map(str, self.blocks)) + ")"


def _block_starts(gid):
    """Mask of positions that open a new block (along the last axis)."""
    starts = np.ones(gid.shape, dtype=bool)
    starts[..., 1:] = (gid[..., 1:] != gid[..., :-1]) | (gid[..., 1:] < 0)
    return starts


def compose(gaps: GapSet, points) -> Composition:
    """Composition of the sorted ``points`` induced by ``gaps``.

    Raises
    ------
    UnresolvedRegionError
        If a point lies beyond an unresolved frontier.
    """
    p = np.sort(np.asarray(points, dtype=float))
    gaps.check_resolved(p)
    if not len(p):
        return Composition(())
    starts = np.flatnonzero(_block_starts(gaps.locate(p)))
    return Composition(tuple(np.diff(np.append(starts, len(p)))))


def part_counts(gaps: GapSet, points):
    """``(K, K_1)`` for one sorted sample or a batch with one sorted sample per row.

    Same block rule as :func:`compose`, without building the compositions.
    """
    p = np.asarray(points, dtype=float)
    gaps.check_resolved(p)
    if p.shape[-1] == 0:
        zero = np.zeros(p.shape[:-1], dtype=np.int64)
        return (zero, zero) if p.ndim > 1 else (0, 0)
    starts = _block_starts(gaps.locate(p))
    ends = np.ones(p.shape, dtype=bool)
    ends[..., :-1] = starts[..., 1:]
    K = starts.sum(axis=-1)
    K1 = (starts & ends).sum(axis=-1)
    return (K, K1) if p.ndim > 1 else (int(K), int(K1))


def sample_uniform(n: int, seed, replicate: int | None = None) -> np.ndarray:
    """``n`` sorted i.i.d. uniform points on ``[0, 1]``."""
    if n < 0:
        raise DomainError(f"sample size must be nonnegative, got {n}")
    return np.sort(make_rng(seed, replicate).random(int(n)))


def sample_poisson(rho: float, seed, replicate: int | None = None) -> np.ndarray:
    """Sorted atoms of a Poisson process of rate ``rho`` on ``[0, 1]``."""
    if not rho >= 0:
        raise DomainError(f"rate must be nonnegative, got {rho}")
    rng = make_rng(seed, replicate)
    return np.sort(rng.random(rng.poisson(rho)))


def partial_counts(gaps: GapSet, t: float, points, frontier: float | None = None):
    """``(K_n(t), {r: K_{n,r}(t)})``: blocks completed by time ``t``.

    Only gaps emitted by time ``t`` are used and only points up to the
    frontier ``phi(S_t)`` are composed; the incomplete block beyond the
    frontier is not counted.  Without an explicit ``frontier`` the right end
    of the last emitted gap is used, which equals ``phi(S_t)`` for drift-free
    paths.
    """
    sub = gaps.restrict_epochs(t, frontier)
    p = np.asarray(points, dtype=float)
    comp = compose(sub, p[p <= sub.frontier])
    return comp.K, comp.multiplicities


def _check_complete(gaps: GapSet, tol: float) -> np.ndarray:
    missing = 1.0 - gaps.total_length
    if missing > tol:
        raise PreconditionError(
            f"gap lengths sum to {gaps.total_length!r}; unresolved or range mass {missing:.3g} exceeds {tol:g}")
    return gaps.lengths


def conditional_expected_parts(gaps: GapSet, n: int, tol: float = 1e-6) -> float:
    """``E(K_n | gaps) = sum_i 1 - (1 - x_i)^n`` over the gap lengths ``x_i``.

    Requires a drift-free gap set whose lengths sum to 1 within ``tol``.
    """
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    x = _check_complete(gaps, tol)
    with np.errstate(divide="ignore"):
        return math.fsum(-np.expm1(n * np.log1p(-np.minimum(x, 1.0))))


def conditional_expected_r_parts(gaps: GapSet, n: int, r: int, tol: float = 1e-6) -> float:
    """``E(K_{n,r} | gaps) = sum_i C(n, r) x_i^r (1 - x_i)^(n - r)``."""
    if not 1 <= r <= n:
        raise DomainError(f"need 1 <= r <= n, got r={r}, n={n}")
    x = np.minimum(_check_complete(gaps, tol), 1.0)
    log_binom = special.gammaln(n + 1) - special.gammaln(r + 1) - special.gammaln(n - r + 1)
    return math.fsum(np.exp(log_binom + special.xlogy(r, x) + special.xlog1py(n - r, -x)))


def classify_singletons(gaps: GapSet, points):
    """Split singleton blocks into ``(genuine, occasional)``.

    A singleton is genuine when its point lies in the closed set and
    occasional when it is alone in a gap.
    """
    p = np.sort(np.asarray(points, dtype=float))
    gaps.check_resolved(p)
    if not len(p):
        return 0, 0
    gid = gaps.locate(p)
    starts = _block_starts(gid)
    ends = np.ones(len(p), dtype=bool)
    ends[:-1] = starts[1:]
    single = starts & ends
    genuine = int(np.count_nonzero(single & (gid < 0)))
    return genuine, int(np.count_nonzero(single)) - genuine


def write_compositions(compositions, target) -> None:
    """One composition per line, blocks as comma-separated integers."""
    own = isinstance(target, str)
    fh = open(target, "w") if own else target
    try:
        for comp in compositions:
            fh.write(comp.to_line() + "\n")
    finally:
        if own:
            fh.close()


def read_compositions(source) -> list:
    own = isinstance(source, str)
    fh = open(source) if own else source
    try:
        return [Composition.from_line(line) for line in fh]
    finally:
        if own:
            fh.close()
