"""L-gap avoidance probabilities and the gap-sequence counting bound.

An event sequence is ``U_1..U_{m+1}`` together with ``V_i^(1..ell)`` for
``i in [m]``; an L-gap at ``i`` means ``U_i``, ``U_{i+1}`` and every
``V_i^(j)`` fail.  ``U_i`` and the ``V_i^(j)`` share the probability ``u_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytic import beta


class LgapError(ValueError):
    pass


@dataclass(frozen=True)
class EventSeqSpec:
    m: int
    ell: int
    u: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(x) for x in self.u))
        if self.m < -1:
            raise LgapError("m must be >= -1")
        if self.ell < 0:
            raise LgapError("ell must be >= 0")
        if len(self.u) != self.m + 1:
            raise LgapError(f"need m+1 = {self.m + 1} probabilities, got {len(self.u)}")
        if any(not 0 < x < 1 for x in self.u):
            raise LgapError("every u_i must lie in (0, 1)")

    @property
    def nondecreasing(self) -> bool:
        return all(a <= b for a, b in zip(self.u, self.u[1:]))

    @property
    def n_events(self) -> int:
        return (self.m + 1) + max(self.m, 0) * self.ell


def has_lgap(U: Sequence[bool], V: Sequence[Sequence[bool]] = ()) -> bool:
    """Literal gap predicate on outcomes.

    ``U`` holds ``m+1`` outcomes, ``V[i]`` the ``ell`` companion outcomes of
    position ``i`` (0-based, ``len(V) == m`` or empty when ``ell == 0``).
    """
    m = len(U) - 1
    for i in range(m):
        if U[i] or U[i + 1]:
            continue
        if len(V) and any(V[i]):
            continue
        return True
    return False


def lgap_exact(spec: EventSeqSpec) -> float:
    """``P(no L-gap)`` by a two-state chain over the outcomes of the ``U_i``."""
    if spec.m <= 0:
        return 1.0
    u = spec.u
    # probability mass of "no gap so far" split by whether the last U occurred
    on, off = u[0], 1.0 - u[0]
    for i in range(spec.m):
        rescue = 1.0 - (1.0 - u[i]) ** spec.ell  # some V_i occurs
        nxt = u[i + 1]
        new_on = (on + off) * nxt
        new_off = (on + off * rescue) * (1.0 - nxt)
        on, off = new_on, new_off
    return min(max(on + off, 0.0), 1.0)


def lgap_enumerate(spec: EventSeqSpec, max_events: int = 24) -> float:
    """Sum over all outcome vectors, testing the gap predicate literally."""
    n = spec.n_events
    if n > max_events:
        raise LgapError(f"{n} events exceed the enumeration limit of {max_events}")
    if spec.m <= 0:
        return 1.0
    m, ell = spec.m, spec.ell
    # event order: U_1..U_{m+1}, then V_1^(1..ell), ..., V_m^(1..ell)
    probs = np.array(list(spec.u) + [spec.u[i] for i in range(m) for _ in range(ell)])
    total = 0.0
    chunk = 1 << min(n, 20)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, start + chunk, dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
        weight = np.prod(np.where(bits, probs, 1.0 - probs), axis=1)
        U = bits[:, : m + 1]
        gap = np.zeros(len(codes), dtype=bool)
        for i in range(m):
            blocked = ~U[:, i] & ~U[:, i + 1]
            if ell:
                blocked &= ~bits[:, m + 1 + i * ell: m + 1 + (i + 1) * ell].any(axis=1)
            gap |= blocked
        total += math.fsum(weight[~gap])
    return total


def lgap_lower_bound(spec: EventSeqSpec) -> float:
    """``prod_i beta_{ell+1}(u_i)``; only asserted for nondecreasing ``u``."""
    if not spec.nondecreasing:
        raise LgapError("the product bound needs a nondecreasing u sequence")
    if not spec.u:
        return 1.0
    return float(np.prod(beta(spec.ell + 1, np.array(spec.u))))


# ---------------------------------------------------------------------------
# counting gap sequences


def _snap(x: float) -> float:
    # p^{-1/(d-1)} lands a few ulps off integers such as 25 or 50
    r = round(x)
    return float(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else x


def sequence_window(p: float, d: int) -> tuple[int, int, float]:
    """Integer range ``[ceil(p^{-1/(d-1)}), floor(2 p^{-1/(d-1)})]`` and the max gap width."""
    if not 0 < p < 1:
        raise LgapError("p must be in (0, 1)")
    if d < 2:
        raise LgapError("d must be >= 2")
    s = p ** (-1.0 / (d - 1))
    lo = math.ceil(_snap(s))
    hi = math.floor(_snap(2 * s))
    width = _snap(p ** (-1.0 / (2 * d - 2)))
    return lo, hi, width


def bvec_multiplicity(b: int, d: int) -> int:
    """Number of ``bvec in [b]^{d-1}`` whose largest entry is exactly ``b``."""
    return b ** (d - 1) - (b - 1) ** (d - 1)


@dataclass(frozen=True)
class GapCount:
    count: int
    bound: float
    lo: int
    hi: int
    max_width: float

    @property
    def holds(self) -> bool:
        return self.count >= self.bound


def count_gap_sequences(p: float, d: int, c: float, m: int, budget: int = 10**7) -> GapCount:
    """Exact number of sequences ``(a_i, bvec_i)_{i=1..m}`` in the window.

    Constraints: ``lo <= a_1 < b_1 <= a_2 < ... < b_m <= hi`` with
    ``3 <= b_i - a_i <= p^{-1/(2d-2)}`` and ``b_i = max(bvec_i)``; the other
    ``d-2`` entries of ``bvec_i`` range over ``[b_i]``.  Counted by dynamic
    programming over the ``(a_i, b_i)`` skeleton, each ``b_i`` weighted by
    :func:`bvec_multiplicity`.
    """
    if m < 1:
        raise LgapError("m must be >= 1")
    if c <= 0:
        raise LgapError("c must be positive")
    lo, hi, width = sequence_window(p, d)
    if lo > hi:
        raise LgapError(f"empty window [{lo}, {hi}] (p too large)")
    if (hi - lo + 1) * max(math.floor(width) - 2, 0) * m > budget:
        raise LgapError("enumeration budget exceeded")
    pairs = [(a, b) for a in range(lo, hi + 1) for b in range(a + 3, hi + 1) if b - a <= width]
    if not pairs:
        raise LgapError(f"no admissible gap in [{lo}, {hi}] with width <= {width:g} (p too large)")
    # ways[b] = number of valid prefixes whose last gap ends at b
    ways = {}
    for a, b in pairs:
        ways[b] = ways.get(b, 0) + bvec_multiplicity(b, d)
    for _ in range(m - 1):
        nxt = {}
        for a, b in pairs:
            prefix = sum(w for e, w in ways.items() if e <= a)
            if prefix:
                nxt[b] = nxt.get(b, 0) + prefix * bvec_multiplicity(b, d)
        ways = nxt
    count = sum(ways.values())
    return GapCount(count, (1.0 / (4 * c * p)) ** m, lo, hi, width)


def enumerate_gap_sequences(p: float, d: int, m: int):
    """Yield every valid sequence literally (``[(a, bvec), ...]``); for small cases."""
    import itertools

    lo, hi, width = sequence_window(p, d)

    def rec(start, k):
        if k == 0:
            yield []
            return
        for a in range(start, hi + 1):
            for bv in itertools.product(range(1, hi + 1), repeat=d - 1):
                b = max(bv)
                if not (3 <= b - a <= width and b <= hi):
                    continue
                for rest in rec(b, k - 1):
                    yield [(a, bv)] + rest

    yield from rec(lo, m)
