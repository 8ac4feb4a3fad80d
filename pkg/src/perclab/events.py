"""Detectors for the structural events D_a^b, T_a^bvec and the growth event.

All detectors read the *initial* configuration: a set is occupied when it
contains at least one initially infected site.  Coordinates are 1-based; the
last ``ell`` axes are the doubled ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .lattice import BootstrapStructure, Configuration
from .lgaps import has_lgap


class EventError(ValueError):
    pass


def _as_mask(config) -> np.ndarray:
    return config.mask() if isinstance(config, Configuration) else np.asarray(config, dtype=bool)


def _layer(ell: int, j: int | None = None) -> tuple[int, ...]:
    # index of 1^ell, or of 1^ell + e_j (j is 1-based)
    idx = [0] * ell
    if j is not None:
        idx[j - 1] = 1
    return tuple(idx)


def occupied(mask: np.ndarray, ranges: Sequence[tuple[int, int]], layer: tuple[int, ...]) -> bool:
    """Is the cuboid ``prod [lo, hi] x {layer}`` occupied?  Empty ranges give False."""
    if any(hi < lo for lo, hi in ranges):
        return False
    sl = tuple(slice(lo - 1, hi) for lo, hi in ranges) + layer
    return bool(mask[sl].any())


def _slab(d: int, t: int, i: int, s: int) -> list[tuple[int, int]]:
    # [s]^{t-1} x {i} x [s]^{d-t}, t 0-based here
    return [(i, i) if k == t else (1, s) for k in range(d)]


def _sequence_ok(mask, d, ell, t, idx_range, side) -> bool:
    """No L-gap in ``{U_i(t, side(i))} u {V_i^(j)(t, side(i))}`` over ``idx_range``.

    ``idx_range`` lists the ``U`` indices; the ``V`` events exist for all but
    the last one.
    """
    idx = list(idx_range)
    if len(idx) < 2:
        return True
    U = [occupied(mask, _slab(d, t, i, side(i)), _layer(ell)) for i in idx]
    V = [[occupied(mask, _slab(d, t, i, side(i)), _layer(ell, j)) for j in range(1, ell + 1)]
         for i in idx[:-1]]
    return not has_lgap(U, V if ell else ())


def _limit(structure: BootstrapStructure, allow_padding: bool) -> int:
    ext = structure.shape.extents[: structure.shape.d] if allow_padding else structure.shape.long_extents
    return min(ext)


def detect_D(config, structure: BootstrapStructure, a: int, b: int,
             allow_padding: bool = False) -> bool:
    """Diagonal growth from ``[a]^d x 1^ell`` to ``[b]^d x 1^ell`` meets no L-gap.

    For each direction ``t`` the sequence is ``[i-1]^{t-1} x {i} x [i-1]^{d-t}``
    (``a+1 <= i <= b``) on layer ``1^ell``, with companions on the layers
    ``1^ell + e_j`` for ``a+1 <= i <= b-1``.
    """
    if not 2 <= a <= b:
        raise EventError(f"D_a^b needs 2 <= a <= b, got a={a}, b={b}")
    if b > _limit(structure, allow_padding):
        raise EventError(f"b={b} outside the region")
    if b <= a + 1:
        return True
    mask = _as_mask(config)
    d, ell = structure.shape.d, structure.shape.ell
    return all(_sequence_ok(mask, d, ell, t, range(a + 1, b + 1), lambda i: i - 1) for t in range(d))


@dataclass(frozen=True)
class GapVector:
    a: int
    bvec: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bvec", tuple(int(x) for x in self.bvec))
        if not self.bvec:
            raise EventError("bvec needs d-1 >= 1 entries")
        if self.a < 1 or min(self.bvec) < 1:
            raise EventError("coordinates are 1-based")
        if self.b < self.a + 3:
            raise EventError(f"need max(bvec) >= a + 3, got a={self.a}, b={self.b}")

    @property
    def b(self) -> int:
        return max(self.bvec)


def T_clauses(config, structure: BootstrapStructure, gap: GapVector,
              allow_padding: bool = False) -> dict[str, bool]:
    """Truth value of each clause (i)-(vii) of ``T_a^bvec``."""
    d, ell = structure.shape.d, structure.shape.ell
    if len(gap.bvec) != d - 1:
        raise EventError(f"bvec must have d-1 = {d - 1} entries")
    a, b, bvec = gap.a, gap.b, gap.bvec
    if b > _limit(structure, allow_padding):
        raise EventError(f"b={b} outside the region")
    mask = _as_mask(config)
    base = [(1, bt - 1) for bt in bvec]
    out = {}
    out["i"] = not (occupied(mask, base + [(a + 1, a + 1)], _layer(ell))
                    or occupied(mask, base + [(a + 2, a + 2)], _layer(ell)))
    out["ii"] = not any(occupied(mask, base + [(a + 1, a + 1)], _layer(ell, j))
                        for j in range(1, ell + 1))
    out["iii"] = all(_sequence_ok(mask, d, ell, t, range(a + 1, b + 1), lambda i: a)
                     for t in range(d - 1))
    out["iv"] = all(occupied(mask, _slab(d, t, b, a), _layer(ell)) for t in range(d - 1))
    site = tuple(x - 1 for x in bvec) + (a + 1,) + _layer(ell)
    out["v"] = bool(mask[site])
    out["vi"] = _sequence_ok(mask, d, ell, d - 1, range(a + 3, b + 1), lambda i: b)
    out["vii"] = occupied(mask, _slab(d, d - 1, b, b), _layer(ell))
    return out


def detect_T(config, structure: BootstrapStructure, gap: GapVector,
             allow_padding: bool = False) -> bool:
    return all(T_clauses(config, structure, gap, allow_padding).values())


@dataclass(frozen=True)
class GrowthSpec:
    B: int
    gaps: tuple[GapVector, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gaps", tuple(self.gaps))
        prev_b = None
        for gv in self.gaps:
            if gv.b - gv.a < 3:
                raise EventError("every gap needs b_i - a_i >= 3")
            if prev_b is None:
                if gv.a < 2:
                    raise EventError("need a_1 >= 2")
            elif gv.a < prev_b:
                raise EventError("gaps overlap or are out of order (need b_i <= a_{i+1})")
            prev_b = gv.b
        if prev_b is not None and prev_b > self.B:
            raise EventError("need b_m <= B")
        if self.B < 2:
            raise EventError("need B >= 2")


def growth_sites(d: int, ell: int, B: int) -> list[tuple[int, ...]]:
    """The seed ``1^d x 1^ell`` followed by every ``x^(t)`` and ``y^(t)`` (1-based)."""
    tail = (1,) * ell
    seed = (1,) * d + tail
    xs = [tuple(2 if k == t else 1 for k in range(d)) + tail for t in range(d)]
    ys = [tuple(1 if k == t else B for k in range(d)) + tail for t in range(d)]
    return [seed] + xs + ys


def detect_growth(config, structure: BootstrapStructure, spec: GrowthSpec,
                  allow_padding: bool = False) -> bool:
    d, ell = structure.shape.d, structure.shape.ell
    if spec.B > _limit(structure, allow_padding):
        raise EventError(f"B={spec.B} outside the region")
    mask = _as_mask(config)
    for s in growth_sites(d, ell, spec.B):
        if not mask[tuple(c - 1 for c in s)]:
            return False
    ends = [2] + [gv.b for gv in spec.gaps]
    starts = [gv.a for gv in spec.gaps] + [spec.B]
    for lo, hi in zip(ends, starts):
        if not detect_D(mask, structure, lo, hi, allow_padding):
            return False
    return all(detect_T(mask, structure, gv, allow_padding) for gv in spec.gaps)


def all_growth_specs(B: int, d: int) -> Iterator[GrowthSpec]:
    """Every valid ``GrowthSpec`` with parameter ``B`` (any ``m >= 0``)."""

    def bvecs(b):
        for rest in itertools.product(range(1, b + 1), repeat=d - 2):
            for pos in range(d - 1):
                v = list(rest[:pos]) + [b] + list(rest[pos:])
                if pos == 0 or max(v[:pos]) < b:
                    yield tuple(v)

    def rec(start):
        yield ()
        for a in range(start, B + 1):
            for b in range(a + 3, B + 1):
                for bv in bvecs(b):
                    for rest in rec(b):
                        yield (GapVector(a, bv),) + rest

    for gaps in rec(2):
        yield GrowthSpec(B, gaps)
