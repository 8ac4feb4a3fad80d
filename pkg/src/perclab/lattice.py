"""Lattice regions, site indexing and threshold fields.

A region is ``[n_1] x ... x [n_d] x [2]^ell`` (1-based coordinates), stored
row-major with the long axes first and the doubled axes last.  With
``padded=True`` every long axis is extended by one site; the *core* of the
region (``[n]^d x 1^ell``) is always defined on the unpadded extents.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import math

import numpy as np

MAX_SITES = 2**31 - 1


class RegionError(ValueError):
    """Invalid region, site or configuration shape."""


@dataclass(frozen=True)
class GridShape:
    long_extents: tuple[int, ...]
    doubled_axes: int = 0
    padded: bool = False

    def __post_init__(self):
        ext = tuple(int(n) for n in self.long_extents)
        object.__setattr__(self, "long_extents", ext)
        if not ext:
            raise RegionError("need at least one long axis")
        if any(n < 1 for n in ext):
            raise RegionError(f"long extents must be >= 1, got {ext}")
        if self.doubled_axes < 0:
            raise RegionError("doubled_axes must be >= 0")
        total = math.prod(self.extents)
        if total > MAX_SITES:
            raise RegionError(f"region has {total} sites, limit is {MAX_SITES}")

    @property
    def d(self) -> int:
        return len(self.long_extents)

    @property
    def ell(self) -> int:
        return self.doubled_axes

    @property
    def dim(self) -> int:
        return self.d + self.ell

    @cached_property
    def extents(self) -> tuple[int, ...]:
        pad = 1 if self.padded else 0
        return tuple(n + pad for n in self.long_extents) + (2,) * self.doubled_axes

    @cached_property
    def size(self) -> int:
        return math.prod(self.extents)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        out = []
        s = 1
        for n in reversed(self.extents):
            out.append(s)
            s *= n
        return tuple(reversed(out))

    def contains(self, site: Sequence[int]) -> bool:
        if len(site) != self.dim:
            return False
        return all(1 <= c <= n for c, n in zip(site, self.extents))

    def index_of(self, site: Sequence[int]) -> int:
        if not self.contains(site):
            raise RegionError(f"site {tuple(site)} outside region {self.extents}")
        return int(sum((c - 1) * s for c, s in zip(site, self.strides)))

    def site_of(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise RegionError(f"index {index} outside [0, {self.size})")
        return tuple(int(c) + 1 for c in np.unravel_index(index, self.extents))

    def sites(self) -> Iterator[tuple[int, ...]]:
        for idx in np.ndindex(*self.extents):
            yield tuple(c + 1 for c in idx)

    def core_mask(self) -> np.ndarray:
        """Boolean mask of ``[n]^d x 1^ell`` over the (possibly padded) region."""
        mask = np.zeros(self.extents, dtype=bool)
        sl = tuple(slice(0, n) for n in self.long_extents) + (0,) * self.ell
        mask[sl] = True
        return mask

    def neighbor_count(self, site: Sequence[int]) -> int:
        """Closed-form degree in the induced grid graph."""
        if not self.contains(site):
            raise RegionError(f"site {tuple(site)} outside region")
        return sum((c > 1) + (c < n) for c, n in zip(site, self.extents))

    def neighbors(self, site: Sequence[int]) -> list[tuple[int, ...]]:
        if not self.contains(site):
            raise RegionError(f"site {tuple(site)} outside region")
        out = []
        for k, n in enumerate(self.extents):
            for step in (-1, 1):
                c = site[k] + step
                if 1 <= c <= n:
                    nb = list(site)
                    nb[k] = c
                    out.append(tuple(nb))
        return out


@dataclass(frozen=True)
class ThresholdRule:
    """Either ``Uniform(r)`` (``star=False``) or ``ModifiedStar(r, ell)``.

    Under ``ModifiedStar`` a site whose last ``ell`` coordinates are all 1 has
    threshold ``r``; every other site has ``r + ell``.
    """

    r: int
    ell: int = 0
    star: bool = True

    def __post_init__(self):
        if self.r < 1:
            raise RegionError("threshold r must be >= 1")
        if self.ell < 0:
            raise RegionError("ell must be >= 0")

    @classmethod
    def uniform(cls, r: int) -> "ThresholdRule":
        return cls(r=r, ell=0, star=False)

    @classmethod
    def modified_star(cls, r: int, ell: int) -> "ThresholdRule":
        return cls(r=r, ell=ell, star=True)

    @property
    def core_threshold(self) -> int:
        return self.r

    @property
    def other_threshold(self) -> int:
        return self.r + self.ell if self.star else self.r

    def __str__(self):
        return f"ModifiedStar({self.r}, {self.ell})" if self.star else f"Uniform({self.r})"


@dataclass(frozen=True)
class BootstrapStructure:
    shape: GridShape
    rule: ThresholdRule

    def __post_init__(self):
        if self.rule.star and self.rule.ell != self.shape.ell:
            raise RegionError(
                f"rule has ell={self.rule.ell} but region has {self.shape.ell} doubled axes"
            )

    @property
    def size(self) -> int:
        return self.shape.size

    def threshold_of(self, site: Sequence[int]) -> int:
        if not self.shape.contains(site):
            raise RegionError(f"site {tuple(site)} outside region {self.shape.extents}")
        if not self.rule.star:
            return self.rule.r
        tail = site[self.shape.d:]
        return self.rule.r if all(c == 1 for c in tail) else self.rule.r + self.rule.ell

    def threshold_field(self) -> np.ndarray:
        """Thresholds as a uint8 array with the region's extents."""
        out = np.full(self.shape.extents, self.rule.other_threshold, dtype=np.uint8)
        if self.rule.star and self.shape.ell:
            out[(Ellipsis,) + (0,) * self.shape.ell] = self.rule.core_threshold
        else:
            out[...] = self.rule.core_threshold
        return out

    @cached_property
    def _kernel_args(self) -> tuple:
        ext = np.asarray(self.shape.extents, dtype=np.int64)
        strides = np.asarray(self.shape.strides, dtype=np.int64)
        core_period = 2**self.shape.ell if self.rule.star else 1
        return ext, strides, core_period, self.rule.core_threshold, self.rule.other_threshold

    def kernel_args(self) -> tuple:
        """Plain arrays/ints consumed by the compiled closure kernels."""
        return self._kernel_args


def build_structure(n: int, d: int, ell: int, r: int, padded: bool = False) -> BootstrapStructure:
    """``C*(n, d, ell, r)`` over ``[n(+1)]^d x [2]^ell``."""
    if d < 1:
        raise RegionError("d must be >= 1")
    if n < 1:
        raise RegionError("n must be >= 1")
    shape = GridShape((n,) * d, ell, padded)
    return BootstrapStructure(shape, ThresholdRule.modified_star(r, ell))


def threshold_of(structure: BootstrapStructure, site: Sequence[int]) -> int:
    return structure.threshold_of(site)


@dataclass(frozen=True, eq=False)
class Configuration:
    """A set of infected sites, one bit per site (little-endian packed, row-major)."""

    shape: GridShape
    bits: np.ndarray = field(repr=False)
    count: int = -1

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.size != (self.shape.size + 7) // 8:
            raise RegionError("bit array length does not match region size")
        spare = bits.size * 8 - self.shape.size
        if spare and bits[-1] >> (8 - spare):
            raise RegionError("padding bits past the last site must be zero")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        pop = int(np.bitwise_count(bits).sum(dtype=np.int64))
        if self.count not in (-1, pop):
            raise RegionError(f"reported count {self.count} != popcount {pop}")
        object.__setattr__(self, "count", pop)

    @classmethod
    def from_mask(cls, shape: GridShape, mask) -> "Configuration":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != shape.extents and mask.size != shape.size:
            raise RegionError(f"mask shape {mask.shape} does not match {shape.extents}")
        return cls(shape, np.packbits(mask.ravel(), bitorder="little"))

    @classmethod
    def from_sites(cls, shape: GridShape, sites) -> "Configuration":
        mask = np.zeros(shape.extents, dtype=bool)
        for s in sites:
            mask[tuple(c - 1 for c in _checked(shape, s))] = True
        return cls.from_mask(shape, mask)

    @classmethod
    def empty(cls, shape: GridShape) -> "Configuration":
        return cls(shape, np.zeros((shape.size + 7) // 8, dtype=np.uint8))

    @classmethod
    def full(cls, shape: GridShape) -> "Configuration":
        return cls.from_mask(shape, np.ones(shape.extents, dtype=bool))

    def mask(self) -> np.ndarray:
        flat = np.unpackbits(self.bits, bitorder="little", count=self.shape.size).astype(bool)
        return flat.reshape(self.shape.extents)

    def __contains__(self, site) -> bool:
        i = self.shape.index_of(site)
        return bool((self.bits[i >> 3] >> (i & 7)) & 1)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))

    def issubset(self, other: "Configuration") -> bool:
        _same_shape(self, other)
        return not np.any(self.bits & ~other.bits)

    def __or__(self, other: "Configuration") -> "Configuration":
        _same_shape(self, other)
        return Configuration(self.shape, self.bits | other.bits)

    def __and__(self, other: "Configuration") -> "Configuration":
        _same_shape(self, other)
        return Configuration(self.shape, self.bits & other.bits)


def _checked(shape: GridShape, site):
    if not shape.contains(site):
        raise RegionError(f"site {tuple(site)} outside region {shape.extents}")
    return site


def _same_shape(a: Configuration, b: Configuration):
    if a.shape != b.shape:
        raise RegionError("configurations live on different regions")
