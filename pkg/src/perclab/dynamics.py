"""Bootstrap closure and the (semi-)percolation predicates.

The closure engine keeps one byte per site of infected-neighbour counters and
one packed bit per site of state.  Sites are pushed onto a FIFO exactly once,
when their counter first reaches their threshold; the FIFO is consumed
generation by generation, so the recorded generation numbers coincide with the
synchronous sequence ``A_{t+1} = A_t u {v : |N(v) n A_t| >= r(v)}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .lattice import BootstrapStructure, Configuration, GridShape, RegionError


@nb.njit(cache=True, nogil=True)
def _seed_queue(bits, size, queue):
    tail = 0
    for byte_i in range(bits.shape[0]):
        b = bits[byte_i]
        if b == 0:
            continue
        for k in range(8):
            if (b >> k) & 1:
                idx = byte_i * 8 + k
                if idx < size:
                    queue[tail] = idx
                    tail += 1
    return tail


@nb.njit(cache=True, nogil=True)
def _spread(ext, strides, core_period, t_core, t_other,
            state, counters, queue, starts, head, tail, gen_end, n_starts):
    """Advance the frontier until it empties or a buffer runs out of room.

    Returns ``(head, tail, gen_end, n_starts, done)``; on ``done == False`` the
    caller grows ``queue``/``starts`` and calls again with the same counters.
    """
    dim = ext.shape[0]
    cap = queue.shape[0]
    while head < tail:
        if head == gen_end:
            if n_starts >= starts.shape[0]:
                return head, tail, gen_end, n_starts, False
            starts[n_starts] = head
            n_starts += 1
            gen_end = tail
        if tail + 2 * dim > cap:
            return head, tail, gen_end, n_starts, False
        v = queue[head]
        head += 1
        for k in range(dim):
            s = strides[k]
            c = (v // s) % ext[k]
            for step in (-1, 1):
                if step < 0:
                    if c == 0:
                        continue
                    w = v - s
                else:
                    if c == ext[k] - 1:
                        continue
                    w = v + s
                if (state[w >> 3] >> (w & 7)) & 1:
                    continue
                counters[w] += 1
                thr = t_core if w % core_period == 0 else t_other
                if counters[w] >= thr:
                    state[w >> 3] |= np.uint8(1 << (w & 7))
                    queue[tail] = w
                    tail += 1
    return head, tail, gen_end, n_starts, True


@nb.njit(cache=True, nogil=True)
def _visit(v, ext, strides, core_period, t_core, t_other, state, counters, ring, tail):
    cap = ring.shape[0]
    for k in range(ext.shape[0]):
        s = strides[k]
        c = (v // s) % ext[k]
        for step in (-1, 1):
            if step < 0:
                if c == 0:
                    continue
                w = v - s
            else:
                if c == ext[k] - 1:
                    continue
                w = v + s
            if (state[w >> 3] >> (w & 7)) & 1:
                continue
            counters[w] += 1
            thr = t_core if w % core_period == 0 else t_other
            if counters[w] >= thr:
                state[w >> 3] |= np.uint8(1 << (w & 7))
                ring[tail % cap] = w
                tail += 1
    return tail


@nb.njit(cache=True, nogil=True)
def _spread_ring(ext, strides, core_period, t_core, t_other, init_bits, size,
                 state, counters, ring, scan, head, tail, gen_end, rounds):
    """Frontier spread without recording the infection order.

    Generation 0 is read straight from ``init_bits`` (``scan`` is the resume
    position); later generations live in the circular buffer ``ring`` with
    absolute positions ``head <= tail``.
    """
    dim = ext.shape[0]
    cap = ring.shape[0]
    while scan < size:
        if (init_bits[scan >> 3] >> (scan & 7)) & 1:
            if tail - head + 2 * dim > cap:
                return scan, head, tail, gen_end, rounds, False
            tail = _visit(scan, ext, strides, core_period, t_core, t_other,
                          state, counters, ring, tail)
        scan += 1
    while head < tail:
        if head == gen_end:
            rounds += 1
            gen_end = tail
        if tail - head + 2 * dim > cap:
            return scan, head, tail, gen_end, rounds, False
        v = ring[head % cap]
        head += 1
        tail = _visit(v, ext, strides, core_period, t_core, t_other,
                      state, counters, ring, tail)
    return scan, head, tail, gen_end, rounds, True


@nb.njit(cache=True)
def _brute_step(mask, thr, ext, strides):
    # one synchronous update on a flat boolean array (oracle path)
    n = mask.shape[0]
    dim = ext.shape[0]
    out = mask.copy()
    for v in range(n):
        if mask[v]:
            continue
        cnt = 0
        for k in range(dim):
            s = strides[k]
            c = (v // s) % ext[k]
            if c > 0 and mask[v - s]:
                cnt += 1
            if c < ext[k] - 1 and mask[v + s]:
                cnt += 1
        if cnt >= thr[v]:
            out[v] = True
    return out


@dataclass(frozen=True, eq=False)
class ClosureResult:
    """Fixed point of the bootstrap dynamics.

    ``order`` lists every infected site (flat index) in infection order and
    ``starts[g]`` is the offset in ``order`` where generation ``g`` begins.
    """

    final: Configuration
    rounds: int
    infected_count: int
    order: np.ndarray | None = field(default=None, repr=False)
    starts: np.ndarray | None = field(default=None, repr=False)

    @property
    def generation(self) -> np.ndarray | None:
        """Per-site generation (int32, region extents); ``-1`` means never infected.

        ``None`` when the closure ran with ``track_generations=False``.
        """
        if self.order is None:
            return None
        gen = np.full(self.final.shape.size, -1, dtype=np.int32)
        bounds = list(self.starts) + [len(self.order)]
        for g in range(len(self.starts)):
            gen[self.order[bounds[g]:bounds[g + 1]]] = g
        return gen.reshape(self.final.shape.extents)


def closure(structure: BootstrapStructure, initial: Configuration,
            track_generations: bool = True) -> ClosureResult:
    """Compute ``[A]`` for the initial configuration ``A``.

    With ``track_generations=False`` the infection order is not kept and the
    frontier lives in a ring buffer, so peak memory is about 1.25 bytes per
    site plus the largest frontier.
    """
    if initial.shape != structure.shape:
        raise RegionError(
            f"configuration region {initial.shape.extents} does not match "
            f"structure region {structure.shape.extents}"
        )
    size = structure.size
    ext, strides, period, t_core, t_other = structure.kernel_args()
    state = initial.bits.copy()
    counters = np.zeros(size, dtype=np.uint8)
    dim = len(ext)
    if not track_generations:
        return _closure_untracked(structure, initial, state, counters)
    count = initial.count
    cap = min(size + 2 * dim, max(2 * count, 4096))
    queue = np.empty(cap, dtype=np.int32)
    tail = _seed_queue(initial.bits, size, queue)
    starts = np.empty(64, dtype=np.int64)
    head, gen_end, n_starts = 0, 0, 0
    while True:
        head, tail, gen_end, n_starts, done = _spread(
            ext, strides, period, t_core, t_other,
            state, counters, queue, starts, head, tail, gen_end, n_starts,
        )
        if done:
            break
        if tail + 2 * dim > queue.shape[0]:
            queue = _grown(queue, min(size + 2 * dim, 2 * queue.shape[0]), tail)
        if n_starts >= starts.shape[0]:
            starts = _grown(starts, 2 * starts.shape[0], n_starts)
    del counters
    final = Configuration(structure.shape, state)
    starts = starts[:n_starts].copy()
    return ClosureResult(
        final=final,
        rounds=max(n_starts - 1, 0),
        infected_count=int(tail),
        order=queue[:tail].copy(),
        starts=starts,
    )


def _closure_untracked(structure, initial, state, counters) -> ClosureResult:
    size = structure.size
    ext, strides, period, t_core, t_other = structure.kernel_args()
    dim = len(ext)
    ring = np.empty(min(size + 2 * dim, 4096), dtype=np.int32)
    scan = head = tail = gen_end = rounds = rebased = 0
    while True:
        scan, head, tail, gen_end, rounds, done = _spread_ring(
            ext, strides, period, t_core, t_other, initial.bits, size,
            state, counters, ring, scan, head, tail, gen_end, rounds,
        )
        if done:
            break
        live = np.roll(ring, -(head % ring.shape[0]))[: tail - head]
        ring = np.empty(2 * ring.shape[0], dtype=np.int32)
        ring[: tail - head] = live
        rebased += head
        gen_end -= head
        tail -= head
        head = 0
    final = Configuration(structure.shape, state)
    return ClosureResult(final=final, rounds=rounds, infected_count=initial.count + rebased + tail)


def _grown(buf: np.ndarray, new_len: int, used: int) -> np.ndarray:
    out = np.empty(new_len, dtype=buf.dtype)
    out[:used] = buf[:used]
    return out


def brute_force_closure(structure: BootstrapStructure, initial: Configuration) -> tuple[np.ndarray, int]:
    """Synchronous fixed-point iteration; returns ``(mask, rounds)``.

    Independent of the frontier engine and quadratic in the worst case; meant
    for small regions in tests and oracles.
    """
    if initial.shape != structure.shape:
        raise RegionError("configuration and structure regions differ")
    ext, strides, *_ = structure.kernel_args()
    thr = structure.threshold_field().ravel().astype(np.int64)
    mask = initial.mask().ravel()
    rounds = 0
    while True:
        nxt = _brute_step(mask, thr, ext, strides)
        if np.array_equal(nxt, mask):
            return mask.reshape(structure.shape.extents), rounds
        mask = nxt
        rounds += 1


def _core_covered(shape: GridShape, final_mask: np.ndarray) -> bool:
    sl = tuple(slice(0, n) for n in shape.long_extents) + (0,) * shape.ell
    return bool(final_mask[sl].all())


def semi_percolates(structure: BootstrapStructure, initial: Configuration) -> bool:
    """True iff ``[A]`` contains the unpadded core ``[n]^d x 1^ell``."""
    if structure.rule.star is False and structure.shape.ell:
        raise RegionError("semi-percolation needs a ModifiedStar rule (or Uniform with ell=0)")
    res = closure(structure, initial, track_generations=False)
    return _core_covered(structure.shape, res.final.mask())


def percolates(structure: BootstrapStructure, initial: Configuration) -> bool:
    """True iff ``[A]`` is the whole region."""
    return closure(structure, initial, track_generations=False).infected_count == structure.size


def _normalise_box(shape: GridShape, box) -> tuple[tuple[int, int], ...]:
    box = [tuple(int(x) for x in b) for b in box]
    if len(box) == shape.d:
        box += [(1, 2)] * shape.ell
    if len(box) != shape.dim:
        raise RegionError(f"box needs {shape.d} (or {shape.dim}) axis ranges, got {len(box)}")
    for k, ((lo, hi), n) in enumerate(zip(box, shape.extents)):
        if not 1 <= lo <= hi <= n:
            raise RegionError(f"box axis {k} range {(lo, hi)} outside [1, {n}]")
        if k >= shape.d and (lo, hi) != (1, 2):
            raise RegionError("a rectangle must span the full [2] range on every doubled axis")
    return tuple(box)


def restrict(structure: BootstrapStructure, initial: Configuration, box) -> tuple[BootstrapStructure, Configuration, np.ndarray]:
    """The sub-structure induced by ``box`` with ``A`` restricted to it.

    Returns ``(substructure, subconfig, core)`` where ``core`` masks the
    box's sites that lie in ``[n]^d x 1^ell`` of the parent region.
    """
    if initial.shape != structure.shape:
        raise RegionError("configuration and structure regions differ")
    box = _normalise_box(structure.shape, box)
    shape = structure.shape
    sl = tuple(slice(lo - 1, hi) for lo, hi in box)
    sub_mask = initial.mask()[sl]
    sub_shape = GridShape(tuple(hi - lo + 1 for lo, hi in box[:shape.d]), shape.ell, False)
    sub = BootstrapStructure(sub_shape, structure.rule)
    core = shape.core_mask()[sl]
    return sub, Configuration.from_mask(sub_shape, sub_mask), core


def internally_semi_spanned(structure: BootstrapStructure, box, initial: Configuration) -> bool:
    """True iff ``[S n A]``, evolved inside ``S`` only, covers ``S n ([n]^d x 1^ell)``."""
    sub, sub_init, core = restrict(structure, initial, box)
    final = closure(sub, sub_init, track_generations=False).final.mask()
    return bool(final[core].all())
