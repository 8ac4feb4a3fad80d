"""Reproducible sampling, Monte Carlo estimators and small exact oracles.

Every trial draws its randomness from a Philox counter-based generator keyed
by ``(master_seed, trial_index)``; site ``i`` receives the ``i``-th double of
that stream.  A trial is therefore a pure function of its key, so estimates do
not depend on the number of workers or the order in which trials run.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numba as nb
import numpy as np

from .dynamics import closure, semi_percolates
from .events import EventError, GapVector, GrowthSpec, detect_D, detect_growth, detect_T
from .lattice import BootstrapStructure, Configuration, GridShape, build_structure

RNG_ID = "numpy.Philox4x64-10;key=(master_seed,trial);double53-per-site"
SEED_MASK = (1 << 64) - 1
_CHUNK = 1 << 16


class EstimationError(ValueError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PERCLAB_WORKERS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# randomness


def trial_generator(master_seed: int, trial: int) -> np.random.Generator:
    if not 0 <= master_seed <= SEED_MASK:
        raise EstimationError("master_seed must fit in 64 bits")
    if trial < 0:
        raise EstimationError("trial index must be >= 0")
    key = np.array([master_seed, trial], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_field(shape: GridShape, master_seed: int, trial: int) -> np.ndarray:
    """Per-site uniforms in ``[0, 1)`` with the region's extents."""
    return trial_generator(master_seed, trial).random(shape.size).reshape(shape.extents)


def _check_p(p: float):
    if not 0.0 <= p <= 1.0:
        raise EstimationError(f"p must be in [0, 1], got {p}")


def sample_config(shape: GridShape, p: float, master_seed: int, trial: int,
                  mode: str = "direct") -> Configuration:
    """``A ~ Bin(region, p)``; site ``v`` is infected iff ``field(v) < p``.

    ``direct`` streams the field in chunks straight into packed bits;
    ``coupled`` materialises the whole field first.  Both read the same
    stream, so they return the same configuration.
    """
    _check_p(p)
    if mode == "coupled":
        return Configuration.from_mask(shape, uniform_field(shape, master_seed, trial) < p)
    if mode != "direct":
        raise EstimationError(f"unknown sampling mode {mode!r}")
    gen = trial_generator(master_seed, trial)
    size = shape.size
    bits = np.empty((size + 7) // 8, dtype=np.uint8)
    for start in range(0, size, _CHUNK):  # _CHUNK is a multiple of 8
        k = min(_CHUNK, size - start)
        bits[start // 8: (start + k + 7) // 8] = np.packbits(gen.random(k) < p, bitorder="little")
    return Configuration(shape, bits)


# ---------------------------------------------------------------------------
# records and intervals


def wilson_interval(successes: int, trials: int, confidence: float = 0.99) -> tuple[float, float]:
    if trials < 1:
        raise EstimationError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise EstimationError("successes must lie in [0, trials]")
    if not 0 < confidence < 1:
        raise EstimationError("confidence must be in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    ph = successes / trials
    z2n = z * z / trials
    centre = (ph + z2n / 2) / (1 + z2n)
    half = z * math.sqrt(ph * (1 - ph) / trials + z2n / (4 * trials)) / (1 + z2n)
    lo = 0.0 if successes == 0 else min(max(centre - half, 0.0), ph)
    hi = 1.0 if successes == trials else max(min(centre + half, 1.0), ph)
    return lo, hi


@dataclass
class EstimateRecord:
    params: dict
    trials: int
    successes: int
    p_hat: float
    ci_low: float
    ci_high: float
    confidence: float
    master_seed: int
    rng_id: str = RNG_ID
    wall_time: float = 0.0

    @classmethod
    def build(cls, params, trials, successes, confidence, master_seed, wall_time=0.0):
        lo, hi = wilson_interval(successes, trials, confidence)
        return cls(dict(params), trials, successes, successes / trials, lo, hi,
                   confidence, master_seed, RNG_ID, wall_time)

    @property
    def radius(self) -> float:
        return max(self.p_hat - self.ci_low, self.ci_high - self.p_hat)

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# trial execution


def _count(fn: Callable[[int], bool], indices: Sequence[int], workers: int) -> int:
    """Number of trial indices for which ``fn`` holds; order independent."""
    indices = list(indices)
    if workers <= 1 or len(indices) < 2:
        return sum(1 for i in indices if fn(i))
    step = max(1, -(-len(indices) // (4 * workers)))
    chunks = [indices[k:k + step] for k in range(0, len(indices), step)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return sum(pool.map(lambda ch: sum(1 for i in ch if fn(i)), chunks))


def estimate_P(n: int, d: int, ell: int, r: int, p: float, trials: int,
               master_seed: int = 0, confidence: float = 0.99,
               workers: int | None = None, padded: bool = True) -> EstimateRecord:
    """Estimate ``P(n, d, ell, r, p)``: semi-percolation of ``A ~ Bin`` on padded ``C*``."""
    _check_p(p)
    if trials < 1:
        raise EstimationError("trials must be >= 1")
    structure = build_structure(n, d, ell, r, padded=padded)
    shape = structure.shape
    t0 = time.perf_counter()

    def one(i):
        return semi_percolates(structure, sample_config(shape, p, master_seed, i))

    hits = _count(one, range(trials), workers or default_workers())
    params = dict(n=n, d=d, ell=ell, r=r, p=p, padded=padded)
    return EstimateRecord.build(params, trials, hits, confidence, master_seed, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# exact enumeration on tiny regions

EXACT_MAX_SITES = 22


@nb.njit(cache=True)
def _percolating_by_size(nbrs, thr, core, n_sites, reverse):
    counts = np.zeros(n_sites + 1, dtype=np.int64)
    total = 1 << n_sites
    for k in range(total):
        code = total - 1 - k if reverse else k
        state = code
        changed = True
        while changed:
            changed = False
            for v in range(n_sites):
                if (state >> v) & 1:
                    continue
                c = 0
                for j in range(nbrs.shape[1]):
                    u = nbrs[v, j]
                    if u >= 0 and (state >> u) & 1:
                        c += 1
                if c >= thr[v]:
                    state |= 1 << v
                    changed = True
        if state & core == core:
            pop = 0
            x = code
            while x:
                x &= x - 1
                pop += 1
            counts[pop] += 1
    return counts


def _tables(structure: BootstrapStructure):
    shape = structure.shape
    S = shape.size
    nbrs = np.full((S, 2 * shape.dim), -1, dtype=np.int64)
    for v, site in enumerate(shape.sites()):
        for j, nb_site in enumerate(shape.neighbors(site)):
            nbrs[v, j] = shape.index_of(nb_site)
    thr = structure.threshold_field().ravel().astype(np.int64)
    core = 0
    for v in np.flatnonzero(shape.core_mask().ravel()):
        core |= 1 << int(v)
    return nbrs, thr, core


def percolating_counts(n: int, d: int, ell: int, r: int, padded: bool = True,
                       reverse: bool = False) -> np.ndarray:
    """``N_k`` = number of semi-percolating initial sets of size ``k``."""
    structure = build_structure(n, d, ell, r, padded=padded)
    S = structure.size
    if S > EXACT_MAX_SITES:
        raise EstimationError(f"region has {S} sites; exact enumeration allows {EXACT_MAX_SITES}")
    nbrs, thr, core = _tables(structure)
    return _percolating_by_size(nbrs, thr, np.int64(core), S, reverse)


def exact_P_small(n: int, d: int, ell: int, r: int, p: float, padded: bool = True,
                  reverse: bool = False) -> float:
    """``P(n, d, ell, r, p)`` exactly, by enumerating every initial set.

    The closure here is a plain sweep-until-stable loop, independent of the
    frontier engine.  ``reverse=True`` enumerates subsets in the opposite
    order and sums the weights from the largest sets down.
    """
    _check_p(p)
    counts = percolating_counts(n, d, ell, r, padded, reverse)
    S = len(counts) - 1
    terms = [int(c) * p**k * (1 - p) ** (S - k) for k, c in enumerate(counts) if c]
    if reverse:
        terms.reverse()
    return min(max(math.fsum(terms), 0.0), 1.0)


def exact_p_alpha(n: int, d: int, ell: int, r: int, alpha: float, padded: bool = True,
                  tol: float = 1e-12) -> float:
    """``inf {p : P >= alpha}`` from the exact polynomial, by bisection."""
    if not 0 < alpha < 1:
        raise EstimationError("alpha must lie in (0, 1)")
    counts = percolating_counts(n, d, ell, r, padded)
    S = len(counts) - 1

    def P(p):
        return math.fsum(int(c) * p**k * (1 - p) ** (S - k) for k, c in enumerate(counts) if c)

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if P(mid) >= alpha:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# event probabilities


def parse_event(spec: str) -> tuple[str, tuple]:
    """Parse ``true``, ``D:a,b``, ``T:a,b1[,b2..]`` or ``growth:B[;a,b1,..]*``."""
    name, _, body = spec.partition(":")
    name = name.strip()
    try:
        if name == "true":
            return "true", ()
        if name == "D":
            a, b = (int(x) for x in body.split(","))
            return "D", (a, b)
        if name == "T":
            a, *bvec = (int(x) for x in body.split(","))
            return "T", (GapVector(a, tuple(bvec)),)
        if name == "growth":
            head, *parts = body.split(";")
            gaps = []
            for part in parts:
                a, *bvec = (int(x) for x in part.split(","))
                gaps.append(GapVector(a, tuple(bvec)))
            return "growth", (GrowthSpec(int(head), tuple(gaps)),)
    except (TypeError, ValueError) as exc:
        raise EstimationError(f"malformed event spec {spec!r}: {exc}") from None
    raise EstimationError(f"unknown event {name!r}")


def _event_predicate(structure, predicate):
    if callable(predicate):
        return lambda mask: bool(predicate(Configuration.from_mask(structure.shape, mask)))
    name, args = parse_event(predicate) if isinstance(predicate, str) else predicate
    if name == "true":
        return lambda mask: True
    if name == "D":
        a, b = args
        detect_D(np.zeros(structure.shape.extents, bool), structure, a, b)  # validate bounds once
        return lambda mask: detect_D(mask, structure, a, b)
    if name == "T":
        return lambda mask: detect_T(mask, structure, args[0])
    if name == "growth":
        return lambda mask: detect_growth(mask, structure, args[0])
    raise EstimationError(f"unknown event {name!r}")


def estimate_event(structure: BootstrapStructure, predicate, p: float, trials: int,
                   master_seed: int = 0, confidence: float = 0.99,
                   workers: int | None = None) -> EstimateRecord:
    """Monte Carlo frequency of an event on ``A ~ Bin(region, p)``.

    ``predicate`` is an event string (see :func:`parse_event`), a parsed
    ``(name, args)`` pair, or a callable taking a :class:`Configuration`.
    """
    _check_p(p)
    if trials < 1:
        raise EstimationError("trials must be >= 1")
    try:
        test = _event_predicate(structure, predicate)
    except EventError as exc:
        raise EstimationError(str(exc)) from None
    shape = structure.shape
    t0 = time.perf_counter()

    def one(i):
        return test(uniform_field(shape, master_seed, i) < p)

    hits = _count(one, range(trials), workers or default_workers())
    label = predicate if isinstance(predicate, str) else getattr(predicate, "__name__", "custom")
    params = dict(extents=list(shape.extents), ell=shape.ell, rule=str(structure.rule),
                  event=str(label), p=p)
    return EstimateRecord.build(params, trials, hits, confidence, master_seed, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# coupled threshold searches


class CoupledTrials:
    """Lazily evaluated coupled trials on one structure.

    Trial ``i`` uses the field keyed by ``(master_seed, i)``.  Because the
    success event is increasing and ``A_p`` grows with ``p``, each trial
    remembers the largest ``p`` where it failed and the smallest where it
    succeeded; later queries inside that knowledge cost nothing.
    """

    def __init__(self, structure: BootstrapStructure, master_seed: int,
                 success: Callable[[BootstrapStructure, Configuration], bool] = semi_percolates):
        self.structure = structure
        self.master_seed = master_seed
        self.success = success
        self.fail_at = np.full(0, -1.0)
        self.pass_at = np.full(0, 2.0)
        self.closures = 0

    def _ensure(self, trials):
        k = len(self.fail_at)
        if trials > k:
            self.fail_at = np.concatenate([self.fail_at, np.full(trials - k, -1.0)])
            self.pass_at = np.concatenate([self.pass_at, np.full(trials - k, 2.0)])

    def outcome(self, i: int, p: float) -> bool:
        if p >= self.pass_at[i]:
            return True
        if p <= self.fail_at[i]:
            return False
        shape = self.structure.shape
        cfg = Configuration.from_mask(shape, uniform_field(shape, self.master_seed, i) < p)
        self.closures += 1
        ok = self.success(self.structure, cfg)
        if ok:
            self.pass_at[i] = p
        else:
            self.fail_at[i] = p
        return ok

    def successes(self, p: float, trials: int, workers: int = 1) -> int:
        self._ensure(trials)
        return _count(lambda i: self.outcome(i, p), range(trials), workers)


@dataclass
class PAlphaResult:
    bracket: tuple[float, float]
    status: str
    steps: list[EstimateRecord] = field(default_factory=list)
    flagged_steps: int = 0
    closures: int = 0


def find_p_alpha(n: int, d: int, ell: int, r: int, alpha: float = 0.5, tol: float = 0.005,
                 max_trials_per_step: int = 4096, master_seed: int = 0,
                 confidence: float = 0.99, padded: bool = False, min_trials: int = 64,
                 workers: int | None = None) -> PAlphaResult:
    """Bisection for ``p_alpha = inf {p : P(p) >= alpha}`` on coupled fields.

    At each midpoint the number of trials doubles from ``min_trials`` until
    the Wilson interval excludes ``alpha``; if ``max_trials_per_step`` is
    reached first, the point estimate decides and the step is flagged.  The
    returned bracket is closed: ``p_lo <= p_alpha <= p_hi`` is the claim.
    """
    if not 0 < alpha < 1:
        raise EstimationError("alpha must lie in (0, 1)")
    if tol <= 0:
        raise EstimationError("tol must be positive")
    if max_trials_per_step < 1 or min_trials < 1:
        raise EstimationError("trial counts must be positive")
    workers = workers or default_workers()
    structure = build_structure(n, d, ell, r, padded=padded)
    pool = CoupledTrials(structure, master_seed)
    lo, hi = 0.0, 1.0
    steps, flagged = [], 0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        trials = min(min_trials, max_trials_per_step)
        t0 = time.perf_counter()
        while True:
            hits = pool.successes(mid, trials, workers)
            ci_lo, ci_hi = wilson_interval(hits, trials, confidence)
            decided = ci_lo > alpha or ci_hi < alpha
            if decided or trials >= max_trials_per_step:
                break
            trials = min(2 * trials, max_trials_per_step)
        params = dict(n=n, d=d, ell=ell, r=r, p=mid, padded=padded, alpha=alpha, decided=decided)
        steps.append(EstimateRecord.build(params, trials, hits, confidence, master_seed,
                                          time.perf_counter() - t0))
        if not decided:
            flagged += 1
        above = ci_lo > alpha if decided else hits / trials >= alpha
        if above:
            hi = mid
        else:
            lo = mid
    return PAlphaResult((lo, hi), "flagged" if flagged else "clean", steps, flagged, pool.closures)


def scan(n_list: Sequence[int], p_grid: Sequence[float], d: int, ell: int, r: int,
         trials: int, master_seed: int = 0, confidence: float = 0.99, padded: bool = True,
         max_closures: int = 10**7, workers: int | None = None) -> list[EstimateRecord]:
    """One record per ``(n, p)``; every trial's field is shared across ``p_grid``.

    Per trial the smallest grid point where the success event holds is found
    by binary search, so each sampled curve is a step function in ``p``.
    """
    if not n_list or not p_grid:
        raise EstimationError("n_list and p_grid must be nonempty")
    if trials < 1:
        raise EstimationError("trials must be >= 1")
    for p in p_grid:
        _check_p(p)
    grid = sorted(set(float(p) for p in p_grid))
    per_trial = max(1, math.ceil(math.log2(len(grid) + 1)))
    if len(n_list) * trials * per_trial > max_closures:
        raise EstimationError("scan exceeds the closure budget")
    workers = workers or default_workers()
    out = []
    for n in n_list:
        structure = build_structure(n, d, ell, r, padded=padded)
        shape = structure.shape
        t0 = time.perf_counter()

        def first_hit(i):
            u = uniform_field(shape, master_seed, i)
            lo, hi = -1, len(grid)  # grid[hi] succeeds (virtual), grid[lo] fails (virtual)
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if semi_percolates(structure, Configuration.from_mask(shape, u < grid[mid])):
                    hi = mid
                else:
                    lo = mid
            return hi

        idx = list(range(trials))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                hits_at = list(ex.map(first_hit, idx))
        else:
            hits_at = [first_hit(i) for i in idx]
        cum = np.cumsum(np.bincount(hits_at, minlength=len(grid) + 1))
        elapsed = time.perf_counter() - t0
        for g, p in enumerate(grid):
            params = dict(n=n, d=d, ell=ell, r=r, p=p, padded=padded)
            out.append(EstimateRecord.build(params, trials, int(cum[g]), confidence, master_seed, elapsed))
    return out


# ---------------------------------------------------------------------------
# Harris's inequality on the hypercube


@dataclass
class HarrisReport:
    site_count: int
    p: float
    n_upsets: int
    n_pairs: int
    min_slack: float
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def up_sets(k: int) -> list[int]:
    """All increasing families on ``{0,1}^k``, each as a bitmask over the ``2^k`` points."""
    if not 0 <= k <= 4:
        raise EstimationError("exhaustive up-set enumeration supports at most 4 sites")
    npts = 1 << k
    # covers[x] = points obtained from x by switching one 0 to 1
    covers = [[x | (1 << j) for j in range(k) if not x >> j & 1] for x in range(npts)]
    out = []
    for fam in range(1 << npts):
        if all(not (fam >> x & 1) or all(fam >> y & 1 for y in covers[x]) for x in range(npts)):
            out.append(fam)
    return out


def verify_harris(site_count: int, p: float, tol: float = 1e-15) -> HarrisReport:
    """Check ``P(E n F) >= P(E) P(F)`` for every pair of up-sets, exactly enumerated."""
    _check_p(p)
    fams = up_sets(site_count)
    npts = 1 << site_count
    w = np.array([p ** bin(x).count("1") * (1 - p) ** (site_count - bin(x).count("1"))
                  for x in range(npts)])
    member = np.array([[fam >> x & 1 for x in range(npts)] for fam in fams], dtype=float)
    prob = np.array([math.fsum(w[row > 0]) for row in member])
    joint = (member * w) @ member.T
    slack = joint - np.outer(prob, prob)
    return HarrisReport(site_count, p, len(fams), len(fams) ** 2, float(slack.min()),
                        int((slack < -tol).sum()))
