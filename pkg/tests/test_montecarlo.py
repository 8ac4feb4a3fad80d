import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from perclab.dynamics import brute_force_closure, semi_percolates
from perclab.lattice import Configuration, GridShape, build_structure
from perclab.montecarlo import (
    EXACT_MAX_SITES,
    CoupledTrials,
    EstimationError,
    estimate_event,
    estimate_P,
    exact_p_alpha,
    exact_P_small,
    find_p_alpha,
    parse_event,
    percolating_counts,
    sample_config,
    scan,
    uniform_field,
    up_sets,
    verify_harris,
    wilson_interval,
)

# ---------------------------------------------------------------------------
# sampling


def test_sampling_modes_agree():
    shape = GridShape((300, 300))  # more than one streaming chunk
    for trial in range(3):
        a = sample_config(shape, 0.3, 11, trial, mode="direct")
        b = sample_config(shape, 0.3, 11, trial, mode="coupled")
        assert a == b
    with pytest.raises(EstimationError):
        sample_config(shape, 0.3, 11, 0, mode="other")


def test_sampling_extremes_and_density():
    shape = GridShape((50, 40), 1)
    assert sample_config(shape, 0.0, 5, 0).count == 0
    assert sample_config(shape, 1.0, 5, 0).count == shape.size
    k = sample_config(shape, 0.25, 5, 0).count
    assert abs(k - 0.25 * shape.size) < 5 * math.sqrt(shape.size * 0.25 * 0.75)
    with pytest.raises(EstimationError):
        sample_config(shape, 1.5, 5, 0)


def test_streams_are_keyed_by_seed_and_trial():
    shape = GridShape((20, 20))
    u = uniform_field(shape, 3, 4)
    assert np.array_equal(u, uniform_field(shape, 3, 4))
    assert not np.array_equal(u, uniform_field(shape, 3, 5))
    assert not np.array_equal(u, uniform_field(shape, 4, 4))
    assert u.shape == (20, 20) and 0 <= u.min() and u.max() < 1


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 50))
@settings(max_examples=50, deadline=None)
def test_coupled_configurations_are_nested(p, q, trial):
    p, q = sorted((p, q))
    shape = GridShape((12, 9), 1)
    assert sample_config(shape, p, 2, trial).issubset(sample_config(shape, q, 2, trial))


# ---------------------------------------------------------------------------
# Wilson interval


def wilson_oracle(k, n, conf):
    z = norm.ppf(0.5 + conf / 2)
    ph = k / n
    centre = (ph + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n))
    return centre - half, centre + half


@pytest.mark.parametrize("k,n", [(1, 10), (5, 10), (37, 100), (740, 1000), (99, 100)])
@pytest.mark.parametrize("conf", [0.95, 0.99, 0.999])
def test_wilson_matches_closed_form(k, n, conf):
    lo, hi = wilson_interval(k, n, conf)
    olo, ohi = wilson_oracle(k, n, conf)
    assert lo == pytest.approx(olo, abs=1e-12)
    assert hi == pytest.approx(ohi, abs=1e-12)


@given(st.integers(1, 5000), st.data(), st.sampled_from([0.9, 0.99, 0.999]))
def test_wilson_contains_point_estimate(n, data, conf):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n, conf)
    assert 0 <= lo <= k / n <= hi <= 1
    if k == 0:
        assert lo == 0
    if k == n:
        assert hi == 1


def test_wilson_rejects_bad_input():
    for args in [(0, 0), (5, 4), (-1, 4)]:
        with pytest.raises(EstimationError):
            wilson_interval(*args)
    with pytest.raises(EstimationError):
        wilson_interval(1, 4, 1.0)


# ---------------------------------------------------------------------------
# exact enumeration


def brute_P(n, d, ell, r, p, padded=True):
    """Sum over all initial sets with the synchronous-sweep closure."""
    s = build_structure(n, d, ell, r, padded=padded)
    core = s.shape.core_mask()
    total = 0.0
    for bits in itertools.product([False, True], repeat=s.size):
        mask = np.array(bits).reshape(s.shape.extents)
        final, _ = brute_force_closure(s, Configuration.from_mask(s.shape, mask))
        if final[core].all():
            k = sum(bits)
            total += p**k * (1 - p) ** (s.size - k)
    return total


@pytest.mark.parametrize("n,d,ell,r,padded", [(2, 2, 0, 2, True), (2, 2, 1, 2, False), (3, 2, 0, 2, False)])
@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
def test_exact_matches_brute_force(n, d, ell, r, padded, p):
    want = brute_P(n, d, ell, r, p, padded)
    assert exact_P_small(n, d, ell, r, p, padded) == pytest.approx(want, abs=1e-13)
    assert exact_P_small(n, d, ell, r, p, padded, reverse=True) == pytest.approx(want, abs=1e-13)


def test_exact_reference_values():
    assert exact_P_small(2, 2, 0, 2, 0.5) == pytest.approx(0.740234375, abs=1e-15)
    assert exact_P_small(2, 2, 0, 2, 0.0) == 0.0
    assert exact_P_small(2, 2, 0, 2, 1.0) == 1.0
    counts = percolating_counts(2, 2, 0, 2)
    assert counts.sum() == 379  # 0.740234375 * 2**9
    assert np.array_equal(counts, percolating_counts(2, 2, 0, 2, reverse=True))


def test_exact_size_limit():
    with pytest.raises(EstimationError):
        exact_P_small(5, 2, 0, 2, 0.5)
    assert EXACT_MAX_SITES >= 20


def test_exact_p_alpha_inverts_the_polynomial():
    pa = exact_p_alpha(2, 2, 0, 2, 0.5)
    assert exact_P_small(2, 2, 0, 2, pa) >= 0.5
    assert exact_P_small(2, 2, 0, 2, pa - 1e-9) < 0.5


# ---------------------------------------------------------------------------
# estimators


def test_estimate_reproducible_across_workers():
    counts = {w: estimate_P(8, 2, 1, 2, 0.2, 300, master_seed=9, workers=w).successes for w in (1, 2, 3)}
    assert len(set(counts.values())) == 1


def test_estimate_record_fields():
    rec = estimate_P(4, 2, 0, 2, 0.3, 200, master_seed=1)
    assert rec.ci_low <= rec.p_hat <= rec.ci_high
    assert rec.params == dict(n=4, d=2, ell=0, r=2, p=0.3, padded=True)
    assert rec.rng_id.startswith("numpy.Philox")
    assert rec.radius >= 0
    assert set(rec.as_dict()) >= {"trials", "successes", "p_hat", "ci_low", "ci_high", "master_seed"}
    assert estimate_P(4, 2, 0, 2, 0.0, 20).successes == 0
    assert estimate_P(4, 2, 0, 2, 1.0, 20).successes == 20


def test_estimate_agrees_with_exact():
    exact = exact_P_small(2, 2, 1, 2, 0.4, padded=False)
    rec = estimate_P(2, 2, 1, 2, 0.4, 4000, master_seed=5, padded=False, confidence=0.999)
    assert rec.ci_low <= exact <= rec.ci_high


def test_estimate_event_trivial_events():
    s = build_structure(6, 2, 1, 2)
    assert estimate_event(s, "true", 0.3, 50).successes == 50
    assert estimate_event(s, "D:3,4", 0.3, 50).successes == 50
    assert estimate_event(s, "D:2,6", 1.0, 20).successes == 20
    hits = estimate_event(s, lambda cfg: cfg.count > 0, 0.0, 20)
    assert hits.successes == 0
    with pytest.raises(EstimationError):
        estimate_event(s, "D:2,9", 0.3, 10)
    with pytest.raises(EstimationError):
        estimate_event(s, "nonsense", 0.3, 10)


def test_parse_event():
    assert parse_event("true") == ("true", ())
    assert parse_event("D:2,5") == ("D", (2, 5))
    name, (gv,) = parse_event("T:3,7,9")
    assert name == "T" and gv.a == 3 and gv.bvec == (7, 9)
    name, (spec,) = parse_event("growth:10;3,7")
    assert name == "growth" and spec.B == 10 and len(spec.gaps) == 1
    with pytest.raises(EstimationError):
        parse_event("D:x")


def test_coupled_trials_cache_is_consistent():
    s = build_structure(10, 2, 0, 2)
    pool = CoupledTrials(s, master_seed=4)
    grid = [0.05, 0.1, 0.15, 0.2, 0.3]
    counts = [pool.successes(p, 100) for p in grid]
    assert counts == sorted(counts)
    for i in range(0, 100, 7):
        for p in grid:
            direct = semi_percolates(s, Configuration.from_mask(s.shape, uniform_field(s.shape, 4, i) < p))
            assert pool.outcome(i, p) == direct


def test_find_p_alpha_brackets_exact_value():
    exact = exact_p_alpha(2, 2, 0, 2, 0.5, padded=False)
    res = find_p_alpha(2, 2, 0, 2, alpha=0.5, tol=0.02, max_trials_per_step=4096, master_seed=1)
    lo, hi = res.bracket
    assert hi - lo <= 0.02
    assert lo <= exact <= hi
    assert len(res.steps) == math.ceil(math.log2(1 / 0.02))


def test_find_p_alpha_rejects_bad_arguments():
    with pytest.raises(EstimationError):
        find_p_alpha(4, 2, 0, 2, alpha=1.0)
    with pytest.raises(EstimationError):
        find_p_alpha(4, 2, 0, 2, tol=0)


def test_scan_is_monotone_and_matches_estimates():
    grid = [0.05, 0.1, 0.2, 0.4]
    recs = scan([6, 12], grid, 2, 0, 2, trials=150, master_seed=3)
    assert len(recs) == 8
    for n in (6, 12):
        hits = [r.successes for r in recs if r.params["n"] == n]
        assert hits == sorted(hits)
    direct = estimate_P(6, 2, 0, 2, 0.2, 150, master_seed=3).successes
    assert [r.successes for r in recs if r.params["n"] == 6 and r.params["p"] == 0.2] == [direct]


def test_scan_extreme_grid():
    recs = scan([5], [0.0, 1.0], 2, 1, 2, trials=30)
    assert [r.successes for r in recs] == [0, 30]
    with pytest.raises(EstimationError):
        scan([5], [0.5], 2, 1, 2, trials=10, max_closures=5)


# ---------------------------------------------------------------------------
# Harris


def test_up_set_counts_are_dedekind_numbers():
    assert [len(up_sets(k)) for k in range(5)] == [2, 3, 6, 20, 168]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.9])
def test_harris_holds(k, p):
    rep = verify_harris(k, p)
    assert rep.ok and rep.min_slack >= -1e-15
    assert rep.n_pairs == rep.n_upsets**2


def test_harris_equality_cases():
    # E = F gives slack P(E)(1 - P(E)); events on disjoint coordinates give zero slack
    p = 0.3
    rep = verify_harris(2, p)
    assert rep.min_slack == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(EstimationError):
        up_sets(5)
