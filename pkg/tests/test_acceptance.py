"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import math
import time
import tracemalloc

import numpy as np
import pytest

from perclab import analytic, lgaps
from perclab.dynamics import closure
from perclab.events import detect_D
from perclab.lattice import BootstrapStructure, Configuration, GridShape, ThresholdRule, build_structure
from perclab.montecarlo import (
    estimate_event,
    estimate_P,
    exact_P_small,
    find_p_alpha,
    sample_config,
    verify_harris,
)
from perclab.verify import (
    beta_inequality_violations,
    beta_recursion_residual,
    d_growth_check,
    growth_overlap_check,
    lgap_bound_violations,
    lgap_oracle_gap,
    t_growth_check,
)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nC{number:<2} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def test_c01_lambda_2_2(report):
    t0 = time.perf_counter()
    res = analytic.lambda_const(2, 2, 1e-8)
    dt = time.perf_counter() - t0
    err = abs(res.value - math.pi**2 / 18)
    ok = err < 1e-8 and dt < 1.0
    assert report(1, ok, f"lambda(2,2)={res.value:.12f} |diff|={err:.2e} time={dt:.3f}s"), (err, dt)


def test_c02_beta_recursion(report):
    t0 = time.perf_counter()
    res = beta_recursion_residual(range(1, 7), np.round(np.arange(1, 100) / 100, 2))
    dt = time.perf_counter() - t0
    ok = res < 1e-12 and dt < 1.0
    assert report(2, ok, f"max residual={res:.2e} time={dt:.3f}s"), (res, dt)


def test_c03_beta_inequality_and_ratio(report):
    obs = [beta_inequality_violations(k, 10_000, seed=11, tol=1e-12) for k in range(1, 5)]
    ineq = sum(o["ineq_violations"] for o in obs)
    ratio = sum(o["ratio_violations"] for o in obs)
    ok = ineq == 0 and ratio == 0
    slack = min(o["ineq_min_slack"] for o in obs)
    assert report(3, ok, f"k=1..4, 10^4 pairs each: inequality violations={ineq} (min slack {slack:.1e}), "
                         f"ratio violations={ratio}"), obs


def test_c04_lgap_oracle_and_bound(report):
    gap = lgap_oracle_gap(m_max=4, ell_max=2, vectors=200, seed=3)
    bound = lgap_bound_violations(specs=1000, m_max=50, ell_max=3, seed=4)
    ok = gap <= 1e-12 and bound["violations"] == 0
    assert report(4, ok, f"max |exact-enum|={gap:.1e}; product bound violations={bound['violations']} "
                         f"(min slack {bound['min_slack']:.1e})"), (gap, bound)


def test_c05_diagonal_bound(report):
    t0 = time.perf_counter()
    st = build_structure(14, 2, 1, 2)
    rec = estimate_event(st, "D:6,14", 0.12, 10_000, master_seed=7, confidence=0.999, workers=1)
    dt = time.perf_counter() - t0
    bound = analytic.G_value(6, 14, 2, 1, analytic.q_of_p(0.12)) ** 2
    ok = rec.ci_high >= bound and dt < 30
    assert report(5, ok, f"p_hat={rec.p_hat:.4f} upper(99.9%)={rec.ci_high:.4f} >= G^2={bound:.4f} "
                         f"time={dt:.1f}s"), (rec, bound, dt)


def test_c06_growth_properties(report):
    tab = [t_growth_check(ell, target=100, seed=21) for ell in (0, 1)]
    dgr = [d_growth_check(ell, target=100, seed=22) for ell in (0, 1)]
    gp = growth_overlap_check(configs=500, seed=23, B_values=(8, 10))
    tab_ok = all(o["accepted"] >= 100 and o["violations"] == 0 for o in tab)
    d_ok = all(o["accepted"] >= 100 and o["violations"] == 0 for o in dgr)
    g_ok = gp["multiple"] == 0
    detail = (f"T growth violations={[o['violations'] for o in tab]} (accepted {[o['accepted'] for o in tab]}); "
              f"D growth to [b]^2 violations={[o['violations'] for o in dgr]} "
              f"(accepted {[o['accepted'] for o in dgr]}); "
              f"configs with >1 growth spec={gp['multiple']}/{gp['configs']}")
    if not d_ok:
        # Growth under D_a^b alone stops one short of b: the slab at i = b is
        # allowed to stay empty when the one at b - 1 is occupied.
        st = build_structure(4, 2, 0, 2)
        m = np.zeros((4, 4), bool)
        for x, y in [(1, 1), (2, 2), (3, 1), (1, 3)]:
            m[x - 1, y - 1] = True
        final = closure(st, Configuration.from_mask(st.shape, m)).final.mask()
        detail += (f"; counterexample d=2 ell=0 a=2 b=4 {{(1,1),(2,2),(3,1),(1,3)}}: D holds="
                   f"{detect_D(m, st, 2, 4)}, closure fills [3]^2={bool(final[:3, :3].all())}, "
                   f"fills [4]^2={bool(final.all())}")
    assert report(6, tab_ok and d_ok and g_ok, detail), (tab, dgr, gp)


def test_c07_harris(report):
    reps = [verify_harris(k, p) for k in range(1, 5) for p in (0.3, 0.5)]
    bad = sum(r.violations for r in reps)
    pairs = sum(r.n_pairs for r in reps)
    slack = min(r.min_slack for r in reps)
    assert report(7, bad == 0, f"{pairs} up-set pairs on 1..4 sites, violations={bad} "
                               f"(min slack {slack:.1e})"), bad


def test_c08_estimator_vs_exact(report):
    parts, ok = [], True
    for p in (0.2, 0.5, 0.8):
        exact = exact_P_small(2, 2, 0, 2, p)
        rec = estimate_P(2, 2, 0, 2, p, 100_000, master_seed=1, confidence=0.99)
        inside = abs(rec.p_hat - exact) <= rec.radius
        ok &= inside
        parts.append(f"p={p}: exact={exact:.5f} est={rec.p_hat:.5f} radius={rec.radius:.5f}")
    assert report(8, ok, "; ".join(parts)), parts


def test_c09_enough_choices(report):
    a = lgaps.count_gap_sequences(0.04, 2, 0.2, 1)
    b = lgaps.count_gap_sequences(0.02, 2, 0.2, 2)
    enum_a = sum(1 for _ in lgaps.enumerate_gap_sequences(0.04, 2, 1))
    enum_b = sum(1 for _ in lgaps.enumerate_gap_sequences(0.02, 2, 2))
    ok = a.count == enum_a == 66 and a.bound == pytest.approx(31.25) and a.holds
    ok &= b.count == enum_b and b.holds
    assert report(9, ok, f"m=1: count={a.count} >= {a.bound:.2f}; m=2: count={b.count} >= {b.bound:.2f}"), (a, b)


def test_c10_threshold_direction(report):
    t0 = time.perf_counter()
    small = find_p_alpha(16, 2, 0, 2, alpha=0.5, tol=0.005, master_seed=0)
    large = find_p_alpha(128, 2, 0, 2, alpha=0.5, tol=0.005, master_seed=0)
    dt = time.perf_counter() - t0
    ok = max(large.bracket) < min(small.bracket) and dt < 600
    assert report(10, ok, f"n=16 bracket=({small.bracket[0]:.4f}, {small.bracket[1]:.4f}) [{small.status}], "
                          f"n=128 bracket=({large.bracket[0]:.4f}, {large.bracket[1]:.4f}) [{large.status}], "
                          f"time={dt:.1f}s"), (small, large)


def test_c11_reproducible_across_workers(report):
    counts = {}
    for w in (1, 2, 8):
        counts[w] = (estimate_P(16, 2, 1, 2, 0.1, 2000, master_seed=2024, workers=w).successes,
                     estimate_event(build_structure(10, 2, 1, 2), "D:3,10", 0.2, 1000,
                                    master_seed=2024, workers=w).successes)
    ok = len(set(counts.values())) == 1
    assert report(11, ok, f"(estimate, event) successes by workers: {counts}"), counts


def test_c12_closure_performance(report):
    st = BootstrapStructure(GridShape((1024, 1024)), ThresholdRule.uniform(2))
    cfg = sample_config(st.shape, 0.05, 12, 0)
    closure(st, sample_config(st.shape, 0.05, 12, 1), track_generations=False)  # compile outside timing
    tracemalloc.start()
    t0 = time.perf_counter()
    res = closure(st, cfg, track_generations=False)
    dt = time.perf_counter() - t0
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    per_site = peak / st.size
    ok = dt < 1.0 and per_site <= 2.0
    assert report(12, ok, f"1024^2 closure time={dt:.3f}s, peak={per_site:.3f} B/site, "
                          f"infected={res.infected_count}, rounds={res.rounds}"), (dt, per_site)

