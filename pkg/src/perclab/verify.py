"""Deterministic property checks grouped into suites.

Each check returns a :class:`Check` carrying its parameters and the observed
values, so a failing run says what failed and where.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import analytic, lgaps
from .dynamics import brute_force_closure, closure, internally_semi_spanned, restrict
from .events import GapVector, all_growth_specs, detect_D, detect_growth, detect_T, growth_sites
from .lattice import BootstrapStructure, Configuration, GridShape, ThresholdRule, build_structure
from .montecarlo import estimate_event, verify_harris

SUITES = ("analytic", "lgap", "events", "harris", "dynamics")


@dataclass
class Check:
    name: str
    passed: bool
    params: dict = field(default_factory=dict)
    observed: dict = field(default_factory=dict)
    skipped: bool = False


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed or c.skipped for c in self.checks)

    def as_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}


# ---------------------------------------------------------------------------
# analytic


def beta_recursion_residual(ks=range(1, 7), us=None) -> float:
    """``max |beta^2 - (1-(1-u)^k) beta - u (1-u)^k|`` over the grid."""
    us = np.round(np.arange(1, 100) / 100, 2) if us is None else np.asarray(us)
    worst = 0.0
    for k in ks:
        b = analytic.beta(k, us)
        w = (1 - us) ** k
        worst = max(worst, float(np.max(np.abs(b * b - (1 - w) * b - us * w))))
    return worst


def beta_inequality_violations(k: int, samples: int, seed: int, tol: float = 1e-12) -> dict:
    """Count failures of the two-point beta inequality and of ``beta_k(u)/u`` decreasing.

    Pairs ``u <= v`` are drawn uniformly from ``[0, 1]``.
    """
    rng = np.random.default_rng([seed, k])
    x = rng.random((samples, 2))
    u, v = x.min(axis=1), x.max(axis=1)
    bu, bv = analytic.beta(k, u), analytic.beta(k, v)
    w = (1 - u) ** k
    slack = (1 - w) * bv + w * v - bu * bv
    pos = (u > 0) & (v > u)
    ratio_gap = bv[pos] / v[pos] - bu[pos] / u[pos]
    return {
        "ineq_violations": int((slack < -tol).sum()),
        "ineq_min_slack": float(slack.min()),
        "ratio_violations": int((ratio_gap > tol).sum()),
        "ratio_max_increase": float(ratio_gap.max()) if ratio_gap.size else 0.0,
    }


def _analytic_checks() -> list[Check]:
    out = []
    res = beta_recursion_residual()
    out.append(Check("beta_recursion", res < 1e-12, {"k": "1..6", "u": "0.01..0.99"}, {"max_residual": res}))
    us = np.linspace(1e-4, 1 - 1e-4, 2001)
    # beta rounds to 1 near u = 1, where the complement still resolves the order
    inc = all(bool(np.all((np.diff(analytic.beta(k, us)) > 0)
                          | (np.diff(analytic.one_minus_beta(k, us)) < 0))) for k in range(1, 7))
    out.append(Check("beta_increasing", inc, {"k": "1..6", "grid": 2001}, {}))
    for k in range(1, 5):
        obs = beta_inequality_violations(k, 10_000, seed=11)
        ok = obs["ineq_violations"] == 0 and obs["ratio_violations"] == 0
        out.append(Check("beta_inequality", ok, {"k": k, "samples": 10_000, "seed": 11}, obs))
    ps = np.linspace(1e-6, 0.999, 5000)
    q = analytic.q_of_p(ps)
    lower = bool(np.all(q >= ps))
    upper = bool(np.all(q[ps <= 0.7] <= 2 * ps[ps <= 0.7]))
    out.append(Check("q_bounds", lower and upper, {"p": "grid on (0, 0.999)"}, {"p_le_q": lower, "q_le_2p": upper}))
    for d, r in ((2, 2), (3, 3), (4, 2), (4, 3), (4, 4)):
        a = analytic.lambda_const(d, r, 1e-9)
        b = analytic.lambda_const_panels(d, r, 1e-9)
        diff = abs(a.value - b.value)
        out.append(Check("lambda_dual_scheme", diff <= a.error + b.error, {"d": d, "r": r},
                         {"adaptive": a.value, "panels": b.value, "diff": diff,
                          "combined_error": a.error + b.error}))
    lam = analytic.lambda_const(2, 2, 1e-8).value
    out.append(Check("lambda_2_2", abs(lam - math.pi**2 / 18) < 1e-8, {"tol": 1e-8},
                     {"value": lam, "target": math.pi**2 / 18}))
    return out


# ---------------------------------------------------------------------------
# lgap


def lgap_oracle_gap(m_max: int = 4, ell_max: int = 2, vectors: int = 200, seed: int = 3) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in range(0, m_max + 1):
        for ell in range(ell_max + 1):
            for _ in range(vectors):
                spec = lgaps.EventSeqSpec(m, ell, tuple(rng.uniform(0.001, 0.999, m + 1)))
                worst = max(worst, abs(lgaps.lgap_exact(spec) - lgaps.lgap_enumerate(spec)))
    return worst


def lgap_bound_violations(specs: int = 1000, m_max: int = 50, ell_max: int = 3, seed: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    worst, bad = math.inf, 0
    for _ in range(specs):
        m = int(rng.integers(0, m_max + 1))
        ell = int(rng.integers(0, ell_max + 1))
        u = np.sort(rng.uniform(0.001, 0.999, m + 1))
        spec = lgaps.EventSeqSpec(m, ell, tuple(u))
        slack = lgaps.lgap_exact(spec) - lgaps.lgap_lower_bound(spec)
        worst = min(worst, slack)
        bad += slack < 0
    return {"violations": int(bad), "min_slack": worst}


def _lgap_checks() -> list[Check]:
    out = []
    gap = lgap_oracle_gap()
    out.append(Check("lgap_exact_vs_enumeration", gap <= 1e-12,
                     {"m": "0..4", "ell": "0..2", "vectors": 200}, {"max_abs_diff": gap}))
    obs = lgap_bound_violations()
    out.append(Check("lgap_product_bound", obs["violations"] == 0, {"specs": 1000, "m_max": 50}, obs))
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(300):
        m, ell = int(rng.integers(1, 8)), int(rng.integers(0, 3))
        u = rng.uniform(0.01, 0.95, m + 1)
        i = int(rng.integers(0, m + 1))
        v = u.copy()
        v[i] += 0.04
        bad += lgaps.lgap_exact(lgaps.EventSeqSpec(m, ell, tuple(v))) < \
            lgaps.lgap_exact(lgaps.EventSeqSpec(m, ell, tuple(u))) - 1e-15
    out.append(Check("lgap_monotone_in_u", bad == 0, {"perturbations": 300}, {"violations": int(bad)}))
    for p, m in ((0.04, 1), (0.02, 2)):
        gc = lgaps.count_gap_sequences(p, 2, 0.2, m)
        out.append(Check("enough_choices", gc.holds, {"p": p, "d": 2, "c": 0.2, "m": m},
                         {"count": gc.count, "bound": gc.bound}))
    return out


# ---------------------------------------------------------------------------
# events


def _tab_sample(rng, ell: int, max_a: int = 6, max_b: int = 12):
    """Draw ``(structure, mask, a, b)`` with the forced clauses of ``T_a^(b)`` in place.

    Clause (i)/(ii) cuboids are emptied and the clause (v) site infected.
    These touch disjoint sites, so this is exact conditioning on those
    clauses; the remaining clauses are left to rejection.
    """
    a = int(rng.integers(2, max_a + 1))
    b = int(rng.integers(a + 3, max_b + 1))
    st = build_structure(b, 2, ell, 2)
    p = rng.uniform(0.1, 0.4)
    m = rng.random(st.shape.extents) < p
    base = (0,) * ell
    m[(slice(0, b - 1), slice(a, a + 2)) + base] = False
    for j in range(ell):
        layer = [0] * ell
        layer[j] = 1
        m[(slice(0, b - 1), a) + tuple(layer)] = False
    m[(b - 1, a + 1) + base] = True
    return st, m, a, b


def t_growth_check(ell: int, target: int = 100, seed: int = 21, budget: int = 20_000) -> dict:
    """``[a]^2 x [2]^ell`` internally semi-spanned and ``T_a^(b)`` imply ``[b]^2 x [2]^ell`` is."""
    rng = np.random.default_rng([seed, ell])
    accepted = violations = drawn = 0
    while accepted < target and drawn < budget:
        drawn += 1
        st, m, a, b = _tab_sample(rng, ell)
        cfg = Configuration.from_mask(st.shape, m)
        if not detect_T(m, st, GapVector(a, (b,))):
            continue
        if not internally_semi_spanned(st, [(1, a), (1, a)], cfg):
            continue
        accepted += 1
        violations += not internally_semi_spanned(st, [(1, b), (1, b)], cfg)
    return {"accepted": accepted, "drawn": drawn, "violations": violations}


def d_growth_check(ell: int, target: int = 100, seed: int = 22, budget: int = 20_000,
                   reach: int = 0) -> dict:
    """``[a]^2 x [2]^ell`` internally semi-spanned and ``D_a^b`` imply growth.

    ``reach=0`` tests the box ``[b]^2 x [2]^ell`` for internal semi-spanning.
    ``reach=1`` tests only that the closure inside that box covers
    ``[b-1]^2 x 1^ell``.
    """
    rng = np.random.default_rng([seed, ell])
    accepted = violations = drawn = 0
    example = None
    while accepted < target and drawn < budget:
        drawn += 1
        a = int(rng.integers(2, 7))
        b = int(rng.integers(a, 13))
        st = build_structure(b, 2, ell, 2)
        m = rng.random(st.shape.extents) < rng.uniform(0.1, 0.4)
        cfg = Configuration.from_mask(st.shape, m)
        if not detect_D(m, st, a, b):
            continue
        if not internally_semi_spanned(st, [(1, a), (1, a)], cfg):
            continue
        accepted += 1
        sub, sub_cfg, _ = restrict(st, cfg, [(1, b), (1, b)])
        final = closure(sub, sub_cfg, track_generations=False).final.mask()
        s = b - reach
        ok = bool(final[(slice(0, s), slice(0, s)) + (0,) * ell].all())
        if not ok:
            violations += 1
            if example is None:
                example = {"a": a, "b": b, "infected": [list(map(int, x)) for x in np.argwhere(m) + 1]}
    return {"accepted": accepted, "drawn": drawn, "violations": violations, "first_violation": example}


def growth_overlap_check(configs: int = 500, seed: int = 23, B_values=(8, 10)) -> dict:
    """Count configurations satisfying more than one ``GrowthSpec``.

    The seed, ``x^(t)`` and ``y^(t)`` sites are forced infected (they are
    common to every spec with the same ``B``); everything else is
    ``Bin(p)`` with ``p ~ U[0.05, 0.5]``.
    """
    rng = np.random.default_rng(seed)
    tables = {}
    multi = nonempty = 0
    example = None
    for i in range(configs):
        ell = i % 2
        B = B_values[(i // 2) % len(B_values)]
        if (B, ell) not in tables:
            tables[(B, ell)] = (list(all_growth_specs(B, 2)), build_structure(B, 2, ell, 2))
        specs, st = tables[(B, ell)]
        m = rng.random(st.shape.extents) < rng.uniform(0.05, 0.5)
        for s in growth_sites(2, ell, B):
            m[tuple(c - 1 for c in s)] = True
        hits = [sp for sp in specs if detect_growth(m, st, sp)]
        nonempty += bool(hits)
        if len(hits) > 1:
            multi += 1
            if example is None:
                example = {"B": B, "ell": ell, "specs": [repr(h) for h in hits]}
    return {"configs": configs, "with_a_spec": nonempty, "multiple": multi, "first_multiple": example}


def _events_checks() -> list[Check]:
    out = []
    st = build_structure(14, 2, 1, 2)
    rec = estimate_event(st, "D:6,14", 0.12, 10_000, master_seed=7, confidence=0.999, workers=1)
    bound = analytic.G_value(6, 14, 2, 1, analytic.q_of_p(0.12)) ** 2
    out.append(Check("diagonal_bound", rec.ci_high >= bound,
                     {"d": 2, "ell": 1, "a": 6, "b": 14, "p": 0.12, "trials": 10_000, "seed": 7},
                     {"p_hat": rec.p_hat, "ci_high_99.9": rec.ci_high, "G_squared": bound}))
    for ell in (0, 1):
        obs = t_growth_check(ell)
        out.append(_conditioned("tab_growth", ell, obs))
        obs = d_growth_check(ell)
        out.append(_conditioned("d_growth_to_b", ell, obs))
        obs = d_growth_check(ell, reach=1)
        out.append(_conditioned("d_growth_to_b_minus_1", ell, obs))
    obs = growth_overlap_check()
    out.append(Check("growth_events_disjoint", obs["multiple"] == 0, {"configs": 500, "B": "8,10"}, obs))
    return out


def _conditioned(name, ell, obs) -> Check:
    enough = obs["accepted"] >= 100
    return Check(name, enough and obs["violations"] == 0, {"d": 2, "ell": ell}, obs, skipped=not enough)


# ---------------------------------------------------------------------------
# harris, dynamics


def _harris_checks() -> list[Check]:
    out = []
    for k in range(1, 5):
        for p in (0.3, 0.5):
            rep = verify_harris(k, p)
            out.append(Check("harris", rep.ok, {"sites": k, "p": p},
                             {"upsets": rep.n_upsets, "min_slack": rep.min_slack, "violations": rep.violations}))
    return out


def _dynamics_checks(cases: int = 300, seed: int = 9) -> list[Check]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(cases):
        d = int(rng.integers(1, 4))
        ell = int(rng.integers(0, 3))
        n = int(rng.integers(1, 7 if d < 3 else 4))
        if rng.random() < 0.3:
            st = BootstrapStructure(GridShape((n,) * d, 0, bool(rng.integers(2))),
                                    ThresholdRule.uniform(int(rng.integers(1, 4))))
        else:
            st = build_structure(n, d, ell, int(rng.integers(1, 4)), padded=bool(rng.integers(2)))
        cfg = Configuration.from_mask(st.shape, rng.random(st.shape.extents) < rng.uniform(0, 0.6))
        ref, rounds = brute_force_closure(st, cfg)
        tracked = closure(st, cfg)
        untracked = closure(st, cfg, track_generations=False)
        same = (np.array_equal(tracked.final.mask(), ref) and tracked.rounds == rounds
                and tracked.final == untracked.final and untracked.rounds == rounds)
        mismatches += not same
    return [Check("closure_vs_synchronous_sweep", mismatches == 0, {"cases": cases, "seed": seed},
                  {"mismatches": mismatches})]


_RUNNERS: dict[str, Callable[[], list[Check]]] = {
    "analytic": _analytic_checks,
    "lgap": _lgap_checks,
    "events": _events_checks,
    "harris": _harris_checks,
    "dynamics": _dynamics_checks,
}


def verify_suite(name: str = "all") -> list[SuiteReport]:
    if name == "all":
        names = SUITES
    elif name in _RUNNERS:
        names = (name,)
    else:
        raise ValueError(f"unknown suite {name!r}; choose from all, {', '.join(SUITES)}")
    return [SuiteReport(s, _RUNNERS[s]()) for s in names]
