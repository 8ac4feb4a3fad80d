"""Special functions, the threshold constant and the asymptotic bound formulas.

``beta_k`` is evaluated through the positive root of
``X^2 - (1 - w) X - u w = 0`` with ``w = (1 - u)^k`` (both terms of the root are
non-negative so there is no cancellation near ``u = 0``), and ``1 - beta_k``
through the complementary root, which keeps ``g_k(x)`` accurate for large
``x`` where ``beta_k`` rounds to one.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AnalyticError", "beta", "one_minus_beta", "g", "q_of_p", "iterated_log",
    "LambdaResult", "lambda_const", "lambda_const_panels", "G_value",
    "BoundParams", "c_r", "ub_bound", "cstar_bound", "DropletScales", "droplet_scales",
]


class AnalyticError(ValueError):
    """Argument outside a function's domain, or a formula used below validity."""


def _check_k(k):
    if int(k) != k or k < 1:
        raise AnalyticError(f"k must be a positive integer, got {k}")


@np.errstate(divide="ignore", invalid="ignore")
def _roots(k, u, v):
    # u and v = 1 - u given separately so callers can pass an exact complement
    w = np.exp(k * np.log(v, where=v > 0, out=np.full_like(v, -np.inf)))
    b = -np.expm1(k * np.log1p(-u, where=u < 1, out=np.full_like(u, -np.inf)))
    c = u * w
    root = 0.5 * (b + np.sqrt(b * b + 4.0 * c))
    comp = 2.0 * w * v / ((1.0 + w) + np.sqrt(np.maximum((1.0 + w) ** 2 - 4.0 * w * v, 0.0)))
    return root, comp


def beta(k: int, u):
    """``beta_k(u) = (1 - (1-u)^k + sqrt(1 + (4u-2)(1-u)^k + (1-u)^{2k})) / 2``."""
    _check_k(k)
    arr = np.asarray(u, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise AnalyticError("beta is defined for u in [0, 1]")
    root, comp = _roots(k, arr, 1.0 - arr)
    out = np.where(root > 0.5, 1.0 - comp, root)
    return float(out) if np.ndim(out) == 0 else out


def one_minus_beta(k: int, u):
    """``1 - beta_k(u)`` without cancellation near ``u = 1``."""
    _check_k(k)
    arr = np.asarray(u, dtype=float)
    if np.any((arr < 0) | (arr > 1)):
        raise AnalyticError("beta is defined for u in [0, 1]")
    root, comp = _roots(k, arr, 1.0 - arr)
    out = np.where(root > 0.5, comp, 1.0 - root)
    return float(out) if np.ndim(out) == 0 else out


def g(k: int, x):
    """``g_k(x) = -log(beta_k(1 - e^{-x}))`` for ``x > 0``."""
    _check_k(k)
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise AnalyticError("g_k(x) needs x > 0 (it diverges at 0)")
    u = -np.expm1(-arr)
    v = np.exp(-arr)
    root, comp = _roots(k, u, v)
    with np.errstate(divide="ignore"):
        out = np.where(root > 0.5, -np.log1p(-comp), -np.log(root))
    return float(out) if np.ndim(out) == 0 else out


def q_of_p(p):
    """``q = -log(1 - p)``."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0) | (arr >= 1)):
        raise AnalyticError("q(p) needs 0 <= p < 1")
    out = -np.log1p(-arr)
    return float(out) if np.ndim(out) == 0 else out


def iterated_log(k: int, x: float) -> float:
    """``log`` applied ``k`` times; ``iterated_log(0, x) == x``."""
    if k < 0:
        raise AnalyticError("k must be >= 0")
    val = x
    for i in range(k):
        if val <= 0:
            raise AnalyticError(f"iterated log undefined: step {i} sees {val}")
        val = math.log(val)
    return float(val)


def _level(k: int, n=None, log_n=None) -> float:
    # log_(k)(n), taking log n directly when n itself overflows a float
    if (n is None) == (log_n is None):
        raise AnalyticError("give exactly one of n and log_n")
    if log_n is None:
        return iterated_log(k, n)
    if k == 0:
        return math.exp(log_n)
    return iterated_log(k - 1, log_n)


# ---------------------------------------------------------------------------
# lambda(d, r)

# 15-point Kronrod extension of the 7-point Gauss rule
_XK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_KW = np.concatenate([_WK[:-1], _WK[::-1]])
_GW = np.zeros(15)
_GW[1:7:2] = _WG[:3]
_GW[7] = _WG[3]
_GW[9:14:2] = _WG[2::-1]


def _gk15(f, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = f(mid + half * _NODES)
    k = half * np.dot(_KW, fx)
    gauss = half * np.dot(_GW, fx)
    return k, abs(k - gauss)


def _adaptive(f, a, b, tol, max_intervals):
    """Global adaptive Gauss-Kronrod (7/15) bisection on ``[a, b]``."""
    val, err = _gk15(f, a, b)
    heap = [(-err, a, b, val)]
    total, total_err = val, err
    while total_err > tol:
        if len(heap) >= max_intervals:
            raise AnalyticError(
                f"quadrature did not reach tol={tol:g} within {max_intervals} intervals "
                f"(error estimate {total_err:g})"
            )
        neg_err, lo, hi, v = heapq.heappop(heap)
        m = 0.5 * (lo + hi)
        v1, e1 = _gk15(f, lo, m)
        v2, e2 = _gk15(f, m, hi)
        total += v1 + v2 - v
        total_err += e1 + e2 + neg_err
        heapq.heappush(heap, (-e1, lo, m, v1))
        heapq.heappush(heap, (-e2, m, hi, v2))
    # re-sum to shed accumulated rounding from the incremental updates
    total = math.fsum(item[3] for item in heap)
    total_err = math.fsum(-item[0] for item in heap)
    return total, total_err


@dataclass(frozen=True)
class LambdaResult:
    value: float
    error: float
    d: int
    r: int
    method: str

    def __float__(self):
        return self.value


def _check_dr(d, r):
    if not (int(d) == d and int(r) == r and d >= r >= 2):
        raise AnalyticError(f"lambda(d, r) needs integers d >= r >= 2, got ({d}, {r})")


def _tail_cutoff(k: int, tol: float) -> float:
    # g_k(x) <= -log(1 - e^{-(k+1)x}) and z^alpha >= z on z >= 1, so
    # int_Z^inf g_k(z^alpha) dz <= e^{-(k+1)Z} / ((k+1)(1 - e^{-(k+1)Z})).
    z = 1.0
    while math.exp(-(k + 1) * z) / ((k + 1) * -math.expm1(-(k + 1) * z)) > tol:
        z += 0.5
    return z


def _head_cutoff(t_tol: float, alpha: int, k: int) -> float:
    # After z = e^{-t}: g_k(x) <= -log(x/2)/2 + kx/2 on (0, 1], so the integrand
    # g_k(e^{-alpha t}) e^{-t} is at most (alpha t + log 2 + k)/2 * e^{-t}.
    t = 1.0
    while math.exp(-t) * (alpha * (t + 1) + math.log(2) + k) / 2 > t_tol:
        t += 0.5
    return t


def lambda_const(d: int, r: int, tol: float = 1e-8, max_intervals: int = 2000) -> LambdaResult:
    """``lambda(d, r) = int_0^inf g_{r-1}(z^{d-r+1}) dz`` by adaptive Gauss-Kronrod.

    ``[0, 1]`` is mapped to ``t in [0, inf)`` through ``z = e^{-t}`` and both
    infinite ends are cut where an explicit majorant of the neglected piece
    is below ``tol / 1000``.  The reported error is the sum of the Kronrod
    error estimates and both truncation bounds.
    """
    _check_dr(d, r)
    if tol < 1e-10:
        raise AnalyticError("tol below 1e-10 is not supported")
    k, alpha = r - 1, d - r + 1
    cut = tol / 1000
    big_z = _tail_cutoff(k, cut)
    big_t = _head_cutoff(cut, alpha, k)

    def left(t):
        return g(k, np.exp(-alpha * t)) * np.exp(-t)

    def right(z):
        return g(k, z ** alpha)

    budget = 0.8 * tol - 2 * cut
    lv, le = _adaptive(left, 0.0, big_t, budget / 2, max_intervals)
    rv, re_ = _adaptive(right, 1.0, big_z, budget / 2, max_intervals)
    return LambdaResult(lv + rv, le + re_ + 2 * cut, d, r, "gauss-kronrod")


def lambda_const_panels(d: int, r: int, tol: float = 1e-8, order: int = 40) -> LambdaResult:
    """Independent cross-check of :func:`lambda_const`.

    Fixed high-order Gauss-Legendre on geometrically graded panels in ``z``
    (no change of variables): panels ``[2^{-j-1}, 2^{-j}]`` towards zero, unit
    panels on ``[1, Z]``.  The error is estimated by comparing against the
    rule of half the order, plus the analytic bounds for the two cut ends.
    """
    _check_dr(d, r)
    k, alpha = r - 1, d - r + 1
    cut = tol / 1000
    big_z = _tail_cutoff(k, cut)
    # int_0^h g(z^alpha) dz <= (alpha/2) h (1 - log h) + h log(2)/2 + k h^{alpha+1}/(2(alpha+1))
    h = 1.0
    while (alpha / 2) * h * (1 - math.log(h)) + h * math.log(2) / 2 + k * h ** (alpha + 1) / (2 * (alpha + 1)) > cut:
        h /= 2
    edges = [h]
    while edges[-1] < 1.0:
        edges.append(edges[-1] * 2)
    edges[-1] = 1.0
    z = 1.0
    while z < big_z:
        z = min(z + 0.5, big_z)
        edges.append(z)
    x_hi, w_hi = np.polynomial.legendre.leggauss(order)
    x_lo, w_lo = np.polynomial.legendre.leggauss(order // 2)
    hi_parts, lo_parts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        hi_parts.append(half * np.dot(w_hi, g(k, (mid + half * x_hi) ** alpha)))
        lo_parts.append(half * np.dot(w_lo, g(k, (mid + half * x_lo) ** alpha)))
    value = math.fsum(hi_parts)
    err = abs(value - math.fsum(lo_parts)) + 2 * cut
    return LambdaResult(value, err, d, r, "graded-gauss-legendre")


def G_value(a: int, b: int, d: int, ell: int, q: float) -> float:
    """``G_a^b = exp(-sum_{i=a}^{b-1} g_{ell+1}(i^{d-1} q))``."""
    if a < 2:
        raise AnalyticError("G_a^b needs a >= 2")
    if b < a:
        raise AnalyticError("G_a^b needs a <= b")
    if not q > 0:
        raise AnalyticError("q must be positive")
    if b == a:
        return 1.0
    i = np.arange(a, b, dtype=float)
    return float(math.exp(-math.fsum(np.atleast_1d(g(ell + 1, i ** (d - 1) * q)))))


# ---------------------------------------------------------------------------
# bound formulas


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the upper-bound formulas.

    ``n`` may be given as ``log_n`` when ``n`` itself overflows a float.
    ``c`` and ``c2`` are free constants: only their existence is known.
    """

    d: int
    r: int
    ell: int = 0
    c: float = 0.0
    c2: float = 0.0
    n: float | None = None
    log_n: float | None = None

    def __post_init__(self):
        if not self.d >= self.r >= 2:
            raise AnalyticError("need d >= r >= 2")
        if self.ell < 0:
            raise AnalyticError("ell must be >= 0")
        if self.c < 0 or self.c2 < 0:
            raise AnalyticError("constants must be non-negative")
        if (self.n is None) == (self.log_n is None):
            raise AnalyticError("give exactly one of n and log_n")

    def level(self, k: int) -> float:
        return _level(k, self.n, self.log_n)


def c_r(r: int, c2: float) -> float:
    """``c_2 = c2``, ``c_r = c_{r-1} - 2^{-r+1} c2``."""
    if r < 2:
        raise AnalyticError("c_r is defined for r >= 2")
    val = c2
    for j in range(3, r + 1):
        val -= 2.0 ** (-j + 1) * c2
    return val


def _bound(lam, L, c, d, r):
    base = lam / L - c / L ** (2 - 1 / (2 * d - 2))
    if base <= 0:
        raise AnalyticError(
            f"below validity: lambda/L - c/L^(2-1/(2d-2)) = {base:g} <= 0 at L = {L:g}"
        )
    return base ** (d - r + 1)


def ub_bound(params: BoundParams, lam: float | None = None, tol: float = 1e-10) -> float:
    """``(lambda(d+ell, ell+r)/L - c/L^{2-1/(2d-2)})^{d-r+1}`` with ``L = log_(r-1)(n)``."""
    d, r, ell = params.d, params.r, params.ell
    try:
        L = params.level(r - 1)
    except (AnalyticError, OverflowError) as exc:
        raise AnalyticError(f"below validity: log_({r - 1})(n) undefined ({exc})") from exc
    if L <= 0:
        raise AnalyticError(f"below validity: log_({r - 1})(n) = {L:g} <= 0")
    if lam is None:
        lam = lambda_const(d + ell, ell + r, tol).value
    return _bound(lam, L, params.c, d, r)


def cstar_bound(params: BoundParams, lam: float | None = None, tol: float = 1e-10) -> float:
    """The same formula with ``c`` replaced by ``c_r`` from the ``c2`` recursion."""
    p = BoundParams(params.d, params.r, params.ell, c_r(params.r, params.c2), params.c2,
                    params.n, params.log_n)
    return ub_bound(p, lam, tol)


@dataclass(frozen=True)
class DropletScales:
    """``log_(r-2)(M) = level_M``, ``log_(r-2)(m) = level_m``.

    ``M`` and ``m`` are ``inf`` when they overflow a float; the levels are
    always finite.
    """

    M: float
    m: float
    delta: float
    N: float
    level_M: float
    level_m: float
    y: float
    residual: float


def _exp_iter(k, x):
    try:
        for _ in range(k):
            x = math.exp(x)
    except OverflowError:
        return math.inf
    return x


def droplet_scales(d: int, r: int, ell: int, c2: float, lam: float,
                   n: float | None = None, log_n: float | None = None,
                   rtol: float = 1e-12) -> DropletScales:
    """Largest positive root of ``f(x) = x - (1 - C x^{beta-1}) y`` by bisection.

    ``y = log_(r-1)(n)``, ``C = 2^{-r} c2 / lambda``, ``beta = 1/(2d-2)``; the
    root is bracketed in ``[y/2, y]``.
    """
    if r < 3:
        raise AnalyticError("droplet scales are defined for r >= 3")
    if d < r:
        raise AnalyticError("need d >= r")
    if c2 < 0 or not lam > 0:
        raise AnalyticError("need c2 >= 0 and lambda > 0")
    y = _level(r - 1, n, log_n)
    if not y > 1:
        raise AnalyticError(f"need log_(r-1)(n) > 1, got {y:g}")
    C = 2.0 ** (-r) * c2 / lam
    bexp = 1.0 / (2 * d - 2)

    def f(x):
        return x - (1.0 - C * x ** (bexp - 1.0)) * y

    if C == 0:
        x0 = y
    else:
        lo, hi = y / 2, y
        if f(lo) >= 0:
            raise AnalyticError(f"no positive root in [y/2, y] (n too small): f(y/2) = {f(lo):g}")
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if f(mid) < 0:
                lo = mid
            else:
                hi = mid
        x0 = 0.5 * (lo + hi)
    delta = C * x0 ** (bexp - 1.0)
    level_m = (1 - 2 * delta) * y
    log_n_val = log_n if log_n is not None else math.log(n)
    return DropletScales(
        M=_exp_iter(r - 2, x0),
        m=_exp_iter(r - 2, level_m),
        delta=delta,
        N=log_n_val ** 3,
        level_M=x0,
        level_m=level_m,
        y=y,
        residual=f(x0),
    )
