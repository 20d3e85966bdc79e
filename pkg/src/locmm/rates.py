"""Minimax rates: the local-entropy fixed point, Fano bounds and closed forms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .bodies import ConvexBody, Product, WeakLpBall
from .errors import EntropyBudgetError, ValidationError
from .packing import (EntropyEstimate, PackingConfig, greedy_packing, local_entropy)


@dataclass
class RateResult:
    epsilon_star: float
    rate_sq: float
    entropy_trace: list = field(default_factory=list)  # (epsilon, log M_loc)
    method: str = "bisection"
    sigma: float = 0.0
    diameter: float = math.inf

    def to_dict(self):
        return {
            "epsilon_star": self.epsilon_star,
            "rate_sq": self.rate_sq,
            "sigma": self.sigma,
            "diameter": self.diameter,
            "method": self.method,
            "entropy_trace": [{"epsilon": e, "log_count": v} for e, v in self.entropy_trace],
        }


@dataclass
class FanoBound:
    separation: float
    m: int
    info_bound: float
    lower_bound: float


# ---------------------------------------------------------------------------
# entropy cache and the fixed-point solver

_ENTROPY_CACHE: dict = {}


def _round3(x: float) -> float:
    return float(f"{x:.3g}")


def cached_local_entropy(body: ConvexBody, epsilon: float, cfg: PackingConfig) -> EntropyEstimate:
    """local_entropy at epsilon rounded to 3 significant digits, memoized.

    When the dimension guard trips, the count is reported as saturated at
    the guard value and the method tag says so.
    """
    eps = _round3(epsilon)
    key = (body.digest(), eps, cfg.key(), cfg.center_candidates, cfg.max_expected)
    hit = _ENTROPY_CACHE.get(key)
    if hit is not None:
        return hit
    try:
        est = local_entropy(body, eps, cfg)
    except EntropyBudgetError:
        est = EntropyEstimate(eps, math.log(cfg.max_expected), [], "guard-saturated")
    _ENTROPY_CACHE[key] = est
    return est


def clear_entropy_cache():
    _ENTROPY_CACHE.clear()


def _solve_fixed_point(log_m, sigma, hi, bounded, rtol=1e-2, max_iter=40):
    """Largest eps with eps^2/sigma^2 <= log_m(eps), by bracketing and bisection.

    Returns (eps_star, trace, flags). ``log_m`` returns (value, method tag).
    """
    trace = []
    flags = set()

    def g(eps):
        val, tag = log_m(eps)
        trace.append((float(eps), float(val)))
        for t in tag.split("+")[1:]:
            flags.add(t)
        if tag == "guard-saturated":
            flags.add("guard-saturated")
        return eps * eps / (sigma * sigma) - val

    # upper bracket: g(hi) > 0
    for _ in range(64):
        if g(hi) > 0:
            break
        hi *= 2.0
    else:
        flags.add("no-upper-bracket")
        return hi, trace, flags
    # lower bracket: g(lo) <= 0
    lo = hi / 2.0
    for _ in range(200):
        if g(lo) <= 0:
            break
        hi, lo = lo, lo / 2.0
    else:
        flags.add("no-lower-bracket")
        return 0.0, trace, flags
    for _ in range(max_iter):
        if (hi - lo) <= rtol * hi:
            break
        mid = math.sqrt(lo * hi)
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo, trace, flags


def epsilon_star(body: ConvexBody, sigma: float, cfg: PackingConfig | None = None,
                 rtol: float = 1e-2) -> RateResult:
    """Solve eps^2 / sigma^2 = log M_loc(eps) and report eps*^2 ∧ d^2."""
    cfg = cfg or PackingConfig()
    if not sigma >= 0:
        raise ValidationError("sigma must be >= 0")
    d = body.diameter
    if sigma == 0:
        return RateResult(0.0, 0.0, [], "bisection", 0.0, d)

    def log_m(eps):
        est = cached_local_entropy(body, eps, cfg)
        return est.log_count, est.method

    hi = d if body.bounded else 2.0**20 * sigma
    eps, trace, flags = _solve_fixed_point(log_m, sigma, hi, body.bounded, rtol)
    rate = min(eps * eps, d * d) if body.bounded else eps * eps
    method = "bisection" + "".join(f"+{f}" for f in sorted(flags))
    return RateResult(eps, rate, trace, method, float(sigma), d)


def rate_product(components, sigma: float, cfg: PackingConfig | None = None,
                 rtol: float = 1e-2) -> RateResult:
    """Fixed point driven by the largest component local entropy."""
    cfg = cfg or PackingConfig()
    comps = list(components)
    if len(comps) < 2:
        raise ValidationError("rate_product needs at least two components")
    prod = Product(comps)
    d = prod.diameter
    if sigma == 0:
        return RateResult(0.0, 0.0, [], "bisection-product", 0.0, d)

    def log_m(eps):
        ests = [cached_local_entropy(c, eps, cfg) for c in comps]
        best = max(ests, key=lambda e: e.log_count)
        return best.log_count, best.method

    hi = d if prod.bounded else 2.0**20 * sigma
    eps, trace, flags = _solve_fixed_point(log_m, sigma, hi, prod.bounded, rtol)
    rate = min(eps * eps, d * d) if prod.bounded else eps * eps
    method = "bisection-product" + "".join(f"+{f}" for f in sorted(flags))
    return RateResult(eps, rate, trace, method, float(sigma), d)


# ---------------------------------------------------------------------------
# Fano


def fano_bound(points, sigma: float, epsilon: float) -> FanoBound:
    """(eps^2/4)(1 - (I + log 2)/log m) with I bounded through the centroid, clamped at 0."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    m = len(P)
    if m < 2:
        return FanoBound(float(epsilon), m, 0.0, 0.0)
    spread = float(np.max(np.sum((P - P.mean(axis=0)) ** 2, axis=1)))
    info = math.inf if sigma == 0 else spread / (2.0 * sigma * sigma)
    val = (epsilon**2 / 4.0) * (1.0 - (info + math.log(2.0)) / math.log(m))
    return FanoBound(float(epsilon), m, info, max(val, 0.0) if math.isfinite(val) else 0.0)


def fano_at_scale(body, epsilon: float, sigma: float, cfg: PackingConfig | None = None):
    """Fano bound on the localized packing realizing the local entropy at epsilon."""
    cfg = cfg or PackingConfig()
    est = cached_local_entropy(body, epsilon, cfg)
    if not est.per_center_counts:
        raise EntropyBudgetError("entropy at this scale was guard-saturated")
    theta = max(est.per_center_counts, key=lambda ck: ck[1])[0]
    ps = greedy_packing(body, theta, est.epsilon, est.epsilon / cfg.c_const, cfg)
    P = ps.points
    if len(P) > 1:
        sep = float(np.min(pdist(P)))
    else:
        sep = ps.separation
    return fano_bound(P, sigma, min(sep, ps.separation) if len(P) > 1 else sep)


# ---------------------------------------------------------------------------
# closed forms


def _ascending(a, name="a"):
    arr = np.asarray(a, dtype=float).ravel()
    if arr.size == 0 or np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be positive and finite")
    if np.any(np.diff(arr) < 0):
        raise ValidationError(f"{name} must be sorted ascending")
    return arr


def rate_hyperrectangle(a, sigma: float) -> float:
    """Rate for the box prod [-a_i/2, a_i/2], side lengths ascending.

    (k+2) sigma^2 ∧ d^2 for the k with (k+1) sigma^2 <= sum_{i<=n-k} a_i^2
    and (k+2) sigma^2 > sum_{i<=n-k-1} a_i^2; d^2 when sum a_i^2 <= sigma^2.
    """
    a = _ascending(a)
    s2 = float(sigma) ** 2
    n = a.size
    csum = np.concatenate([[0.0], np.cumsum(a**2)])
    d2 = float(csum[-1])
    if s2 == 0.0:
        return 0.0
    if d2 <= s2:
        return d2
    for k in range(n):
        if (k + 1) * s2 <= csum[n - k] and (k + 2) * s2 > csum[n - k - 1]:
            return min((k + 2) * s2, d2)
    raise AssertionError("no valid k for the hyperrectangle rate")


def rate_ellipse(a, sigma: float) -> float:
    """Rate for {sum x_i^2/a_i <= 1}, a ascending: (k+1) sigma^2 ∧ 4 a_n."""
    a = _ascending(a)
    s2 = float(sigma) ** 2
    n = a.size
    ext = np.concatenate([[0.0], a])  # ext[j] = a_j with a_0 = 0
    d2 = 4.0 * float(a[-1])
    if a[-1] <= s2:
        return d2
    for k in range(1, n + 1):
        if ext[n - k] <= (k + 1) * s2 and ext[n - k + 1] > k * s2:
            return min((k + 1) * s2, d2)
    raise AssertionError("no valid k for the ellipse rate")


def kolmogorov_width_ellipse(a, k: int) -> float:
    a = _ascending(a)
    n = a.size
    if not 0 <= int(k) <= n:
        raise ValidationError(f"k must lie in [0, {n}]")
    ext = np.concatenate([[0.0], a])
    return float(math.sqrt(ext[n - int(k)]))


def rate_quadconvex(widths, n: int, sigma: float) -> float:
    """Rate from Kolmogorov widths d_0 >= d_1 >= ... >= d_n.

    ``widths`` is either a callable k -> d_k or a sequence of length n + 1.
    """
    d = np.array([widths(k) for k in range(n + 1)] if callable(widths) else widths,
                 dtype=float)
    if d.size != n + 1:
        raise ValidationError("need widths d_0..d_n")
    if np.any(np.diff(d) > 0):
        raise ValidationError("widths must be nonincreasing in k")
    s2 = float(sigma) ** 2
    d0 = float(d[0] ** 2)
    if d0 <= s2:
        return d0
    for k in range(1, n + 1):
        if d[k] ** 2 <= (k + 1) * s2 and d[k - 1] ** 2 > k * s2:
            return min((k + 1) * s2, d0)
    raise AssertionError("no valid k for the quadratically convex rate")


def _in_window(ratio, lo=0.25, hi=4.0):
    return bool(np.isfinite(ratio) and lo <= ratio <= hi)


def rate_l1(n: int, sigma: float) -> dict:
    if n < 2:
        raise ValidationError("n must be >= 2")
    logn = math.log(n)
    v = sigma * sigma * logn
    rate = min(math.sqrt(v), 4.0)
    ok = False
    if v > 0:
        ratio = math.log(math.sqrt(v) * n) / logn
        ok = _in_window(ratio) and v**0.25 >= n**-0.5
    return {"rate": rate, "regime_ok": ok}


def rate_weak_lp(n: int, p: float, sigma: float) -> dict:
    if not 1.0 < p < 2.0:
        raise ValidationError("p must lie in (1, 2)")
    if n < 2:
        raise ValidationError("n must be >= 2")
    logn = math.log(n)
    diam2 = WeakLpBall(p, n).diameter ** 2
    rate = min(sigma ** (2 - p) * logn ** ((2 - p) / 2), diam2)
    ok = False
    if sigma > 0:
        ratio = math.log(n * sigma**p * logn ** (p / 2)) / logn
        lhs = sigma ** ((4 - 2 * p) / 4) * logn ** ((2 - p) / 4)
        ok = _in_window(ratio) and lhs >= n ** (0.5 - 1.0 / p)
    return {"rate": rate, "regime_ok": ok}


def maurey_inequality(eps, N, sigma, c=16.0, c_maurey=2.0):
    """eps^2/sigma^2 - ceil(4c^2/eps^2) log(C + 4 C eps^2 N / c^2); <= 0 is feasible."""
    eps = np.asarray(eps, dtype=float)
    k = np.ceil(4.0 * c * c / (eps * eps))
    return eps * eps / (sigma * sigma) - k * np.log(c_maurey + 4.0 * c_maurey * eps * eps * N / (c * c))


def maurey_epsilon(N: int, sigma: float, c: float = 16.0, c_maurey: float = 2.0,
                   grid: int = 4000) -> float:
    """sup of the feasible set of the Maurey-type inequality.

    The feasible set need not be an interval (the ceiling jumps), so we
    find the last feasible point of a geometric scan and refine the sign
    change after it by bisection.
    """
    if N < 2:
        raise ValidationError("N must be >= 2")
    if sigma == 0:
        return 0.0

    def f(e):
        return float(maurey_inequality(e, N, sigma, c, c_maurey))

    hi = max(sigma, 1.0)
    while f(hi) <= 0 or np.any(maurey_inequality(hi * np.linspace(1, 4, 64), N, sigma, c, c_maurey) <= 0):
        hi *= 4.0
    lo = hi * 1e-9
    es = np.geomspace(lo, hi, grid)
    ok = maurey_inequality(es, N, sigma, c, c_maurey) <= 0
    if not ok.any():
        return 0.0
    j = int(np.nonzero(ok)[0][-1])
    a, b = es[j], es[min(j + 1, grid - 1)]
    for _ in range(100):
        m = 0.5 * (a + b)
        if f(m) <= 0:
            a = m
        else:
            b = m
        if b - a <= 1e-13 * b:
            break
    return float(a)


def maurey_rate_upper(N: int, sigma: float, c: float = 16.0, c_maurey: float = 2.0) -> float:
    e = maurey_epsilon(N, sigma, c, c_maurey)
    return min(e * e, 1.0)
