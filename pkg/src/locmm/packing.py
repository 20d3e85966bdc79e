"""Greedy packings that double as coverings, and packing entropies.

A packing here is a set of points pairwise at least ``separation`` apart
inside B(center, radius) ∩ K. Points are proposed from a scrambled Sobol
stream seeded only by the configuration seed, pulled into the localized
set by exact projection, and accepted greedily in stream order until
``stall_limit`` proposals in a row are rejected. The result never depends
on observed data.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .bodies import ConvexBody, _localized_batch, as_vector
from .errors import EntropyBudgetError, SamplerError, ValidationError

SEP_TOL = 1e-9
MEMBER_TOL = 1e-6
CHUNK = 1024
_RIM_MAX = 20000  # cap on points added by the rim sweep


@dataclass(frozen=True)
class PackingConfig:
    c_const: float = 16.0
    candidate_budget: int = 4000
    stall_limit: int = 500
    center_candidates: int = 32
    seed: int = 0
    max_expected: float = 1e6  # dimension guard for entropy requests

    def __post_init__(self):
        if not self.c_const >= 8:
            raise ValidationError("c_const must be >= 8")
        for name in ("candidate_budget", "stall_limit", "center_candidates"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def key(self):
        return (self.c_const, self.candidate_budget, self.stall_limit, int(self.seed))


@dataclass
class PackingSet:
    body: ConvexBody
    center: np.ndarray
    radius: float
    separation: float
    points: np.ndarray
    certified_cover_fraction: float | None = None
    exhausted: bool = False  # candidate budget ran out before the stall rule fired

    def __len__(self):
        return len(self.points)

    @property
    def cardinality(self) -> int:
        return len(self.points)

    def to_dict(self):
        return {
            "body": self.body.descriptor(),
            "center": self.center.tolist(),
            "radius": self.radius,
            "separation": self.separation,
            "cardinality": self.cardinality,
            "points": self.points.tolist(),
            "certified_cover_fraction": self.certified_cover_fraction,
            "budget_exhausted": self.exhausted,
        }


@dataclass
class EntropyEstimate:
    epsilon: float
    log_count: float
    per_center_counts: list = field(default_factory=list)
    method: str = "greedy-sampled"

    @property
    def count(self) -> int:
        return int(round(math.exp(self.log_count)))

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "log_count": self.log_count,
            "method": self.method,
            "per_center_counts": [
                {"center": np.asarray(c).tolist(), "count": int(k)}
                for c, k in self.per_center_counts
            ],
        }


# ---------------------------------------------------------------------------
# candidate stream


@lru_cache(maxsize=64)
def _unit_stream(n: int, seed: int, budget: int) -> np.ndarray:
    """Scrambled Sobol points in [-1, 1]^n, depending only on (n, seed, budget)."""
    m = max(1, math.ceil(math.log2(max(budget, 2))))
    rng = np.random.default_rng([int(seed), n, 0x50B0])
    eng = qmc.Sobol(d=n, scramble=True, seed=rng)
    U = 2.0 * eng.random_base2(m)[:budget] - 1.0
    U.setflags(write=False)
    return U


def _sort_lex(P):
    order = np.lexsort(P.T[::-1])
    return P[order]


def _greedy(cands_iter, first, sep, stall_limit, existing=None):
    """Sequential greedy acceptance over chunks; exact equivalent of a one-by-one scan.

    A candidate is rejected when it lies strictly closer than ``sep`` to an
    accepted point. With ``existing`` given, those points block candidates
    but are not returned, and ``stall_limit=None`` disables the stall rule.
    Returns (accepted points, budget_exhausted).
    """
    if existing is not None:
        accepted = [existing]
        skip = 1
    else:
        accepted = [first[None, :]]
        skip = 0
    last = -1  # stream position of the latest acceptance
    base = 0
    stop = False
    for C in cands_iter:
        tree = cKDTree(np.concatenate(accepted))
        d, _ = tree.query(C, k=1, distance_upper_bound=sep)
        free = np.nonzero(~(d < sep))[0]
        take = []
        if free.size:
            S = C[free]
            pairs = cKDTree(S).query_pairs(sep, output_type="ndarray")
            nbrs = None
            if len(pairs):
                dd = np.linalg.norm(S[pairs[:, 0]] - S[pairs[:, 1]], axis=1)
                pairs = pairs[dd < sep]
                pairs = pairs[np.argsort(pairs[:, 0], kind="stable")]
                starts = np.searchsorted(pairs[:, 0], np.arange(len(S) + 1))
                nbrs = (pairs[:, 1], starts)
            blocked = np.zeros(len(S), dtype=bool)
            for li in range(len(S)):
                if blocked[li]:
                    continue
                pos = base + int(free[li])
                if stall_limit is not None and pos - last - 1 >= stall_limit:
                    stop = True
                    break
                take.append(li)
                last = pos
                if nbrs is not None and nbrs[1][li] < nbrs[1][li + 1]:
                    blocked[nbrs[0][nbrs[1][li]:nbrs[1][li + 1]]] = True
            if take:
                accepted.append(S[take])
        base += len(C)
        if stall_limit is not None and base - last - 1 >= stall_limit:
            stop = True
        if stop:
            break
    rest = accepted[skip:]
    out = np.concatenate(rest) if rest else np.zeros((0, accepted[0].shape[1]))
    return out, not stop


@lru_cache(maxsize=16)
def _sweep_directions(n: int) -> np.ndarray:
    """Fixed unit directions used to probe the rim of each accepted ball."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = (np.arange(12) + 0.5) * (2 * np.pi / 12)
        return np.column_stack([np.cos(t), np.sin(t)])
    m = min(8 * n * n, 256)
    # Fibonacci-style spiral on the first three axes, random rotation for the rest
    rng = np.random.default_rng([n, 0xD1CE])
    G = rng.standard_normal((m, n))
    if n == 3:
        k = np.arange(m) + 0.5
        z = 1 - 2 * k / m
        phi = k * np.pi * (3 - np.sqrt(5))
        r = np.sqrt(1 - z * z)
        G = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return G / np.linalg.norm(G, axis=1, keepdims=True)


def _rim_sweep(body, center, radius, P, sep, max_new, rounds=50):
    """Offer points just outside each accepted ball until a pass adds nothing.

    The uncovered part of the localized set is bounded by the rims of the
    accepted balls, so proposing rim points closes the holes a quasi-random
    stream leaves behind once its resolution drops below the separation.
    """
    D = _sweep_directions(body.dim) * (sep * (1.0 + 1e-7))
    fresh = P
    total = P
    added = 0
    for _ in range(rounds):
        C = (fresh[:, None, :] + D[None, :, :]).reshape(-1, body.dim)
        chunks = (_localized_batch(body, center, radius, C[s:s + CHUNK])
                  for s in range(0, len(C), CHUNK))
        new = _greedy_extend(total, chunks, sep)
        if len(new) == 0:
            break
        total = np.concatenate([total, new])
        fresh = new
        added += len(new)
        if added >= max_new:
            break
    return total


def _greedy_extend(existing, cands_iter, sep):
    """Greedy pass with no stall rule; returns only the newly accepted points."""
    P, _ = _greedy(cands_iter, None, sep, None, existing=existing)
    return P


def _chunks(body, center, radius, U):
    for s in range(0, len(U), CHUNK):
        X = center + radius * U[s:s + CHUNK]
        yield _localized_batch(body, center, radius, X)


class _WholeSpace(ConvexBody):
    kind = "whole_space"
    bounded = False

    def _project(self, X):
        return X

    def _inside(self, X):
        return np.ones(len(X), dtype=bool)

    def descriptor(self):
        return {"type": self.kind, "n": self.dim}


@lru_cache(maxsize=256)
def _unit_ball_packing(n, ratio, seed, budget, stall):
    """Greedy packing of the unit ball at separation ``ratio``, reused for interior balls."""
    U = _unit_stream(n, seed, budget)
    space = _WholeSpace(n)
    zero = np.zeros(n)
    P, exhausted = _greedy(_chunks(space, zero, 1.0, U), zero, ratio, stall)
    P = _rim_sweep(space, zero, 1.0, P, ratio, max_new=_RIM_MAX)
    P.setflags(write=False)
    return P, exhausted


class _LRU:
    def __init__(self, max_points=4_000_000):
        self.data = OrderedDict()
        self.points = 0
        self.max_points = max_points

    def get(self, key):
        v = self.data.get(key)
        if v is not None:
            self.data.move_to_end(key)
        return v

    def put(self, key, value):
        if key in self.data:
            return
        self.data[key] = value
        self.points += len(value.points)
        while self.points > self.max_points and len(self.data) > 1:
            _, old = self.data.popitem(last=False)
            self.points -= len(old.points)

    def clear(self):
        self.data.clear()
        self.points = 0


_PACK_CACHE = _LRU()


def clear_caches():
    _PACK_CACHE.clear()
    _unit_ball_packing.cache_clear()


def greedy_packing(body: ConvexBody, center, radius: float, separation: float,
                   cfg: PackingConfig | None = None) -> PackingSet:
    """Greedy-until-stall packing of B(center, radius) ∩ body at the given separation."""
    cfg = cfg or PackingConfig()
    center = as_vector(center, body.dim)
    radius = float(radius)
    separation = float(separation)
    if not (radius > 0 and separation > 0):
        raise ValidationError("radius and separation must be positive")
    if not body.contains(center, MEMBER_TOL):
        raise ValidationError("packing center must be a member of the body")
    key = (body.digest(), center.tobytes(), radius, separation, cfg.key())
    hit = _PACK_CACHE.get(key)
    if hit is not None:
        return hit
    if separation > 2.0 * radius:
        ps = PackingSet(body, center, radius, separation, center[None, :].copy())
        _PACK_CACHE.put(key, ps)
        return ps
    if body.dim == 1:
        P, exhausted = _interval_packing(body, center, radius, separation), False
    elif body.contains_ball(center, radius):
        unit, exhausted = _unit_ball_packing(body.dim, separation / radius, int(cfg.seed),
                                             cfg.candidate_budget, cfg.stall_limit)
        P = center + radius * unit
    else:
        U = _unit_stream(body.dim, int(cfg.seed), cfg.candidate_budget)
        P, exhausted = _greedy(_chunks(body, center, radius, U), center, separation,
                               cfg.stall_limit)
        P = _rim_sweep(body, center, radius, P, separation, max_new=_RIM_MAX)
    ps = PackingSet(body, center, radius, separation, _sort_lex(P), exhausted=exhausted)
    _PACK_CACHE.put(key, ps)
    return ps


def _interval_packing(body, center, radius, sep):
    """Left-to-right sweep of the interval B(center, radius) ∩ K.

    In one dimension the greedy rule run on sorted candidates is exact: it
    attains the packing number floor(length / sep) + 1.
    """
    far = np.array([[center[0] - radius - 1.0], [center[0] + radius + 1.0]])
    lo, hi = _localized_batch(body, center, radius, far)[:, 0]
    m = int(math.floor((hi - lo) / sep * (1.0 + 1e-12))) + 1
    pts = np.minimum(lo + sep * np.arange(m), hi)
    return pts[:, None]


def _method(body):
    return "exhaustive-grid" if body.dim == 1 else "greedy-sampled"


def verify_packing(ps: PackingSet) -> bool:
    P = np.asarray(ps.points, dtype=float)
    if len(P) == 0:
        return False
    if len(P) > 1:
        d, _ = cKDTree(P).query(P, k=2)
        if np.min(d[:, 1]) < ps.separation - SEP_TOL:
            return False
    if np.any(np.linalg.norm(P - ps.center, axis=1) > ps.radius + MEMBER_TOL):
        return False
    return bool(np.all(ps.body.contains(P, MEMBER_TOL)))


def sample_localized(body, center, radius, count, seed, max_reject=0.9999):
    """Uniform draws from B(center, radius) ∩ body by rejection from the ball."""
    rng = np.random.default_rng([int(seed), 0xC0FE])
    n = body.dim
    out, got, tried = [], 0, 0
    batch = max(256, count)
    while got < count:
        G = rng.standard_normal((batch, n))
        G /= np.linalg.norm(G, axis=1, keepdims=True)
        R = rng.random(batch) ** (1.0 / n)
        X = center + radius * R[:, None] * G
        ok = body.contains(X, 0.0)
        tried += batch
        got += int(ok.sum())
        out.append(X[ok])
        if tried >= 20_000 and got / tried < 1.0 - max_reject:
            raise SamplerError("rejection rate above 0.9999; localized set looks degenerate")
    return np.concatenate(out)[:count]


def certify_covering(body: ConvexBody, ps: PackingSet, probe_count: int = 10_000,
                     seed: int = 0) -> float:
    """Fraction of uniform probes of the localized set within ``separation`` of the packing."""
    if probe_count < 1:
        raise ValidationError("probe_count must be >= 1")
    probes = sample_localized(body, ps.center, ps.radius, probe_count, seed)
    d, _ = cKDTree(ps.points).query(probes, k=1)
    return float(np.mean(d <= ps.separation))


def certified(ps: PackingSet, probe_count=10_000, seed=0) -> PackingSet:
    return replace(ps, certified_cover_fraction=certify_covering(ps.body, ps, probe_count, seed))


# ---------------------------------------------------------------------------
# entropies


def expected_count(body, center, radius, separation) -> float:
    """Crude upper estimate of a packing's size, used as a dimension guard."""
    lo, hi = body.bbox()
    w = np.minimum(hi - lo, 2.0 * radius)
    boxed = float(np.prod(w / separation + 1.0))
    balled = (2.0 * radius / separation + 1.0) ** body.dim
    return min(boxed, balled)


def _guard(body, center, radius, separation, cfg):
    est = expected_count(body, center, radius, separation)
    if est > cfg.max_expected:
        raise EntropyBudgetError(
            f"expected packing size {est:.3g} exceeds the guard {cfg.max_expected:.3g}")


def local_entropy_at(body, theta, epsilon: float, cfg: PackingConfig | None = None,
                     guard: bool = True) -> EntropyEstimate:
    cfg = cfg or PackingConfig()
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    theta = as_vector(theta, body.dim)
    sep = epsilon / cfg.c_const
    if guard:
        _guard(body, theta, epsilon, sep, cfg)
    ps = greedy_packing(body, theta, epsilon, sep, cfg)
    method = _method(body) + ("+budget-exhausted" if ps.exhausted else "")
    return EntropyEstimate(float(epsilon), math.log(ps.cardinality),
                           [(theta, ps.cardinality)], method)


def entropy_centers(body: ConvexBody, cfg: PackingConfig) -> np.ndarray:
    """Deterministic center set for the sup over theta."""
    pts = [body.center[None, :], body.extreme_points()]
    have = sum(len(p) for p in pts)
    extra = max(cfg.center_candidates - have, 0)
    if extra:
        pts.append(body.boundary_points(extra, cfg.seed))
    P = np.concatenate(pts)
    P = body.project(P)  # snap onto the body; analytic points are already members
    _, first = np.unique(np.round(P, 12), axis=0, return_index=True)
    return P[np.sort(first)][: cfg.center_candidates]


def local_entropy(body, epsilon: float, cfg: PackingConfig | None = None,
                  guard: bool = True) -> EntropyEstimate:
    """Max over the finite center set of the localized log packing count.

    If some candidate center has the whole ball B(theta, epsilon) inside the
    body, every other localized set is a subset of a congruent ball, so that
    center attains the sup and the rest are skipped.
    """
    cfg = cfg or PackingConfig()
    centers = entropy_centers(body, cfg)
    for theta in centers:
        if body.contains_ball(theta, epsilon):
            est = local_entropy_at(body, theta, epsilon, cfg, guard=guard)
            est.method = est.method.replace(_method(body), _method(body) + "+interior-dominates")
            return est
    counts = []
    flags = set()
    for theta in centers:
        est = local_entropy_at(body, theta, epsilon, cfg, guard=guard)
        counts.append((theta, est.per_center_counts[0][1]))
        if "budget-exhausted" in est.method:
            flags.add("budget-exhausted")
    best = max(k for _, k in counts)
    method = _method(body) + "+finite-center-sup"
    if flags:
        method += "+budget-exhausted"
    return EntropyEstimate(float(epsilon), math.log(best), counts, method)


def global_entropy(body, epsilon: float, cfg: PackingConfig | None = None,
                   guard: bool = True) -> EntropyEstimate:
    cfg = cfg or PackingConfig()
    if not body.bounded:
        raise ValidationError("global entropy needs a bounded body")
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    c = body.center
    r = body.diameter
    if guard:
        _guard(body, c, r, epsilon, cfg)
    ps = greedy_packing(body, c, r, epsilon, cfg)
    method = _method(body) + ("+budget-exhausted" if ps.exhausted else "")
    return EntropyEstimate(float(epsilon), math.log(ps.cardinality),
                           [(c, ps.cardinality)], method)


def entropy_curve(body, epsilons, cfg=None, kind="local"):
    fn = local_entropy if kind == "local" else global_entropy
    return [fn(body, float(e), cfg) for e in epsilons]


def _silence_sobol():
    warnings.filterwarnings("ignore", message=".*balance properties.*")


_silence_sobol()
