"""Estimators for the Gaussian sequence model Y = mu + xi, mu in K.

The main estimator walks down a tree of localized packings: at level k it
packs B(nu, d/2^(k-1)) ∩ K at separation d/(2^k (C+1)), moves nu to the
packing point nearest Y and repeats. Packings depend on the body, center,
level and seed only, so they are cached and shared across observations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bodies import BallSection, ConvexBody, Ellipsoid, as_vector
from .errors import ConvergenceError, ValidationError
from .packing import PackingConfig, greedy_packing
from .rates import cached_local_entropy


@dataclass(frozen=True)
class EstimatorConfig:
    c_const: float = 16.0
    sigma_lower: float | None = None  # known lower bound on the noise level
    max_depth_cap: int = 40
    seed: int = 0
    packing: PackingConfig = field(default_factory=PackingConfig)
    m_cap: int = 30  # largest radius exponent tried by the unbounded estimator

    def __post_init__(self):
        if not self.c_const >= 8:
            raise ValidationError("c_const must be >= 8")
        if self.max_depth_cap < 1:
            raise ValidationError("max_depth_cap must be >= 1")
        if self.sigma_lower is not None and self.sigma_lower < 0:
            raise ValidationError("sigma_lower must be >= 0")
        if self.packing.c_const != self.c_const or self.packing.seed != self.seed:
            p = self.packing
            object.__setattr__(self, "packing", PackingConfig(
                self.c_const, p.candidate_budget, p.stall_limit, p.center_candidates,
                self.seed, p.max_expected))


@dataclass
class Level:
    level: int
    center: np.ndarray
    radius: float
    separation: float
    chosen: np.ndarray
    cardinality: int

    def to_dict(self):
        return {"level": self.level, "center": self.center.tolist(), "radius": self.radius,
                "separation": self.separation, "chosen": self.chosen.tolist(),
                "cardinality": self.cardinality}


@dataclass
class EstimateTrajectory:
    levels: list
    final_point: np.ndarray
    diameter: float
    depth_capped: bool = False
    kind: str = "iterative"
    extras: dict = field(default_factory=dict)

    @property
    def upsilon(self) -> list:
        """Anchor followed by the chosen point of every level."""
        if not self.levels:
            return [self.final_point]
        return [self.levels[0].center] + [lv.chosen for lv in self.levels]

    def to_dict(self):
        out = {"kind": self.kind, "diameter": self.diameter,
               "depth": len(self.levels), "depth_capped": self.depth_capped,
               "final_point": self.final_point.tolist(),
               "levels": [lv.to_dict() for lv in self.levels]}
        out.update(self.extras)
        return out


@dataclass
class SplitSample:
    y1: np.ndarray
    y2: np.ndarray
    eta_seed: int


def nearest_index(points: np.ndarray, y: np.ndarray) -> int:
    """Index of the nearest row; exact ties go to the earliest row.

    Packing points are stored in lexicographic order, so the earliest of
    the tied rows is the lexicographically least.
    """
    d2 = np.sum((points - y) ** 2, axis=1)
    return int(np.argmin(d2))


# ---------------------------------------------------------------------------
# bounded, finite-depth estimator


class PackingTree:
    """Lazily built packing tree of a bounded body, keyed by (level, center)."""

    def __init__(self, body: ConvexBody, cfg: EstimatorConfig, diameter: float | None = None):
        if not body.bounded:
            raise ValidationError("the iterative estimator needs a bounded body")
        self.body = body
        self.cfg = cfg
        self.d = float(body.diameter if diameter is None else diameter)
        self.C = cfg.c_const / 2.0 - 1.0
        self._nodes = {}

    def radius(self, k):
        return self.d / 2.0 ** (k - 1)

    def separation(self, k):
        return self.d / (2.0**k * (self.C + 1.0))

    def node(self, k: int, center: np.ndarray) -> np.ndarray:
        key = (k, center.tobytes())
        P = self._nodes.get(key)
        if P is None:
            ps = greedy_packing(self.body, center, self.radius(k), self.separation(k),
                                self.cfg.packing)
            P = ps.points
            self._nodes[key] = P
        return P

    def __len__(self):
        return len(self._nodes)


def depth_bound(body: ConvexBody, sigma_lower: float, cfg: EstimatorConfig | None = None,
                diameter: float | None = None) -> int:
    """Largest J <= cap with eps_J^2/s^2 > 16 max(log M_loc(4d/2^J), log 2).

    eps_J = d (c/2 - 3) / (2^(J-2) c). Returns 1 when no J qualifies.
    """
    cfg = cfg or EstimatorConfig()
    if not sigma_lower > 0:
        raise ValidationError("sigma_lower must be positive")
    if not body.bounded:
        raise ValidationError("depth_bound needs a bounded body")
    d = float(body.diameter if diameter is None else diameter)
    c = cfg.c_const
    best = 1
    floor = 16.0 * math.log(2.0)
    for J in range(1, cfg.max_depth_cap + 1):
        eps_J = d * (c / 2.0 - 3.0) / (2.0 ** (J - 2) * c)
        lhs = eps_J**2 / sigma_lower**2
        if lhs <= floor:
            break  # lhs only shrinks with J
        logm = cached_local_entropy(body, 4.0 * d / 2.0**J, cfg.packing).log_count
        if lhs > 16.0 * max(logm, math.log(2.0)):
            best = J
    return best


def iterative_estimate(body: ConvexBody, y, depth: int, cfg: EstimatorConfig | None = None,
                       anchor=None, tree: PackingTree | None = None) -> EstimateTrajectory:
    cfg = cfg or EstimatorConfig()
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    y = as_vector(y, body.dim)
    if tree is None:
        tree = PackingTree(body, cfg)
    nu = body.center if anchor is None else as_vector(anchor, body.dim)
    if not body.contains(nu, 1e-6):
        raise ValidationError("anchor must be a member of the body")
    levels = []
    for k in range(1, depth + 1):
        P = tree.node(k, nu)
        chosen = P[nearest_index(P, y)]
        levels.append(Level(k, nu, tree.radius(k), tree.separation(k), chosen, len(P)))
        nu = chosen
    return EstimateTrajectory(levels, nu.copy(), tree.d)


class IterativeEstimator:
    """Finite-depth packing estimator with depth from a known noise floor."""

    def __init__(self, body: ConvexBody, cfg: EstimatorConfig | None = None,
                 depth: int | None = None, sigma_lower: float | None = None):
        self.body = body
        self.cfg = cfg or EstimatorConfig()
        self.tree = PackingTree(body, self.cfg)
        s = self.cfg.sigma_lower if sigma_lower is None else sigma_lower
        self.capped = False
        if depth is None:
            if s is None or s == 0:
                warnings.warn("no noise lower bound given; running to the depth cap",
                              stacklevel=2)
                depth = self.cfg.max_depth_cap
                self.capped = True
            else:
                depth = depth_bound(body, s, self.cfg)
                self.capped = depth == self.cfg.max_depth_cap
        self.depth = int(depth)

    def trajectory(self, y) -> EstimateTrajectory:
        tr = iterative_estimate(self.body, y, self.depth, self.cfg, tree=self.tree)
        tr.depth_capped = self.capped
        return tr

    def __call__(self, y, rng=None):
        return self.trajectory(y).final_point


# ---------------------------------------------------------------------------
# baselines


def lse(body: ConvexBody, y) -> np.ndarray:
    return body.project(as_vector(y, body.dim))


def truncation_level(a, sigma: float) -> int:
    """k minimizing k sigma^2 + a_{n-k} (a_0 = 0); ties go to the smallest k."""
    a = np.asarray(a, dtype=float)
    n = a.size
    ext = np.concatenate([[0.0], a])
    obj = [k * sigma * sigma + ext[n - k] for k in range(n + 1)]
    return int(np.argmin(obj))


def projection_estimate(body: Ellipsoid, y, sigma: float) -> np.ndarray:
    """Keep the k longest axes, zero the rest, then project onto the ellipsoid."""
    if not isinstance(body, Ellipsoid):
        raise ValidationError("projection_estimate needs an ellipsoid")
    if not body.ascending:
        raise ValidationError("projection_estimate needs the ellipsoid axes sorted ascending")
    y = as_vector(y, body.dim).copy()
    k = truncation_level(body.a, sigma)
    y[: body.dim - k] = 0.0
    return body.project(y)


def two_point_test(y, nu1, nu2) -> int:
    y, nu1, nu2 = (np.asarray(v, dtype=float) for v in (y, nu1, nu2))
    if not (y.shape == nu1.shape == nu2.shape):
        raise ValidationError("dimension mismatch")
    return int(np.linalg.norm(y - nu1) >= np.linalg.norm(y - nu2))


# ---------------------------------------------------------------------------
# unbounded sets


def split_sample(y, sigma: float, eta_seed: int) -> SplitSample:
    y = np.asarray(y, dtype=float)
    eta = sigma * np.random.default_rng([int(eta_seed), 0xE7A]).standard_normal(y.shape)
    return SplitSample(y + eta, y - eta, int(eta_seed))


class UnboundedEstimator:
    """Sample-split aggregation of bounded estimates on growing balls.

    Per observation: split Y into Y1 = Y + eta and Y2 = Y - eta, run the
    bounded estimator against Y1 on B(nu, 2^m) ∩ K for the smallest m whose
    ball reaches the projected observation (plus a noise margin) and a few
    larger m, then select among those candidates by a packing descent
    against Y2.
    """

    def __init__(self, body: ConvexBody, sigma: float, cfg: EstimatorConfig | None = None,
                 anchor=None, extra_radii: int = 2, margin_sds: float = 4.0):
        if not sigma > 0:
            raise ValidationError("the unbounded estimator needs sigma > 0")
        self.body = body
        self.sigma = float(sigma)
        self.cfg = cfg or EstimatorConfig()
        self.anchor = body.project(np.zeros(body.dim)) if anchor is None else as_vector(anchor, body.dim)
        self.extra = int(extra_radii)
        self.margin = margin_sds * math.sqrt(2.0 * body.dim) * self.sigma
        self._sub = {}

    def _sub_estimator(self, m):
        est = self._sub.get(m)
        if est is None:
            section = BallSection(self.body, self.anchor, 2.0**m)
            # Y1 carries noise variance 2 sigma^2
            est = IterativeEstimator(section, self.cfg, sigma_lower=math.sqrt(2.0) * self.sigma)
            self._sub[m] = est
        return est

    def trajectory(self, y, eta_seed: int | None = None) -> EstimateTrajectory:
        y = as_vector(y, self.body.dim)
        seed = self.cfg.seed if eta_seed is None else eta_seed
        split = split_sample(y, self.sigma, seed)
        reach = np.linalg.norm(self.body.project(split.y1) - self.anchor) + self.margin
        m_min = max(1, math.ceil(math.log2(max(reach, 1e-300))))
        if m_min > self.cfg.m_cap:
            raise ConvergenceError("radius cap reached before enclosing the projected observation")
        ms = range(m_min, min(m_min + self.extra, self.cfg.m_cap) + 1)
        cands = np.array([self._sub_estimator(m)(split.y1) for m in ms])
        levels, final = aggregate(cands, split.y2, self.cfg.c_const, self.cfg.max_depth_cap)
        d = float(np.max(np.linalg.norm(cands[:, None] - cands[None], axis=2)))
        return EstimateTrajectory(levels, final, d, kind="unbounded",
                                  extras={"radii_exponents": list(ms),
                                          "candidates": cands.tolist(), "eta_seed": seed})

    def __call__(self, y, rng=None):
        seed = None if rng is None else int(rng.integers(2**63))
        return self.trajectory(y, seed).final_point


def aggregate(cands: np.ndarray, y2: np.ndarray, c_const: float, max_depth: int):
    """Packing descent over a finite candidate list.

    Level k keeps, in index order, candidates inside B(nu, d/2^(k-1)) that
    are at least d/(2^(k+1)(C~+1)) from every kept one, C~ = c/4 - 1, and
    moves nu to the kept candidate nearest y2 (smallest index on ties).
    """
    D = np.linalg.norm(cands[:, None] - cands[None], axis=2)
    d = float(D.max())
    Ct = c_const / 4.0 - 1.0
    cur = 0
    levels = []
    if d == 0.0:
        return levels, cands[0].copy()
    for k in range(1, max_depth + 1):
        r = d / 2.0 ** (k - 1)
        sep = d / (2.0 ** (k + 1) * (Ct + 1.0))
        inside = np.nonzero(D[cur] <= r)[0]
        kept = []
        for i in inside:
            if all(D[i, j] >= sep for j in kept):
                kept.append(int(i))
        dist = np.linalg.norm(cands[kept] - y2, axis=1)
        best = kept[int(np.argmin(dist))]  # kept is in index order
        levels.append(Level(k, cands[cur].copy(), r, sep, cands[best].copy(), len(kept)))
        cur = best
        if len(inside) == 1:
            break
    return levels, cands[cur].copy()


def unbounded_estimate(body: ConvexBody, y, sigma: float, cfg: EstimatorConfig | None = None,
                       eta_seed: int | None = None) -> EstimateTrajectory:
    return UnboundedEstimator(body, sigma, cfg).trajectory(y, eta_seed)
