"""Closed convex sets with membership, projection and diameter oracles.

Bodies are immutable. Every oracle accepts a single point of shape (n,)
or a batch of shape (m, n) and answers in kind.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math

import numpy as np

from . import projections as pj
from .errors import ConvergenceError, ValidationError


def as_vector(x, n: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector has non-finite entries")
    if n is not None and v.size != n:
        raise ValidationError(f"dimension mismatch: got {v.size}, expected {n}")
    return v


def _positive_list(vals, name):
    arr = np.asarray(vals, dtype=float).ravel()
    if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValidationError(f"{name} must be a non-empty list of positive numbers")
    return arr


class ConvexBody:
    """Base class. Subclasses supply ``_project`` and ``_inside`` on batches."""

    kind = "body"
    bounded = True

    def __init__(self, dim: int):
        if dim < 1:
            raise ValidationError("dimension must be >= 1")
        self.dim = int(dim)

    # -- to be provided by subclasses
    def _project(self, X):
        raise NotImplementedError

    def _inside(self, X):
        return np.linalg.norm(X - self._project(X), axis=1) == 0.0

    def descriptor(self) -> dict:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        return math.inf

    def bbox(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    def contains_ball(self, center, radius) -> bool:
        """Cheap sufficient test for B(center, radius) being inside the body."""
        return False

    def extreme_points(self) -> np.ndarray:
        return np.zeros((0, self.dim))

    @property
    def center(self) -> np.ndarray:
        return self.project(np.zeros(self.dim))

    # -- public API
    def _batch(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValidationError(
                f"dimension mismatch: body has n={self.dim}, got shape {np.shape(x)}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite coordinates")
        return X, single

    def project(self, x):
        X, single = self._batch(x)
        Z = self._project(X)
        return Z[0] if single else Z

    def contains(self, x, tol: float = 0.0):
        if tol < 0:
            raise ValidationError("tol must be >= 0")
        X, single = self._batch(x)
        ok = self._inside(X)
        rest = np.nonzero(~ok)[0]
        if rest.size and tol > 0:
            d = np.linalg.norm(X[rest] - self._project(X[rest]), axis=1)
            ok[rest] = d <= tol
        return bool(ok[0]) if single else ok

    def digest(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def boundary_points(self, count: int, seed: int) -> np.ndarray:
        """Seeded boundary points: far-away random directions projected back."""
        if count <= 0:
            return np.zeros((0, self.dim))
        rng = np.random.default_rng([int(seed), 0xB0DD])
        G = rng.standard_normal((count, self.dim))
        G /= np.linalg.norm(G, axis=1, keepdims=True)
        reach = 2.0 * self.diameter if self.bounded else 10.0
        return self.project(self.center + reach * G)

    def __repr__(self):
        return f"{type(self).__name__}({json.dumps(self.descriptor())})"

    def __eq__(self, other):
        return isinstance(other, ConvexBody) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(self.digest())


class Hyperrectangle(ConvexBody):
    """Centered box with side lengths a_i, i.e. prod [-a_i/2, a_i/2]."""

    kind = "hyperrectangle"

    def __init__(self, a):
        self.a = _positive_list(a, "side lengths a")
        super().__init__(self.a.size)
        self.half = self.a / 2.0

    def descriptor(self):
        return {"type": self.kind, "a": self.a.tolist()}

    def _project(self, X):
        return pj.project_box(X, -self.half, self.half)

    def _inside(self, X):
        return np.all(np.abs(X) <= self.half, axis=1)

    @property
    def diameter(self):
        return float(np.sqrt(np.sum(self.a**2)))

    @property
    def center(self):
        return np.zeros(self.dim)

    def bbox(self):
        return -self.half.copy(), self.half.copy()

    def contains_ball(self, center, radius):
        return bool(np.all(np.abs(center) + radius <= self.half))

    def extreme_points(self):
        faces = np.concatenate([np.diag(self.half), -np.diag(self.half)])
        if self.dim <= 6:
            signs = np.array(list(itertools.product([1.0, -1.0], repeat=self.dim)))
            return np.concatenate([faces, signs * self.half])
        return faces


class Ellipsoid(ConvexBody):
    """Axis-aligned ellipsoid {x : sum x_i^2 / a_i <= 1}.

    Any order of the squared semi-axes a_i is accepted here; the rate and
    truncation formulas that need them ascending check that themselves.
    """

    kind = "ellipsoid"

    def __init__(self, a):
        self.a = _positive_list(a, "squared semi-axes a")
        super().__init__(self.a.size)

    @property
    def ascending(self) -> bool:
        return bool(np.all(np.diff(self.a) >= 0))

    def descriptor(self):
        return {"type": self.kind, "a": self.a.tolist()}

    def _project(self, X):
        return pj.project_ellipsoid(X, self.a)

    def _inside(self, X):
        return np.sum(X * X / self.a, axis=1) <= 1.0

    @property
    def diameter(self):
        return float(2.0 * np.sqrt(self.a.max()))

    @property
    def center(self):
        return np.zeros(self.dim)

    def bbox(self):
        s = np.sqrt(self.a)
        return -s, s

    def contains_ball(self, center, radius):
        q = np.sqrt(np.sum(center * center / self.a))
        return bool(q + radius / np.sqrt(self.a.min()) <= 1.0)

    def extreme_points(self):
        s = np.diag(np.sqrt(self.a))
        return np.concatenate([s, -s])


class L1Ball(ConvexBody):
    kind = "l1ball"

    def __init__(self, radius, n):
        if not radius > 0:
            raise ValidationError("l1 radius must be positive")
        super().__init__(int(n))
        self.radius = float(radius)

    def descriptor(self):
        return {"type": self.kind, "radius": self.radius, "n": self.dim}

    def _project(self, X):
        return pj.project_l1(X, self.radius)

    def _inside(self, X):
        return np.sum(np.abs(X), axis=1) <= self.radius

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def center(self):
        return np.zeros(self.dim)

    def bbox(self):
        return np.full(self.dim, -self.radius), np.full(self.dim, self.radius)

    def contains_ball(self, center, radius):
        return bool(np.sum(np.abs(center)) + radius * np.sqrt(self.dim) <= self.radius)

    def extreme_points(self):
        e = self.radius * np.eye(self.dim)
        return np.concatenate([e, -e])


def weak_lp_norm(x, p: float) -> float:
    """max_i i^(1/p) times the mean of the i largest |x_j|."""
    if not 1.0 < p < 2.0:
        raise ValidationError("p must lie in (1, 2)")
    v = np.sort(np.abs(np.asarray(x, dtype=float).ravel()))[::-1]
    i = np.arange(1, v.size + 1)
    return float(np.max(i ** (1.0 / p) * np.cumsum(v) / i))


def _weak_lp_caps(p, n):
    # sum of the k largest |x_j| may not exceed k^(1 - 1/p)
    return np.arange(1, n + 1) ** (1.0 - 1.0 / p)


class WeakLpBall(ConvexBody):
    """Unit ball of the weak-l_p type norm max_i i^(1/p) x**_i."""

    kind = "weak_lp"

    def __init__(self, p, n):
        if not 1.0 < p < 2.0:
            raise ValidationError("p must lie in (1, 2)")
        super().__init__(int(n))
        self.p = float(p)
        self.caps = _weak_lp_caps(self.p, self.dim)

    def descriptor(self):
        return {"type": self.kind, "p": self.p, "n": self.dim}

    def _inside(self, X):
        S = np.cumsum(-np.sort(-np.abs(X), axis=1), axis=1)
        return np.all(S <= self.caps, axis=1)

    def _project(self, X):
        out = X.copy()
        inside = self._inside(X)
        projectors = [
            (lambda z, k=k: pj.project_topk(z, k, self.caps[k - 1]))
            for k in range(1, self.dim + 1)
        ]
        for i in np.nonzero(~inside)[0]:
            z = pj.dykstra(projectors, X[i])
            # Dykstra stops close to, not exactly on, the set
            S = np.cumsum(np.sort(np.abs(z))[::-1])
            over = np.max(S / self.caps)
            if over > 1.0:
                z = z / over
            out[i] = z
        return out

    @property
    def diameter(self):
        # the all-constraints-tight vertex weakly majorizes every member
        inc = np.diff(np.concatenate([[0.0], self.caps]))
        return float(2.0 * np.sqrt(np.sum(inc**2)))

    @property
    def center(self):
        return np.zeros(self.dim)

    def bbox(self):
        return -np.ones(self.dim), np.ones(self.dim)

    def extreme_points(self):
        e = np.eye(self.dim)
        inc = np.diff(np.concatenate([[0.0], self.caps]))
        return np.concatenate([e, -e, inc[None, :], -inc[None, :]])


class VPolytope(ConvexBody):
    """Convex hull of a finite vertex list."""

    kind = "polytope"

    def __init__(self, vertices):
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[0] < 1 or not np.all(np.isfinite(V)):
            raise ValidationError("polytope needs a 2-D array of finite vertices")
        super().__init__(V.shape[1])
        self.vertices = V

    def descriptor(self):
        return {"type": self.kind, "vertices": self.vertices.tolist()}

    def _project(self, X):
        return pj.project_hull(X, self.vertices)

    def _inside(self, X):
        return np.linalg.norm(X - self._project(X), axis=1) <= 1e-12

    @property
    def diameter(self):
        V = self.vertices
        D = np.sqrt(np.sum((V[:, None, :] - V[None, :, :]) ** 2, axis=2))
        return float(D.max())

    @property
    def center(self):
        return self.vertices.mean(axis=0)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def extreme_points(self):
        return self.vertices.copy()


class Product(ConvexBody):
    """Cartesian product of bodies; coordinates are concatenated in order."""

    kind = "product"

    def __init__(self, components):
        comps = list(components)
        if len(comps) < 1:
            raise ValidationError("product needs at least one component")
        self.components = comps
        self.slices = []
        start = 0
        for c in comps:
            self.slices.append(slice(start, start + c.dim))
            start += c.dim
        super().__init__(start)
        self.bounded = all(c.bounded for c in comps)

    def descriptor(self):
        return {"type": self.kind, "components": [c.descriptor() for c in self.components]}

    def _project(self, X):
        # the projection onto a product is separable, so one pass is exact
        Z = np.empty_like(X)
        for c, s in zip(self.components, self.slices):
            Z[:, s] = c._project(X[:, s])
        return Z

    def _inside(self, X):
        ok = np.ones(X.shape[0], dtype=bool)
        for c, s in zip(self.components, self.slices):
            ok &= c._inside(X[:, s])
        return ok

    @property
    def diameter(self):
        return float(np.sqrt(sum(c.diameter**2 for c in self.components)))

    @property
    def center(self):
        return np.concatenate([c.center for c in self.components])

    def bbox(self):
        los, his = zip(*(c.bbox() for c in self.components))
        return np.concatenate(los), np.concatenate(his)

    def contains_ball(self, center, radius):
        return all(c.contains_ball(center[s], radius)
                   for c, s in zip(self.components, self.slices))

    def extreme_points(self):
        pts = []
        base = self.center
        for c, s in zip(self.components, self.slices):
            for e in c.extreme_points():
                p = base.copy()
                p[s] = e
                pts.append(p)
        firsts = [c.extreme_points()[:2] for c in self.components]
        if all(len(f) for f in firsts):
            for combo in itertools.product(*firsts):
                pts.append(np.concatenate(combo))
        return np.array(pts) if pts else np.zeros((0, self.dim))


class Halfspace(ConvexBody):
    """{x : <normal, x> <= offset}."""

    kind = "halfspace"
    bounded = False

    def __init__(self, n, normal=None, offset=0.0):
        super().__init__(int(n))
        w = np.zeros(self.dim) if normal is None else as_vector(normal, self.dim)
        if normal is None:
            w[0] = 1.0
        if not np.any(w):
            raise ValidationError("halfspace normal must be nonzero")
        self.normal = w
        self.offset = float(offset)

    def descriptor(self):
        return {"type": self.kind, "n": self.dim, "normal": self.normal.tolist(),
                "offset": self.offset}

    def _project(self, X):
        return pj.project_halfspace(X, self.normal, self.offset)

    def _inside(self, X):
        return X @ self.normal <= self.offset

    def contains_ball(self, center, radius):
        slack = (self.offset - center @ self.normal) / np.linalg.norm(self.normal)
        return bool(slack >= radius)


class Orthant(ConvexBody):
    """Nonnegative orthant."""

    kind = "orthant"
    bounded = False

    def __init__(self, n):
        super().__init__(int(n))

    def descriptor(self):
        return {"type": self.kind, "n": self.dim}

    def _project(self, X):
        return np.maximum(X, 0.0)

    def _inside(self, X):
        return np.all(X >= 0.0, axis=1)

    def bbox(self):
        return np.zeros(self.dim), np.full(self.dim, np.inf)

    def contains_ball(self, center, radius):
        return bool(np.min(center) >= radius)


class Subspace(ConvexBody):
    """Linear span of the first k coordinate axes, or of given basis rows."""

    kind = "subspace"
    bounded = False

    def __init__(self, n, k=1, basis=None):
        super().__init__(int(n))
        if basis is None:
            if not 1 <= int(k) <= self.dim:
                raise ValidationError("subspace k must lie in [1, n]")
            B = np.eye(self.dim)[: int(k)]
        else:
            B = np.atleast_2d(np.asarray(basis, dtype=float))
            if B.shape[1] != self.dim:
                raise ValidationError("basis rows must have length n")
        self._basis_in = B
        Q, _ = np.linalg.qr(B.T)
        self.Q = Q  # orthonormal columns

    def descriptor(self):
        return {"type": self.kind, "n": self.dim, "basis": self._basis_in.tolist()}

    def _project(self, X):
        return (X @ self.Q) @ self.Q.T

    def _inside(self, X):
        R = X - self._project(X)
        return np.all(R == 0.0, axis=1)


class MonotoneCone(ConvexBody):
    """{x : x_1 <= x_2 <= ... <= x_n}."""

    kind = "monotone_cone"
    bounded = False

    def __init__(self, n):
        super().__init__(int(n))

    def descriptor(self):
        return {"type": self.kind, "n": self.dim}

    def _project(self, X):
        return pj.project_monotone(X)

    def _inside(self, X):
        return np.all(np.diff(X, axis=1) >= 0.0, axis=1)

    def contains_ball(self, center, radius):
        if self.dim == 1:
            return True
        return bool(np.min(np.diff(center)) / math.sqrt(2.0) >= radius)


class BallSection(ConvexBody):
    """K intersected with the closed ball B(anchor, radius)."""

    kind = "ball_section"

    def __init__(self, body: ConvexBody, anchor, radius):
        super().__init__(body.dim)
        if not radius > 0:
            raise ValidationError("radius must be positive")
        self.body = body
        self.anchor = as_vector(anchor, body.dim)
        self.radius = float(radius)
        if not body.contains(self.anchor, 1e-6):
            raise ValidationError("ball section anchor must be a member")

    def descriptor(self):
        return {"type": self.kind, "body": self.body.descriptor(),
                "center": self.anchor.tolist(), "radius": self.radius}

    def _project(self, X):
        return _localized_batch(self.body, self.anchor, self.radius, X)

    def _inside(self, X):
        near = np.linalg.norm(X - self.anchor, axis=1) <= self.radius
        return near & self.body._inside(X)

    @property
    def diameter(self):
        # upper bound; exact for cones and half-spaces through the anchor
        return float(min(2.0 * self.radius, self.body.diameter))

    @property
    def center(self):
        return self.anchor.copy()

    def bbox(self):
        lo, hi = self.body.bbox()
        return (np.maximum(lo, self.anchor - self.radius),
                np.minimum(hi, self.anchor + self.radius))

    def contains_ball(self, center, radius):
        return (np.linalg.norm(center - self.anchor) + radius <= self.radius
                and self.body.contains_ball(center, radius))

    def extreme_points(self):
        return self.body.extreme_points()[:0]


# ---------------------------------------------------------------------------
# projection onto B(center, radius) ∩ K


def _localized_batch(body, center, radius, X, max_iter=200):
    """Exact projection onto B(center, radius) ∩ K by a one-parameter search.

    For t in (0, 1] let z(t) = P_K(center + t (x - center)). The distance
    |z(t) - center| is nondecreasing in t, and the projection onto the
    intersection is z(t*) with t* the largest t keeping z(t) in the ball.
    This is the KKT system with the ball multiplier reparametrized. The
    scalar root is found by regula falsi with the Illinois modification,
    falling back to bisection steps when progress stalls.
    """
    Z = pj.project_ball(X, center, radius)
    fine = body._inside(Z)
    todo = np.nonzero(~fine)[0]
    if todo.size == 0:
        return Z
    P = body._project(X[todo])
    in_ball = np.linalg.norm(P - center, axis=1) <= radius
    Z[todo[in_ball]] = P[in_ball]
    todo = todo[~in_ball]
    if todo.size == 0:
        return Z
    D = X[todo] - center

    def phi(t, rows):
        z = body._project(center + t[:, None] * D[rows])
        return np.linalg.norm(z - center, axis=1) - radius, z

    lo = radius / np.linalg.norm(D, axis=1)
    hi = np.ones_like(lo)
    flo, zlo = phi(lo, slice(None))
    fhi = np.linalg.norm(P[~in_ball] - center, axis=1) - radius
    side = np.zeros(lo.size, dtype=int)
    # distances carry rounding noise on the scale of the coordinates
    noise = 1e-13 * radius + 4e-16 * (np.linalg.norm(center) + radius)
    active = np.nonzero(flo < -noise)[0]
    for it in range(max_iter):
        if active.size == 0:
            break
        a = active
        t = (lo[a] * fhi[a] - hi[a] * flo[a]) / (fhi[a] - flo[a])
        width = hi[a] - lo[a]
        bad = ~((t > lo[a]) & (t < hi[a])) | (it % 6 == 5)
        t = np.where(bad, lo[a] + 0.5 * width, t)
        f, z = phi(t, a)
        left = f <= 0
        la, ra = a[left], a[~left]
        lo[la], flo[la], zlo[la] = t[left], f[left], z[left]
        hi[ra], fhi[ra] = t[~left], f[~left]
        fhi[la[side[la] == 1]] *= 0.5
        flo[ra[side[ra] == -1]] *= 0.5
        side[la], side[ra] = 1, -1
        done = (hi[a] - lo[a] <= 1e-13 * hi[a]) | (np.abs(flo[a]) <= noise)
        active = a[~done]
    else:
        raise ConvergenceError("localized projection did not converge")
    r = np.linalg.norm(zlo - center, axis=1)
    over = r > radius
    if np.any(over):
        zlo[over] = center + (zlo[over] - center) * (radius / r[over])[:, None]
    Z[todo] = zlo
    return Z


def _localized_dykstra(body, center, radius, x, tol=1e-13, max_iter=10000):
    return pj.dykstra(
        [lambda z: pj.project_ball(z[None, :], center, radius)[0],
         lambda z: body._project(z[None, :])[0]],
        x, tol=tol, max_iter=max_iter)


def project_localized(body: ConvexBody, center, radius: float, x, method: str = "multiplier"):
    """Project x (or a batch) onto B(center, radius) ∩ body.

    ``method="multiplier"`` (default) searches the ball multiplier directly
    and is accurate to rounding; ``method="dykstra"`` runs Dykstra's
    alternating projections between the ball and the body.
    """
    if not radius > 0:
        raise ValidationError("radius must be positive")
    c = as_vector(center, body.dim)
    if not body.contains(c, 1e-6):
        raise ValidationError("center must be a member of the body")
    X, single = body._batch(x)
    if method == "multiplier":
        Z = _localized_batch(body, c, float(radius), X)
    elif method == "dykstra":
        Z = np.array([_localized_dykstra(body, c, float(radius), row) for row in X])
    else:
        raise ValidationError(f"unknown method {method!r}")
    return Z[0] if single else Z


# ---------------------------------------------------------------------------
# descriptors


def from_descriptor(d: dict) -> ConvexBody:
    if not isinstance(d, dict) or "type" not in d:
        raise ValidationError("body descriptor must be an object with a 'type' key")
    t = str(d["type"]).lower()
    try:
        if t in ("hyperrectangle", "box"):
            return Hyperrectangle(d["a"])
        if t == "segment":
            return Hyperrectangle([2.0 * float(d.get("half_width", 1.0))])
        if t == "ellipsoid":
            return Ellipsoid(d["a"])
        if t in ("l1ball", "l1_ball"):
            # n may be omitted in the short form; the plane is the default
            return L1Ball(d.get("radius", 1.0), d.get("n", 2))
        if t in ("weak_lp", "weaklp", "weak_lp_ball"):
            return WeakLpBall(d["p"], d["n"])
        if t in ("polytope", "vpolytope"):
            return VPolytope(d["vertices"])
        if t == "product":
            return Product([from_descriptor(c) for c in d["components"]])
        if t == "halfspace":
            return Halfspace(d["n"], d.get("normal"), d.get("offset", 0.0))
        if t == "orthant":
            return Orthant(d["n"])
        if t == "subspace":
            return Subspace(d["n"], d.get("k", 1), d.get("basis"))
        if t == "monotone_cone":
            return MonotoneCone(d["n"])
        if t == "ball_section":
            return BallSection(from_descriptor(d["body"]), d["center"], d["radius"])
    except KeyError as exc:
        raise ValidationError(f"descriptor of type {t!r} is missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad descriptor for {t!r}: {exc}") from None
    raise ValidationError(f"unknown body type {t!r}")


def load_body(path) -> ConvexBody:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return from_descriptor(d)


__all__ = [
    "ConvexBody", "Hyperrectangle", "Ellipsoid", "L1Ball", "WeakLpBall", "VPolytope",
    "Product", "Halfspace", "Orthant", "Subspace", "MonotoneCone", "BallSection",
    "project_localized", "weak_lp_norm", "from_descriptor", "load_body", "as_vector",
    "ConvergenceError",
]
