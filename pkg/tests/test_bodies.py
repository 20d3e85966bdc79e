import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locmm import projections as pj
from locmm.bodies import (BallSection, Ellipsoid, Halfspace, Hyperrectangle, L1Ball, MonotoneCone,
                          Orthant, Product, Subspace, VPolytope, WeakLpBall, as_vector,
                          from_descriptor, project_localized, weak_lp_norm)
from locmm.errors import ConvergenceError, ValidationError

cp = pytest.importorskip("cvxpy")


def families():
    return {
        "box": Hyperrectangle([2.0, 1.0, 3.0]),
        "ellipsoid": Ellipsoid([0.25, 1.0, 4.0]),
        "l1": L1Ball(1.0, 4),
        "weak_lp": WeakLpBall(1.5, 4),
        "polytope": VPolytope([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.3, 0.3, 0.9]]),
        "product": Product([L1Ball(1.0, 2), Hyperrectangle([1.0])]),
        "halfspace": Halfspace(3, normal=[1.0, -1.0, 0.5], offset=0.2),
        "orthant": Orthant(3),
        "subspace": Subspace(3, k=2),
        "monotone": MonotoneCone(4),
        "section": BallSection(MonotoneCone(3), [0.0, 0.0, 0.0], 1.5),
    }


BODIES = families()


# --- examples -------------------------------------------------------------


def test_contains_examples():
    sq = Hyperrectangle([2, 2])
    assert sq.contains([0, 0], 0)
    assert not sq.contains([1.5, 0], 0)
    assert Ellipsoid([4, 1]).contains([2, 0], 0)


def test_project_examples():
    assert np.allclose(Hyperrectangle([2, 2]).project([3, 0]), [1, 0])
    assert np.allclose(L1Ball(1.0, 2).project([1, 1]), [0.5, 0.5])
    assert np.allclose(MonotoneCone(2).project([1, 0]), [0.5, 0.5])


def test_diameter_examples():
    assert Hyperrectangle([3, 4]).diameter == pytest.approx(5.0)
    assert Ellipsoid([1, 4, 9]).diameter == pytest.approx(6.0)
    prod = Product([L1Ball(1.0, 2), L1Ball(1.0, 2)])
    # brute force over vertex pairs of the product
    V = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float)
    W = np.array([np.concatenate([u, v]) for u in V for v in V])
    brute = max(np.linalg.norm(p - q) for p, q in itertools.combinations(W, 2))
    assert prod.diameter == pytest.approx(brute)
    assert prod.diameter == pytest.approx(2 * math.sqrt(2))


def test_localized_examples():
    sq = Hyperrectangle([2, 2])
    assert np.allclose(project_localized(sq, [0, 0], 0.5, [3, 0]), [0.5, 0])
    x = np.array([0.1, -0.2])
    assert np.allclose(project_localized(sq, [0, 0], 0.5, x), x)
    e = Ellipsoid([4, 1])
    got = project_localized(e, [0, 0], 0.1, [2, 0])
    # grid oracle over the feasible set
    g = np.linspace(-0.1, 0.1, 401)
    G = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    G = G[(np.linalg.norm(G, axis=1) <= 0.1) & e.contains(G, 0)]
    best = G[np.argmin(np.linalg.norm(G - [2, 0], axis=1))]
    assert np.allclose(got, [0.1, 0], atol=1e-9)
    assert np.linalg.norm(got - best) < 1e-3


def test_weak_lp_norm_examples():
    assert weak_lp_norm(np.zeros(5), 1.5) == 0.0
    for p in (1.1, 1.5, 1.9):
        assert weak_lp_norm([1, 0, 0, 0], p) == pytest.approx(1.0)
    assert weak_lp_norm([1, 1], 4 / 3) == pytest.approx(2 ** 0.75)
    assert 2 ** 0.75 == pytest.approx(1.6818, abs=1e-4)


def test_descriptor_round_trip():
    for body in BODIES.values():
        again = from_descriptor(body.descriptor())
        assert again.digest() == body.digest()
    short = from_descriptor({"type": "l1ball", "radius": 1.0})
    assert short.dim == 2


@pytest.mark.parametrize("desc", [
    {"type": "hyperrectangle", "a": [1, -2]},
    {"type": "ellipsoid", "a": [0, 1]},
    {"type": "nope"},
    {"type": "product", "components": []},
    {"a": [1]},
    {"type": "polytope"},
])
def test_bad_descriptors(desc):
    with pytest.raises(ValidationError):
        from_descriptor(desc)


def test_vector_validation():
    with pytest.raises(ValidationError):
        as_vector([1.0, np.nan])
    with pytest.raises(ValidationError):
        as_vector([1.0, 2.0], 3)


# --- properties over families ---------------------------------------------


def _random_points(n, rng, m=1000):
    scale = rng.choice([0.3, 1.0, 5.0], size=(m, 1))
    return scale * rng.standard_normal((m, n))


@pytest.mark.parametrize("name", sorted(BODIES))
def test_projection_properties(name):
    body = BODIES[name]
    rng = np.random.default_rng(7)
    X = _random_points(body.dim, rng)
    P = body.project(X)
    assert np.all(body.contains(P, 1e-6))
    assert np.max(np.abs(body.project(P) - P)) < 1e-7
    Y = _random_points(body.dim, rng)
    Q = body.project(Y)
    lhs = np.linalg.norm(P - Q, axis=1)
    rhs = np.linalg.norm(X - Y, axis=1)
    assert np.all(lhs <= rhs + 1e-7)
    inside = body.contains(X, 0)
    if inside.any():
        assert np.max(np.linalg.norm(P[inside] - X[inside], axis=1)) <= 1e-7


@pytest.mark.parametrize("name", sorted(BODIES))
def test_midpoint_closure(name):
    body = BODIES[name]
    rng = np.random.default_rng(11)
    A = body.project(_random_points(body.dim, rng, 500))
    B = body.project(_random_points(body.dim, rng, 500))
    # members up to projection accuracy; midpoints must stay within the same slack
    assert np.all(body.contains((A + B) / 2, 1e-9 + 1e-7))


def test_weak_lp_dominates_lp():
    rng = np.random.default_rng(3)
    for p in (1.2, 1.5, 1.8):
        X = rng.standard_normal((500, 6))
        X /= (np.abs(X) ** p).sum(axis=1, keepdims=True) ** (1 / p)
        assert all(weak_lp_norm(x, p) <= 1 + 1e-12 for x in X)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(0.05, 2.0))
def test_localized_lands_in_both(x, c, r):
    body = Ellipsoid([0.25, 1.0, 4.0])
    center = body.project(np.asarray(c))
    z = project_localized(body, center, r, x)
    assert body.contains(z, 1e-6)
    assert np.linalg.norm(z - center) <= r + 1e-6


def test_localized_methods_agree():
    rng = np.random.default_rng(5)
    for body in (Ellipsoid([1.0, 4.0]), L1Ball(1.0, 3), MonotoneCone(3), VPolytope([[0, 0], [2, 0], [0, 1]])):
        for _ in range(20):
            center = body.project(rng.standard_normal(body.dim) * 0.5)
            x = rng.standard_normal(body.dim) * 3
            a = project_localized(body, center, 0.4, x)
            b = project_localized(body, center, 0.4, x, method="dykstra")
            assert np.linalg.norm(a - b) < 1e-6


# --- convex-programming oracles -------------------------------------------


def _cvx_project(x, constraints_fn, n):
    z = cp.Variable(n)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(z - x)), constraints_fn(z))
    prob.solve(solver=cp.CLARABEL)
    return z.value


@pytest.mark.parametrize("seed", range(5))
def test_projections_match_qp_oracle(seed):
    rng = np.random.default_rng(seed)
    x = 3 * rng.standard_normal(4)
    a = np.array([0.5, 1.0, 2.0, 4.0])
    cases = [
        (Ellipsoid(a), lambda z: [cp.sum(cp.multiply(1 / a, cp.square(z))) <= 1]),
        (L1Ball(1.5, 4), lambda z: [cp.norm1(z) <= 1.5]),
        (MonotoneCone(4), lambda z: [cp.diff(z) >= 0]),
        (Orthant(4), lambda z: [z >= 0]),
    ]
    for body, cons in cases:
        ref = _cvx_project(x, cons, 4)
        got = body.project(x)
        # the interior-point reference is only accurate to ~1e-5; ours must be no farther from x
        assert np.linalg.norm(got - ref) < 1e-4
        assert np.linalg.norm(got - x) <= np.linalg.norm(ref - x) + 1e-8
    V = rng.standard_normal((7, 4))
    lam = cp.Variable(7)
    z = cp.Variable(4)
    cp.Problem(cp.Minimize(cp.sum_squares(z - x)),
               [z == V.T @ lam, lam >= 0, cp.sum(lam) == 1]).solve(solver=cp.CLARABEL)
    assert np.linalg.norm(VPolytope(V).project(x) - z.value) < 1e-4


def test_weak_lp_projection_is_feasible_and_close():
    rng = np.random.default_rng(2)
    body = WeakLpBall(1.5, 4)
    caps = np.arange(1, 5) ** (1 - 1 / 1.5)
    for _ in range(5):
        x = 2 * rng.standard_normal(4)
        p = body.project(x)
        assert weak_lp_norm(p, 1.5) <= 1 + 1e-6
        # oracle: convex hull description via all signed top-k sums
        z = cp.Variable(4)
        cons = []
        for k in range(1, 5):
            cons.append(cp.sum_largest(cp.abs(z), k) <= caps[k - 1])
        cp.Problem(cp.Minimize(cp.sum_squares(z - x)), cons).solve(solver=cp.CLARABEL)
        assert np.linalg.norm(p - z.value) < 1e-4


def test_dykstra_cap_raises():
    A = (lambda v: pj.project_ball(v[None, :], np.zeros(2), 1.0)[0])
    B = (lambda v: pj.project_halfspace(v[None, :], np.array([1.0, 0.0]), 0.5)[0])
    with pytest.raises(ConvergenceError):
        pj.dykstra([A, B], np.array([3.0, 3.0]), tol=1e-16, max_iter=2)
    z = pj.dykstra([A, B], np.array([3.0, 3.0]))
    assert z[0] <= 0.5 + 1e-9 and np.linalg.norm(z) <= 1 + 1e-9
