import math
import warnings

import numpy as np
import pytest

from locmm.bodies import Ellipsoid, Hyperrectangle, L1Ball, MonotoneCone
from locmm.errors import ValidationError
from locmm.estimators import (EstimatorConfig, IterativeEstimator, PackingTree,
                              UnboundedEstimator, aggregate, depth_bound, iterative_estimate,
                              lse, nearest_index, projection_estimate, split_sample,
                              truncation_level, two_point_test, unbounded_estimate)
from locmm.packing import PackingConfig

SEG = Hyperrectangle([2.0])
CFG = EstimatorConfig()


def test_depth_bound_examples():
    assert depth_bound(SEG, 2.0) == 1
    assert depth_bound(SEG, 50.0) == 1
    J = depth_bound(SEG, 1e-3)
    assert 5 <= J <= 12
    assert J == 8  # frozen
    # geometric regime: halving the floor adds a level
    prev = depth_bound(SEG, 1e-2)
    for s in (5e-3, 2.5e-3, 1.25e-3):
        cur = depth_bound(SEG, s)
        assert cur >= prev + 1
        prev = cur


def test_depth_bound_validation():
    with pytest.raises(ValidationError):
        depth_bound(SEG, 0.0)
    with pytest.raises(ValidationError):
        depth_bound(MonotoneCone(2), 0.1)


def test_iterative_examples():
    tr = iterative_estimate(SEG, [5.0], 10)
    assert abs(tr.final_point[0] - 1.0) <= 2.0 / 2**8
    tree = PackingTree(SEG, CFG)
    one = iterative_estimate(SEG, [0.37], 1, tree=tree)
    P = tree.node(1, SEG.center)
    best = P[np.argmin(np.abs(P[:, 0] - 0.37))]
    assert np.array_equal(one.final_point, best)
    assert one.levels[0].cardinality == len(P)


@pytest.mark.parametrize("body", [SEG, Hyperrectangle([2.0, 1.0]), Ellipsoid([1.0, 4.0]),
                                  L1Ball(1.0, 2)], ids=["segment", "box", "ellipse", "l1"])
def test_noiseless_recovery(body):
    J = depth_bound(body, 1e-3)
    rng = np.random.default_rng(4)
    est = IterativeEstimator(body, CFG, depth=J)
    for _ in range(5):
        mu = body.project(rng.standard_normal(body.dim))
        out = est(mu)
        assert np.linalg.norm(out - mu) <= body.diameter / 2 ** (J - 2)


def test_trajectory_contraction_and_membership():
    rng = np.random.default_rng(12)
    bodies = [SEG, Hyperrectangle([2.0, 1.0]), Ellipsoid([1.0, 4.0]), L1Ball(1.0, 2)]
    for run in range(40):
        body = bodies[run % len(bodies)]
        y = 1.5 * rng.standard_normal(body.dim)
        tr = iterative_estimate(body, y, 6)
        U = np.array(tr.upsilon)
        for m in range(len(U)):
            assert np.all(np.linalg.norm(U[m + 1:] - U[m], axis=1) <= tr.diameter / 2.0 ** (m + 1 - 2))
        assert np.all(body.contains(U, 1e-6))


def test_packings_do_not_depend_on_data():
    body = Ellipsoid([1.0, 4.0])
    ta, tb = PackingTree(body, CFG), PackingTree(body, CFG)
    iterative_estimate(body, [0.3, 1.0], 5, tree=ta)
    iterative_estimate(body, [0.3, 1.2], 5, tree=tb)
    shared = set(ta._nodes) & set(tb._nodes)
    assert shared
    for key in shared:
        assert ta._nodes[key].tobytes() == tb._nodes[key].tobytes()


def test_nearest_tie_goes_to_first():
    P = np.array([[-1.0], [1.0]])
    assert nearest_index(P, np.array([0.0])) == 0


def test_unknown_floor_warns_and_caps():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = IterativeEstimator(SEG, EstimatorConfig(max_depth_cap=12))
    assert est.depth == 12 and est.capped
    assert any("depth cap" in str(x.message) for x in w)


def test_lse_examples():
    assert lse(SEG, [0.3])[0] == 0.3
    assert lse(SEG, [5.0])[0] == 1.0
    assert np.allclose(lse(L1Ball(1.0, 2), [1, 1]), [0.5, 0.5])


def test_projection_estimate_examples():
    e = Ellipsoid([1.0, 4.0, 9.0])
    y = np.array([0.2, 3.0, -1.0])
    assert np.allclose(projection_estimate(e, y, 0.0), e.project(y))
    assert truncation_level(e.a, 1.0) == 2
    out = projection_estimate(e, [1.0, 1.0, 1.0], 1.0)
    assert np.allclose(out, e.project(np.array([0.0, 1.0, 1.0])))
    small = Ellipsoid([0.1, 0.2, 0.5])
    assert truncation_level(small.a, 1.0) == 0
    assert np.all(projection_estimate(small, [3.0, 1.0, 2.0], 1.0) == 0)
    with pytest.raises(ValidationError):
        projection_estimate(Ellipsoid([4.0, 1.0]), [0, 0], 1.0)


def test_two_point_examples():
    nu1, nu2 = np.zeros(2), np.array([2.0, 0.0])
    assert two_point_test(nu1, nu1, nu2) == 0
    assert two_point_test([1.0, 0.5], nu1, nu2) == 1
    assert two_point_test(nu2, nu1, nu2) == 1


def test_nearest_point_selection_bound():
    # a delta-packing on a line with the truth near one of its points
    C, delta, sigma, R = 8.0, 1.0, 1.0, 20_000
    nu = np.stack([np.arange(-20, 21) * delta, np.zeros(41)], axis=1)
    rng = np.random.default_rng(5)
    G = rng.standard_normal((R, 2))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    mu = delta * np.sqrt(rng.random(R))[:, None] * G
    Y = mu + sigma * rng.standard_normal((R, 2))
    d2 = ((Y[:, None, :] - nu[None]) ** 2).sum(axis=2)
    chosen = nu[np.argmin(d2, axis=1)]
    freq = np.mean(np.linalg.norm(chosen - mu, axis=1) > (C + 1) * delta)
    bound = len(nu) * math.exp(-((C - 2) ** 2) * delta**2 / (8 * sigma**2))
    assert freq <= bound + 3 * math.sqrt(freq * (1 - freq) / R)


def test_split_sample():
    y = np.array([0.3, -2.0, 5.0])
    s = split_sample(y, 0.5, eta_seed=9)
    ulp = np.spacing(np.maximum(np.abs(s.y1), np.abs(s.y2)))
    # exact in real arithmetic; floating point keeps it to rounding
    assert np.all(np.abs(s.y1 + s.y2 - 2 * y) <= 2 * ulp)
    t = split_sample(y, 0.5, eta_seed=9)
    assert np.array_equal(s.y1, t.y1)


def test_aggregate_single_and_identical():
    c = np.array([[0.0, 1.0]])
    levels, out = aggregate(c, np.zeros(2), 16.0, 40)
    assert np.array_equal(out, c[0]) and levels == []
    cands = np.array([[0.0], [1.0], [0.01]])
    levels, out = aggregate(cands, np.array([0.02]), 16.0, 40)
    assert out[0] in (0.0, 0.01)


def test_unbounded_small_noise_returns_member():
    cfg = EstimatorConfig(packing=PackingConfig(center_candidates=4))
    y = np.array([0.3, 0.7])
    tr = unbounded_estimate(MonotoneCone(2), y, 1e-4, cfg, eta_seed=1)
    assert np.linalg.norm(tr.final_point - y) < 1e-3


def test_unbounded_cone_mean():
    cone = MonotoneCone(2)
    ue = UnboundedEstimator(cone, 0.01)
    rng = np.random.default_rng(1)
    out = np.array([ue(np.array([1.0, 0.0]) + 0.01 * rng.standard_normal(2), rng)
                    for _ in range(200)])
    err = out.std(axis=0, ddof=1) / math.sqrt(len(out))
    assert np.all(np.abs(out.mean(axis=0) - 0.5) <= 3 * err + 1e-12)


def test_unbounded_close_to_iterative_on_segment():
    # splitting doubles the noise variance, so the ratio sits near 2; test it with 3 stderr
    s, R = 0.05, 2000
    ue, it = UnboundedEstimator(SEG, s), IterativeEstimator(SEG, sigma_lower=s)
    for mu in (-1.0, 0.7):
        rng = np.random.default_rng(0)
        eu, ei = [], []
        for _ in range(R):
            y = np.array([mu]) + s * rng.standard_normal(1)
            eu.append(float((ue(y, rng)[0] - mu) ** 2))
            ei.append(float((it(y)[0] - mu) ** 2))
        eu, ei = np.array(eu), np.array(ei)
        ratio = eu.mean() / ei.mean()
        rel = math.sqrt((eu.var() / eu.mean() ** 2 + ei.var() / ei.mean() ** 2) / R)
        assert ratio <= 2.0 + 3 * ratio * rel
        assert ratio >= 0.5


def test_unbounded_needs_positive_sigma():
    with pytest.raises(ValidationError):
        UnboundedEstimator(MonotoneCone(2), 0.0)
