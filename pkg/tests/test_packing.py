import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locmm.bodies import Ellipsoid, Hyperrectangle, L1Ball, Product
from locmm.errors import EntropyBudgetError, ValidationError
from locmm.packing import (PackingConfig, PackingSet, certify_covering, clear_caches,
                           entropy_curve, global_entropy, greedy_packing, local_entropy,
                           local_entropy_at, verify_packing)

SEG = Hyperrectangle([2.0])
SQ = Hyperrectangle([2.0, 2.0])


def test_segment_packing_example():
    ps = greedy_packing(SEG, [0.0], 1.0, 0.5)
    assert 3 <= len(ps) <= 5
    assert np.allclose(ps.points[:, 0], [-1, -0.5, 0, 0.5, 1])
    assert verify_packing(ps)
    # greedy-until-stall is maximal in 1-D, so every probe is covered
    assert certify_covering(SEG, ps, 10_000, seed=1) == 1.0


def test_separation_wider_than_ball():
    ps = greedy_packing(SQ, [0.2, 0.1], 0.3, 0.7)
    assert len(ps) == 1 and np.allclose(ps.points[0], [0.2, 0.1])


def test_square_wide_separation():
    assert len(greedy_packing(SQ, [0, 0], 10.0, 2.9)) <= 2


def test_verify_packing_examples():
    assert not verify_packing(PackingSet(SEG, np.zeros(1), 1.0, 0.5, np.array([[0.0], [0.4]])))
    assert verify_packing(PackingSet(SEG, np.zeros(1), 1.0, 0.5, np.array([[0.3]])))


def test_certify_examples():
    lonely = PackingSet(SEG, np.zeros(1), 1.0, 0.5, np.array([[-0.75]]))
    assert certify_covering(SEG, lonely) < 1.0
    disk = Ellipsoid([1.0, 1.0])
    one = PackingSet(disk, np.zeros(2), 1.0, 2.0, np.zeros((1, 2)))
    assert certify_covering(disk, one) == 1.0


def test_points_sorted_and_deterministic():
    body = Ellipsoid([1.0, 4.0])
    a = greedy_packing(body, [0.5, 0.5], 0.8, 0.1)
    clear_caches()
    b = greedy_packing(body, [0.5, 0.5], 0.8, 0.1)
    assert a.points.tobytes() == b.points.tobytes()
    keys = [tuple(p) for p in a.points]
    assert keys == sorted(keys)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(-0.5, 0.5), st.floats(0.3, 2.0),
       st.floats(0.05, 0.6))
def test_packing_invariants_random(w1, w2, c, r, frac):
    body = Hyperrectangle([w1, w2])
    center = body.project(np.array([c * w1, -c * w2]))
    ps = greedy_packing(body, center, r, frac * r)
    assert verify_packing(ps)
    assert np.all(np.linalg.norm(ps.points - center, axis=1) <= r + 1e-6)


def test_local_entropy_at_examples():
    assert local_entropy_at(SEG, [0.0], 40.0).log_count == 0.0
    e = local_entropy_at(SEG, [0.0], 0.5)
    assert math.log(17) <= e.log_count <= math.log(33)
    # scale invariance of the localized problem
    assert local_entropy_at(SEG, [0.0], 0.25).count == e.count
    assert e.count == 33  # the 1-D sweep attains floor(1 / (1/32)) + 1


def test_local_entropy_examples():
    assert local_entropy(SEG, 4.0).count <= 9
    assert local_entropy(SEG, 6.0).count <= 9
    prod = Product([SEG, SEG])
    for eps in (0.5, 1.0, 2.0):
        assert local_entropy(prod, eps).log_count >= local_entropy(SEG, eps).log_count


def test_center_entropy_dominates_vertex():
    e = local_entropy(SQ, 0.5)
    counts = {tuple(np.round(c, 12)): k for c, k in e.per_center_counts}
    assert e.count == max(counts.values())
    v = local_entropy_at(SQ, [1.0, 1.0], 0.5).count
    assert e.count >= v


def test_global_entropy_examples():
    assert global_entropy(SEG, 2.5).log_count == 0.0
    assert 3 <= global_entropy(SEG, 0.5).count <= 5
    m = global_entropy(SQ, 0.5).count
    assert 16 <= m <= 25  # 25 = (2/0.5 + 1)^2 is the exact grid maximum
    assert m == 17  # frozen


@pytest.mark.parametrize("body", [SEG, SQ, Ellipsoid([1.0, 4.0]), L1Ball(1.0, 2)],
                         ids=["segment", "square", "ellipse", "l1"])
def test_global_local_sandwich(body):
    # both sides are greedy (not maximum) packings, so each inequality carries the 0.2 slack
    for eps in (0.5, 1.0, 2.0):
        g_fine = global_entropy(body, eps / 16).log_count
        g = global_entropy(body, eps).log_count
        loc = local_entropy(body, eps).log_count
        assert loc <= g_fine + 0.2
        assert loc >= g_fine - g - 0.2


def test_entropy_curve_monotone_segment():
    eps = np.geomspace(0.05, 4.0, 10)
    vals = [e.log_count for e in entropy_curve(SEG, eps)]
    assert all(vals[i + 1] <= vals[i] + 0.2 for i in range(len(vals) - 1))


def test_guard_and_config_validation():
    cube = Hyperrectangle([1.0] * 8)
    with pytest.raises(EntropyBudgetError):
        local_entropy_at(cube, np.zeros(8), 1.0)
    with pytest.raises(ValidationError):
        PackingConfig(c_const=4)
    with pytest.raises(ValidationError):
        PackingConfig(stall_limit=0)
    with pytest.raises(ValidationError):
        greedy_packing(SEG, [3.0], 1.0, 0.1)
    with pytest.raises(ValidationError):
        local_entropy_at(SEG, [0.0], 0.0)
