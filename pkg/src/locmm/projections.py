"""Euclidean projection kernels.

Every kernel takes a 2-D array of shape (m, n), one point per row, and
returns an array of the same shape. The kernels know nothing about body
objects; ``bodies`` wires them up.
"""

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import ConvergenceError


def project_ball(X, center, radius):
    V = X - center
    nrm = np.linalg.norm(V, axis=1)
    scale = np.ones_like(nrm)
    out = nrm > radius
    scale[out] = radius / nrm[out]
    return center + V * scale[:, None]


def project_box(X, lo, hi):
    return np.clip(X, lo, hi)


def project_ellipsoid(X, a, rtol=1e-12, max_iter=200):
    """Project rows of X onto {z : sum z_i^2 / a_i <= 1}.

    The minimizer is z_i = a_i x_i / (a_i + t) where t >= 0 solves
    S(t) = sum a_i x_i^2 / (a_i + t)^2 = 1. We run Newton on
    phi(t) = 1/sqrt(S(t)) - 1, which is exactly linear when one axis
    carries all the mass, safeguarded by bisection on a bracket.
    """
    X = np.asarray(X, dtype=float)
    a = np.asarray(a, dtype=float)
    out = X.copy()
    q = np.sum(X * X / a, axis=1)
    idx = np.nonzero(q > 1.0)[0]
    if idx.size == 0:
        return out
    Y = X[idx]
    w = a * Y * Y
    lo = np.zeros(idx.size)
    hi = np.sqrt(np.sum(w, axis=1))  # S(hi) <= sum w / hi^2 = 1
    t = lo.copy()
    active = np.ones(idx.size, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        ta = t[active]
        den = a + ta[:, None]
        S = np.sum(w[active] / den**2, axis=1)
        dS = -2.0 * np.sum(w[active] / den**3, axis=1)
        phi = S**-0.5 - 1.0
        dphi = -0.5 * S**-1.5 * dS
        lo_a, hi_a = lo[active], hi[active]
        # phi is increasing in t; tighten the bracket
        lo_a = np.where(phi < 0, ta, lo_a)
        hi_a = np.where(phi >= 0, ta, hi_a)
        step = ta - phi / dphi
        bad = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
        step = np.where(bad, 0.5 * (lo_a + hi_a), step)
        done = np.abs(step - ta) <= rtol * (1.0 + ta)
        lo[active], hi[active], t[active] = lo_a, hi_a, step
        act_idx = np.nonzero(active)[0]
        active[act_idx[done]] = False
    else:
        if active.any():
            raise ConvergenceError("ellipsoid multiplier did not converge")
    Z = a * Y / (a + t[:, None])
    # tiny radial correction so the result is a member to rounding
    qz = np.sum(Z * Z / a, axis=1)
    fix = qz > 1.0
    Z[fix] /= np.sqrt(qz[fix])[:, None]
    out[idx] = Z
    return out


def project_l1(X, radius):
    """Sorted soft-threshold onto the l1 ball of the given radius."""
    X = np.asarray(X, dtype=float)
    out = X.copy()
    A = np.abs(X)
    idx = np.nonzero(A.sum(axis=1) > radius)[0]
    if idx.size == 0:
        return out
    A = A[idx]
    U = -np.sort(-A, axis=1)
    css = np.cumsum(U, axis=1) - radius
    k = np.arange(1, X.shape[1] + 1)
    cond = U - css / k > 0
    rho = X.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(idx.size), rho] / (rho + 1)
    out[idx] = np.sign(X[idx]) * np.maximum(A - theta[:, None], 0.0)
    return out


def project_monotone(X):
    """Rows onto the cone x_1 <= x_2 <= ... <= x_n (pool adjacent violators)."""
    X = np.asarray(X, dtype=float)
    out = X.copy()
    bad = np.any(np.diff(X, axis=1) < 0, axis=1)
    for i in np.nonzero(bad)[0]:
        out[i] = isotonic_regression(X[i]).x
    return out


def project_halfspace(X, normal, offset):
    viol = X @ normal - offset
    viol = np.maximum(viol, 0.0)
    return X - np.outer(viol / (normal @ normal), normal)


def min_norm_point(P, gap_tol=1e-8, max_iter=None):
    """Wolfe's nearest point to the origin in the convex hull of the rows of P.

    Returns (x, weights). Stops when the duality gap
    |x|^2 - min_j <p_j, x> falls below gap_tol times the squared scale.
    """
    P = np.asarray(P, dtype=float)
    N, n = P.shape
    if max_iter is None:
        max_iter = 10 * max(n, 1) * N
    scale = max(np.max(np.sum(P * P, axis=1)), 1e-300)
    j0 = int(np.argmin(np.sum(P * P, axis=1)))
    S = [j0]
    w = np.array([1.0])
    x = P[j0].copy()
    for _ in range(max_iter):
        dots = P @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= gap_tol * scale or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        while True:
            Q = P[S]
            v = _affine_min_weights(Q)
            if np.all(v > 1e-12):
                w = v
                break
            neg = v <= 1e-12
            theta = np.min(w[neg] / (w[neg] - v[neg]))
            w = theta * v + (1 - theta) * w
            keep = w > 1e-12
            S = [s for s, k in zip(S, keep) if k]
            w = w[keep]
            w = w / w.sum()
        x = w @ P[S]
    else:
        raise ConvergenceError("min-norm-point iteration cap reached")
    weights = np.zeros(N)
    weights[S] = w
    return x, weights


def _affine_min_weights(Q):
    # minimize |Q^T v|^2 subject to sum v = 1
    m = Q.shape[0]
    G = Q @ Q.T
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = G
    A[:m, m] = 1.0
    A[m, :m] = 1.0
    b = np.zeros(m + 1)
    b[m] = 1.0
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    return sol[:m]


def project_hull(X, V, gap_tol=1e-8):
    """Rows of X onto conv(V) via min-norm point of the shifted vertices."""
    X = np.asarray(X, dtype=float)
    out = np.empty_like(X)
    for i, x in enumerate(X):
        z, _ = min_norm_point(V - x, gap_tol=gap_tol)
        out[i] = z + x
    return out


def project_topk_sorted(a, k, t):
    """Project a nonnegative, decreasingly sorted vector onto {sum of top k <= t}.

    The solution has the form z = a - clip(a - tau, 0, lam): a top block
    shifted down by lam, a middle block flattened to tau and an untouched
    tail. We enumerate the block boundaries and keep the consistent one.
    """
    n = a.size
    if a[:k].sum() <= t:
        return a.copy()
    cs = np.concatenate([[0.0], np.cumsum(a)])
    ext = np.concatenate([[np.inf], a, [-np.inf]])  # ext[i] = a_i, 1-based
    tol = 1e-12 * (1.0 + a[0])
    # middle block empty: exactly the top k entries shift
    lam = (cs[k] - t) / k
    if ext[k] - lam >= max(ext[k + 1], 0.0) - tol:
        z = a.copy()
        z[:k] -= lam
        return z
    for p in range(k):
        s_top = cs[p]
        for e in range(k, n + 1):
            q = e - p
            s_mid = cs[e] - cs[p]
            r = k - p
            tau = (r * (t - s_top) + p * s_mid) / (p * q + r * r)
            lam = (s_mid - q * tau) / r
            if lam < -tol or tau < -tol:
                continue
            if p >= 1 and ext[p] < tau + lam - tol:
                continue
            if ext[p + 1] > tau + lam + tol:
                continue
            if ext[e] < tau - tol or ext[e + 1] > tau + tol:
                continue
            z = a.copy()
            z[:p] -= lam
            z[p:e] = tau
            return z
    # flattened level hits zero: the top p shift, everything else vanishes
    for p in range(1, k + 1):
        lam = (cs[p] - t) / p
        if lam < -tol or a[p - 1] - lam < -tol:
            continue
        if p < n and (a[p] > lam + tol or cs[n] - cs[p] > lam * (k - p) + tol):
            continue
        z = np.zeros_like(a)
        z[:p] = a[:p] - lam
        return z
    raise ConvergenceError("top-k projection found no consistent block structure")


def project_topk(x, k, t):
    """Project x onto {z : sum of the k largest |z_i| <= t}."""
    s = np.sign(x)
    order = np.argsort(-np.abs(x), kind="stable")
    z_sorted = project_topk_sorted(np.abs(x)[order], k, t)
    z = np.empty_like(x)
    z[order] = z_sorted
    return s * z


def dykstra(projectors, x, tol=1e-12, max_iter=10000):
    """Dykstra's alternating projections onto an intersection.

    ``projectors`` is a list of callables mapping a 1-D point to its
    projection onto one of the sets.
    """
    x = np.asarray(x, dtype=float).copy()
    incs = [np.zeros_like(x) for _ in projectors]
    scale = 1.0 + np.linalg.norm(x)
    for _ in range(max_iter):
        prev = x.copy()
        moved = 0.0
        for i, proj in enumerate(projectors):
            y = proj(x + incs[i])
            new = x + incs[i] - y
            moved += float(np.sum((new - incs[i]) ** 2))
            incs[i] = new
            x = y
        # x alone can sit still for whole sweeps while the increments move
        if np.linalg.norm(x - prev) <= tol * scale and np.sqrt(moved) <= tol * scale:
            return x
    raise ConvergenceError("Dykstra iteration cap reached")
