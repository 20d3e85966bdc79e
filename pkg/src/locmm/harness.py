"""Monte Carlo risk evaluation and the two-point test experiment."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bodies import ConvexBody, Ellipsoid, Hyperrectangle, L1Ball, as_vector, from_descriptor
from .errors import ValidationError
from .estimators import (EstimatorConfig, IterativeEstimator, UnboundedEstimator, lse,
                         projection_estimate, two_point_test)
from .packing import PackingConfig
from .rates import rate_ellipse, rate_hyperrectangle, rate_l1

ESTIMATORS = ("iterative", "lse", "projection", "unbounded")


# ---------------------------------------------------------------------------
# serialization: every float with 17 significant digits


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent=1, _level=0) -> str:
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


# ---------------------------------------------------------------------------
# experiment spec


@dataclass
class ExperimentSpec:
    body: dict
    estimators: list
    truth: list  # list of vectors
    sigmas: list
    replications: int = 2000
    seed: int = 0
    output: str | None = None
    c_const: float = 16.0
    sigma_lower: float | str = "known"  # "known" uses each sigma as its own floor
    depth: int | None = None
    packing_seed: int = 0
    center_candidates: int = 32

    def validate(self) -> ConvexBody:
        body = from_descriptor(self.body)
        if not self.estimators:
            raise ValidationError("at least one estimator id is required")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValidationError(f"unknown estimator {e!r}; choose from {ESTIMATORS}")
        if int(self.replications) < 1:
            raise ValidationError("replications must be >= 1")
        if not self.sigmas or any(not (s >= 0) for s in self.sigmas):
            raise ValidationError("sigma grid must be non-empty and nonnegative")
        for mu in self.truth:
            if not body.contains(as_vector(mu, body.dim), 1e-6):
                raise ValidationError(f"truth point {list(mu)} is not a member of the body")
        if not 0 <= int(self.seed) < 2**63:
            raise ValidationError("seed must be a nonnegative 63-bit integer")
        return body

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "ExperimentSpec":
        if "body" not in d:
            raise ValidationError("experiment spec needs a 'body'")
        est = d.get("estimators", d.get("estimator"))
        if isinstance(est, str):
            est = [est]
        sigmas = d.get("sigmas", d.get("sigma"))
        if sigmas is None:
            raise ValidationError("experiment spec needs 'sigmas'")
        if not isinstance(sigmas, list):
            sigmas = [sigmas]
        body = from_descriptor(d["body"])
        truth = resolve_truth(body, d.get("truth", {"generator": "default", "count": 8}),
                              int(d.get("packing_seed", 0)))
        spec = cls(body=d["body"], estimators=list(est or []), truth=truth,
                   sigmas=[float(s) for s in sigmas],
                   replications=int(d.get("replications", 2000)),
                   seed=int(d.get("seed", 0) if seed is None else seed),
                   output=d.get("output"), c_const=float(d.get("c", 16.0)),
                   sigma_lower=d.get("sigma_lower", "known"), depth=d.get("depth"),
                   packing_seed=int(d.get("packing_seed", 0)),
                   center_candidates=int(d.get("center_candidates", 32)))
        spec.validate()
        return spec


def resolve_truth(body: ConvexBody, truth, seed: int = 0) -> list:
    """Explicit list of points, or a generator tag expanded deterministically."""
    if isinstance(truth, list):
        return [as_vector(t, body.dim).tolist() for t in truth]
    if isinstance(truth, str):
        truth = {"generator": truth}
    if not isinstance(truth, dict):
        raise ValidationError("truth must be a list of points or a generator object")
    gen = truth.get("generator", "default")
    count = int(truth.get("count", 8))
    if gen == "center":
        pts = body.center[None, :]
    elif gen == "vertices":
        pts = body.extreme_points()
    elif gen == "random-boundary":
        pts = body.boundary_points(count, seed)
    elif gen == "default":
        pts = np.concatenate([body.center[None, :], body.extreme_points(),
                              body.boundary_points(count, seed)])
    else:
        raise ValidationError(f"unknown truth generator {gen!r}")
    if len(pts) == 0:
        raise ValidationError("truth generator produced no points")
    _, first = np.unique(np.round(pts, 12), axis=0, return_index=True)
    pts = pts[np.sort(first)][:count]
    return [p.tolist() for p in pts]


# ---------------------------------------------------------------------------
# Monte Carlo


def replicate_seed(master: int, mu_idx: int, sigma_idx: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(mu_idx), int(sigma_idx), int(rep)])


def audit_streams(master: int, n_mu: int, n_sigma: int, R: int) -> bool:
    """True when no two (mu, sigma, replicate) indices share a stream."""
    seen = set()
    for i in range(n_mu):
        for j in range(n_sigma):
            for r in range(R):
                key = tuple(replicate_seed(master, i, j, r).generate_state(4))
                if key in seen:
                    return False
                seen.add(key)
    return True


_EST_CACHE: dict = {}


def _estimator(spec: ExperimentSpec, body: ConvexBody, name: str, sigma: float):
    """Build (and memoize per process) the callable for one estimator at one sigma."""
    key = (body.digest(), name, sigma, spec.c_const, str(spec.sigma_lower), spec.depth,
           spec.packing_seed, spec.center_candidates)
    fn = _EST_CACHE.get(key)
    if fn is not None:
        return fn
    pcfg = PackingConfig(c_const=spec.c_const, seed=spec.packing_seed,
                         center_candidates=spec.center_candidates)
    cfg = EstimatorConfig(c_const=spec.c_const, seed=spec.packing_seed, packing=pcfg)
    if name == "lse":
        def fn(y, rng):
            return lse(body, y)
    elif name == "projection":
        def fn(y, rng):
            return projection_estimate(body, y, sigma)
    elif name == "iterative":
        floor = sigma if spec.sigma_lower == "known" else float(spec.sigma_lower)
        est = IterativeEstimator(body, cfg, depth=spec.depth, sigma_lower=floor if floor > 0 else None)
        fn = est
    elif name == "unbounded":
        fn = UnboundedEstimator(body, sigma, cfg)
    else:
        raise ValidationError(f"unknown estimator {name!r}")
    _EST_CACHE[key] = fn
    return fn


def _run_cell(spec: ExperimentSpec, body: ConvexBody, mu_idx: int, sigma_idx: int, name: str):
    mu = np.asarray(spec.truth[mu_idx], dtype=float)
    sigma = spec.sigmas[sigma_idx]
    fn = _estimator(spec, body, name, sigma)
    errs = []
    failures = 0
    for r in range(spec.replications):
        rng = np.random.default_rng(replicate_seed(spec.seed, mu_idx, sigma_idx, r))
        y = mu + sigma * rng.standard_normal(body.dim)
        try:
            est = np.asarray(fn(y, rng), dtype=float)
            errs.append(float(np.sum((est - mu) ** 2)))
        except Exception:  # isolate per replicate; counted below
            failures += 1
    errs = np.asarray(errs)
    k = len(errs)
    mse = float(errs.mean()) if k else math.nan
    stderr = float(errs.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return {
        "mu_id": mu_idx, "mu": mu.tolist(), "sigma": sigma, "estimator": name,
        "mse": mse, "stderr": stderr, "R": spec.replications, "completed": k,
        "failures": failures, "valid": failures <= 0.01 * spec.replications,
        "seed": spec.seed,
    }


def _cell_task(args):
    spec, mu_idx, sigma_idx, name = args
    body = from_descriptor(spec.body)
    return _run_cell(spec, body, mu_idx, sigma_idx, name)


def worker_count() -> int:
    raw = os.environ.get("LOCMM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError("LOCMM_THREADS must be a positive integer") from None
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else os.cpu_count() or 1)


def closed_form_rate(body: ConvexBody, sigma: float):
    if isinstance(body, Hyperrectangle):
        return rate_hyperrectangle(np.sort(body.a), sigma)
    if isinstance(body, Ellipsoid):
        return rate_ellipse(np.sort(body.a), sigma)
    if isinstance(body, L1Ball) and body.radius == 1.0 and body.dim >= 2:
        return rate_l1(body.dim, sigma)["rate"]
    return None


@dataclass
class RiskReport:
    body: dict
    estimators: list
    sigmas: list
    truth: list
    replications: int
    seed: int
    cells: list
    worst_case: list
    ratios: list = field(default_factory=list)
    runtime: float = 0.0  # wall clock; kept out of the serialized report

    def to_dict(self):
        out = {
            "body": self.body,
            "estimators": self.estimators,
            "sigmas": self.sigmas,
            "truth": self.truth,
            "replications": self.replications,
            "seed": self.seed,
            "cells": self.cells,
            "worst_over_listed_mu": self.worst_case,
        }
        if self.ratios:
            out["pairwise_ratios"] = self.ratios
        return out

    def to_json(self) -> str:
        return dumps(self.to_dict()) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mu_id", "sigma", "estimator", "mse", "stderr", "R", "seed"])
        for c in self.cells:
            w.writerow([c["mu_id"], _fmt_float(c["sigma"]), c["estimator"], _fmt_float(c["mse"]),
                        _fmt_float(c["stderr"]), c["R"], c["seed"]])
        return buf.getvalue()

    def worst(self, estimator: str, sigma: float) -> dict:
        for row in self.worst_case:
            if row["estimator"] == estimator and row["sigma"] == sigma:
                return row
        raise KeyError((estimator, sigma))

    def write(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.to_json())
        root, _ = os.path.splitext(path)
        with open(root + ".csv", "w") as fh:
            fh.write(self.to_csv())


def mc_risk(spec: ExperimentSpec, workers: int | None = None) -> RiskReport:
    """Monte Carlo mean squared error per (mu, sigma, estimator) cell."""
    t0 = time.perf_counter()
    body = spec.validate()
    tasks = [(i, j, name)
             for i in range(len(spec.truth))
             for j in range(len(spec.sigmas))
             for name in spec.estimators]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_task, [(spec, i, j, n) for i, j, n in tasks]))
    else:
        cells = [_run_cell(spec, body, i, j, n) for i, j, n in tasks]
    worst = []
    for j, s in enumerate(spec.sigmas):
        rate = closed_form_rate(body, s)
        for name in spec.estimators:
            row = [c for c in cells if c["sigma"] == s and c["estimator"] == name]
            top = max(row, key=lambda c: (c["mse"] if c["mse"] == c["mse"] else -1.0))
            worst.append({
                "sigma": s, "estimator": name, "mse": top["mse"], "mu_id": top["mu_id"],
                "valid": all(c["valid"] for c in row),
                "closed_form_rate": rate,
                "ratio_to_rate": (top["mse"] / rate) if rate else None,
            })
    ratios = []
    names = spec.estimators
    if len(names) > 1:
        by = {(c["mu_id"], c["sigma"], c["estimator"]): c["mse"] for c in cells}
        for i in range(len(spec.truth)):
            for s in spec.sigmas:
                for a in range(len(names)):
                    for b in range(a + 1, len(names)):
                        num, den = by[(i, s, names[a])], by[(i, s, names[b])]
                        ratios.append({"mu_id": i, "sigma": s, "numerator": names[a],
                                       "denominator": names[b],
                                       "ratio": num / den if den > 0 else (1.0 if num == den else math.inf)})
    return RiskReport(spec.body, list(spec.estimators), list(spec.sigmas), spec.truth,
                      spec.replications, spec.seed, cells, worst, ratios,
                      time.perf_counter() - t0)


def compare_estimators(spec: ExperimentSpec, workers: int | None = None) -> RiskReport:
    if len(spec.estimators) < 2:
        raise ValidationError("compare needs at least two estimator ids")
    return mc_risk(spec, workers)


# ---------------------------------------------------------------------------
# two-point test


def lemma4_bound(C: float, delta: float, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    return math.exp(-((C - 2.0) ** 2) * delta**2 / (8.0 * sigma**2))


def lemma4_error_experiment(C: float, delta: float, sigma: float, R: int, seed: int,
                            n: int = 2) -> dict:
    """Type-I error of the nearest-of-two test with mu uniform on B(0, delta), nu2 = C delta e1."""
    if not C > 2:
        raise ValidationError("C must exceed 2")
    if not (delta > 0 and sigma >= 0 and R >= 1 and n >= 1):
        raise ValidationError("need delta > 0, sigma >= 0, R >= 1, n >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4]))
    G = rng.standard_normal((R, n))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    mu = delta * rng.random(R)[:, None] ** (1.0 / n) * G
    Y = mu + sigma * rng.standard_normal((R, n))
    nu1 = np.zeros(n)
    nu2 = np.zeros(n)
    nu2[0] = C * delta
    psi = (np.linalg.norm(Y - nu1, axis=1) >= np.linalg.norm(Y - nu2, axis=1)).astype(int)
    p = float(psi.mean())
    bound = lemma4_bound(C, delta, sigma)
    band = bound + 3.0 * math.sqrt(bound / R)
    return {"C": C, "delta": delta, "sigma": sigma, "R": R, "seed": seed,
            "empirical_rate": p, "stderr": math.sqrt(p * (1 - p) / R),
            "bound": bound, "band": band, "within_band": p <= band}


__all__ = ["ExperimentSpec", "RiskReport", "mc_risk", "compare_estimators",
           "lemma4_error_experiment", "lemma4_bound", "resolve_truth", "replicate_seed",
           "audit_streams", "worker_count", "dumps", "two_point_test"]
