"""Command-line front door: ``locmm <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import harness
from .bodies import as_vector, from_descriptor
from .errors import ConvergenceError, EntropyBudgetError, SamplerError, ValidationError
from .estimators import EstimatorConfig, IterativeEstimator
from .packing import PackingConfig, certified, greedy_packing, local_entropy, global_entropy

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _load_json(path):
    if path is None:
        raise ValidationError("missing required input file")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path} is not valid JSON: {e}") from None


def _load_body(path):
    return from_descriptor(_load_json(path))


def _load_vector(path, n):
    """Vector from a JSON list or a single-column CSV."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e.strerror}") from None
    try:
        vals = json.loads(text)
    except json.JSONDecodeError:
        vals = []
        for row in csv.reader(text.splitlines()):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if vals:
                    raise ValidationError(f"bad number {row[0]!r} in {path}") from None
                # header row
    return as_vector(vals, n)


def _emit(obj, out):
    text = harness.dumps(obj) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    return text


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([harness._fmt_float(v) if isinstance(v, float) else v for v in r])


def _pcfg(args):
    return PackingConfig(c_const=args.c, seed=args.seed,
                         center_candidates=getattr(args, "center_candidates", 32))


# ---------------------------------------------------------------------------
# subcommands


def cmd_rate(args):
    from .rates import epsilon_star
    body = _load_body(args.body)
    if args.sigma < 0:
        raise ValidationError("--sigma must be >= 0")
    out = {}
    if args.closed_form:
        rate = harness.closed_form_rate(body, args.sigma)
        if rate is None:
            raise ValidationError(f"no closed form for body type {body.kind!r}")
        out = {"sigma": args.sigma, "rate_sq": rate, "method": "closed-form"}
        print(f"rate_sq={harness._fmt_float(rate)} (closed form)")
    else:
        res = epsilon_star(body, args.sigma, _pcfg(args))
        out = res.to_dict()
        if args.out:
            root, _ = os.path.splitext(args.out)
            _write_csv(root + "_trace.csv", ["epsilon", "log_count"],
                       [(float(e), float(v)) for e, v in res.entropy_trace])
        print(f"epsilon_star={harness._fmt_float(res.epsilon_star)} "
              f"rate_sq={harness._fmt_float(res.rate_sq)} method={res.method}")
    _emit(out, args.out)


def cmd_entropy(args):
    body = _load_body(args.body)
    cfg = _pcfg(args)
    fn = local_entropy if args.kind == "local" else global_entropy
    eps = args.epsilon
    ests = [fn(body, e, cfg) for e in eps]
    out = [e.to_dict() for e in ests] if len(ests) > 1 else ests[0].to_dict()
    _emit(out, args.out)
    if args.out:
        root, _ = os.path.splitext(args.out)
        _write_csv(root + ".csv", ["epsilon", "log_count"],
                   [(e.epsilon, e.log_count) for e in ests])
    for e in ests:
        print(f"epsilon={harness._fmt_float(e.epsilon)} log_count={harness._fmt_float(e.log_count)} "
              f"method={e.method}")


def cmd_pack(args):
    body = _load_body(args.body)
    center = body.center if args.center is None else as_vector(args.center, body.dim)
    radius = body.diameter if args.radius is None else args.radius
    ps = greedy_packing(body, center, radius, args.separation, _pcfg(args))
    if args.certify:
        ps = certified(ps, probe_count=args.probes, seed=args.seed)
    _emit(ps.to_dict(), args.out)
    msg = f"points={len(ps.points)}"
    if ps.certified_cover_fraction is not None:
        msg += f" cover={harness._fmt_float(ps.certified_cover_fraction)}"
    print(msg)


def cmd_estimate(args):
    body = _load_body(args.body)
    y = _load_vector(args.y, body.dim)
    cfg = EstimatorConfig(c_const=args.c, seed=args.seed,
                          packing=PackingConfig(c_const=args.c, seed=args.seed))
    if args.depth is None and args.sigma_lower is None:
        raise ValidationError("give --depth or --sigma-lower")
    if args.sigma_lower is not None and args.sigma_lower <= 0:
        raise ValidationError("--sigma-lower must be positive")
    est = IterativeEstimator(body, cfg, depth=args.depth, sigma_lower=args.sigma_lower)
    tr = est.trajectory(y)
    _emit(tr.to_dict(), args.out)
    print(f"depth={est.depth} final={[harness._fmt_float(v) for v in tr.final_point]}")


def _spec_from_args(args, need_two=False):
    d = _load_json(args.spec)
    if not isinstance(d, dict):
        raise ValidationError("experiment spec must be a JSON object")
    if args.replications is not None:
        d["replications"] = args.replications
    spec = harness.ExperimentSpec.from_dict(d, seed=args.seed)
    if need_two and len(spec.estimators) < 2:
        raise ValidationError("compare needs at least two estimator ids")
    return spec


def _finish_report(rep, args, spec):
    out = args.out or spec.output
    if out:
        rep.write(out)
    else:
        sys.stdout.write(rep.to_json())
    bad = sum(not c["valid"] for c in rep.cells)
    print(f"cells={len(rep.cells)} invalid={bad} runtime={rep.runtime:.2f}s", file=sys.stderr)
    if bad:
        raise ConvergenceError(f"{bad} cells exceeded the 1% failure budget")


def cmd_risk(args):
    spec = _spec_from_args(args)
    _finish_report(harness.mc_risk(spec), args, spec)


def cmd_compare(args):
    spec = _spec_from_args(args, need_two=True)
    _finish_report(harness.compare_estimators(spec), args, spec)


def cmd_lemma4(args):
    res = harness.lemma4_error_experiment(args.C, args.delta, args.sigma, args.R, args.seed, args.n)
    _emit(res, args.out)
    print(f"empirical={harness._fmt_float(res['empirical_rate'])} "
          f"bound={harness._fmt_float(res['bound'])}")


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="locmm", description="Packing estimators and minimax rates for the "
                                          "Gaussian sequence model under convex constraints.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp, body=True):
        if body:
            sp.add_argument("--body", required=True, help="body descriptor JSON")
        sp.add_argument("--c", type=float, default=16.0)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output JSON path")

    sp = sub.add_parser("rate", help="minimax rate via the fixed-point solver")
    common(sp)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--closed-form", action="store_true")
    sp.add_argument("--center-candidates", type=int, default=32)
    sp.set_defaults(fn=cmd_rate)

    sp = sub.add_parser("entropy", help="local or global log packing counts")
    common(sp)
    sp.add_argument("--epsilon", type=float, nargs="+", required=True)
    sp.add_argument("--kind", choices=("local", "global"), default="local")
    sp.add_argument("--center-candidates", type=int, default=32)
    sp.set_defaults(fn=cmd_entropy)

    sp = sub.add_parser("pack", help="greedy packing of a localized body")
    common(sp)
    sp.add_argument("--separation", type=float, required=True)
    sp.add_argument("--radius", type=float)
    sp.add_argument("--center", type=float, nargs="+")
    sp.add_argument("--certify", action="store_true")
    sp.add_argument("--probes", type=int, default=10_000)
    sp.set_defaults(fn=cmd_pack)

    sp = sub.add_parser("estimate", help="run the iterative estimator on one observation")
    common(sp)
    sp.add_argument("--y", required=True, help="observation as JSON list or one-column CSV")
    sp.add_argument("--sigma-lower", type=float)
    sp.add_argument("--depth", type=int)
    sp.set_defaults(fn=cmd_estimate)

    for name, fn, text in (("risk", cmd_risk, "Monte Carlo risk table"),
                           ("compare", cmd_compare, "risk table for several estimators")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--spec", required=True, help="experiment spec JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--out")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("lemma4", help="two-point test error against its exponential bound")
    sp.add_argument("--C", type=float, required=True)
    sp.add_argument("--delta", type=float, default=1.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--R", type=int, default=10_000)
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_lemma4)
    return p


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, EntropyBudgetError, SamplerError, FloatingPointError,
            np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run_cli())
