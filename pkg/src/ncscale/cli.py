"""Command-line front end.

Exit codes: 0 success, 1 parse or configuration error, 2 the engine stopped
at a stall or at the PD boundary, 3 the rank certificate is not certified
(and, for ``verify``, any failed check).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import instances
from .certify import ncrank, reduce_tuple
from .engine import ENGINES, FlowConfig
from .errors import InvalidInputError, NcScaleError, NotFullSupportError, StallError
from .linalg import as_norm
from .operator import check_full_support

EXIT_OK, EXIT_INPUT, EXIT_STOP, EXIT_UNCERTIFIED = 0, 1, 2, 3


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NCSCALE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InvalidInputError(f"NCSCALE_SEED must be an integer, got {env!r}") from None


def _config(args) -> FlowConfig:
    return FlowConfig(max_iters=args.max_iters, step_size=args.step, tolerance=args.tol,
                      norm=as_norm(args.norm), smoothing_p=float(args.smooth_p),
                      mm_tau=args.mm_tau, seed=_seed(args))


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2)
    if path:
        with open(path, "w") as fp:
            fp.write(text + "\n")
    else:
        print(text)


# -------------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    params = {}
    for key in ("n", "k", "l", "m"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    if args.family in ("zero-block", "random-full"):
        params["seed"] = _seed(args)
    inst = instances.generate(args.family, **params)
    if inst.known_ncrank is not None and args.certify:
        cert = ncrank(inst.tuple, seed=_seed(args))
        inst.construction["certified"] = bool(cert.certified and cert.ncrank == inst.known_ncrank)
        if not inst.construction["certified"]:
            print(f"warning: certification gave ncrank {cert.ncrank} "
                  f"(bounds {cert.lower_bound}..{cert.upper_bound}); dropping known_ncrank",
                  file=sys.stderr)
            inst.known_ncrank = None
    text = instances.dumps(inst)
    if args.out:
        with open(args.out, "w") as fp:
            fp.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _scale_tuple(A, engine, cfg):
    """Run ``engine`` on ``A`` (or its adjoint when only the right side is full)."""
    left, right = check_full_support(A)
    if engine != "sinkhorn" and left < A.n:
        A = A.adjoint()
    return ENGINES[engine](A, cfg=cfg)


def cmd_scale(args) -> int:
    inst = instances.load(args.instance)
    cfg = _config(args)
    A = inst.tuple
    t0 = time.perf_counter()
    cert = ncrank(A, cfg)
    offset = 0
    left, right = check_full_support(A)
    work = A
    if left < A.n or right < A.n:
        if args.engine == "sinkhorn" or (left < A.n and right < A.n):
            red = reduce_tuple(A)
            offset, work = red.offset, red.tuple
    code = EXIT_OK
    trace = None
    stop = None
    if work is None:
        stop = "empty"
    else:
        try:
            trace = _scale_tuple(work, args.engine, cfg)
            stop = trace.stop_reason
        except StallError as err:
            trace, stop = err.trace, "stall"
            print(f"stalled: {err}", file=sys.stderr)
        except NotFullSupportError as err:
            # Sinkhorn after a one-sided reduction: a zero marginal block remains
            stop = "stall"
            print(f"stalled: {err}", file=sys.stderr)
    if stop in ("stall", "boundary"):
        code = EXIT_STOP
    if args.out:
        with open(args.out, "w") as fp:
            if trace is not None:
                trace.write_jsonl(fp)
    # zero rows and columns stripped by the reduction each add 1 to both marginals
    extra = 2.0 * offset
    if trace is not None and trace.records:
        final, best = trace.final, trace.best()
        res_l1 = final.residual_l1 + extra
        res_l2 = sum(float(np.hypot(x, np.sqrt(offset))) for x in final.l2_sides)
        best_l1 = best.residual_l1 + extra
        iters = len(trace) - 1
    else:
        res_l1 = best_l1 = extra if work is None else float("nan")
        res_l2 = 2 * np.sqrt(offset) if work is None else float("nan")
        iters = 0
    report = {
        "instance": inst.name,
        "engine": args.engine,
        "residual_l1": res_l1,
        "residual_l2": res_l2,
        "best_residual_l1": best_l1,
        "ncrank": cert.to_json(),
        "corank": cert.corank,
        "duality_gap": best_l1 - 2 * cert.corank,
        "reduction_offset": offset,
        "iterations": iters,
        "stop_reason": stop,
        "wall_clock": time.perf_counter() - t0,
        "config": cfg.as_dict(),
    }
    _emit(report)
    return code


def cmd_ncrank(args) -> int:
    inst = instances.load(args.instance)
    cfg = _config(args)
    cert = ncrank(inst.tuple, cfg, seed=cfg.seed)
    _emit(cert.to_json(), args.out)
    if not cert.certified:
        print(f"uncertified: {cert.lower_bound} <= ncrank <= {cert.upper_bound}",
              file=sys.stderr)
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    seed = _seed(args)
    results = []
    if args.instance:
        inst = instances.load(args.instance)
        results.append(verify.suite_instance(inst, seed=seed))
    names = []
    if args.suite == "all":
        names = list(verify.SUITES)
    elif args.suite:
        names = [args.suite]
    elif not args.instance:
        raise InvalidInputError("give an instance file or --suite")
    for name in names:
        if name == "duality" and args.instance:
            continue  # covered by the instance ray check
        results.append(verify.run_suite(name, seed=seed))
    summary = {"passed": all(r.passed for r in results),
               "suites": [r.as_dict() for r in results]}
    _emit(summary, args.out)
    return EXIT_OK if summary["passed"] else EXIT_UNCERTIFIED


# ---------------------------------------------------------------------- parser


def _flow_flags(p):
    p.add_argument("--norm", default="1", help="l_p norm for residual reporting (1, 2, ..., inf)")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--step", type=float, default=0.1, help="initial gradient step size")
    p.add_argument("--mm-tau", type=float, default=0.1, help="minimizing-movement proximal parameter")
    p.add_argument("--smooth-p", default="8", help="l_p smoothing of the l_inf tangent norm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors: exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    parser = _Parser(prog="ncscale", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None,
                        help="random seed (falls back to $NCSCALE_SEED, then 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="emit a structured instance as JSON")
    g.add_argument("family", choices=sorted(instances.FAMILIES))
    g.add_argument("--n", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--l", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--no-certify", dest="certify", action="store_false",
                   help="skip the generation-time rank certificate")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("scale", help="run a scaling engine and write a JSON-lines trace")
    s.add_argument("instance")
    s.add_argument("--engine", choices=sorted(ENGINES), default="sinkhorn")
    _flow_flags(s)
    s.add_argument("--out", help="trace file (JSON lines)")
    s.set_defaults(func=cmd_scale)

    r = sub.add_parser("ncrank", help="certify the noncommutative rank")
    r.add_argument("instance")
    _flow_flags(r)
    r.add_argument("--out")
    r.set_defaults(func=cmd_ncrank)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("instance", nargs="?")
    v.add_argument("--suite", choices=sorted(SUITES) + ["all"])
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    for p in (g, s, r, v):
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NcScaleError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
