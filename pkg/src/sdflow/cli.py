"""Command-line front end: ``sdflow {run,converge,compare,flower} [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import (FLOWER_TIMES, TABLE_TIMES, ExperimentSpec, run_compare,
                          run_convergence_study, run_flower, run_single)

_DEFAULTS = {
    "run": dict(init="ellipse:2,1", mesh=32, dt=1e-4, t_end=2.0),
    "compare": dict(init="ellipse:2,1", mesh=32, dt=1e-4, t_end=2.0),
    "flower": dict(init="flower:0.65,7", mesh=210, dt=1e-6, t_end=0.01),
    "converge": dict(init="ellipse:2,1", t_end=2.0),
}

_JACOBIAN = {"as-written": "as_written", "time-weighted": "time_weighted"}


def _times(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--mesh", type=int, metavar="M", help="number of nodes")
    g.add_argument("--dt", type=float, metavar="TAU", help="time step")
    g.add_argument("--t-end", type=float, metavar="T", help="final time")
    g.add_argument("--init", metavar="SHAPE",
                   help="ellipse:a,b | flower:amp,freq | file:path (CSV with header x,y)")
    g.add_argument("--spacing", choices=("angle", "arclength"), default="angle",
                   help="node placement on an ellipse (default: angle)")
    g.add_argument("--newton-tol", type=float, default=1e-10, metavar="TOL",
                   help="max-norm tolerance on the X, p and q increments")
    g.add_argument("--jacobian", choices=tuple(_JACOBIAN), default="time-weighted")
    g.add_argument("--scheme", choices=("proposed", "baseline"), default="proposed")
    g.add_argument("--redistribute", default="off", metavar="MODE",
                   help="off | arclength:k (not part of the structure-preserving scheme)")
    g.add_argument("--out", metavar="DIR", help="output directory")
    g.add_argument("--svg-every", type=int, default=0, metavar="K",
                   help="write curve CSV/SVG every K steps")
    g.add_argument("--times", type=_times, metavar="T1,T2,...",
                   help="extra snapshot times")
    g.add_argument("--seed", type=int, help="seed for the randomized test harness")
    g.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="sdflow",
        description="Surface diffusion of closed curves with an area-conserving, "
                    "perimeter-decreasing parametric finite element scheme.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("run", parents=[common], help="single evolution")
    sub.add_parser("compare", parents=[common], help="proposed vs semi-implicit baseline")
    sub.add_parser("flower", parents=[common], help="flower-shaped initial curve")
    conv = sub.add_parser("converge", parents=[common], help="refinement study (h, tau) -> (h/2, tau/4)")
    conv.add_argument("--levels", type=int, default=4, help="number of error levels")
    conv.add_argument("--base-mesh", type=int, default=8)
    conv.add_argument("--base-dt", type=float, default=0.04)
    conv.add_argument("--jobs", type=int, default=1, help="levels run in parallel processes")
    return parser


def parse_cli(argv=None) -> ExperimentSpec:
    """Parse arguments into a validated :class:`ExperimentSpec` (exits with usage on error)."""
    return _parse(argv)[0]


def _parse(argv):
    parser = build_parser()
    ns = parser.parse_args(argv)
    base = _DEFAULTS[ns.command]
    pick = lambda key: getattr(ns, key) if getattr(ns, key) is not None else base.get(key)
    kw = dict(
        name=ns.command, init=pick("init"), spacing=ns.spacing,
        t_end=pick("t_end"), newton_tol=ns.newton_tol, jacobian=_JACOBIAN[ns.jacobian],
        scheme=ns.scheme, redistribution=ns.redistribute, out=ns.out,
        svg_every=ns.svg_every, seed=ns.seed,
    )
    if ns.command == "converge":
        kw.update(levels=ns.levels, base_mesh=ns.base_mesh, base_dt=ns.base_dt, jobs=ns.jobs,
                  times=ns.times or TABLE_TIMES)
        if ns.dt is not None or ns.mesh is not None:
            parser.error("converge takes --base-mesh/--base-dt instead of --mesh/--dt")
    else:
        kw.update(mesh=pick("mesh"), dt=pick("dt"), times=ns.times or ())
        if ns.command == "flower" and not ns.times:
            kw["times"] = tuple(t for t in FLOWER_TIMES if t <= kw["t_end"])
    try:
        spec = ExperimentSpec(**kw)
    except ValueError as exc:
        parser.error(str(exc))
    return spec, ns.verbose


def main(argv=None) -> int:
    spec, verbose = _parse(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if spec.name == "converge":
        rows = run_convergence_study(spec)
        print(f"{'t':>6} {'M':>5} {'tau':>10} {'error':>10} {'order':>6}")
        for r in rows:
            print(f"{r.time:6g} {r.mesh:5d} {r.tau:10.4g} {r.error:10.3e} {r.order:6.2f}")
        return 0
    if spec.name == "compare":
        rep = run_compare(spec)
        s = rep.summary
        print(f"area drift: proposed {s['proposed_area_drift_rel']:.3e}, "
              f"baseline {s['baseline_area_drift_rel']:.3e}, ratio {s['drift_ratio']:.3e}")
        return 0
    result, summary = (run_flower if spec.name == "flower" else run_single)(spec)
    print(json.dumps({k: summary[k] for k in ("scheme", "steps_completed", "aborted",
                                               "invariants", "final")}, indent=2, default=float))
    return 1 if result.aborted else 0


if __name__ == "__main__":
    sys.exit(main())
