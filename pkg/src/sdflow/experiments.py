"""Experiment orchestration: single runs, convergence study, scheme comparison, flower run.

Every experiment takes an :class:`ExperimentSpec` and, when ``spec.out`` is
set, writes its artifacts there (``diagnostics.csv``, ``curve_<step>.csv``,
``curve_<step>.svg``, ``summary.json``, ``convergence.csv``).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .assembly import VARIANTS
from .baseline import BaselineStepper
from .evolve import (ProposedStepper, RunAborted, RunConfig, RunResult, check_invariants,
                     parse_redistribution)
from .geometry import (Curve, isoperimetric_ratio, make_ellipse, make_flower, read_curve_csv,
                       write_curve_csv)
from .newton import NewtonConfig
from .svg import write_svg

logger = logging.getLogger(__name__)

SCHEMES = ("proposed", "baseline")
FLOWER_TIMES = (0.0, 1e-4, 1e-3, 5e-3, 6e-3, 1e-2)
TABLE_TIMES = (0.2, 0.5, 2.0)


def steps_for(dt: float, t: float) -> int:
    """Number of steps of size ``dt`` reaching ``t``; raises if ``t`` is off the grid."""
    n = t / dt
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ValueError(f"t_end={t} is not a positive multiple of dt={dt}")
    return k


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one experiment."""

    name: str = "run"
    init: str = "ellipse:2,1"
    spacing: str = "angle"
    mesh: int = 32
    dt: float = 1e-4
    t_end: float = 2.0
    newton_tol: float = 1e-10
    jacobian: str = "time_weighted"
    scheme: str = "proposed"
    redistribution: str = "off"
    out: str | None = None
    svg_every: int = 0
    seed: int | None = None
    levels: int = 4
    base_mesh: int = 8
    base_dt: float = 0.04
    times: tuple = ()
    jobs: int = 1

    def __post_init__(self):
        if self.name not in ("run", "converge", "compare", "flower"):
            raise ValueError(f"unknown experiment {self.name!r}")
        for key in ("dt", "t_end", "newton_tol", "base_dt"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{key} must be positive and finite, got {v!r}")
        if self.mesh < 3 or self.base_mesh < 3:
            raise ValueError("mesh must be at least 3")
        if self.levels < 1:
            raise ValueError("levels must be at least 1")
        if self.jacobian not in VARIANTS:
            raise ValueError(f"jacobian must be one of {VARIANTS}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.spacing not in ("angle", "arclength"):
            raise ValueError("spacing must be 'angle' or 'arclength'")
        if self.svg_every < 0 or self.jobs < 1:
            raise ValueError("svg_every must be >= 0 and jobs >= 1")
        parse_redistribution(self.redistribution)
        parse_init(self.init)
        for t in self.times:
            if not 0 <= t <= self.t_end * (1 + 1e-12):
                raise ValueError(f"output time {t} outside [0, t_end]")
        for m, dt in self.grid:
            steps_for(dt, self.t_end)

    @property
    def grid(self) -> list:
        """``(M, tau)`` pairs; the convergence study refines ``(h, tau) -> (h/2, tau/4)``."""
        if self.name == "converge":
            return [(self.base_mesh * 2 ** k, self.base_dt / 4 ** k) for k in range(self.levels + 1)]
        return [(self.mesh, self.dt)]

    @property
    def newton(self) -> NewtonConfig:
        tol = self.newton_tol
        return NewtonConfig(tol, tol, tol, jacobian_variant=self.jacobian)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["times"] = list(self.times)
        d["grid"] = [{"M": m, "tau": dt, "steps": steps_for(dt, self.t_end)} for m, dt in self.grid]
        return d


def parse_init(text: str):
    """``ellipse:a,b`` | ``flower:amp,freq`` | ``file:path`` -> (kind, args)."""
    kind, sep, rest = text.partition(":")
    if not sep or not rest:
        raise ValueError(f"bad --init value {text!r}")
    if kind == "file":
        return kind, (rest,)
    try:
        vals = tuple(float(v) for v in rest.split(","))
    except ValueError:
        raise ValueError(f"bad --init parameters {rest!r}") from None
    if kind == "ellipse" and len(vals) == 2:
        return kind, vals
    if kind == "flower" and len(vals) == 2 and float(vals[1]).is_integer():
        return kind, (vals[0], int(vals[1]))
    raise ValueError(f"bad --init value {text!r}")


def make_initial(spec: ExperimentSpec, M: int | None = None) -> Curve:
    kind, args = parse_init(spec.init)
    M = spec.mesh if M is None else M
    if kind == "ellipse":
        return make_ellipse(*args, M, spacing=spec.spacing)
    if kind == "flower":
        return make_flower(*args, M)
    return read_curve_csv(args[0])


def _stepper(scheme: str, newton: NewtonConfig):
    return ProposedStepper(newton) if scheme == "proposed" else BaselineStepper()


def simulate(spec: ExperimentSpec, scheme: str | None = None, M: int | None = None,
             dt: float | None = None, snapshot_times=None) -> RunResult:
    """One run of ``spec`` (optionally overriding scheme and grid); never raises RunAborted."""
    scheme = scheme or spec.scheme
    dt = spec.dt if dt is None else dt
    initial = make_initial(spec, M)
    cfg = RunConfig(tau=dt, steps=steps_for(dt, spec.t_end), newton=spec.newton,
                    snapshot_every=spec.svg_every,
                    snapshot_times=tuple(spec.times if snapshot_times is None else snapshot_times),
                    redistribution=spec.redistribution)
    from .evolve import evolve
    try:
        return evolve(initial, cfg, stepper=_stepper(scheme, spec.newton))
    except RunAborted as exc:
        logger.error("%s", exc)
        return exc.result


# -------------------------------------------------------------- outputs

def _snapshot_name(snap, tau) -> str:
    if abs(snap.time - snap.step * tau) <= 1e-9 * max(tau, abs(snap.time)):
        return f"curve_{snap.step}"
    return f"curve_{snap.step}_t{snap.time:.6g}"


def run_summary(spec: ExperimentSpec, result: RunResult, wall: float, scheme: str,
                area_tol: float = 1e-9, perim_tol: float = 1e-12) -> dict:
    s = result.series
    inv = check_invariants(s, area_tol, perim_tol)
    iters = np.asarray(s.newton_iters[1:])
    out = {
        "scheme": scheme,
        "spec": spec.to_dict(),
        "tolerances": {"newton": spec.newton_tol, "jacobian": spec.jacobian,
                       "area_tol": area_tol, "perim_tol": perim_tol},
        "invariants": inv.as_dict(),
        "steps_completed": int(s.step[-1]),
        "aborted": result.aborted,
        "error": result.error,
        "halvings": result.halvings,
        "final": {"time": s.time[-1], "area": s.area[-1], "perimeter": s.perimeter[-1],
                  "psi": s.psi[-1], "isoperimetric_ratio": isoperimetric_ratio(result.final)},
        "newton_iterations": ({"max": int(iters.max()), "median": float(np.median(iters))}
                              if iters.size and scheme == "proposed" else None),
        "redistribution_events": [asdict(e) for e in result.events],
        "scheme_area_drift_rel": float(np.max(np.abs(result.scheme_area_drift()))),
        "wall_time_s": wall,
        "backend": _backend.BACKEND,
        "version": __version__,
        "python": platform.python_version(),
        "argv": sys.argv[1:],
    }
    return out


def write_run(out, spec: ExperimentSpec, result: RunResult, wall: float, scheme: str,
              svg: bool = True) -> dict:
    """diagnostics.csv, curve snapshots (CSV + SVG) and summary.json under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.series.to_csv(out / "diagnostics.csv")
    x0 = result.snapshots[0].curve.nodes
    bounds = (x0.min(axis=0), x0.max(axis=0))
    tau = spec.dt
    for snap in result.snapshots:
        name = _snapshot_name(snap, tau)
        write_curve_csv(snap.curve, out / f"{name}.csv")
        if svg:
            write_svg(snap.curve, out / f"{name}.svg", title=f"{scheme}, t = {snap.time:.6g}",
                      bounds=bounds)
    summary = run_summary(spec, result, wall, scheme)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    return summary


def run_single(spec: ExperimentSpec) -> tuple[RunResult, dict]:
    if spec.seed is not None:
        np.random.seed(spec.seed)
    t0 = time.perf_counter()
    result = simulate(spec)
    wall = time.perf_counter() - t0
    if spec.out:
        summary = write_run(spec.out, spec, result, wall, spec.scheme)
    else:
        summary = run_summary(spec, result, wall, spec.scheme)
    return result, summary


# ---------------------------------------------------------- convergence

@dataclass(frozen=True)
class ConvergenceRow:
    time: float
    mesh: int
    tau: float
    error: float
    order: float = float("nan")     # log2(previous error / this error)


class ConvergenceStudyAborted(RuntimeError):
    def __init__(self, message: str, rows: list):
        super().__init__(message)
        self.rows = rows


def convergence_error(coarse: np.ndarray, fine: np.ndarray,
                      xi_coarse=None, xi_fine=None) -> float:
    """Max-norm nodal difference at the coarse parameter nodes.

    Under dyadic refinement every coarse node is fine node ``2j``; otherwise
    the fine polygon is evaluated piecewise-linearly at the coarse parameters.
    """
    coarse, fine = np.asarray(coarse), np.asarray(fine)
    m, mf = coarse.shape[0], fine.shape[0]
    if xi_coarse is None and xi_fine is None:
        if mf == m:
            return float(np.max(np.abs(coarse - fine)))
        if mf % m == 0:
            return float(np.max(np.abs(coarse - fine[::mf // m])))
    xi_c = np.arange(m) / m if xi_coarse is None else np.asarray(xi_coarse)
    xi_f = np.arange(mf) / mf if xi_fine is None else np.asarray(xi_fine)
    xf = np.append(xi_f, 1.0)
    pts = np.vstack([fine, fine[:1]])
    ev = np.column_stack([np.interp(xi_c, xf, pts[:, 0]), np.interp(xi_c, xf, pts[:, 1])])
    return float(np.max(np.abs(coarse - ev)))


def convergence_orders(errors) -> list:
    e = list(errors)
    return [float("nan")] + [math.log(e[k - 1] / e[k]) / math.log(2.0) for k in range(1, len(e))]


def _run_level(args):
    spec, m, dt = args
    result = simulate(spec, scheme="proposed", M=m, dt=dt)
    snaps = {}
    for t in spec.times:
        try:
            snaps[t] = result.snapshot_at(t).curve.nodes
        except KeyError:
            pass
    return m, dt, snaps, result.aborted, result.error


def run_convergence_study(spec: ExperimentSpec) -> list:
    """Errors ``e_{h,tau}(t) = max_j |X_{h,tau}(xi_j) - X_{h/2,tau/4}(xi_j)|`` per output time.

    ``spec.levels`` error levels need ``levels + 1`` runs. Each row after the
    first carries ``log2`` of the ratio of the previous error to its own, so
    the last row of each time holds the order from the two finest levels.
    """
    spec_t = spec if spec.times else _replace(spec, times=(spec.t_end,))
    if parse_init(spec_t.init)[0] == "file":
        raise ValueError("the convergence study needs a parametrised initial shape")
    jobs = [(spec_t, m, dt) for m, dt in spec_t.grid]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            levels = list(pool.map(_run_level, jobs))
    else:
        levels = [_run_level(j) for j in jobs]
    rows = []
    for t in spec_t.times:
        errors = []
        for k in range(len(levels) - 1):
            (m, dt, sc, ab, err), (_, _, sf, abf, errf) = levels[k], levels[k + 1]
            if t not in sc or t not in sf:
                raise ConvergenceStudyAborted(
                    f"level M={m} or its refinement failed before t={t}: {err or errf}", rows)
            errors.append(convergence_error(sc[t], sf[t]))
        orders = convergence_orders(errors)
        for k, e in enumerate(errors):
            rows.append(ConvergenceRow(t, levels[k][0], levels[k][1], e, orders[k]))
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        write_convergence_csv(rows, out / "convergence.csv")
        summary = {"scheme": "proposed", "spec": spec_t.to_dict(),
                   "tolerances": {"newton": spec.newton_tol, "jacobian": spec.jacobian},
                   "rows": [asdict(r) for r in rows], "backend": _backend.BACKEND,
                   "version": __version__, "argv": sys.argv[1:]}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    return rows


def write_convergence_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "mesh", "tau", "error", "order"])
        for r in rows:
            w.writerow([repr(r.time), r.mesh, repr(r.tau), repr(r.error), repr(r.order)])


def read_convergence_csv(path) -> list:
    with open(path, newline="") as fh:
        return [ConvergenceRow(float(r["time"]), int(r["mesh"]), float(r["tau"]),
                               float(r["error"]), float(r["order"]))
                for r in csv.DictReader(fh)]


def _replace(spec, **kw):
    from dataclasses import replace
    return replace(spec, **kw)


# -------------------------------------------------------------- compare

@dataclass
class CompareReport:
    proposed: RunResult
    baseline: RunResult
    summary: dict = field(default_factory=dict)

    @property
    def drift_ratio(self) -> float:
        return self.summary["drift_ratio"]


def run_compare(spec: ExperimentSpec) -> CompareReport:
    """Proposed and baseline schemes on the same grid, with the area-drift ratio."""
    runs, summaries = {}, {}
    for scheme in SCHEMES:
        t0 = time.perf_counter()
        runs[scheme] = simulate(spec, scheme=scheme)
        wall = time.perf_counter() - t0
        if spec.out:
            summaries[scheme] = write_run(Path(spec.out) / scheme, spec, runs[scheme], wall,
                                          scheme, svg=spec.svg_every > 0)
        else:
            summaries[scheme] = run_summary(spec, runs[scheme], wall, scheme)
    dp = runs["proposed"].series.max_area_drift
    db = runs["baseline"].series.max_area_drift
    summary = {
        "proposed_area_drift_rel": dp,
        "baseline_area_drift_rel": db,
        "drift_ratio": db / dp if dp > 0 else float("inf"),
        "proposed_final_psi": runs["proposed"].series.psi[-1],
        "perimeter_monotone": {k: bool(np.all(np.diff(v.series.perimeter) <= 1e-10 * v.series.perimeter[0]))
                               for k, v in runs.items()},
        "runs": summaries,
    }
    if spec.out:
        Path(spec.out, "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    return CompareReport(runs["proposed"], runs["baseline"], summary)


# --------------------------------------------------------------- flower

def run_flower(spec: ExperimentSpec) -> tuple[RunResult, dict]:
    """Flower run with snapshots at ``spec.times`` (by default six times between 0 and 0.01)."""
    if not spec.times:
        spec = _replace(spec, times=tuple(t for t in FLOWER_TIMES if t <= spec.t_end))
    t0 = time.perf_counter()
    result = simulate(spec)
    wall = time.perf_counter() - t0
    if result.aborted:
        logger.error("flower run stopped at t=%.6g; last good state kept", result.series.time[-1])
    if spec.out:
        summary = write_run(spec.out, spec, result, wall, spec.scheme)
    else:
        summary = run_summary(spec, result, wall, spec.scheme)
    return result, summary
