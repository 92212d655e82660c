"""Time marching with per-step area/perimeter monitoring.

The driver is scheme-agnostic: a *stepper* advances ``(curve, state)`` by one
step of given size, and :func:`evolve` handles the loop, step-size halving on
failure, snapshots, optional arclength redistribution and the diagnostics.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import StepUnknowns
from .geometry import Curve, as_curve, mesh_ratio, perimeter, polygon_area
from .newton import NewtonConfig, SingularSystemError, StepFailure, bootstrap_curvature, solve_time_step
from .timequad import EdgeCollapseError

logger = logging.getLogger(__name__)

CSV_FIELDS = ("step", "time", "perimeter", "area", "psi", "newton_iters",
              "area_drift_rel", "perimeter_delta")


# ---------------------------------------------------------------- config

def parse_redistribution(text: str) -> int:
    """``"off"`` -> 0, ``"arclength:k"`` -> k.

    With k > 0 the curve is redistributed before the first step and after
    every k-th step.
    """
    text = text.strip().lower()
    if text == "off":
        return 0
    kind, _, every = text.partition(":")
    if kind != "arclength" or not every:
        raise ValueError(f"redistribution must be 'off' or 'arclength:k', got {text!r}")
    k = int(every)
    if k < 1:
        raise ValueError("redistribution interval must be >= 1")
    return k


@dataclass(frozen=True)
class RunConfig:
    """Uniform-step run of ``steps`` steps of size ``tau``.

    ``snapshot_every`` stores the curve every that many steps (0 disables,
    the initial and final curves are always kept). ``snapshot_times`` adds
    curves at given times; a time that is not a multiple of ``tau`` is reached
    by a shortened step from the preceding grid point which does not feed back
    into the march.
    """

    tau: float
    steps: int
    newton: NewtonConfig = NewtonConfig()
    snapshot_every: int = 0
    snapshot_times: tuple = ()
    redistribution: str = "off"
    max_halvings: int = 4
    area_tol: float = 1e-9
    perim_tol: float = 1e-12

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.snapshot_every < 0 or self.max_halvings < 0:
            raise ValueError("snapshot_every and max_halvings must be non-negative")
        parse_redistribution(self.redistribution)
        end = self.tau * self.steps
        for t in self.snapshot_times:
            if not 0 <= t <= end * (1 + 1e-12):
                raise ValueError(f"snapshot time {t} outside [0, {end}]")

    @property
    def redistribute_every(self) -> int:
        return parse_redistribution(self.redistribution)

    @property
    def t_end(self) -> float:
        return self.tau * self.steps


# ----------------------------------------------------------- diagnostics

@dataclass
class DiagnosticsSeries:
    """Per-step scalar history; row 0 is the initial state."""

    step: list = field(default_factory=list)
    time: list = field(default_factory=list)
    perimeter: list = field(default_factory=list)
    area: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    area_drift_rel: list = field(default_factory=list)
    perimeter_delta: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    scheme: str = "proposed"

    def __len__(self) -> int:
        return len(self.step)

    def record(self, step: int, time: float, curve: Curve, iters: int = 0,
               residual: float = float("nan")) -> None:
        area = polygon_area(curve)
        length = perimeter(curve)
        a0 = self.area[0] if self.area else area
        self.step.append(int(step))
        self.time.append(float(time))
        self.perimeter.append(length)
        self.area.append(area)
        self.psi.append(mesh_ratio(curve))
        self.newton_iters.append(int(iters))
        self.area_drift_rel.append((area - a0) / a0)
        self.perimeter_delta.append(length - self.perimeter[-2] if len(self.perimeter) > 1 else 0.0)
        self.residual.append(float(residual))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))

    @property
    def max_area_drift(self) -> float:
        return float(np.max(np.abs(self.column("area_drift_rel"))))

    @property
    def max_perimeter_increase(self) -> float:
        return float(np.max(self.column("perimeter_delta")))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for row in zip(*(getattr(self, k) for k in CSV_FIELDS)):
                w.writerow([v if isinstance(v, int) else repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, scheme: str = "proposed") -> "DiagnosticsSeries":
        out = cls(scheme=scheme)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_FIELDS:
                raise ValueError(f"{path}: unexpected diagnostics header {reader.fieldnames}")
            for row in reader:
                for k in CSV_FIELDS:
                    conv = int if k in ("step", "newton_iters") else float
                    getattr(out, k).append(conv(row[k]))
                out.residual.append(float("nan"))
        return out


@dataclass
class InvariantReport:
    area_flags: list
    perimeter_flags: list
    isoperimetric_flags: list
    max_area_drift: float
    max_perimeter_increase: float

    @property
    def ok(self) -> bool:
        return not (self.area_flags or self.perimeter_flags)

    def as_dict(self) -> dict:
        return {"ok": self.ok, "area_flags": len(self.area_flags),
                "perimeter_flags": len(self.perimeter_flags),
                "isoperimetric_flags": len(self.isoperimetric_flags),
                "max_area_drift_rel": self.max_area_drift,
                "max_perimeter_increase": self.max_perimeter_increase}


def check_invariants(series: DiagnosticsSeries, area_tol: float = 1e-9,
                     perim_tol: float = 1e-12) -> InvariantReport:
    """Steps whose area drift or perimeter increase exceed the tolerances.

    The perimeter test is relative to the initial perimeter. The isoperimetric
    ratio is checked with the same relative slack and reported separately.
    """
    if len(series) == 0:
        raise ValueError("empty diagnostics series")
    steps = series.column("step")
    drift = np.abs(series.column("area_drift_rel"))
    length = series.column("perimeter")
    dl = np.diff(length)
    iso = length ** 2 / (4 * np.pi * series.column("area"))
    area_flags = steps[drift > area_tol].tolist()
    perim_flags = steps[1:][dl > perim_tol * length[0]].tolist()
    iso_flags = steps[1:][np.diff(iso) > (perim_tol + area_tol) * iso[0] * 2].tolist()
    return InvariantReport(area_flags, perim_flags, iso_flags, float(drift.max()),
                           float(dl.max()) if dl.size else 0.0)


# --------------------------------------------------------------- steppers

class ProposedStepper:
    """Implicit structure-preserving step; carries ``(X, p, q)`` between steps."""

    name = "proposed"

    def __init__(self, cfg: NewtonConfig = NewtonConfig()):
        self.cfg = cfg

    def start(self, curve: Curve) -> StepUnknowns:
        p, q = bootstrap_curvature(curve)
        return StepUnknowns(curve.nodes, p, q)

    def step(self, curve: Curve, state: StepUnknowns, tau: float):
        new, report = solve_time_step(curve, state, tau, self.cfg)
        return curve.with_nodes(new.positions), new, report.iterations, report.final_residual_norm


class RunAborted(RuntimeError):
    """A step could not be completed; ``result`` holds everything up to it."""

    def __init__(self, message: str, result: "RunResult"):
        super().__init__(message)
        self.result = result


@dataclass
class Snapshot:
    step: int
    time: float
    curve: Curve


@dataclass
class RedistributionEvent:
    step: int
    area_change: float
    perimeter_change: float


@dataclass
class RunResult:
    final: Curve
    series: DiagnosticsSeries
    snapshots: list
    events: list = field(default_factory=list)
    halvings: int = 0
    aborted: bool = False
    error: str = ""

    def scheme_area_drift(self) -> np.ndarray:
        """Relative area drift with the redistribution jumps taken out.

        Row ``n`` is recorded before any redistribution at step ``n``, so
        only events at earlier steps are subtracted.
        """
        area = self.series.column("area")
        steps = self.series.column("step")
        jumps = np.zeros_like(area)
        for ev in self.events:
            jumps[steps > ev.step] += ev.area_change
        return (area - jumps - area[0]) / area[0]

    def snapshot_at(self, t: float, rtol: float = 1e-9) -> Snapshot:
        for s in self.snapshots:
            if abs(s.time - t) <= rtol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot at t={t}")


_MAX_WARNINGS = 5
_RECOVERABLE = (StepFailure, EdgeCollapseError, SingularSystemError)


def _advance(stepper, curve, state, tau, depth):
    """One step of size ``tau``, halved recursively on failure.

    Returns ``(curve, state, iterations, residual, halvings)``; iterations are
    summed over substeps.
    """
    try:
        c, s, it, r = stepper.step(curve, state, tau)
        return c, s, it, r, 0
    except _RECOVERABLE as exc:
        if depth <= 0:
            raise
        logger.warning("step of size %.3e failed (%s); retrying with two half steps", tau, exc)
    c, s, it1, _, h1 = _advance(stepper, curve, state, tau / 2, depth - 1)
    c, s, it2, r, h2 = _advance(stepper, c, s, tau / 2, depth - 1)
    return c, s, it1 + it2, r, 1 + h1 + h2


def _redistribute(curve, step, result):
    new = redistribute_arclength(curve)
    ev = RedistributionEvent(step, polygon_area(new) - polygon_area(curve),
                             perimeter(new) - perimeter(curve))
    result.events.append(ev)
    logger.info("step %d: redistributed, area change %.3e", step, ev.area_change)
    return new


def evolve(initial, cfg: RunConfig, stepper=None) -> RunResult:
    """March ``initial`` through ``cfg.steps`` steps.

    Every completed step is checked against area conservation and perimeter
    decrease; violations are logged, never fatal. A step that still fails
    after ``cfg.max_halvings`` halvings raises :class:`RunAborted` carrying the
    partial :class:`RunResult`.
    """
    curve = as_curve(initial)
    stepper = stepper or ProposedStepper(cfg.newton)
    series = DiagnosticsSeries(scheme=getattr(stepper, "name", "custom"))
    series.record(0, 0.0, curve)
    result = RunResult(curve, series, [Snapshot(0, 0.0, curve)])
    redistribute = cfg.redistribute_every

    # snapshot times -> (grid step, leftover fraction of a step)
    pending = {}
    for t in sorted(set(float(t) for t in cfg.snapshot_times)):
        n = t / cfg.tau
        k = int(round(n))
        if abs(n - k) <= 1e-9 * max(1.0, n):
            pending.setdefault(k, []).append((t, 0.0))
        else:
            pending.setdefault(int(math.floor(n)), []).append((t, t - math.floor(n) * cfg.tau))
    taken = {(0, 0.0)}
    violations = 0

    def take(step, time, c):
        key = (step, round(time / cfg.tau, 9))
        if key not in taken:
            taken.add(key)
            result.snapshots.append(Snapshot(step, time, c))

    def side_snapshots(n, c, s):
        for t, frac in pending.get(n, ()):
            if frac == 0.0:
                take(n, t, c)
            else:
                c2 = _advance(stepper, c, s, frac, cfg.max_halvings)[0]
                take(n, t, c2)

    try:
        if redistribute:
            curve = _redistribute(curve, 0, result)
        state = stepper.start(curve)
        a_prev, l_prev, l0 = series.area[0], series.perimeter[0], series.perimeter[0]
        side_snapshots(0, curve, state)
        for n in range(1, cfg.steps + 1):
            curve, state, iters, resid, halv = _advance(stepper, curve, state, cfg.tau,
                                                        cfg.max_halvings)
            result.halvings += halv
            t = n * cfg.tau
            series.record(n, t, curve, iters, resid)
            a, length = series.area[-1], series.perimeter[-1]
            if abs(a - a_prev) > cfg.area_tol * abs(series.area[0]):
                violations += 1
                if violations <= _MAX_WARNINGS:
                    logger.warning("step %d: area changed by %.3e", n, a - a_prev)
            if length - l_prev > cfg.perim_tol * l0:
                violations += 1
                if violations <= _MAX_WARNINGS:
                    logger.warning("step %d: perimeter increased by %.3e", n, length - l_prev)
            if redistribute and n % redistribute == 0 and n < cfg.steps:
                curve = _redistribute(curve, n, result)
                state = stepper.start(curve)
                a, length = polygon_area(curve), perimeter(curve)
            a_prev, l_prev = a, length
            result.final = curve
            if cfg.snapshot_every and n % cfg.snapshot_every == 0:
                take(n, t, curve)
            side_snapshots(n, curve, state)
    except _RECOVERABLE as exc:
        result.aborted = True
        result.error = str(exc)
        result.snapshots.append(Snapshot(series.step[-1], series.time[-1], result.final))
        raise RunAborted(f"run aborted after step {series.step[-1]}: {exc}", result) from exc
    if violations > _MAX_WARNINGS:
        logger.warning("%d invariant violations in total (%s scheme)", violations, series.scheme)
    take(cfg.steps, cfg.t_end, curve)
    result.snapshots.sort(key=lambda s: (s.time, s.step))
    return result


# --------------------------------------------------------- redistribution

def redistribute_arclength(curve) -> Curve:
    """Equal arclength spacing along the existing polygon, node 0 kept.

    New nodes lie on the old edges, so the perimeter can only shrink where a
    node replaces a corner; the enclosed area changes accordingly.
    """
    curve = as_curve(curve)
    x = curve.nodes
    closed = np.vstack([x, x[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.arange(curve.M) * (s[-1] / curve.M)
    new = np.column_stack([np.interp(target, s, closed[:, 0]),
                           np.interp(target, s, closed[:, 1])])
    new[0] = x[0]
    return curve.with_nodes(new, check=True)


__all__ = ["RunConfig", "DiagnosticsSeries", "InvariantReport", "RunResult", "RunAborted",
           "Snapshot", "RedistributionEvent", "ProposedStepper", "evolve", "check_invariants",
           "redistribute_arclength", "parse_redistribution", "CSV_FIELDS"]
