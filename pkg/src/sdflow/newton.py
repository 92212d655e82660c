"""Per-step Newton solve with separate increment tolerances for X, p and q."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .assembly import BAND, VARIANTS, DofMap, SparseSystem, StepUnknowns, evaluate
from .geometry import as_curve
from .timequad import EdgeCollapseError

logger = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class StepFailure(RuntimeError):
    """Newton did not converge; ``report`` holds the iteration history."""

    def __init__(self, message: str, report: "NewtonReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class NewtonConfig:
    tol_x: float = 1e-10
    tol_p: float = 1e-10
    tol_q: float = 1e-10
    max_iter: int = 50
    jacobian_variant: str = "time_weighted"

    def __post_init__(self):
        if min(self.tol_x, self.tol_p, self.tol_q) <= 0:
            raise ValueError("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.jacobian_variant not in VARIANTS:
            raise ValueError(f"jacobian_variant must be one of {VARIANTS}")


@dataclass
class NewtonReport:
    iterations: int = 0
    increment_norms: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    final_residual_norm: float = float("nan")
    converged: bool = False


def _condition_estimate(matrix) -> float:
    if matrix.shape[0] <= 4000:
        return float(np.linalg.cond(matrix.toarray()))
    return float("nan")


def _band_matvec(ab: np.ndarray, x: np.ndarray, kl: int, ku: int) -> np.ndarray:
    n = x.size
    y = np.zeros(n)
    for off in range(-kl, ku + 1):      # off = j - i
        diag = ab[kl + ku - off]
        if off >= 0:
            y[:n - off] += diag[off:] * x[off:]
        else:
            y[-off:] += diag[:n + off] * x[:n + off]
    return y


def _solve_banded(system: SparseSystem) -> np.ndarray:
    ab, perm = system.banded()
    b = system.rhs[perm]
    _, _, x, info = lapack.dgbsv(BAND, BAND, ab, b)
    if info != 0 or not np.all(np.isfinite(x)):
        cond = _condition_estimate(system.matrix)
        raise SingularSystemError(
            f"singular Newton matrix (zero pivot at permuted row {info - 1}); cond ~ {cond:.3e}", cond)
    r = b - _band_matvec(ab, x, BAND, BAND)
    bn = np.max(np.abs(b))
    if bn > 0 and np.max(np.abs(r)) > 1e-12 * bn:
        x = x + lapack.dgbsv(BAND, BAND, ab, r)[2]
    out = np.empty_like(x)
    out[perm] = x
    return out


def linear_solve(system: SparseSystem) -> np.ndarray:
    """Direct solve of a Newton system.

    Systems assembled from element blocks are solved as banded matrices
    (LAPACK ``gbsv``) after the zig-zag node permutation; explicit sparse
    matrices go through SuperLU. One step of iterative refinement is taken
    when the relative residual exceeds 1e-12.
    """
    if system.blocks is not None:
        return _solve_banded(system)
    a = system.matrix
    b = np.asarray(system.rhs, dtype=float)
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        cond = _condition_estimate(a)
        raise SingularSystemError(f"singular matrix ({exc}); cond ~ {cond:.3e}", cond) from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        cond = _condition_estimate(a)
        raise SingularSystemError(f"non-finite solution; cond ~ {cond:.3e}", cond)
    r = b - a @ x
    bn = np.max(np.abs(b))
    if bn > 0 and np.max(np.abs(r)) > 1e-12 * bn:
        x += lu.solve(r)
    return x


def bootstrap_curvature(curve) -> tuple[np.ndarray, np.ndarray]:
    """Curvature components of a static curve.

    Solves the curvature equation with both time levels equal to ``curve``;
    the step size cancels. For a regular M-gon of radius R this gives
    ``p = 1 / (R cos(pi/M))`` and ``q = 0``.
    """
    curve = as_curve(curve)
    m = curve.M
    dm = DofMap(m)
    zero = StepUnknowns(curve.nodes, np.zeros(m), np.zeros(m))
    res, blocks = evaluate(curve, zero, 1.0, "time_weighted")
    block = SparseSystem(rhs=res, blocks=blocks).matrix[:2 * m, 2 * m:]
    try:
        sol = linear_solve(SparseSystem(block, -res[dm.x_slice]))
    except SingularSystemError as exc:
        raise SingularSystemError(f"degenerate curvature mass system: {exc}", exc.condition) from exc
    return sol[:m], sol[m:]


def solve_time_step(prev, warm: StepUnknowns, tau: float,
                    cfg: NewtonConfig = NewtonConfig()) -> tuple[StepUnknowns, NewtonReport]:
    """One implicit step from ``prev``, starting Newton at ``warm``.

    Converged when the max-norms of the X, p and q increments are all below
    their tolerances in the same iteration.

    Raises
    ------
    StepFailure
        No convergence within ``cfg.max_iter`` iterations, a collapsing edge,
        or a non-finite iterate.
    SingularSystemError
        The Newton matrix could not be factorised.
    """
    prev = as_curve(prev)
    dm = DofMap(prev.M)
    guess = warm.copy()
    report = NewtonReport()
    for it in range(1, cfg.max_iter + 1):
        try:
            res, blocks = evaluate(prev, guess, tau, cfg.jacobian_variant)
        except EdgeCollapseError as exc:
            raise StepFailure(f"iteration {it}: {exc}", report) from exc
        report.residual_norms.append(float(np.max(np.abs(res))) / tau)
        delta = linear_solve(SparseSystem(rhs=-res, blocks=blocks))
        m = prev.M
        dx = float(np.max(np.abs(delta[:2 * m])))
        dp = float(np.max(np.abs(delta[2 * m:3 * m])))
        dq = float(np.max(np.abs(delta[3 * m:])))
        report.iterations = it
        report.increment_norms.append((dx, dp, dq))
        if not np.isfinite(dx + dp + dq):
            raise StepFailure(f"iteration {it}: non-finite increment", report)
        guess.positions += delta[:2 * m].reshape(m, 2)
        guess.p += delta[2 * m:3 * m]
        guess.q += delta[3 * m:]
        if dx <= cfg.tol_x and dp <= cfg.tol_p and dq <= cfg.tol_q:
            report.converged = True
            break
    else:
        raise StepFailure(f"Newton did not converge in {cfg.max_iter} iterations", report)
    try:
        res, _ = evaluate(prev, guess, tau, want_jac=False)
    except EdgeCollapseError as exc:
        raise StepFailure(str(exc), report) from exc
    report.final_residual_norm = float(np.max(np.abs(res))) / tau
    return guess, report
