"""Semi-implicit comparator: one linear solve per step, coefficients lagged.

Mass-lumped linear-element scheme of the Barrett-Garcke-Nuernberg type for
``V = -kappa_ss``. With the vertex normals ``omega_i`` and the stiffness
matrix ``K`` of the old polygon, the new nodes ``X`` and the scalar curvature
``k`` solve::

    omega_i . (X_i - x_i) / tau - (K k)_i = 0
    k_i omega_i + (K X)_i                 = 0

Perimeter decreases unconditionally, while the enclosed area is conserved
only up to an O(tau) defect per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .assembly import zigzag_order
from .geometry import as_curve, rotate
from .newton import SingularSystemError


@dataclass(frozen=True)
class BaselineConfig:
    tau: float
    steps: int

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")


_BAND = 8      # half-bandwidth with three dofs per node in zig-zag order


def baseline_system(prev, tau: float):
    """COO triplets ``(rows, cols, vals)`` and right-hand side of one step.

    Unknown layout ``[X_0.x, .., X_{M-1}.x, X_0.y, .., X_{M-1}.y, k_0, .., k_{M-1}]``.
    """
    prev = as_curve(prev)
    x = prev.nodes
    m = prev.M
    d = prev.edges
    w = 1.0 / np.hypot(d[:, 0], d[:, 1])
    omega = 0.5 * rotate(d + np.roll(d, 1, axis=0))      # inward vertex normals
    k = np.arange(m)
    k1 = (k + 1) % m
    # stiffness matrix K: edge k joins nodes k and k1
    kr = np.concatenate([k, k1, k, k1])
    kc = np.concatenate([k, k1, k1, k])
    kv = np.concatenate([w, w, -w, -w])
    rows = [k, k, kr,
            m + kr, m + k,
            2 * m + kr, 2 * m + k]
    cols = [k, m + k, 2 * m + kc,
            kc, 2 * m + k,
            m + kc, 2 * m + k]
    vals = [omega[:, 0] / tau, omega[:, 1] / tau, -kv,
            kv, omega[:, 0],
            kv, omega[:, 1]]
    # rows: [0, m) normal velocity, [m, 2m) and [2m, 3m) curvature components
    rhs = np.concatenate([np.einsum("ij,ij->i", omega, x) / tau, np.zeros(2 * m)])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs


def baseline_step(prev, tau: float):
    """One semi-implicit step; returns the new :class:`~sdflow.geometry.Curve`.

    The 3M x 3M system is solved as a banded matrix after ordering the nodes
    0, M-1, 1, M-2, ... so that cycle neighbours are at most two places apart.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    prev = as_curve(prev)
    m = prev.M
    rows, cols, vals, rhs = baseline_system(prev, tau)
    order = zigzag_order(m)
    perm = np.column_stack([order, m + order, 2 * m + order]).ravel()
    inv = np.empty_like(perm)
    inv[perm] = np.arange(3 * m)
    r, c = inv[rows], inv[cols]
    n = 3 * m
    ab = np.zeros((2 * _BAND + 1, n))
    np.add.at(ab, (_BAND + r - c, c), vals)
    try:
        y = linalg.solve_banded((_BAND, _BAND), ab, rhs[perm], check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"baseline system is singular: {exc}") from exc
    if not np.all(np.isfinite(y)):
        raise SingularSystemError("baseline solve produced non-finite values")
    sol = np.empty(n)
    sol[perm] = y
    return prev.with_nodes(np.column_stack([sol[:m], sol[m:2 * m]]))


class BaselineStepper:
    """Adapter for :func:`sdflow.evolve.evolve`."""

    name = "baseline"

    def start(self, curve):
        return None

    def step(self, curve, state, tau):
        return baseline_step(curve, tau), None, 1, float("nan")


def run_baseline(initial, cfg: BaselineConfig, **run_options):
    """Run the comparator through the common driver; extra options go to RunConfig."""
    from .evolve import RunConfig, evolve

    rc = RunConfig(tau=cfg.tau, steps=cfg.steps, **run_options)
    return evolve(initial, rc, stepper=BaselineStepper())
