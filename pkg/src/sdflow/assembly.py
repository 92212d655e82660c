"""Residual and Newton matrix of the fully discrete area/perimeter preserving scheme.

Unknowns per step are the new node positions ``X``, the normal curvature
component ``p`` and the tangential component ``q``. Residual rows use the same
layout as the unknowns (:class:`DofMap`): the vector-valued curvature equation
tested with node ``i`` sits at the rows of ``X_i``, the normal-velocity
equation at the row of ``p_i`` and the tangential-velocity equation at the row
of ``q_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import _backend
from .geometry import Curve, as_curve

VARIANTS = ("as_written", "time_weighted")


@dataclass
class StepUnknowns:
    positions: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.p = np.ascontiguousarray(self.p, dtype=float)
        self.q = np.ascontiguousarray(self.q, dtype=float)
        m = self.positions.shape[0]
        if self.positions.shape != (m, 2) or self.p.shape != (m,) or self.q.shape != (m,):
            raise ValueError("inconsistent StepUnknowns shapes")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.p))
                and np.all(np.isfinite(self.q))):
            raise ValueError("StepUnknowns contain non-finite entries")

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "StepUnknowns":
        return StepUnknowns(self.positions.copy(), self.p.copy(), self.q.copy())


@dataclass(frozen=True)
class DofMap:
    """``[X_0.x, X_0.y, ..., X_{M-1}.y, p_0..p_{M-1}, q_0..q_{M-1}]``."""

    M: int

    @property
    def size(self) -> int:
        return 4 * self.M

    def x(self, i: int, comp: int) -> int:
        return 2 * (i % self.M) + comp

    def p(self, i: int) -> int:
        return 2 * self.M + i % self.M

    def q(self, i: int) -> int:
        return 3 * self.M + i % self.M

    @property
    def x_slice(self) -> slice:
        return slice(0, 2 * self.M)

    @property
    def p_slice(self) -> slice:
        return slice(2 * self.M, 3 * self.M)

    @property
    def q_slice(self) -> slice:
        return slice(3 * self.M, 4 * self.M)

    def pack(self, u: StepUnknowns) -> np.ndarray:
        return np.concatenate([u.positions.ravel(), u.p, u.q])

    def unpack(self, vec) -> StepUnknowns:
        vec = np.asarray(vec, dtype=float)
        m = self.M
        return StepUnknowns(vec[:2 * m].reshape(m, 2), vec[2 * m:3 * m], vec[3 * m:])

    def element_dofs(self) -> np.ndarray:
        """Global indices of the 8 local dofs of every element, shape (M, 8)."""
        m = self.M
        k = np.arange(m)
        k1 = (k + 1) % m
        return np.column_stack([2 * k, 2 * k + 1, 2 * k1, 2 * k1 + 1,
                                2 * m + k, 2 * m + k1, 3 * m + k, 3 * m + k1])


class SparseSystem:
    """Newton matrix and right-hand side.

    Built either from an explicit sparse ``matrix`` or, as the assembly does,
    from the (M, 8, 8) element ``blocks``; the other representations (CSC
    matrix, LAPACK band storage) are derived on demand.
    """

    def __init__(self, matrix=None, rhs=None, *, blocks=None):
        if (matrix is None) == (blocks is None):
            raise ValueError("give exactly one of matrix or blocks")
        self.rhs = np.asarray(rhs, dtype=float)
        self.blocks = blocks
        self._matrix = None if matrix is None else sp.csc_matrix(matrix)

    @property
    def M(self) -> int:
        return self.blocks.shape[0] if self.blocks is not None else self._matrix.shape[0] // 4

    @property
    def matrix(self) -> sp.csc_matrix:
        if self._matrix is None:
            self._matrix = _scatter(self.blocks, self.blocks.shape[0])
        return self._matrix

    def banded(self):
        """``(ab, perm)``: band storage of the matrix in zig-zag node order."""
        if self.blocks is None:
            raise ValueError("band storage needs element blocks")
        return _banded(self.blocks, self.blocks.shape[0])


#: half-bandwidth of the Newton matrix in zig-zag node order
BAND = 11


def zigzag_order(m: int) -> np.ndarray:
    """Node order 0, M-1, 1, M-2, ... in which cycle neighbours are <= 2 apart."""
    order = np.empty(m, dtype=np.int64)
    order[0::2] = np.arange((m + 1) // 2)
    order[1::2] = m - 1 - np.arange(m // 2)
    return order


@lru_cache(maxsize=32)
def _band_pattern(m: int):
    order = zigzag_order(m)
    # dof permutation: new position -> old dof, four dofs per node
    perm = np.column_stack([2 * order, 2 * order + 1, 2 * m + order, 3 * m + order]).ravel()
    inv = np.empty_like(perm)
    inv[perm] = np.arange(4 * m)
    dofs = DofMap(m).element_dofs()
    rows = inv[np.repeat(dofs, 8, axis=1).ravel()]
    cols = inv[np.tile(dofs, (1, 8)).ravel()]
    n = 4 * m
    if np.max(np.abs(rows - cols)) > BAND:
        raise AssertionError("bandwidth exceeded")
    kl = ku = BAND
    flat = (kl + ku + rows - cols) * n + cols
    perm.setflags(write=False)
    return flat, perm, (2 * kl + ku + 1) * n


def _banded(blocks: np.ndarray, m: int):
    flat, perm, size = _band_pattern(m)
    ab = np.bincount(flat, weights=blocks.ravel(), minlength=size).reshape(-1, 4 * m)
    return ab, perm


@lru_cache(maxsize=32)
def _csc_pattern(m: int):
    """Scatter map from (M, 8, 8) element blocks to CSC storage."""
    dofs = DofMap(m).element_dofs()
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = 4 * m
    key = cols.astype(np.int64) * n + rows
    uniq, inverse = np.unique(key, return_inverse=True)
    indices = (uniq % n).astype(np.int32)
    counts = np.bincount(uniq // n, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    return inverse, indices, indptr, uniq.size


def _scatter(blocks: np.ndarray, m: int) -> sp.csc_matrix:
    inverse, indices, indptr, nnz = _csc_pattern(m)
    data = np.bincount(inverse, weights=blocks.ravel(), minlength=nnz)
    return sp.csc_matrix((data, indices, indptr), shape=(4 * m, 4 * m))


def _check(prev: Curve, guess: StepUnknowns, tau: float) -> None:
    if tau <= 0:
        raise ValueError("tau must be positive")
    if guess.M != prev.M:
        raise ValueError("guess and previous curve differ in node count")


def evaluate(prev, guess: StepUnknowns, tau: float, variant: str = "time_weighted",
             want_jac: bool = True):
    """Residual vector and (optionally) the (M, 8, 8) element blocks at ``guess``."""
    prev = as_curve(prev)
    _check(prev, guess, tau)
    if variant not in VARIANTS:
        raise ValueError(f"unknown Jacobian variant {variant!r}")
    res, blocks = _backend.element_system(
        np.ascontiguousarray(prev.nodes), guess.positions, guess.p, guess.q,
        float(tau), variant == "time_weighted", want_jac)
    return res, blocks


def assemble_residual(prev, guess: StepUnknowns, tau: float) -> np.ndarray:
    """Residual of the nonlinear step equations, in :class:`DofMap` layout.

    Zero exactly when ``guess`` solves the step. The normal-velocity rows sum
    to ``A(prev) - A(guess)``.
    """
    return evaluate(prev, guess, tau, want_jac=False)[0]


def assemble_jacobian(prev, guess: StepUnknowns, tau: float,
                      variant: str = "time_weighted") -> SparseSystem:
    """Newton system for the increment ``(X_delta, p_delta, q_delta)``.

    ``variant="time_weighted"`` is the exact derivative of the residual.
    ``"as_written"`` drops the ``(t - t_{n-1})/tau`` weight from the two
    ``|e|^-3`` coefficients; it converges more slowly.
    """
    res, blocks = evaluate(prev, guess, tau, variant)
    return SparseSystem(rhs=-res, blocks=blocks)


def element_integral_deg2(left: float, right: float, *coeffs: float, width: float = 1.0) -> float:
    """Exact integral over one element of a product of linear functions.

    Each linear function is given by its values at the element ends as a pair
    in ``coeffs``: ``element_integral_deg2(l0, r0, l1, r1, ...)``. Products up
    to cubic degree are integrated exactly by two-point Gauss (degree <= 3).
    """
    pairs = [(left, right)] + [tuple(coeffs[i:i + 2]) for i in range(0, len(coeffs), 2)]
    if any(len(pr) != 2 for pr in pairs) or len(pairs) > 3:
        raise ValueError("expected at most three (left, right) pairs")
    g = 0.5 / np.sqrt(3.0)
    total = 0.0
    for eta in (0.5 - g, 0.5 + g):
        val = 1.0
        for lo, hi in pairs:
            val *= lo + (hi - lo) * eta
        total += 0.5 * val
    return width * total
