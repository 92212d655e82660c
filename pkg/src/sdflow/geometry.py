"""Closed polygonal curves and their exact geometric functionals.

Nodes are stored as an ``(M, 2)`` float array in counter-clockwise order with
periodic indexing: element ``k`` joins node ``k`` to node ``k + 1 (mod M)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

#: relative degeneracy threshold, multiplied by the mean edge length
EPS_GEOM = 1e-12


class InvalidCurveError(ValueError):
    """Raised for curves with too few nodes, non-finite or repeated nodes."""


class DegenerateEdgeError(InvalidCurveError):
    """Raised when an edge is shorter than the degeneracy threshold."""

    def __init__(self, index: int, length: float):
        super().__init__(f"edge {index} is degenerate (length {length:.3e})")
        self.index = index
        self.length = length


class InvalidParameterError(ValueError):
    pass


def rotate(v: np.ndarray) -> np.ndarray:
    """Rotate vectors (last axis of size 2) counter-clockwise by pi/2."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _signed_area(nodes: np.ndarray) -> float:
    x, y = nodes[:, 0], nodes[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _edge_lengths(nodes: np.ndarray) -> np.ndarray:
    return np.hypot(*(np.roll(nodes, -1, axis=0) - nodes).T)


def _check_nodes(nodes: np.ndarray) -> None:
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise InvalidCurveError(f"nodes must have shape (M, 2), got {nodes.shape}")
    if nodes.shape[0] < 3:
        raise InvalidCurveError(f"a closed curve needs at least 3 nodes, got {nodes.shape[0]}")
    if not np.all(np.isfinite(nodes)):
        raise InvalidCurveError("nodes contain NaN or Inf")
    lengths = _edge_lengths(nodes)
    threshold = EPS_GEOM * lengths.mean()
    bad = np.flatnonzero(lengths <= threshold)
    if bad.size:
        raise DegenerateEdgeError(int(bad[0]), float(lengths[bad[0]]))


@dataclass(frozen=True, eq=False)
class Curve:
    """A closed piecewise-linear curve (one time level of the flow).

    Parameters
    ----------
    nodes : array_like, shape (M, 2)
        Node positions. Clockwise input is reversed at construction unless
        ``orient=False``.
    partition : array_like, shape (M,), optional
        Reference parameters ``xi_j`` of the nodes, starting at 0 and strictly
        increasing in ``[0, 1)``. Defaults to ``j / M``. The assembled equations depend only
        on nodal positions, so the partition matters only when comparing
        curves at matching parameter values.
    """

    nodes: np.ndarray
    partition: np.ndarray = field(default=None)

    def __init__(self, nodes, partition=None, *, orient: bool = True, check: bool = True):
        nodes = np.array(nodes, dtype=float)
        if check:
            _check_nodes(nodes)
        m = nodes.shape[0]
        if partition is None:
            partition = np.arange(m) / m
        else:
            partition = np.array(partition, dtype=float)
            if partition.shape != (m,) or np.any(np.diff(partition) <= 0) \
                    or partition[0] != 0 or partition[-1] >= 1:
                raise InvalidCurveError("partition must start at 0 and increase strictly in [0, 1)")
        if orient and _signed_area(nodes) < 0:
            # keep node 0 in place, reverse the traversal
            order = np.r_[0, np.arange(m - 1, 0, -1)]
            nodes = nodes[order]
            partition = (-partition[order]) % 1.0
        nodes.setflags(write=False)
        partition.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "partition", partition)

    @property
    def M(self) -> int:
        return self.nodes.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """Edge vectors ``x_{k+1} - x_k``, shape (M, 2)."""
        return np.roll(self.nodes, -1, axis=0) - self.nodes

    @property
    def widths(self) -> np.ndarray:
        """Reference element widths ``xi_{k+1} - xi_k`` (periodic)."""
        xi = self.partition
        return np.diff(np.append(xi, xi[0] + 1.0))

    def with_nodes(self, nodes, *, check: bool = False) -> "Curve":
        """Same partition, new positions; orientation is left untouched."""
        return Curve(nodes, self.partition, orient=False, check=check)

    def translated(self, shift) -> "Curve":
        return self.with_nodes(self.nodes + np.asarray(shift, dtype=float))

    def __len__(self) -> int:
        return self.M

    def __repr__(self) -> str:
        return f"Curve(M={self.M}, area={polygon_area(self):.6g}, perimeter={perimeter(self):.6g})"


def as_curve(curve) -> Curve:
    return curve if isinstance(curve, Curve) else Curve(curve)


@dataclass(frozen=True)
class EdgeFrame:
    tangent: np.ndarray
    normal: np.ndarray
    length: float
    edge_vector: np.ndarray


def polygon_area(curve) -> float:
    """Signed shoelace area, positive for counter-clockwise traversal."""
    if isinstance(curve, Curve):
        return _signed_area(curve.nodes)
    nodes = np.asarray(curve, dtype=float)
    _check_nodes(nodes)
    return _signed_area(nodes)


def perimeter(curve) -> float:
    nodes = curve.nodes if isinstance(curve, Curve) else np.asarray(curve, dtype=float)
    if not isinstance(curve, Curve):
        _check_nodes(nodes)
    return float(np.sum(_edge_lengths(nodes)))


def mesh_ratio(curve) -> float:
    """Longest over shortest edge length (1 for an equispaced polygon)."""
    nodes = curve.nodes if isinstance(curve, Curve) else np.asarray(curve, dtype=float)
    _check_nodes(nodes)
    lengths = _edge_lengths(nodes)
    return float(lengths.max() / lengths.min())


def isoperimetric_ratio(curve) -> float:
    return perimeter(curve) ** 2 / (4.0 * np.pi * polygon_area(curve))


def edge_frames(curve) -> list[EdgeFrame]:
    """Unit tangent and inward normal per element.

    Element ``k`` runs from node ``k`` to node ``k + 1``; the normal is the
    tangent rotated by +pi/2, which points inward on a counter-clockwise curve.
    """
    curve = as_curve(curve)
    edges = curve.edges
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    threshold = EPS_GEOM * lengths.mean()
    frames = []
    for k, (e, ell) in enumerate(zip(edges, lengths)):
        if ell <= threshold:
            raise DegenerateEdgeError(k, float(ell))
        t = e / ell
        frames.append(EdgeFrame(tangent=t, normal=rotate(t), length=float(ell), edge_vector=e.copy()))
    return frames


def tangent_jumps(curve) -> np.ndarray:
    """Jump of the unit tangent at every node, ``t_k - t_{k-1}``."""
    curve = as_curve(curve)
    edges = curve.edges
    t = edges / np.hypot(edges[:, 0], edges[:, 1])[:, None]
    return t - np.roll(t, 1, axis=0)


def _ellipse_arclength(a: float, b: float, theta: np.ndarray) -> np.ndarray:
    """Arclength of ``(a cos t, b sin t)`` from ``t = 0`` to ``theta``."""
    if a >= b:
        m = 1.0 - (b / a) ** 2
        return a * (special.ellipe(m) - special.ellipeinc(np.pi / 2 - theta, m))
    return b * special.ellipeinc(theta, 1.0 - (a / b) ** 2)


def _ellipse_arclength_angles(a: float, b: float, M: int) -> np.ndarray:
    """Parameter angles splitting the ellipse into M arcs of equal length."""
    total = _ellipse_arclength(a, b, np.array([2.0 * np.pi]))[0]
    target = total * np.arange(M) / M
    theta = 2.0 * np.pi * np.arange(M) / M
    for _ in range(60):
        speed = np.hypot(a * np.sin(theta), b * np.cos(theta))
        step = (_ellipse_arclength(a, b, theta) - target) / speed
        theta = theta - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return theta


def make_ellipse(a: float, b: float, M: int, spacing: str = "angle") -> Curve:
    """Ellipse ``(a cos t, b sin t)`` with M nodes.

    ``spacing="angle"`` samples uniformly spaced parameter angles;
    ``"arclength"`` places the nodes at equal arclength along the ellipse, so
    the initial mesh is nearly equidistributed.
    """
    if a <= 0 or b <= 0:
        raise InvalidParameterError("semi-axes must be positive")
    if M < 3:
        raise InvalidParameterError("M must be at least 3")
    if spacing == "angle":
        theta = 2.0 * np.pi * np.arange(M) / M
    elif spacing == "arclength":
        theta = _ellipse_arclength_angles(a, b, M)
    else:
        raise InvalidParameterError(f"unknown spacing {spacing!r}")
    return Curve(np.column_stack([a * np.cos(theta), b * np.sin(theta)]))


def make_flower(amplitude: float, frequency: int, M: int) -> Curve:
    """Polar curve ``r = 1 + amplitude * sin(frequency * t)``."""
    if M < 3:
        raise InvalidParameterError("M must be at least 3")
    theta = 2.0 * np.pi * np.arange(M) / M
    r = 1.0 + amplitude * np.sin(frequency * theta)
    if np.any(r <= 0):
        raise InvalidParameterError(
            f"radius becomes non-positive for amplitude={amplitude}, frequency={frequency}")
    return Curve(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))


def make_polygon(M: int, radius: float = 1.0, center=(0.0, 0.0), phase: float = 0.0) -> Curve:
    theta = phase + 2.0 * np.pi * np.arange(M) / M
    c = np.asarray(center, dtype=float)
    return Curve(c + radius * np.column_stack([np.cos(theta), np.sin(theta)]))


def write_curve_csv(curve, path, precision: int = 17) -> None:
    """Write nodes as ``x,y`` rows; closure is implied."""
    curve = as_curve(curve)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in curve.nodes:
            w.writerow([f"{x:.{precision}g}", f"{y:.{precision}g}"])


def read_curve_csv(path) -> Curve:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["x", "y"]:
            raise InvalidCurveError(f"{path}: expected header 'x,y'")
        rows = [(float(r["x"]), float(r["y"])) for r in reader]
    nodes = np.array(rows, dtype=float).reshape(-1, 2)
    if len(nodes) > 1 and np.array_equal(nodes[0], nodes[-1]):
        # tolerate an explicitly closed polyline
        nodes = nodes[:-1]
    return Curve(nodes)


def check_simple(curve) -> bool:
    """Brute-force check for self-intersections between non-adjacent edges.

    Only used for logging; the solver proceeds regardless.
    """
    nodes = as_curve(curve).nodes
    m = len(nodes)
    p0 = nodes
    p1 = np.roll(nodes, -1, axis=0)
    for i in range(m):
        a0, a1 = p0[i], p1[i]
        d = a1 - a0
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            b0, b1 = p0[j], p1[j]
            e = b1 - b0
            den = d[0] * e[1] - d[1] * e[0]
            if den == 0:
                continue
            w = b0 - a0
            s = (w[0] * e[1] - w[1] * e[0]) / den
            u = (w[0] * d[1] - w[1] * d[0]) / den
            if 0 < s < 1 and 0 < u < 1:
                logger.info("self-intersection between edges %d and %d", i, j)
                return False
    return True
