"""Time integrals over one step of functions of a linearly moving edge vector.

Within a time step the edge vector of each element moves along the segment
``e(s) = a + s*b`` with ``a = e_old``, ``b = e_new - e_old`` and
``s = (t - t_{n-1}) / tau``. Every coefficient of the discrete equations (and
of their Newton linearisation) is ``tau * int_0^1 g(e(s)) ds`` for one of

========  =====================================
key       integrand
========  =====================================
rho       1/|e|
unit      e/|e|
gamma     e/|e|^3
A         e e^T/|e|^3
a         s/|e|
gamma_w   s e/|e|^3
A_w       s e e^T/|e|^3
========  =====================================

The closed forms write ``e = u*bhat + d*bhat_perp`` with ``u`` running over
``[u0, u0 + |b|]`` and reduce everything to the five antiderivatives of
``1/r``, ``u/r``, ``u/r^3``, ``1/r^3`` and ``u^2/r^3`` with ``r^2 = u^2 + d^2``,
each rearranged so that no difference of nearly equal terms is formed.

When the edge barely moves (``|b|`` no larger than the distance of the path to
the origin) the polynomial-moment closed forms cancel catastrophically, and a
32-point Gauss-Legendre rule is used instead; in that regime the integrand is
analytic on a region wide enough that the rule is exact to rounding.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .geometry import EPS_GEOM, as_curve, rotate

GAUSS_POINTS = 32
#: use quadrature when |b| <= GAUSS_SWITCH * min_s |a + s b|
GAUSS_SWITCH = 1.0

KEYS = ("rho", "unit", "gamma", "A", "a", "gamma_w", "A_w")


class EdgeCollapseError(ArithmeticError):
    """An edge vector passes through (or too close to) zero during the step."""

    def __init__(self, index: int, min_norm: float):
        super().__init__(
            f"edge {index} collapses during the time step (min |e| = {min_norm:.3e}); "
            "reduce the time step")
        self.index = index
        self.min_norm = min_norm


@lru_cache(maxsize=None)
def gauss_legendre_unit(n: int = GAUSS_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    s.setflags(write=False)
    ws.setflags(write=False)
    return s, ws


def min_path_norm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``min_{s in [0,1]} |a + s b|`` for stacked 2-vectors."""
    bb = np.einsum("...i,...i->...", b, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(bb > 0, -np.einsum("...i,...i->...", a, b) / bb, 0.0)
    s = np.clip(s, 0.0, 1.0)
    e = a + s[..., None] * b
    return np.hypot(e[..., 0], e[..., 1])


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def _closed_forms(a: np.ndarray, b: np.ndarray) -> dict:
    """Unit-interval integrals in closed form; requires |b| > 0."""
    beta = np.hypot(b[:, 0], b[:, 1])
    bh = b / beta[:, None]
    bp = rotate(bh)
    u0 = np.einsum("ij,ij->i", a, bh)
    d = np.einsum("ij,ij->i", a, bp)
    u1 = u0 + beta
    r0 = np.hypot(a[:, 0], a[:, 1])
    c = a + b
    r1 = np.hypot(c[:, 0], c[:, 1])
    rsum = r0 + r1
    d2 = d * d

    pos = u0 >= 0
    neg = u1 <= 0
    cross = ~(pos | neg)
    with np.errstate(all="ignore"):
        # int du / r
        i1 = np.where(
            pos, np.log1p(beta * (1 + (u0 + u1) / rsum) / (u0 + r0)),
            np.where(neg, np.log1p(beta * (1 - (u0 + u1) / rsum) / (r1 - u1)),
                     np.arcsinh(u1 / np.abs(d)) - np.arcsinh(u0 / np.abs(d))))
        # int u/r du = r1 - r0,  int u/r^3 du = 1/r0 - 1/r1
        k1 = beta * (u0 + u1) / rsum
        k3 = k1 / (r0 * r1)
        # int du / r^3
        j3 = np.where(cross, (u1 / r1 - u0 / r0) / d2,
                      beta * (u0 + u1) / ((u1 * r0 + u0 * r1) * r0 * r1))
        # int u^2/r^3 du
        l3 = i1 - d2 * j3
        # int u^3/r^3 du
        m3 = k1 - d2 * k3

    ib = 1.0 / beta
    ib2 = ib * ib
    bb, pp = _outer(bh, bh), _outer(bp, bp)
    bpsym = _outer(bh, bp) + _outer(bp, bh)
    dcol = d[:, None]
    out = {
        "rho": i1 * ib,
        "unit": (bh * k1[:, None] + bp * (d * i1)[:, None]) * ib[:, None],
        "gamma": (bh * k3[:, None] + bp * (d * j3)[:, None]) * ib[:, None],
        "A": (bb * l3[:, None, None] + bpsym * (d * k3)[:, None, None]
              + pp * (d2 * j3)[:, None, None]) * ib[:, None, None],
        "a": (k1 - u0 * i1) * ib2,
        "gamma_w": (bh * (l3 - u0 * k3)[:, None] + bp * dcol * (k3 - u0 * j3)[:, None]) * ib2[:, None],
        "A_w": (bb * (m3 - u0 * l3)[:, None, None] + bpsym * (d * (l3 - u0 * k3))[:, None, None]
                + pp * (d2 * (k3 - u0 * j3))[:, None, None]) * ib2[:, None, None],
    }
    return out


def _gauss(a: np.ndarray, b: np.ndarray) -> dict:
    s, w = gauss_legendre_unit()
    e = a[:, None, :] + s[None, :, None] * b[:, None, :]
    r = np.hypot(e[..., 0], e[..., 1])
    wr = w / r
    wr3 = wr / (r * r)
    ws, wsr3 = s * wr, s * wr3
    ee = _outer(e, e)
    return {
        "rho": wr.sum(axis=1),
        "unit": np.einsum("nq,nqi->ni", wr, e),
        "gamma": np.einsum("nq,nqi->ni", wr3, e),
        "A": np.einsum("nq,nqij->nij", wr3, ee),
        "a": ws.sum(axis=1),
        "gamma_w": np.einsum("nq,nqi->ni", wsr3, e),
        "A_w": np.einsum("nq,nqij->nij", wsr3, ee),
    }


def edge_integrals(e_old, e_new, tau: float, *, method: str = "auto",
                   eps: float | None = None) -> dict:
    """Every per-edge time integral for stacked edge vectors.

    Parameters
    ----------
    e_old, e_new : array_like, shape (n, 2) or (2,)
        Edge vectors at the start and end of the step.
    tau : float
        Step size; all results carry this factor.
    method : {"auto", "closed", "gauss"}
        ``"auto"`` picks the closed form or the quadrature per edge as
        described in the module docstring.
    eps : float, optional
        Collapse threshold on ``min |e(s)|``. Defaults to ``EPS_GEOM`` times
        the mean edge length at the start of the step.

    Returns
    -------
    dict
        Keyed by :data:`KEYS`, plus ``nu_bar`` and ``tau_bar``.

    Raises
    ------
    EdgeCollapseError
        If some edge gets within ``eps`` of the origin during the step.
    """
    a = np.atleast_2d(np.asarray(e_old, dtype=float))
    c = np.atleast_2d(np.asarray(e_new, dtype=float))
    scalar = np.ndim(e_old) == 1
    b = c - a
    n = a.shape[0]
    if eps is None:
        eps = EPS_GEOM * float(np.mean(np.hypot(a[:, 0], a[:, 1])))
    mn = min_path_norm(a, b)
    bad = np.flatnonzero(~(mn > eps))
    if bad.size:
        raise EdgeCollapseError(int(bad[0]), float(mn[bad[0]]))

    beta = np.hypot(b[:, 0], b[:, 1])
    if method == "auto":
        use_gauss = beta <= GAUSS_SWITCH * mn
    elif method == "gauss":
        use_gauss = np.ones(n, dtype=bool)
    elif method == "closed":
        # a static edge has no closed form in this parametrisation
        use_gauss = beta == 0
    else:
        raise ValueError(f"unknown method {method!r}")

    out = {
        "rho": np.empty(n), "unit": np.empty((n, 2)), "gamma": np.empty((n, 2)),
        "A": np.empty((n, 2, 2)), "a": np.empty(n), "gamma_w": np.empty((n, 2)),
        "A_w": np.empty((n, 2, 2)),
    }
    for mask, fn in ((use_gauss, _gauss), (~use_gauss, _closed_forms)):
        if mask.any():
            part = fn(a[mask], b[mask])
            for key in KEYS:
                out[key][mask] = part[key]
    for key in KEYS:
        out[key] = tau * out[key]
    mid = 0.5 * tau * (a + c)
    out["tau_bar"] = mid
    out["nu_bar"] = rotate(mid)
    if scalar:
        out = {k: v[0] for k, v in out.items()}
    return out


def poly_time_averages(e_old, e_new, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Time integrals of the rotated and plain edge vector: ``(nu_bar, tau_bar)``.

    The integrand is linear in time, so the midpoint value is exact.
    """
    mid = 0.5 * tau * (np.asarray(e_old, dtype=float) + np.asarray(e_new, dtype=float))
    return rotate(mid), mid


def inv_norm_time_integral(e_old, e_new, tau: float, power: int = 1, form: str | None = None,
                           *, weighted: bool = False, method: str = "auto"):
    """Integrals of inverse powers of ``|e|`` over the step.

    ``power=1`` gives the scalar ``tau int |e|^-1`` (``weighted`` multiplies the
    integrand by ``s``). ``power=3`` needs ``form="vector"`` for
    ``tau int e/|e|^3`` or ``form="matrix"`` for ``tau int e e^T/|e|^3``.
    """
    res = edge_integrals(e_old, e_new, tau, method=method)
    if power == 1:
        if form not in (None, "scalar"):
            raise ValueError("power=1 only has a scalar form")
        return float(res["a"] if weighted else res["rho"])
    if power == 3:
        key = {"vector": "gamma", "matrix": "A"}.get(form)
        if key is None:
            raise ValueError("power=3 needs form='vector' or form='matrix'")
        return res[key + "_w" if weighted else key]
    raise ValueError(f"power must be 1 or 3, got {power}")


def unit_tangent_time_integral(e_old, e_new, tau: float, *, method: str = "auto") -> np.ndarray:
    return edge_integrals(e_old, e_new, tau, method=method)["unit"]


def time_weighted_inv_norm(e_old, e_new, tau: float, *, method: str = "auto") -> float:
    """``tau int_0^1 s / |e(s)| ds``."""
    return float(edge_integrals(e_old, e_new, tau, method=method)["a"])


def node_jump_integrals(curve_old, curve_new, tau: float) -> np.ndarray:
    """Time integral of the unit-tangent jump at every node, shape (M, 2).

    Node ``j`` sits between element ``j - 1`` (ending there) and element ``j``
    (starting there), so the jump is ``U_j - U_{j-1}``.
    """
    old, new = as_curve(curve_old), as_curve(curve_new)
    if old.M != new.M:
        raise ValueError("curves must have the same number of nodes")
    unit = edge_integrals(old.edges, new.edges, tau)["unit"]
    return unit - np.roll(unit, 1, axis=0)
