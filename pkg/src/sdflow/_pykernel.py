"""Pure-numpy element kernel: residual and element Jacobians of one Newton iterate.

Local layout per element ``k`` (nodes ``k`` and ``k1 = k + 1 mod M``), used for
both local rows and local columns::

    0, 1  X_k (x, y)        -> curvature rows of node k
    2, 3  X_k1 (x, y)       -> curvature rows of node k1
    4, 5  p_k, p_k1         -> normal-velocity rows
    6, 7  q_k, q_k1         -> tangential-velocity rows

Edge vectors are physical (``x_k1 - x_k``); the reference element width
cancels from every term of the assembled equations.
"""

import numpy as np

from .geometry import rotate
from .timequad import edge_integrals

_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])
_EYE = np.eye(2)


def element_system(x_old, x_new, p, q, tau, weighted=False, want_jac=True):
    """Residual (4M,) and, optionally, element matrices (M, 8, 8)."""
    m = x_old.shape[0]
    d_old = np.roll(x_old, -1, axis=0) - x_old
    d_new = np.roll(x_new, -1, axis=0) - x_new
    ti = edge_integrals(d_old, d_new, tau)
    nbar, tbar, c, unit = ti["nu_bar"], ti["tau_bar"], ti["rho"], ti["unit"]

    v = (x_new - x_old) / tau
    v1 = np.roll(v, -1, axis=0)
    mv0 = v / 3 + v1 / 6
    mv1 = v / 6 + v1 / 3
    p1, q1 = np.roll(p, -1), np.roll(q, -1)
    dp = p1 - p
    mp0, mp1 = p / 3 + p1 / 6, p / 6 + p1 / 3
    mq0, mq1 = q / 3 + q1 / 6, q / 6 + q1 / 3

    ra0 = np.einsum("ki,ki->k", mv0, nbar) + c * dp
    ra1 = np.einsum("ki,ki->k", mv1, nbar) - c * dp
    rb0 = np.einsum("ki,ki->k", mv0, tbar)
    rb1 = np.einsum("ki,ki->k", mv1, tbar)
    rc0 = mp0[:, None] * nbar + mq0[:, None] * tbar - unit
    rc1 = mp1[:, None] * nbar + mq1[:, None] * tbar + unit

    res = np.zeros(4 * m)
    k1 = np.roll(np.arange(m), -1)
    curv = res[:2 * m].reshape(m, 2)
    np.add.at(curv, np.arange(m), rc0)
    np.add.at(curv, k1, rc1)
    np.add.at(res, 2 * m + np.arange(m), ra0)
    np.add.at(res, 2 * m + k1, ra1)
    np.add.at(res, 3 * m + np.arange(m), rb0)
    np.add.at(res, 3 * m + k1, rb1)
    if not want_jac:
        return res, None

    gam = ti["gamma_w"] if weighted else ti["gamma"]
    amat = ti["A_w"] if weighted else ti["A"]
    ju = ti["a"][:, None, None] * _EYE - amat
    h = 0.5 * tau
    L = np.zeros((m, 8, 8))

    # normal-velocity rows
    g0 = h * rotate(mv0) * -1.0 - dp[:, None] * gam   # (dt/2) R^T mv0 = -(dt/2) R mv0
    g1 = -h * rotate(mv1) + dp[:, None] * gam
    L[:, 4, 0:2] = nbar / (3 * tau) - g0
    L[:, 4, 2:4] = nbar / (6 * tau) + g0
    L[:, 5, 0:2] = nbar / (6 * tau) - g1
    L[:, 5, 2:4] = nbar / (3 * tau) + g1
    L[:, 4, 4], L[:, 4, 5] = -c, c
    L[:, 5, 4], L[:, 5, 5] = c, -c

    # tangential-velocity rows
    g0, g1 = h * mv0, h * mv1
    L[:, 6, 0:2] = tbar / (3 * tau) - g0
    L[:, 6, 2:4] = tbar / (6 * tau) + g0
    L[:, 7, 0:2] = tbar / (6 * tau) - g1
    L[:, 7, 2:4] = tbar / (3 * tau) + g1

    # curvature rows
    jd0 = h * (mp0[:, None, None] * _ROT + mq0[:, None, None] * _EYE) - ju
    jd1 = h * (mp1[:, None, None] * _ROT + mq1[:, None, None] * _EYE) + ju
    L[:, 0:2, 0:2], L[:, 0:2, 2:4] = -jd0, jd0
    L[:, 2:4, 0:2], L[:, 2:4, 2:4] = -jd1, jd1
    L[:, 0:2, 4], L[:, 0:2, 5] = nbar / 3, nbar / 6
    L[:, 0:2, 6], L[:, 0:2, 7] = tbar / 3, tbar / 6
    L[:, 2:4, 4], L[:, 2:4, 5] = nbar / 6, nbar / 3
    L[:, 2:4, 6], L[:, 2:4, 7] = tbar / 6, tbar / 3
    return res, L
