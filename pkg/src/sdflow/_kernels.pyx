# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled element kernel; mirrors sdflow._pykernel.element_system exactly."""

from libc.math cimport sqrt, fabs, log1p, asinh, hypot

# slots of the per-edge integral vector
cdef enum:
    RHO, UX, UY, GX, GY, A00, A01, A11, AW, GWX, GWY, AW00, AW01, AW11


cdef inline double _min_path_norm(double ax, double ay, double bx, double by) noexcept nogil:
    cdef double bb = bx * bx + by * by
    cdef double s = 0.0
    if bb > 0:
        s = -(ax * bx + ay * by) / bb
        if s < 0:
            s = 0.0
        elif s > 1:
            s = 1.0
    return hypot(ax + s * bx, ay + s * by)


cdef void _gauss(double ax, double ay, double bx, double by, const double[::1] gs, const double[::1] gw,
                 bint full, double* out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s, ex, ey, r, wr, wr3, ws3
    for j in range(14):
        out[j] = 0.0
    for i in range(gs.shape[0]):
        s = gs[i]
        ex = ax + s * bx
        ey = ay + s * by
        r = hypot(ex, ey)
        wr = gw[i] / r
        out[RHO] += wr
        out[UX] += wr * ex
        out[UY] += wr * ey
        if full:
            wr3 = wr / (r * r)
            ws3 = s * wr3
            out[AW] += s * wr
            out[GX] += wr3 * ex
            out[GY] += wr3 * ey
            out[A00] += wr3 * ex * ex
            out[A01] += wr3 * ex * ey
            out[A11] += wr3 * ey * ey
            out[GWX] += ws3 * ex
            out[GWY] += ws3 * ey
            out[AW00] += ws3 * ex * ex
            out[AW01] += ws3 * ex * ey
            out[AW11] += ws3 * ey * ey


cdef void _closed(double ax, double ay, double bx, double by, bint full, double* out) noexcept nogil:
    cdef double beta = hypot(bx, by)
    cdef double hx = bx / beta, hy = by / beta      # bhat
    cdef double px = -hy, py = hx                   # bhat rotated
    cdef double u0 = ax * hx + ay * hy
    cdef double d = ax * px + ay * py
    cdef double u1 = u0 + beta
    cdef double r0 = hypot(ax, ay)
    cdef double r1 = hypot(ax + bx, ay + by)
    cdef double rsum = r0 + r1
    cdef double d2 = d * d
    cdef double i1, k1, k3, j3, l3, m3, ib, ib2, cb, cx, cp, t
    cdef bint cross = 0
    if u0 >= 0:
        i1 = log1p(beta * (1 + (u0 + u1) / rsum) / (u0 + r0))
    elif u1 <= 0:
        i1 = log1p(beta * (1 - (u0 + u1) / rsum) / (r1 - u1))
    else:
        cross = 1
        i1 = asinh(u1 / fabs(d)) - asinh(u0 / fabs(d))
    k1 = beta * (u0 + u1) / rsum
    k3 = k1 / (r0 * r1)
    if cross:
        j3 = (u1 / r1 - u0 / r0) / d2
    else:
        j3 = beta * (u0 + u1) / ((u1 * r0 + u0 * r1) * r0 * r1)
    l3 = i1 - d2 * j3
    m3 = k1 - d2 * k3
    ib = 1.0 / beta
    ib2 = ib * ib
    out[RHO] = i1 * ib
    out[UX] = (hx * k1 + px * d * i1) * ib
    out[UY] = (hy * k1 + py * d * i1) * ib
    if not full:
        return
    out[GX] = (hx * k3 + px * d * j3) * ib
    out[GY] = (hy * k3 + py * d * j3) * ib
    # A = bb*l3 + (bp + pb)*d*k3 + pp*d2*j3
    cb, cx, cp = l3 * ib, d * k3 * ib, d2 * j3 * ib
    out[A00] = hx * hx * cb + 2 * hx * px * cx + px * px * cp
    out[A01] = hx * hy * cb + (hx * py + px * hy) * cx + px * py * cp
    out[A11] = hy * hy * cb + 2 * hy * py * cx + py * py * cp
    out[AW] = (k1 - u0 * i1) * ib2
    t = (k3 - u0 * j3) * d
    out[GWX] = (hx * (l3 - u0 * k3) + px * t) * ib2
    out[GWY] = (hy * (l3 - u0 * k3) + py * t) * ib2
    cb, cx, cp = (m3 - u0 * l3) * ib2, d * (l3 - u0 * k3) * ib2, d2 * (k3 - u0 * j3) * ib2
    out[AW00] = hx * hx * cb + 2 * hx * px * cx + px * px * cp
    out[AW01] = hx * hy * cb + (hx * py + px * hy) * cx + px * py * cp
    out[AW11] = hy * hy * cb + 2 * hy * py * cx + py * py * cp


def element_system(const double[:, ::1] x_old, const double[:, ::1] x_new, const double[::1] p, const double[::1] q,
                   double tau, bint weighted, bint want_jac, double eps_rel,
                   const double[::1] gs, const double[::1] gw, double[::1] res, double[:, :, ::1] L):
    """Fill ``res`` (4M) and ``L`` (M, 8, 8); return -1, or the index of a collapsing edge."""
    cdef Py_ssize_t m = x_old.shape[0]
    cdef Py_ssize_t k, k1, i, j
    cdef double out[14]
    cdef double ax, ay, cx, cy, bx, by, mn, beta, eps, mean = 0.0
    cdef double nx, ny, tx, ty, c, vx0, vy0, vx1, vy1
    cdef double mv0x, mv0y, mv1x, mv1y, dp, mp0, mp1, mq0, mq1
    cdef double gamx, gamy, j00, j01, j10, j11, h = 0.5 * tau
    cdef double g0x, g0y, g1x, g1y, ux, uy
    cdef Py_ssize_t bad = -1

    with nogil:
        for k in range(m):
            k1 = k + 1 if k + 1 < m else 0
            mean += hypot(x_old[k1, 0] - x_old[k, 0], x_old[k1, 1] - x_old[k, 1])
        eps = eps_rel * mean / m
        for i in range(4 * m):
            res[i] = 0.0

        for k in range(m):
            k1 = k + 1 if k + 1 < m else 0
            ax = x_old[k1, 0] - x_old[k, 0]
            ay = x_old[k1, 1] - x_old[k, 1]
            cx = x_new[k1, 0] - x_new[k, 0]
            cy = x_new[k1, 1] - x_new[k, 1]
            bx = cx - ax
            by = cy - ay
            mn = _min_path_norm(ax, ay, bx, by)
            if not (mn > eps):
                bad = k
                break
            beta = hypot(bx, by)
            if beta <= mn:
                _gauss(ax, ay, bx, by, gs, gw, want_jac, out)
            else:
                _closed(ax, ay, bx, by, want_jac, out)
            for i in range(14):
                if i > UY and not want_jac:
                    break
                out[i] *= tau

            tx = h * (ax + cx)
            ty = h * (ay + cy)
            nx = -ty
            ny = tx
            c = out[RHO]
            ux = out[UX]
            uy = out[UY]
            vx0 = (x_new[k, 0] - x_old[k, 0]) / tau
            vy0 = (x_new[k, 1] - x_old[k, 1]) / tau
            vx1 = (x_new[k1, 0] - x_old[k1, 0]) / tau
            vy1 = (x_new[k1, 1] - x_old[k1, 1]) / tau
            mv0x = vx0 / 3 + vx1 / 6
            mv0y = vy0 / 3 + vy1 / 6
            mv1x = vx0 / 6 + vx1 / 3
            mv1y = vy0 / 6 + vy1 / 3
            dp = p[k1] - p[k]
            mp0 = p[k] / 3 + p[k1] / 6
            mp1 = p[k] / 6 + p[k1] / 3
            mq0 = q[k] / 3 + q[k1] / 6
            mq1 = q[k] / 6 + q[k1] / 3

            res[2 * m + k] += mv0x * nx + mv0y * ny + c * dp
            res[2 * m + k1] += mv1x * nx + mv1y * ny - c * dp
            res[3 * m + k] += mv0x * tx + mv0y * ty
            res[3 * m + k1] += mv1x * tx + mv1y * ty
            res[2 * k] += mp0 * nx + mq0 * tx - ux
            res[2 * k + 1] += mp0 * ny + mq0 * ty - uy
            res[2 * k1] += mp1 * nx + mq1 * tx + ux
            res[2 * k1 + 1] += mp1 * ny + mq1 * ty + uy

            if not want_jac:
                continue

            for i in range(8):
                for j in range(8):
                    L[k, i, j] = 0.0
            if weighted:
                gamx = out[GWX]
                gamy = out[GWY]
                j00 = out[AW] - out[AW00]
                j01 = -out[AW01]
                j11 = out[AW] - out[AW11]
            else:
                gamx = out[GX]
                gamy = out[GY]
                j00 = out[AW] - out[A00]
                j01 = -out[A01]
                j11 = out[AW] - out[A11]
            j10 = j01

            # normal-velocity rows; (dt/2) R^T mv = (dt/2) (mv_y, -mv_x)
            g0x = h * mv0y - dp * gamx
            g0y = -h * mv0x - dp * gamy
            g1x = h * mv1y + dp * gamx
            g1y = -h * mv1x + dp * gamy
            L[k, 4, 0] = nx / (3 * tau) - g0x
            L[k, 4, 1] = ny / (3 * tau) - g0y
            L[k, 4, 2] = nx / (6 * tau) + g0x
            L[k, 4, 3] = ny / (6 * tau) + g0y
            L[k, 5, 0] = nx / (6 * tau) - g1x
            L[k, 5, 1] = ny / (6 * tau) - g1y
            L[k, 5, 2] = nx / (3 * tau) + g1x
            L[k, 5, 3] = ny / (3 * tau) + g1y
            L[k, 4, 4] = -c
            L[k, 4, 5] = c
            L[k, 5, 4] = c
            L[k, 5, 5] = -c

            # tangential-velocity rows
            g0x = h * mv0x
            g0y = h * mv0y
            g1x = h * mv1x
            g1y = h * mv1y
            L[k, 6, 0] = tx / (3 * tau) - g0x
            L[k, 6, 1] = ty / (3 * tau) - g0y
            L[k, 6, 2] = tx / (6 * tau) + g0x
            L[k, 6, 3] = ty / (6 * tau) + g0y
            L[k, 7, 0] = tx / (6 * tau) - g1x
            L[k, 7, 1] = ty / (6 * tau) - g1y
            L[k, 7, 2] = tx / (3 * tau) + g1x
            L[k, 7, 3] = ty / (3 * tau) + g1y

            # curvature rows; jd = h*(mp*R + mq*I) -/+ ju with R = [[0,-1],[1,0]]
            L[k, 0, 2] = h * mq0 - j00
            L[k, 0, 3] = -h * mp0 - j01
            L[k, 1, 2] = h * mp0 - j10
            L[k, 1, 3] = h * mq0 - j11
            L[k, 0, 0] = -L[k, 0, 2]
            L[k, 0, 1] = -L[k, 0, 3]
            L[k, 1, 0] = -L[k, 1, 2]
            L[k, 1, 1] = -L[k, 1, 3]
            L[k, 2, 2] = h * mq1 + j00
            L[k, 2, 3] = -h * mp1 + j01
            L[k, 3, 2] = h * mp1 + j10
            L[k, 3, 3] = h * mq1 + j11
            L[k, 2, 0] = -L[k, 2, 2]
            L[k, 2, 1] = -L[k, 2, 3]
            L[k, 3, 0] = -L[k, 3, 2]
            L[k, 3, 1] = -L[k, 3, 3]
            L[k, 0, 4] = nx / 3
            L[k, 1, 4] = ny / 3
            L[k, 0, 5] = nx / 6
            L[k, 1, 5] = ny / 6
            L[k, 0, 6] = tx / 3
            L[k, 1, 6] = ty / 3
            L[k, 0, 7] = tx / 6
            L[k, 1, 7] = ty / 6
            L[k, 2, 4] = nx / 6
            L[k, 3, 4] = ny / 6
            L[k, 2, 5] = nx / 3
            L[k, 3, 5] = ny / 3
            L[k, 2, 6] = tx / 6
            L[k, 3, 6] = ty / 6
            L[k, 2, 7] = tx / 3
            L[k, 3, 7] = ty / 3
    return bad
