"""Compiled inner loops.

Everything here works on plain contiguous float64 arrays in
structure-of-arrays layout. The Python-facing wrappers live in the
modules that own the corresponding concepts.
"""

import numba
import numpy as np

# the TBB layer shipped with some distributions is too old for numba; OpenMP is
# deterministic for our per-target loops
numba.config.THREADING_LAYER = "omp"

_JIT = dict(cache=True, fastmath=True, error_model="numpy", boundscheck=False)


# ---------------------------------------------------------------------------
# pair sums
# ---------------------------------------------------------------------------


@numba.njit(parallel=True, **_JIT)
def pair_field_potential(tx, ty, tz, sx, sy, sz, q, eps2):
    """Softened field and potential sums at target points.

    Returns ``g = sum_j q_j (x - y_j) / s^3`` and ``pot = sum_j q_j / s``
    with ``s = sqrt(|x - y_j|^2 + eps2)``. Coincident source/target
    pairs contribute zero to ``g`` and ``q_j / sqrt(eps2)`` to ``pot``.
    """
    nt = tx.shape[0]
    ns = sx.shape[0]
    gx = np.empty(nt)
    gy = np.empty(nt)
    gz = np.empty(nt)
    pot = np.empty(nt)
    for i in numba.prange(nt):
        xi = tx[i]
        yi = ty[i]
        zi = tz[i]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        p = 0.0
        for j in range(ns):
            d0 = xi - sx[j]
            d1 = yi - sy[j]
            d2 = zi - sz[j]
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            rinv = 1.0 / np.sqrt(r2)
            qr = q[j] * rinv
            inv3 = qr * rinv * rinv
            a0 += inv3 * d0
            a1 += inv3 * d1
            a2 += inv3 * d2
            p += qr
        gx[i] = a0
        gy[i] = a1
        gz[i] = a2
        pot[i] = p
    return gx, gy, gz, pot


@numba.njit(parallel=True, **_JIT)
def pair_field(tx, ty, tz, sx, sy, sz, q, eps2):
    """Field-only variant of :func:`pair_field_potential`."""
    nt = tx.shape[0]
    ns = sx.shape[0]
    gx = np.empty(nt)
    gy = np.empty(nt)
    gz = np.empty(nt)
    for i in numba.prange(nt):
        xi = tx[i]
        yi = ty[i]
        zi = tz[i]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for j in range(ns):
            d0 = xi - sx[j]
            d1 = yi - sy[j]
            d2 = zi - sz[j]
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            rinv = 1.0 / np.sqrt(r2)
            inv3 = q[j] * rinv * rinv * rinv
            a0 += inv3 * d0
            a1 += inv3 * d1
            a2 += inv3 * d2
        gx[i] = a0
        gy[i] = a1
        gz[i] = a2
    return gx, gy, gz


@numba.njit(parallel=True, **_JIT)
def pair_potential(tx, ty, tz, sx, sy, sz, q, eps2):
    """Potential-only variant of :func:`pair_field_potential`."""
    nt = tx.shape[0]
    ns = sx.shape[0]
    pot = np.empty(nt)
    for i in numba.prange(nt):
        xi = tx[i]
        yi = ty[i]
        zi = tz[i]
        p = 0.0
        for j in range(ns):
            d0 = xi - sx[j]
            d1 = yi - sy[j]
            d2 = zi - sz[j]
            p += q[j] / np.sqrt(d0 * d0 + d1 * d1 + d2 * d2 + eps2)
        pot[i] = p
    return pot


@numba.njit(parallel=True, **_JIT)
def pair_tensor(x, y, z, w, eps2):
    """Pair sums ``S = sum_{i!=j} w_i w_j / s`` and
    ``T_ab = sum_{i!=j} w_i w_j d_a d_b / (|d|^2 s)``.

    Row sums are accumulated per particle and reduced in a fixed order
    so the result does not depend on the thread count.
    """
    n = x.shape[0]
    rows = np.zeros((n, 7))
    for i in numba.prange(n):
        xi = x[i]
        yi = y[i]
        zi = z[i]
        s = 0.0
        t00 = 0.0
        t11 = 0.0
        t22 = 0.0
        t01 = 0.0
        t02 = 0.0
        t12 = 0.0
        for j in range(n):
            d0 = xi - x[j]
            d1 = yi - y[j]
            d2 = zi - z[j]
            dd = d0 * d0 + d1 * d1 + d2 * d2
            if dd > 0.0:
                rinv = w[j] / np.sqrt(dd + eps2)
                a = rinv / dd
                s += rinv
                t00 += a * d0 * d0
                t11 += a * d1 * d1
                t22 += a * d2 * d2
                t01 += a * d0 * d1
                t02 += a * d0 * d2
                t12 += a * d1 * d2
        wi = w[i]
        rows[i, 0] = wi * s
        rows[i, 1] = wi * t00
        rows[i, 2] = wi * t11
        rows[i, 3] = wi * t22
        rows[i, 4] = wi * t01
        rows[i, 5] = wi * t02
        rows[i, 6] = wi * t12
    out = np.zeros(7)
    for i in range(n):
        for k in range(7):
            out[k] += rows[i, k]
    return out


@numba.njit(parallel=True, **_JIT)
def pair_moment_xx(x, y, z, w, eps2):
    """``sum_{i!=j} w_i w_j d_a d_b / s^3`` as a 6-vector (xx, yy, zz, xy, xz, yz)."""
    n = x.shape[0]
    rows = np.zeros((n, 6))
    for i in numba.prange(n):
        xi = x[i]
        yi = y[i]
        zi = z[i]
        t00 = 0.0
        t11 = 0.0
        t22 = 0.0
        t01 = 0.0
        t02 = 0.0
        t12 = 0.0
        for j in range(n):
            d0 = xi - x[j]
            d1 = yi - y[j]
            d2 = zi - z[j]
            rinv = 1.0 / np.sqrt(d0 * d0 + d1 * d1 + d2 * d2 + eps2)
            a = w[j] * rinv * rinv * rinv
            t00 += a * d0 * d0
            t11 += a * d1 * d1
            t22 += a * d2 * d2
            t01 += a * d0 * d1
            t02 += a * d0 * d2
            t12 += a * d1 * d2
        wi = w[i]
        rows[i, 0] = wi * t00
        rows[i, 1] = wi * t11
        rows[i, 2] = wi * t22
        rows[i, 3] = wi * t01
        rows[i, 4] = wi * t02
        rows[i, 5] = wi * t12
    out = np.zeros(6)
    for i in range(n):
        for k in range(6):
            out[k] += rows[i, k]
    return out


# ---------------------------------------------------------------------------
# B-spline deposition
# ---------------------------------------------------------------------------


@numba.njit(inline="always")
def _m4(t):
    a = abs(t)
    if a < 1.0:
        return (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    if a < 2.0:
        b = 2.0 - a
        return b * b * b / 6.0
    return 0.0


@numba.njit(cache=True, boundscheck=False)
def deposit(x, y, z, vals, origin, h, n, k):
    """Deposit per-particle values with a tensor cubic B-spline of scale ``k*h``.

    ``vals`` has shape (N, m). Returns an (m, n, n, n) density array whose
    node sum times ``h**3`` equals the column sums of ``vals``.
    Particles are processed in index order for reproducibility.
    """
    npart = x.shape[0]
    m = vals.shape[1]
    out = np.zeros((m, n, n, n))
    s = k * h
    norm = 1.0 / (s * s * s)
    width = 4 * k + 1
    wx = np.empty(width)
    wy = np.empty(width)
    wz = np.empty(width)
    for p in range(npart):
        gx = (x[p] - origin[0]) / h
        gy = (y[p] - origin[1]) / h
        gz = (z[p] - origin[2]) / h
        ix0 = int(np.floor(gx)) - 2 * k + 1
        iy0 = int(np.floor(gy)) - 2 * k + 1
        iz0 = int(np.floor(gz)) - 2 * k + 1
        for a in range(width):
            wx[a] = _m4((ix0 + a - gx) / k)
            wy[a] = _m4((iy0 + a - gy) / k)
            wz[a] = _m4((iz0 + a - gz) / k)
        for a in range(width):
            ia = ix0 + a
            if wx[a] == 0.0:
                continue
            for b in range(width):
                ib = iy0 + b
                wab = wx[a] * wy[b] * norm
                if wab == 0.0:
                    continue
                for cc in range(width):
                    ic = iz0 + cc
                    wabc = wab * wz[cc]
                    if wabc == 0.0:
                        continue
                    for q in range(m):
                        out[q, ia, ib, ic] += wabc * vals[p, q]
    return out


# ---------------------------------------------------------------------------
# retarded quadrature
# ---------------------------------------------------------------------------


@numba.njit(inline="always")
def _slope(stack, k, node, comp, inv12dt):
    return (stack[k - 2, node, comp] - 8.0 * stack[k - 1, node, comp]
            + 8.0 * stack[k + 1, node, comp] - stack[k + 2, node, comp]) * inv12dt


@numba.njit(inline="always")
def _locate(t, t0, dt, nframes):
    s = (t - t0) / dt
    k = int(np.floor(s))
    if k < 2 or k + 3 > nframes - 1:
        return -1, 0.0
    return k, s - k


@numba.njit(inline="always")
def _hermite(stack, k, tau, node, comp, dt, inv12dt):
    """Value and time derivative of the cubic Hermite interpolant."""
    y0 = stack[k, node, comp]
    y1 = stack[k + 1, node, comp]
    m0 = _slope(stack, k, node, comp, inv12dt) * dt
    m1 = _slope(stack, k + 1, node, comp, inv12dt) * dt
    t2 = tau * tau
    t3 = t2 * tau
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + tau
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    v = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
    d00 = 6.0 * t2 - 6.0 * tau
    d10 = 3.0 * t2 - 4.0 * tau + 1.0
    d01 = -6.0 * t2 + 6.0 * tau
    d11 = 3.0 * t2 - 2.0 * tau
    dv = (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / dt
    return v, dv


@numba.njit(cache=True, fastmath=False, boundscheck=False)
def retarded_sum(nodes, stack, t0, dt, u, x, c, mode_exact, weights, out):
    """Accumulate ``sum_y W(y) * [value, d/dt value](t_y, y)`` for every component.

    ``t_y = u + (|x| - |x - y|)/c`` when ``mode_exact`` is 1 and
    ``t_y = u + xbar.y / c`` otherwise (far-field argument). ``weights``
    receives the geometric factor per node (1/|x-y| or 1). Writes
    ``out[0, comp]`` (values) and ``out[1, comp]`` (time derivatives).
    Returns the index of the first node outside the window, or -1.
    """
    nn = nodes.shape[0]
    nf = stack.shape[0]
    ncomp = stack.shape[2]
    inv12dt = 1.0 / (12.0 * dt)
    r = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    xb0 = x[0] / r
    xb1 = x[1] / r
    xb2 = x[2] / r
    for q in range(ncomp):
        out[0, q] = 0.0
        out[1, q] = 0.0
    for i in range(nn):
        y0 = nodes[i, 0]
        y1 = nodes[i, 1]
        y2 = nodes[i, 2]
        if mode_exact == 1:
            e0 = x[0] - y0
            e1 = x[1] - y1
            e2 = x[2] - y2
            dist = np.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
            yy = y0 * y0 + y1 * y1 + y2 * y2
            xy = x[0] * y0 + x[1] * y1 + x[2] * y2
            shift = (2.0 * xy - yy) / (r + dist)
            g = 1.0 / dist
        else:
            shift = xb0 * y0 + xb1 * y1 + xb2 * y2
            g = 1.0
        weights[i] = g
        k, tau = _locate(u + shift / c, t0, dt, nf)
        if k < 0:
            return i
        for q in range(ncomp):
            v, dv = _hermite(stack, k, tau, i, q, dt, inv12dt)
            out[0, q] += g * v
            out[1, q] += g * dv
    return -1
