"""Compiled per-ray RK4 kernel for batch bicharacteristic tracing.

State layout (13 floats): x(2), xi(2), J = d(x, xi)/dy as 4x2 row-major (8), log a.
Mirrors :func:`tatrecon.rays._rhs`; the two are cross-checked in the tests.
"""

import numpy as np
from numba import njit

NSTATE = 13
MAX_CROSSINGS = 4


@njit(cache=True)
def _speed(x0, x1, bumps, power):
    c = 1.0
    g0 = 0.0
    g1 = 0.0
    h00 = 0.0
    h01 = 0.0
    h11 = 0.0
    for b in range(bumps.shape[0]):
        d0 = x0 - bumps[b, 0]
        d1 = x1 - bumps[b, 1]
        R2 = bumps[b, 2] * bumps[b, 2]
        q = 1.0 - (d0 * d0 + d1 * d1) / R2
        if q <= 0.0:
            continue
        A = bumps[b, 3]
        c += A * q**power
        a1 = -2.0 * A * power * q ** (power - 1) / R2
        a2 = 4.0 * A * power * (power - 1) * q ** (power - 2) / (R2 * R2)
        g0 += a1 * d0
        g1 += a1 * d1
        h00 += a2 * d0 * d0 + a1
        h01 += a2 * d0 * d1
        h11 += a2 * d1 * d1 + a1
    return c, g0, g1, h00, h01, h11


@njit(cache=True)
def _rhs(z, s, bumps, power, with_jac, with_amp, out):
    c, g0, g1, h00, h01, h11 = _speed(z[0], z[1], bumps, power)
    nx = np.sqrt(z[2] * z[2] + z[3] * z[3])
    u0 = z[2] / nx
    u1 = z[3] / nx
    dx0 = -s * c * u0
    dx1 = -s * c * u1
    out[0] = dx0
    out[1] = dx1
    out[2] = s * nx * g0
    out[3] = s * nx * g1
    for k in range(4, NSTATE):
        out[k] = 0.0
    if not with_jac:
        return
    # A = [[-s u g^T, -s c/|xi| (I - u u^T)], [s |xi| Hc, s g u^T]]
    a = np.empty((4, 4))
    a[0, 0] = -s * u0 * g0
    a[0, 1] = -s * u0 * g1
    a[1, 0] = -s * u1 * g0
    a[1, 1] = -s * u1 * g1
    f = -s * c / nx
    a[0, 2] = f * (1.0 - u0 * u0)
    a[0, 3] = f * (-u0 * u1)
    a[1, 2] = f * (-u1 * u0)
    a[1, 3] = f * (1.0 - u1 * u1)
    a[2, 0] = s * nx * h00
    a[2, 1] = s * nx * h01
    a[3, 0] = s * nx * h01
    a[3, 1] = s * nx * h11
    a[2, 2] = s * g0 * u0
    a[2, 3] = s * g0 * u1
    a[3, 2] = s * g1 * u0
    a[3, 3] = s * g1 * u1
    for i in range(4):
        for j in range(2):
            acc = 0.0
            for m in range(4):
                acc += a[i, m] * z[4 + 2 * m + j]
            out[4 + 2 * i + j] = acc
    if not with_amp:
        return
    jx00 = z[4]
    jx01 = z[5]
    jx10 = z[6]
    jx11 = z[7]
    det = jx00 * jx11 - jx01 * jx10
    i00 = jx11 / det
    i01 = -jx01 / det
    i10 = -jx10 / det
    i11 = jx00 / det
    p00 = z[8] * i00 + z[9] * i10
    p01 = z[8] * i01 + z[9] * i11
    p10 = z[10] * i00 + z[11] * i10
    p11 = z[10] * i01 + z[11] * i11
    gp0 = s * (nx * g0 + c * (p00 * u0 + p01 * u1))
    gp1 = s * (nx * g1 + c * (p10 * u0 + p11 * u1))
    phi_tt = -(dx0 * gp0 + dx1 * gp1)
    lap = p00 + p11
    tau = s * c * nx
    out[12] = -(phi_tt - c * c * lap) / (2.0 * tau)


@njit(cache=True)
def _rk4(z, s, h, bumps, power, with_jac, with_amp, k1, k2, k3, k4, tmp, out):
    _rhs(z, s, bumps, power, with_jac, with_amp, k1)
    for i in range(NSTATE):
        tmp[i] = z[i] + 0.5 * h * k1[i]
    _rhs(tmp, s, bumps, power, with_jac, with_amp, k2)
    for i in range(NSTATE):
        tmp[i] = z[i] + 0.5 * h * k2[i]
    _rhs(tmp, s, bumps, power, with_jac, with_amp, k3)
    for i in range(NSTATE):
        tmp[i] = z[i] + h * k3[i]
    _rhs(tmp, s, bumps, power, with_jac, with_amp, k4)
    for i in range(NSTATE):
        out[i] = z[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


@njit(cache=True)
def _bfun(z, gkind, gc0, gc1, grad):
    if gkind == 1:
        return z[1]
    if gkind == 2:
        d0 = z[0] - gc0
        d1 = z[1] - gc1
        return np.sqrt(d0 * d0 + d1 * d1) - grad
    return 1.0


@njit(cache=True)
def _support_distance(x0, x1, bumps):
    best = 1e300
    for b in range(bumps.shape[0]):
        d0 = x0 - bumps[b, 0]
        d1 = x1 - bumps[b, 1]
        r = np.sqrt(d0 * d0 + d1 * d1) - bumps[b, 2]
        if r < best:
            best = r
    if best < 0.0:
        best = 0.0
    return best


@njit(cache=True)
def integrate_batch(Y, E, S, times, dt, bumps, power, with_jac, with_amp,
                    gkind, gc0, gc1, grad, free_cap, record):
    """Integrate every ray from t = 0 through ``times`` (monotone, one sign).

    Returns (states at times [N, K, 13] or empty, crossings [N, MAX, 14]
    holding (t, state), crossing counts [N]).
    """
    n = Y.shape[0]
    K = times.shape[0]
    if record:
        rec = np.zeros((n, K, NSTATE))
    else:
        rec = np.zeros((0, 0, NSTATE))
    cross = np.zeros((n, MAX_CROSSINGS, NSTATE + 1))
    ncross = np.zeros(n, np.int64)
    z = np.empty(NSTATE)
    zn = np.empty(NSTATE)
    zq = np.empty(NSTATE)
    k1 = np.empty(NSTATE)
    k2 = np.empty(NSTATE)
    k3 = np.empty(NSTATE)
    k4 = np.empty(NSTATE)
    tmp = np.empty(NSTATE)
    for r in range(n):
        for i in range(NSTATE):
            z[i] = 0.0
        z[0] = Y[r, 0]
        z[1] = Y[r, 1]
        z[2] = E[r, 0]
        z[3] = E[r, 1]
        z[4] = 1.0
        z[7] = 1.0
        s = S[r]
        t = 0.0
        for kk in range(K):
            t_out = times[kk]
            while abs(t_out - t) > 1e-13:
                step = dt
                if bumps.shape[0] == 0:
                    free = 1e300
                else:
                    free = _support_distance(z[0], z[1], bumps) - 2.0 * dt
                if free > step:
                    step = free
                if with_amp and step > free_cap:
                    step = max(dt, free_cap)
                b0 = _bfun(z, gkind, gc0, gc1, grad)
                if gkind == 2:
                    ab = abs(b0)
                    if step > ab:
                        step = max(dt, ab)
                rem = t_out - t
                h = min(abs(rem), step)
                if rem < 0:
                    h = -h
                _rk4(z, s, h, bumps, power, with_jac, with_amp, k1, k2, k3, k4, tmp, zn)
                if gkind > 0:
                    b1 = _bfun(zn, gkind, gc0, gc1, grad)
                    if (b0 * b1 < 0.0 or (b1 == 0.0 and b0 != 0.0)) and ncross[r] < MAX_CROSSINGS:
                        lo = 0.0
                        hi = 1.0
                        for _ in range(40):
                            mid = 0.5 * (lo + hi)
                            _rk4(z, s, mid * h, bumps, power, with_jac, with_amp, k1, k2, k3, k4, tmp, zq)
                            bq = _bfun(zq, gkind, gc0, gc1, grad)
                            if (bq > 0) == (b0 > 0) and bq != 0.0:
                                lo = mid
                            else:
                                hi = mid
                        fr = 0.5 * (lo + hi)
                        _rk4(z, s, fr * h, bumps, power, with_jac, with_amp, k1, k2, k3, k4, tmp, zq)
                        m = ncross[r]
                        cross[r, m, 0] = t + fr * h
                        for i in range(NSTATE):
                            cross[r, m, 1 + i] = zq[i]
                        ncross[r] += 1
                for i in range(NSTATE):
                    z[i] = zn[i]
                t += h
                if abs(t_out - t) < 1e-12:
                    t = t_out
            if record:
                for i in range(NSTATE):
                    rec[r, kk, i] = z[i]
    return rec, cross, ncross
