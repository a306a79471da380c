"""Compiled pointwise kernel for the psi-frame Moser flow.

Each point is integrated independently with classical RK4; the field
mirrors ``PsiFrameMoser.field`` term by term. All functions are written
generically over real and complex scalars (branches test real parts), so
a flow started at z + i h e_k yields the exact directional derivative
Im(nu) / h of the discrete flow map (complex-step differentiation).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _step(t):
    if t.real <= 0.0:
        return 0.0 * t, 0.0 * t
    if t.real >= 1.0:
        return 1.0 + 0.0 * t, 0.0 * t
    z = 1.0 / t - 1.0 / (1.0 - t)
    if z.real > 0.0:
        e = np.exp(-z)
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + np.exp(z))
    ds = s * (1.0 - s) * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)))
    return s, ds


@njit(cache=True)
def _kappa(rho, s0, s1):
    w = s1 - s0
    s, ds = _step((rho - s0) / w)
    return 0.2 + 0.8 * s, 0.8 * ds / w


@njit(cache=True)
def _pnorm(u1, u2, p):
    a = u1 if u1.real >= 0.0 else -u1
    b = u2 if u2.real >= 0.0 else -u2
    if a.real >= b.real:
        big, small = a, b
    else:
        big, small = b, a
    if big.real == 0.0:
        return 0.0 * big
    return big * (1.0 + (small / big) ** p) ** (1.0 / p)


@njit(cache=True)
def _radius_real(R, s0, s1):
    """Solve kappa(rho) rho = R on [R, 5R] by safeguarded Newton."""
    if R == 0.0:
        return 0.0
    lo, hi = R, 5.0 * R
    k, _ = _kappa(R, s0, s1)
    x = min(max(R / k, lo), hi)
    prev = np.inf
    for _ in range(200):
        k, dk = _kappa(x, s0, s1)
        f = k * x - R
        if f == 0.0:
            return x
        if f < 0.0:
            lo = x
        else:
            hi = x
        xn = x - f / (k + dk * x)
        # bisect when Newton leaves the bracket or stalls
        if not (lo < xn < hi) or abs(f) > 0.5 * prev:
            xn = 0.5 * (lo + hi)
        prev = abs(f)
        if abs(xn - x) <= 2e-16 * x or hi - lo <= 4e-16 * x:
            return xn
        x = xn
    return x


@njit(cache=True)
def _radius(R, s0, s1):
    xr = _radius_real(R.real, s0, s1)
    if xr == 0.0:
        return 0.0 * R
    # two plain Newton steps carry the imaginary part of a complex R
    x = xr + 0.0 * R
    for _ in range(2):
        k, dk = _kappa(x, s0, s1)
        x = x - (k * x - R) / (k + dk * x)
    return x


@njit(cache=True)
def _alpha(z1, z2, p, s0, s1):
    u1, u2 = z1 - 0.5, z2 - 0.5
    rho = _radius(_pnorm(u1, u2, p), s0, s1)
    k, dk = _kappa(rho, s0, s1)
    c = 0.5 / (k * k)
    return -u2 * c, u1 * c, 1.0 / (k * (k + dk * rho))


@njit(cache=True)
def _field(z1, z2, t, eps, p, s0, s1, R0, R1):
    a0x, a0y, w0 = _alpha(z1, z2, p, s0, s1)
    d1, d2 = z1 - 0.5, z2 - 0.5
    r = np.sqrt(d1 * d1 + d2 * d2)
    lam, dlam = _step((r - R0) / (R1 - R0))
    dlam = dlam / (R1 - R0)
    if r.real > 0.0:
        cx, cy = d1 / r, d2 / r
    else:
        cx, cy = 0.0 * d1, 0.0 * d2
    J00 = 1.0 + eps * z2 * dlam * cx
    J01 = eps * lam + eps * z2 * dlam * cy
    a1x, a1y, w1 = _alpha(z1 + eps * lam * z2, z2, p, s0, s1)
    # beta = alpha - tau^* alpha + d(eps y lambda / 4)
    bx = a0x - J00 * a1x + 0.25 * eps * z2 * dlam * cx
    by = a0y - (J01 * a1x + a1y) + 0.25 * eps * (lam + z2 * dlam * cy)
    dens = w0 + t * (w1 * J00 - w0)
    return by / dens, -bx / dens, dens


@njit(cache=True)
def flow(Z, t0, t1, n, eps, p, s0, s1, R0, R1):
    """RK4 flow of the Moser field from t0 to t1 in n steps.

    Returns the endpoints and the smallest (real part of the) density met
    along the way.
    """
    N = Z.shape[0]
    out = np.empty_like(Z)
    dmin = np.empty(N)
    h = (t1 - t0) / n
    for i in range(N):
        x, y = Z[i, 0], Z[i, 1]
        lowest = np.inf
        t = t0
        for _ in range(n):
            k1x, k1y, d1 = _field(x, y, t, eps, p, s0, s1, R0, R1)
            k2x, k2y, d2 = _field(x + 0.5 * h * k1x, y + 0.5 * h * k1y, t + 0.5 * h, eps, p, s0, s1, R0, R1)
            k3x, k3y, d3 = _field(x + 0.5 * h * k2x, y + 0.5 * h * k2y, t + 0.5 * h, eps, p, s0, s1, R0, R1)
            k4x, k4y, d4 = _field(x + h * k3x, y + h * k3y, t + h, eps, p, s0, s1, R0, R1)
            x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            lowest = min(lowest, d1.real, d2.real, d3.real, d4.real)
            t += h
        out[i, 0], out[i, 1] = x, y
        dmin[i] = lowest
    return out, dmin
