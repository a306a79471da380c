"""Vectorized safeguarded Newton for monotone scalar equations."""

from __future__ import annotations

import numpy as np

from ..exceptions import NewtonDiverged


def monotone_solve(f, df, lo, hi, x0=None, tol: float = 1e-15, max_iter: int = 200, resid_tol: float | None = None):
    """Solve f(x) = 0 for increasing f on brackets [lo, hi], elementwise.

    Newton steps are accepted only if they stay inside the current
    bracket and at least halve |f|; otherwise the bracket is bisected.

    Raises:
        NewtonDiverged: If the bracket does not shrink below ``tol``.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = f(x)
    for _ in range(max_iter):
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        d = df(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / d
        ok = (xn > lo) & (xn < hi) & np.isfinite(xn)
        xn = np.where(ok, xn, 0.5 * (lo + hi))
        fn = f(xn)
        # fall back to bisection when Newton fails to halve the residual
        slow = ok & (np.abs(fn) > 0.5 * np.abs(fx))
        if np.any(slow):
            xb = 0.5 * (lo + hi)
            xn = np.where(slow, xb, xn)
            fn = np.where(slow, f(xb), fn)
        step = np.abs(xn - x)
        x, fx = xn, fn
        scale = np.maximum(np.abs(x), 1e-300)
        if np.all((step <= tol * np.maximum(scale, 1.0)) | (fx == 0) | (hi - lo <= 4e-16 * np.maximum(scale, 1e-300))):
            break
    if resid_tol is not None and np.max(np.abs(fx), initial=0.0) > resid_tol:
        raise NewtonDiverged(f"monotone solve residual {np.max(np.abs(fx)):.2e}")
    return x
