"""p-norm polar coordinates in the plane.

A point u = rho * e(A) is described by its p-norm rho and an
"area angle" A: the area of the unit p-ball sector swept from the
positive first axis to the direction of u. In these coordinates the
area element is proportional to rho d rho dA, so every shift in A that
depends only on rho (and on spectator coordinates) preserves volume, and
a quarter turn is the exact shift A -> A + Q.
"""

from __future__ import annotations

import math

import numpy as np

from ._solve import monotone_solve

_GL_X, _GL_W = np.polynomial.legendre.leggauss(80)


def even_exponent(lo: float, hi: float, margin: float = 2.0) -> int:
    """Smallest even p >= margin * ln 2 / ln(hi / lo).

    With this p, 2**(1/p) * lo < hi, i.e. the p-ball of radius
    2**(1/p) lo (which contains the sup-ball of radius lo) stays inside
    the sup-ball of radius hi.
    """
    if not (0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    p = math.ceil(margin * math.log(2.0) / math.log(hi / lo))
    p = max(p, 2)
    return p + (p % 2)


def pnorm(u: np.ndarray, p: int) -> np.ndarray:
    """p-norm of the rows of ``u`` (shape (N, 2)), underflow-safe."""
    a = np.abs(u)
    M = np.max(a, axis=-1)
    m = np.min(a, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(M > 0, m / np.where(M > 0, M, 1.0), 0.0)
    return M * (1.0 + r**p) ** (1.0 / p)


def pnorm_grad(u: np.ndarray, rho: np.ndarray, p: int) -> np.ndarray:
    """Gradient of the p-norm: sgn(u_k) (|u_k| / rho)^(p-1)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rho[..., None] > 0, np.abs(u) / np.where(rho > 0, rho, 1.0)[..., None], 0.0)
    return np.sign(u) * ratio ** (p - 1)


class AreaAngle:
    """Area-angle coordinate for the unit p-ball.

    F(T) = int_0^T (1 + t^p)^(-2/p) dt is the (doubled) area of the
    sector between slopes 0 and T; the quadrant area is Q = 2 F(1).
    """

    def __init__(self, p: int):
        self.p = int(p)
        self.Q = 2.0 * self.F(np.array([1.0]))[0]

    # F(T) = T - int h, with h = 1 - (1 + t^p)^(-2/p) supported near t = 1
    def _h(self, t):
        p = self.p
        return -np.expm1(-(2.0 / p) * np.log1p(t**p))

    def F(self, T):
        T = np.asarray(T, dtype=float)
        lo = np.minimum(T, max(0.0, 1.0 - 40.0 / self.p))
        half = 0.5 * (T - lo)
        mid = 0.5 * (T + lo)
        nodes = mid[..., None] + half[..., None] * _GL_X
        integral = half * np.sum(_GL_W * self._h(nodes), axis=-1)
        return T - integral

    def dF(self, T):
        T = np.asarray(T, dtype=float)
        return np.exp(-(2.0 / self.p) * np.log1p(T**self.p))

    def F_inv(self, A):
        """Inverse of F on [0, F(1)] by safeguarded Newton."""
        A = np.asarray(A, dtype=float)
        return monotone_solve(lambda T: self.F(T) - A, self.dF, np.zeros_like(A), np.ones_like(A), x0=np.clip(A, 0.0, 1.0))

    # quadrant bookkeeping ---------------------------------------------
    def angle(self, u: np.ndarray) -> np.ndarray:
        """Area angle A(u) in [0, 4Q)."""
        u = np.asarray(u, dtype=float)
        x, y = u[..., 0], u[..., 1]
        # quadrant index k: rotate u clockwise k quarter turns into x > 0, y >= 0
        k = np.where((x > 0) & (y >= 0), 0, np.where((x <= 0) & (y > 0), 1, np.where((x < 0) & (y <= 0), 2, 3)))
        v1 = np.select([k == 0, k == 1, k == 2], [x, y, -x], -y)
        v2 = np.select([k == 0, k == 1, k == 2], [y, -x, -y], x)
        with np.errstate(divide="ignore", invalid="ignore"):
            low = v2 <= v1
            t = np.where(low, v2 / np.where(v1 > 0, v1, 1.0), v1 / np.where(v2 > 0, v2, 1.0))
        Fl = self.F(t)
        a_loc = np.where(low, Fl, self.Q - Fl)
        origin = (x == 0) & (y == 0)
        return np.where(origin, 0.0, k * self.Q + a_loc)

    def direction(self, A: np.ndarray) -> np.ndarray:
        """Unit p-circle point e(A)."""
        A = np.mod(np.asarray(A, dtype=float), 4.0 * self.Q)
        k = np.floor(A / self.Q).astype(int) % 4
        a_loc = A - k * self.Q
        half = 0.5 * self.Q
        low = a_loc <= half
        T = self.F_inv(np.where(low, a_loc, self.Q - a_loc))
        c = np.exp(-(1.0 / self.p) * np.log1p(T**self.p))
        v1 = np.where(low, c, c * T)
        v2 = np.where(low, c * T, c)
        # rotate counterclockwise k quarter turns
        x = np.select([k == 0, k == 1, k == 2], [v1, -v2, -v1], v2)
        y = np.select([k == 0, k == 1, k == 2], [v2, v1, -v2], -v1)
        return np.stack([x, y], axis=-1)

    def direction_deriv(self, e: np.ndarray) -> np.ndarray:
        """de/dA at the unit p-circle point e."""
        p = self.p
        e1, e2 = e[..., 0], e[..., 1]
        return np.stack(
            [-np.sign(e2) * np.abs(e2) ** (p - 1), np.sign(e1) * np.abs(e1) ** (p - 1)],
            axis=-1,
        )
