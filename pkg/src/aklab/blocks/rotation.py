"""Smoothed quarter-turn phi_{eps,i,j} in the x_i - x_j plane.

On [2 eps, 1 - 2 eps]^m the map is the exact rotation by pi/2 about the
centre, (x_i, x_j) -> (1 - x_j, x_i); outside [eps, 1 - eps]^m it is the
identity. In between it is an area-angle twist: with u = (x_i - 1/2,
x_j - 1/2) written as rho e(A) in p-norm polar coordinates,

    A' = A + Q S(rho) T(w),

where w are the spectator coordinates. Because the area element is
rho d rho dA, the twist preserves volume exactly, so no Moser correction
is needed for this block.
"""

from __future__ import annotations

import numpy as np

from .._rational import Q
from ..exceptions import ConfigError
from .base import ExactRegion, SmoothMap
from .bump import flat_step, flat_step_deriv
from .pnorm import AreaAngle, even_exponent, pnorm, pnorm_grad


class RotationSmoother(SmoothMap):
    """phi_{eps,i,j} on R^m (axes are 1-based).

    Args:
        eps: Collar width in (0, 1/4).
        i: First axis of the rotation plane.
        j: Second axis of the rotation plane.
        dim_m: Ambient dimension.
        p: Optional even exponent; defaults to the smallest admissible one
            with a factor-two safety margin.
    """

    def __init__(self, eps, i: int = 1, j: int = 2, dim_m: int = 2, p: int | None = None):
        self.eps_exact = eps
        self.eps = e = float(eps)
        if not (0 < e < 0.25):
            raise ConfigError("rotation smoother needs eps in (0, 1/4)")
        if i == j or not (1 <= i <= dim_m and 1 <= j <= dim_m):
            raise ConfigError("rotation axes must be distinct and within 1..m")
        self.i, self.j, self.dim = i, j, dim_m
        self._a, self._b = i - 1, j - 1
        self._w = [k for k in range(dim_m) if k not in (self._a, self._b)]
        self.p = p if p is not None else even_exponent(0.5 - 2 * e, 0.5 - e)
        self.rho0 = 2.0 ** (1.0 / self.p) * (0.5 - 2 * e)
        self.rho1 = 0.5 - e
        if not self.rho0 < self.rho1:
            raise ConfigError("p too small for the requested eps")
        self.aa = AreaAngle(self.p)
        E = Q(eps)
        self.exact_regions = (
            ExactRegion(2 * E, 1 - 2 * E, True, "rotation"),
            ExactRegion(E, 1 - E, False, "identity"),
        )

    # profiles -----------------------------------------------------------
    def _S(self, rho):
        return 1.0 - flat_step((rho - self.rho0) / (self.rho1 - self.rho0))

    def _dS(self, rho):
        return -flat_step_deriv((rho - self.rho0) / (self.rho1 - self.rho0)) / (self.rho1 - self.rho0)

    def _T(self, W):
        e = self.eps
        if W.shape[1] == 0:
            return np.ones(W.shape[0]), np.zeros_like(W)
        lo = flat_step((W - e) / e)
        hi = flat_step((1 - e - W) / e)
        f = lo * hi
        df = (flat_step_deriv((W - e) / e) * hi - lo * flat_step_deriv((1 - e - W) / e)) / e
        T = np.prod(f, axis=1)
        grad = np.empty_like(W)
        for c in range(W.shape[1]):
            others = np.prod(np.delete(f, c, axis=1), axis=1) if W.shape[1] > 1 else 1.0
            grad[:, c] = df[:, c] * others
        return T, grad

    def closed_form(self, tag, x, inverse=False):
        if tag != "rotation":
            return super().closed_form(tag, x, inverse)
        y = list(x)
        a, b = self._a, self._b
        if inverse:
            y[a], y[b] = x[b], 1 - x[a]
        else:
            y[a], y[b] = 1 - x[b], x[a]
        return tuple(y)

    def closed_jacobian(self, tag, x):
        if tag != "rotation":
            return super().closed_jacobian(tag, x)
        J = np.eye(self.dim)
        a, b = self._a, self._b
        J[a, a] = J[b, b] = 0.0
        J[a, b], J[b, a] = -1.0, 1.0
        return J

    def _rotate_exact(self, X):
        Y = X.copy()
        Y[:, self._a] = 1.0 - X[:, self._b]
        Y[:, self._b] = X[:, self._a]
        return Y

    def _rotate_exact_inv(self, X):
        Y = X.copy()
        Y[:, self._a] = X[:, self._b]
        Y[:, self._b] = 1.0 - X[:, self._a]
        return Y

    def _classify(self, X):
        e = self.eps
        rot = np.all((X >= 2 * e) & (X <= 1 - 2 * e), axis=1)
        ident = ~np.all((X >= e) & (X <= 1 - e), axis=1)
        return rot, ident

    def _twist(self, X, sign: float):
        u = np.stack([X[:, self._a] - 0.5, X[:, self._b] - 0.5], axis=1)
        rho = pnorm(u, self.p)
        T, _ = self._T(X[:, self._w])
        A = self.aa.angle(u) + sign * self.aa.Q * self._S(rho) * T
        v = rho[:, None] * self.aa.direction(A)
        Y = X.copy()
        Y[:, self._a] = 0.5 + v[:, 0]
        Y[:, self._b] = 0.5 + v[:, 1]
        return Y

    def _dispatch(self, X, exact, sign):
        rot, ident = self._classify(X)
        Y = X.copy()
        if np.any(rot):
            Y[rot] = exact(X[rot])
        num = ~(rot | ident)
        if np.any(num):
            Y[num] = self._twist(X[num], sign)
        return Y

    def _forward(self, X):
        return self._dispatch(X, self._rotate_exact, 1.0)

    def _inverse(self, X):
        return self._dispatch(X, self._rotate_exact_inv, -1.0)

    def _jacobian(self, X):
        N, m = X.shape
        J = np.broadcast_to(np.eye(m), (N, m, m)).copy()
        rot, ident = self._classify(X)
        a, b = self._a, self._b
        if np.any(rot):
            R = np.zeros((2, 2))
            R[0, 1], R[1, 0] = -1.0, 1.0
            J[np.ix_(rot, [a, b], [a, b])] = R
        num = ~(rot | ident)
        if np.any(num):
            Xn = X[num]
            u = np.stack([Xn[:, a] - 0.5, Xn[:, b] - 0.5], axis=1)
            rho = pnorm(u, self.p)
            grad_rho = pnorm_grad(u, rho, self.p)
            grad_A = np.stack([-u[:, 1], u[:, 0]], axis=1) / rho[:, None] ** 2
            T, gradT = self._T(Xn[:, self._w])
            Q = self.aa.Q
            S, dS = self._S(rho), self._dS(rho)
            A2 = self.aa.angle(u) + Q * S * T
            e2 = self.aa.direction(A2)
            de2 = self.aa.direction_deriv(e2)
            dA2 = grad_A + (Q * dS * T)[:, None] * grad_rho
            Juu = e2[:, :, None] * grad_rho[:, None, :] + rho[:, None, None] * de2[:, :, None] * dA2[:, None, :]
            sub = J[num]
            sub[:, a, a], sub[:, a, b] = Juu[:, 0, 0], Juu[:, 0, 1]
            sub[:, b, a], sub[:, b, b] = Juu[:, 1, 0], Juu[:, 1, 1]
            if self._w:
                Juw = (rho * Q * S)[:, None, None] * de2[:, :, None] * gradT[:, None, :]
                for c, k in enumerate(self._w):
                    sub[:, a, k] = Juw[:, 0, c]
                    sub[:, b, k] = Juw[:, 1, c]
            J[num] = sub
        return J


def build_rotation_smoother(eps, i: int = 1, j: int = 2, dim_m: int = 2) -> RotationSmoother:
    """Construct phi_{eps,i,j} on R^m."""
    return RotationSmoother(eps, i, j, dim_m)
