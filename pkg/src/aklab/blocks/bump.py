"""Flat C-infinity transition profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


def flat_step(t):
    """Smooth step s(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}).

    Equal to 0 for t <= 0 and 1 for t >= 1; all derivatives vanish at both
    knots.
    """
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    mid = (t > 0.0) & (t < 1.0)
    if np.any(mid):
        tm = t[mid] if t.ndim else t
        z = 1.0 / tm - 1.0 / (1.0 - tm)
        val = expit(-z)
        if t.ndim:
            out = out.astype(float)
            out[mid] = val
        else:
            out = np.asarray(val)
    return out if t.ndim else float(out)


def flat_step_deriv(t):
    """Derivative of :func:`flat_step`."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t, dtype=float)
    mid = (t > 0.0) & (t < 1.0)
    if np.any(mid):
        tm = t[mid] if t.ndim else t
        z = 1.0 / tm - 1.0 / (1.0 - tm)
        s = expit(-z)
        val = s * (1.0 - s) * (1.0 / tm**2 + 1.0 / (1.0 - tm) ** 2)
        if t.ndim:
            out[mid] = val
        else:
            out = np.asarray(val)
    return out if t.ndim else float(out)


def flat_step_max_slope(samples: int = 20001) -> float:
    """Sampled sup of s'(t) on (0, 1); about 2, attained at t = 1/2."""
    t = np.linspace(0.0, 1.0, samples)[1:-1]
    return float(np.max(flat_step_deriv(t)))


@dataclass(frozen=True)
class BumpProfile:
    """Monotone transition from v0 (t <= t0) to v1 (t >= t1).

    Attributes:
        t0: Lower knot.
        t1: Upper knot, strictly larger than ``t0``.
        v0: Value below the lower knot.
        v1: Value above the upper knot.
    """

    t0: float
    t1: float
    v0: float = 0.0
    v1: float = 1.0

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("BumpProfile needs t1 > t0")

    @property
    def width(self) -> float:
        return self.t1 - self.t0

    def __call__(self, t):
        return self.v0 + (self.v1 - self.v0) * flat_step((np.asarray(t, dtype=float) - self.t0) / self.width)

    def deriv(self, t):
        return (self.v1 - self.v0) / self.width * flat_step_deriv((np.asarray(t, dtype=float) - self.t0) / self.width)

    def max_slope(self) -> float:
        return abs(self.v1 - self.v0) / self.width * flat_step_max_slope()
