"""Common contract for the smooth building blocks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from gmpy2 import mpq


@dataclass(frozen=True)
class ExactRegion:
    """Axis box region on which a block is given by a closed form.

    Attributes:
        lo: Lower corner value (same for every axis).
        hi: Upper corner value.
        inside: If True the region is the closed box, else its complement.
        tag: Closed-form label, one of ``identity``, ``shear``, ``rotation``.
    """

    lo: float
    hi: float
    inside: bool
    tag: str

    def contains(self, x) -> bool:
        in_box = all(self.lo <= c <= self.hi for c in x)
        return in_box if self.inside else not in_box


def as_batch(X) -> tuple:
    """Return (2-D float array, was_single) for a point or a batch."""
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        return A[None, :], True
    return A, False


def unbatch(Y: np.ndarray, single: bool):
    return Y[0] if single else Y


class SmoothMap:
    """Volume-preserving map with forward, inverse and Jacobian.

    Subclasses implement the batched ``_forward``, ``_inverse`` and
    ``_jacobian`` on float arrays of shape (N, d).
    """

    dim: int = 2
    exact_regions: Sequence[ExactRegion] = ()

    def forward(self, X):
        A, single = as_batch(X)
        return unbatch(self._forward(A), single)

    def inverse(self, X):
        A, single = as_batch(X)
        return unbatch(self._inverse(A), single)

    def jacobian(self, X):
        A, single = as_batch(X)
        return unbatch(self._jacobian(A), single)

    __call__ = forward

    def region_tag(self, x) -> str:
        """Closed-form tag for a single point, ``numeric`` if none applies."""
        for reg in self.exact_regions:
            if reg.contains(x):
                return reg.tag
        return "numeric"

    def inverse_region_tag(self, y) -> str:
        return self.region_tag(y)

    # exact points ---------------------------------------------------------
    def closed_form(self, tag: str, x, inverse: bool = False):
        """Closed-form image of an exact point on a tagged region."""
        if tag == "identity":
            return tuple(x)
        raise NotImplementedError(tag)

    def closed_jacobian(self, tag: str, x) -> np.ndarray:
        if tag == "identity":
            return np.eye(len(x))
        raise NotImplementedError(tag)

    def map_points(self, pts, inverse: bool = False) -> list:
        """Apply the map (or its inverse) to a list of exact rational points.

        Points on an exact region go through the closed form in rational
        arithmetic; the rest are batched through the float evaluator and
        converted back exactly.
        """
        tagger = self.inverse_region_tag if inverse else self.region_tag
        out = [None] * len(pts)
        numeric = []
        for idx, x in enumerate(pts):
            tag = tagger(x)
            if tag == "numeric":
                numeric.append(idx)
            else:
                out[idx] = self.closed_form(tag, x, inverse)
        if numeric:
            A = np.array([[float(c) for c in pts[i]] for i in numeric])
            Y = self._inverse(A) if inverse else self._forward(A)
            for row, idx in zip(Y, numeric):
                out[idx] = tuple(mpq(float(v)) for v in row)
        return out

    def jacobian_points(self, pts) -> np.ndarray:
        """Float Jacobians at exact points, closed form where available."""
        d = len(pts[0]) if pts else self.dim
        J = np.empty((len(pts), d, d))
        numeric = []
        for idx, x in enumerate(pts):
            tag = self.region_tag(x)
            if tag == "numeric":
                numeric.append(idx)
            else:
                J[idx] = self.closed_jacobian(tag, x)
        if numeric:
            A = np.array([[float(c) for c in pts[i]] for i in numeric])
            J[numeric] = self._jacobian(A)
        return J

    # finite differences -------------------------------------------------
    def fd_jacobian(self, X, h: float = 1e-6, fn: Callable | None = None):
        A, single = as_batch(X)
        fn = fn or self._forward
        N, d = A.shape
        J = np.empty((N, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            J[:, :, k] = (fn(A + e) - fn(A - e)) / (2 * h)
        return unbatch(J, single)
