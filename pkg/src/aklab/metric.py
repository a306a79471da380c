"""Pulled-back metrics omega_n = (H_n^-1)^* omega_0.

omega_infty is never stored: it is represented by stage N together with
the stabilization rows produced here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .conjugation import ComposedDiffeo, ManifoldMap, as_points, to_float
from .partitions import coverage, coverage_bound, locate
from .stage_params import StageParams


@dataclass
class MetricSample:
    """Gram matrix of omega_n at one point.

    Attributes:
        point: Exact point on M.
        gram: G(p) = (DH_n^-1(p))^T DH_n^-1(p).
        n: Stage index.
        tag: Region tag (free text, e.g. ``zeta`` or ``generic``).
    """

    point: tuple
    gram: np.ndarray
    n: int
    tag: str = "generic"

    @property
    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.gram - self.gram.T)))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.gram + self.gram.T))[0])

    def is_valid(self, tol: float = 1e-12) -> bool:
        """Symmetric (relative to the largest entry) and positive definite."""
        scale = max(1.0, float(np.max(np.abs(self.gram))))
        return self.symmetry_error <= tol * scale and self.min_eigenvalue > 0


def gram_from_inverse_jacobian(Jinv: np.ndarray) -> np.ndarray:
    return np.einsum("...ki,...kj->...ij", Jinv, Jinv)


def pullback_metrics(H: ManifoldMap, pts, n: int = 0, tag: str = "generic") -> list:
    """Batch version of ``pullback_metric``."""
    pts = as_points(pts)
    G = gram_from_inverse_jacobian(H.inverse_jacobian(pts))
    return [MetricSample(p, g, n, tag) for p, g in zip(pts, G)]


def pullback_metric(H: ManifoldMap, p, n: int = 0) -> MetricSample:
    """omega_n at ``p`` from the Jacobian of H^-1.

    Args:
        H: The conjugacy H_n.
        p: Point on M.
        n: Stage index for bookkeeping.
    """
    return pullback_metrics(H, [p], n)[0]


def invariance_residuals(
    f: ManifoldMap, H: ManifoldMap, pts, V: np.ndarray, W: np.ndarray, norm: str = "omega"
) -> np.ndarray:
    """|omega(Df v, Df w)(f p) - omega(v, w)(p)| / (|v| |w|) per sample.

    ``f`` and ``H`` are evaluated independently: Df comes from the chain
    rule through f, and the Gram matrix at f(p) from a fresh inversion of
    H at f(p).

    Args:
        norm: ``"omega"`` measures |v|, |w| in omega_n at p (scale free);
            ``"euclid"`` uses omega_0. omega_n has entries near 1e9 already
            at stage 1, so the Euclidean version mostly reports the size of
            omega_n times double rounding.
    """
    pts = as_points(pts)
    G0 = gram_from_inverse_jacobian(H.inverse_jacobian(pts))
    fp, Df = f.forward_with_jacobian(pts)
    G1 = gram_from_inverse_jacobian(H.inverse_jacobian(fp))
    DV = np.einsum("nij,nj->ni", Df, V)
    DW = np.einsum("nij,nj->ni", Df, W)
    lhs = np.einsum("ni,nij,nj->n", DV, G1, DW)
    rhs = np.einsum("ni,nij,nj->n", V, G0, W)
    if norm == "omega":
        scale = np.sqrt(np.einsum("ni,nij,nj->n", V, G0, V) * np.einsum("ni,nij,nj->n", W, G0, W))
    elif norm == "euclid":
        scale = np.linalg.norm(V, axis=1) * np.linalg.norm(W, axis=1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return np.abs(lhs - rhs) / scale


def invariance_residual(f: ManifoldMap, H: ManifoldMap, p, v, w, norm: str = "omega") -> float:
    """Normalized f-invariance residual of omega at one (p, v, w)."""
    return float(invariance_residuals(f, H, [p], np.atleast_2d(v), np.atleast_2d(w), norm)[0])


@dataclass
class StabilizationReport:
    """Outcome of comparing omega_(n+1) with omega_n.

    Attributes:
        n: Lower stage index.
        samples: Number of sample points.
        hits: Points whose H_(n+1)^-1 image lies in a zeta_(n+1) element.
        max_diff: Largest entrywise Gram difference over hit points.
        hit_fraction: hits / samples.
        se: Binomial standard error of ``hit_fraction``.
        bound: 1 - 4m/(n+1)^2.
        exact_coverage: Exact measure covered by zeta_(n+1).
        rows: Per-point rows (point, region tag, difference).
    """

    n: int
    samples: int
    hits: int
    max_diff: float
    hit_fraction: float
    se: float
    bound: float
    exact_coverage: float
    rows: list


def stabilization_check(H_n: ManifoldMap, H_next: ManifoldMap, nxt: StageParams, pts) -> StabilizationReport:
    """omega_(n+1) = omega_n wherever H_n^-1(p) lies in h_(n+1)(zeta element).

    With y = H_(n+1)^-1(p), H_n^-1(p) = h_(n+1)(y), so the test is exact
    membership of y in zeta_(n+1).
    """
    pts = as_points(pts)
    ys = H_next.inverse(pts)
    hit = [locate("zeta", nxt, y) is not None for y in ys]
    idx = [i for i, h in enumerate(hit) if h]
    max_diff = 0.0
    rows = []
    if idx:
        sub = [pts[i] for i in idx]
        G0 = gram_from_inverse_jacobian(H_n.inverse_jacobian(sub))
        G1 = gram_from_inverse_jacobian(H_next.inverse_jacobian(sub))
        diffs = np.max(np.abs(G1 - G0), axis=(1, 2))
        max_diff = float(np.max(diffs))
        for i, d in zip(idx, diffs):
            rows.append({"index": i, "tag": "zeta", "diff": float(d)})
    N = len(pts)
    p = len(idx) / N
    return StabilizationReport(
        n=nxt.n - 1,
        samples=N,
        hits=len(idx),
        max_diff=max_diff,
        hit_fraction=p,
        se=math.sqrt(max(p * (1 - p), 1.0 / N) / N),
        bound=float(coverage_bound(nxt)),
        exact_coverage=float(coverage("zeta", nxt)),
        rows=rows,
    )


def export_csv(samples: list) -> str:
    """CSV with point coordinates, upper-triangle Gram entries, stage and tag."""
    if not samples:
        return ""
    m = len(samples[0].point)
    tri = [(i, j) for i in range(m) for j in range(i, m)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(m)] + [f"g{i}{j}" for i, j in tri] + ["n", "tag"])
    for s in samples:
        x = to_float([s.point])[0]
        w.writerow([repr(float(c)) for c in x] + [repr(float(s.gram[i, j])) for i, j in tri] + [s.n, s.tag])
    return buf.getvalue()
