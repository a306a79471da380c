"""Conjugation maps g_n, phi_n and their compositions on S^1 x [0,1]^(m-1).

Points are tuples ``(theta, r_1, ..., r_(m-1))`` of exact rationals
(``gmpy2.mpq``). Every map reduces a point exactly to the local unit-cube
coordinates of the block that acts on it; closed-form regions stay exact,
and only the O(1) local coordinate is handed to a float evaluator when a
numeric (Moser or twist) region is hit. The result is re-anchored in
rational arithmetic, so the block index of a point is never rounded even
when it needs q_n^k digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from gmpy2 import mpq

from ._rational import Q, ceil, floor, mod1
from .blocks.rotation import RotationSmoother
from .blocks.shear import MoserSolveConfig, ShearSmoother
from .exceptions import ConfigError, PrecisionLoss
from .stage_params import StageParams


# ---------------------------------------------------------------------------
# points
# ---------------------------------------------------------------------------


def as_point(x) -> tuple:
    """Exact point with theta reduced mod 1.

    Args:
        x: Sequence of numbers, rationals or ``"num/den"`` strings.

    Returns:
        Tuple of ``mpq``.
    """
    vals = [Q(c) for c in x]
    if len(vals) < 2:
        raise ConfigError("a point needs theta and at least one r coordinate")
    vals[0] = mod1(vals[0])
    return tuple(vals)


def as_points(X) -> list:
    """Convert a batch (array or list of sequences) into exact points."""
    if isinstance(X, np.ndarray) and X.ndim == 1:
        X = X[None, :]
    return [as_point(x) for x in X]


def to_float(pts) -> np.ndarray:
    return np.array([[float(c) for c in p] for p in pts], dtype=float)


def local_float(vals) -> list:
    """Float copies of local block coordinates.

    Raises:
        PrecisionLoss: If a coordinate is not representable to 1e-12.
    """
    out = []
    for v in vals:
        f = float(v)
        if not np.isfinite(f) or abs(mpq(f) - v) > mpq(1, 10**12) * max(1, abs(f)):
            raise PrecisionLoss(f"local coordinate {v} not representable as float")
        out.append(f)
    return out


def sector_of(theta, n: int, q: int) -> int:
    """Sector index k in 1..n of theta; boundaries go to the lower sector."""
    c = ceil(mod1(theta) * n * q)
    return (c - 1) % n + 1


# ---------------------------------------------------------------------------
# map protocol
# ---------------------------------------------------------------------------


class ManifoldMap:
    """Diffeomorphism of S^1 x [0,1]^(m-1) acting on lists of exact points."""

    dim: int = 2
    name: str = "map"

    def forward(self, pts: list) -> list:
        raise NotImplementedError

    def inverse(self, pts: list) -> list:
        raise NotImplementedError

    def jacobian(self, pts: list) -> np.ndarray:
        raise NotImplementedError

    def forward_with_jacobian(self, pts: list):
        return self.forward(pts), self.jacobian(pts)

    def inverse_jacobian(self, pts: list) -> np.ndarray:
        """Jacobian of the inverse map at ``pts``."""
        return np.linalg.inv(self.jacobian(self.inverse(pts)))

    def __call__(self, x):
        if isinstance(x, list):
            return self.forward(x)
        return self.forward([as_point(x)])[0]

    def inv(self) -> "ManifoldMap":
        return Inverted(self)

    def compose(self, other: "ManifoldMap") -> "ComposedDiffeo":
        """self o other."""
        return ComposedDiffeo([self, other])


class Inverted(ManifoldMap):
    def __init__(self, base: ManifoldMap):
        self.base = base
        self.dim = base.dim
        self.name = f"{base.name}^-1"

    def forward(self, pts):
        return self.base.inverse(pts)

    def inverse(self, pts):
        return self.base.forward(pts)

    def jacobian(self, pts):
        return self.base.inverse_jacobian(pts)

    def inverse_jacobian(self, pts):
        return self.base.jacobian(pts)

    def inv(self):
        return self.base


class IdentityMap(ManifoldMap):
    def __init__(self, dim: int = 2):
        self.dim = dim
        self.name = "id"

    def forward(self, pts):
        return list(pts)

    inverse = forward

    def jacobian(self, pts):
        return np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()

    inverse_jacobian = jacobian


class CircleRotation(ManifoldMap):
    """R_alpha(theta, r) = (theta + alpha, r) with exact rational alpha."""

    def __init__(self, alpha, dim: int = 2):
        self.alpha = Q(alpha)
        self.dim = dim
        self.name = f"R[{self.alpha}]"

    def forward(self, pts):
        a = self.alpha
        return [(mod1(p[0] + a),) + tuple(p[1:]) for p in pts]

    def inverse(self, pts):
        a = self.alpha
        return [(mod1(p[0] - a),) + tuple(p[1:]) for p in pts]

    def jacobian(self, pts):
        return np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()

    inverse_jacobian = jacobian


class ThetaShear(ManifoldMap):
    """g~_b(theta, r) = (theta + b r_1, r)."""

    def __init__(self, b: int, dim: int = 2):
        self.b = int(b)
        self.dim = dim
        self.name = f"gtilde[{self.b}]"

    def forward(self, pts):
        b = self.b
        return [(mod1(p[0] + b * p[1]),) + tuple(p[1:]) for p in pts]

    def inverse(self, pts):
        b = self.b
        return [(mod1(p[0] - b * p[1]),) + tuple(p[1:]) for p in pts]

    def jacobian(self, pts):
        J = np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()
        J[:, 0, 1] = self.b
        return J

    def inverse_jacobian(self, pts):
        J = self.jacobian(pts)
        J[:, 0, 1] = -self.b
        return J


class ComposedDiffeo(ManifoldMap):
    """Composition F_1 o F_2 o ... o F_k (F_k is applied first).

    Args:
        factors: Maps in mathematical order.
        name: Label used in reports.
    """

    def __init__(self, factors: Sequence[ManifoldMap], name: str | None = None, dim: int | None = None):
        self.factors = list(factors)
        if dim is None:
            dim = self.factors[0].dim if self.factors else 2
        self.dim = dim
        self.name = name or " o ".join(f.name for f in self.factors) or "id"

    def forward(self, pts):
        for f in reversed(self.factors):
            pts = f.forward(pts)
        return list(pts)

    def inverse(self, pts):
        for f in self.factors:
            pts = f.inverse(pts)
        return list(pts)

    def forward_with_jacobian(self, pts):
        J = np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()
        for f in reversed(self.factors):
            pts, Jf = f.forward_with_jacobian(pts)
            J = Jf @ J
        return list(pts), J

    def jacobian(self, pts):
        return self.forward_with_jacobian(pts)[1]

    def inverse_jacobian(self, pts):
        # chain rule through the inverse factors: D(F^-1)(y) = prod D(F_i^-1)
        J = np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()
        for f in self.factors:
            Jf = f.inverse_jacobian(pts)
            pts = f.inverse(pts)
            J = Jf @ J
        return J

    def round_trip_error(self, pts) -> float:
        """max |F^-1(F(x)) - x| with the theta component taken on the circle."""
        back = self.inverse(self.forward(pts))
        err = 0.0
        for p, r in zip(pts, back):
            d = [abs(float(a - b)) for a, b in zip(p, r)]
            d[0] = min(d[0], 1.0 - d[0])
            err = max(err, max(d))
        return err


# ---------------------------------------------------------------------------
# g_{a,b,eps,delta} and g_n
# ---------------------------------------------------------------------------


class BlockShear(ManifoldMap):
    """g_{a,b,eps,delta}: the rescaled g_eps on every r_1 block, g~_b elsewhere.

    With w = eps / (b a), a point whose r lies in [delta, 1 - delta]^(m-1)
    is written as theta = (c + X) / a, r_1 = (l + Y) w; (X, Y) goes
    through g_eps and the block offset (l eps / a, l w) is added back. The
    map is 1/a-periodic in theta.

    Args:
        a: Theta frequency.
        b: Shear width.
        eps: Rational eps of g_eps.
        delta: Rational collar width.
        smoother: The ``ShearSmoother`` g_eps.
        dim: Manifold dimension m.
    """

    def __init__(self, a: int, b: int, eps, delta, smoother: ShearSmoother, dim: int = 2):
        self.a, self.b = int(a), int(b)
        self.eps, self.delta = Q(eps), Q(delta)
        self.dim = dim
        self.smoother = smoother
        ratio = self.a * self.b * self.delta / self.eps
        if ratio.denominator != 1:
            raise ConfigError(f"a b delta / eps = {ratio} is not an integer")
        self.w = self.eps / (self.b * self.a)
        self.l_max = int((1 - self.delta) / self.w) - 1
        self.name = f"g[a={self.a},b={self.b},eps={self.eps}]"

    # local coordinates -------------------------------------------------
    def in_collar(self, r) -> bool:
        d = self.delta
        return not all(d <= c <= 1 - d for c in r)

    def _block(self, r1):
        t = r1 / self.w
        l = floor(t)
        if l > self.l_max:
            l = self.l_max
        return l, t - l

    def to_local(self, p):
        """(c, l, X, Y) with theta = (c + X)/a, r_1 = (l + Y) w."""
        l, Y = self._block(p[1])
        u = self.a * p[0]
        c = floor(u)
        return c, l, u - c, Y

    def from_local(self, c, l, X, Y, rest):
        th = mod1((c + X + l * self.eps) / self.a)
        return (th, (l + Y) * self.w) + tuple(rest)

    def forward(self, pts):
        out = [None] * len(pts)
        loc, idx = [], []
        for i, p in enumerate(pts):
            if self.in_collar(p[1:]):
                out[i] = (mod1(p[0] + self.b * p[1]),) + tuple(p[1:])
            else:
                c, l, X, Y = self.to_local(p)
                loc.append((c, l, (X, Y), p[2:]))
                idx.append(i)
        if loc:
            imgs = self.smoother.map_points([t[2] for t in loc])
            for i, (c, l, _, rest), (X2, Y2) in zip(idx, loc, imgs):
                out[i] = self.from_local(c, l, X2, Y2, rest)
        return out

    def inverse(self, pts):
        out = [None] * len(pts)
        loc, idx = [], []
        e = self.eps
        for i, p in enumerate(pts):
            if self.in_collar(p[1:]):
                out[i] = (mod1(p[0] - self.b * p[1]),) + tuple(p[1:])
            else:
                l, Y2 = self._block(p[1])
                s = self.a * p[0] - l * e - e * Y2
                c = floor(s)
                loc.append((c, l, (e * Y2 + (s - c), Y2), p[2:]))
                idx.append(i)
        if loc:
            pre = self.smoother.map_points([t[2] for t in loc], inverse=True)
            for i, (c, l, _, rest), (X, Y) in zip(idx, loc, pre):
                out[i] = (mod1((c + X) / self.a), (l + Y) * self.w) + tuple(rest)
        return out

    def _lift(self, J2: np.ndarray) -> np.ndarray:
        J = np.eye(self.dim)
        scale = float(self.b / self.eps)
        J[0, 0] = J2[0, 0]
        J[0, 1] = J2[0, 1] * scale
        J[1, 0] = J2[1, 0] / scale
        J[1, 1] = J2[1, 1]
        return J

    def jacobian(self, pts):
        J = np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()
        loc, idx = [], []
        for i, p in enumerate(pts):
            if self.in_collar(p[1:]):
                J[i, 0, 1] = self.b
            else:
                _, _, X, Y = self.to_local(p)
                loc.append((X, Y))
                idx.append(i)
        if loc:
            J2 = self.smoother.jacobian_points(loc)
            for i, M in zip(idx, J2):
                J[i] = self._lift(M)
        return J

    def local_tag(self, p) -> str:
        """``collar``, or the g_eps region tag of the local coordinates."""
        if self.in_collar(p[1:]):
            return "collar"
        _, _, X, Y = self.to_local(p)
        return self.smoother.region_tag((X, Y))

    def enclosure(self, p):
        """Exact box (lo, hi) containing the image of ``p``.

        The theta bounds are not reduced mod 1: hi - lo is at most 1/a.
        Closed-form regions give a degenerate box.
        """
        if self.in_collar(p[1:]):
            y = (p[0] + self.b * p[1],) + tuple(p[1:])
            return y, y
        c, l, X, Y = self.to_local(p)
        tag = self.smoother.region_tag((X, Y))
        if tag != "numeric":
            X2, Y2 = self.smoother.closed_form(tag, (X, Y))
            th = (c + X2 + l * self.eps) / self.a
            y = (th, (l + Y2) * self.w) + tuple(p[2:])
            return y, y
        # g_eps maps Delta(eps) onto its sheared copy
        e = self.eps
        lo = ((c + e + l * e) / self.a, (l + e) * self.w) + tuple(p[2:])
        hi = ((c + 1 + l * e) / self.a, (l + 1 - e) * self.w) + tuple(p[2:])
        return lo, hi


@dataclass(frozen=True)
class SectorDispatch:
    """Per-sector parameters of g_n and phi_n for one stage."""

    stage: StageParams
    b: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "b", self.stage.b)
        if self.b < 1:
            raise ConfigError("floor(n q^sigma) must be at least 1")

    def sector_of(self, theta) -> int:
        return sector_of(theta, self.stage.n, self.stage.q)

    def g_params(self, k: int) -> tuple:
        """(a_k, b, eps, delta) of g_n on sector k."""
        n, q, m = self.stage.n, self.stage.q, self.stage.dim_m
        a = n * q ** (1 + (m - 1) * k * (k + 1) // 2)
        return a, self.b, mpq(1, 8 * n**4), mpq(1, 32 * n**4)

    def phi_params(self, k: int, j: int) -> tuple:
        """(lambda_(k,j), mu_k) of the j-th factor of phi_n on sector k."""
        n, q, m = self.stage.n, self.stage.q, self.stage.dim_m
        lam = n * q ** (1 + (m - 1) * k * (k - 1) // 2 + (j - 2) * k)
        return lam, q**k

    def phi_widths(self) -> tuple:
        n = self.stage.n
        return mpq(1, 60 * n**4), mpq(1, 10 * n**4), mpq(1, 22 * n**4)


class GMap(ManifoldMap):
    """g_n: g_{a_k, b, 1/(8n^4), 1/(32n^4)} on sector k, R_(1/q_n)-equivariant.

    Args:
        stage: Stage parameters (q_n must be divisible by 260 n^4).
        moser: Moser flow settings for g_eps.
    """

    def __init__(self, stage: StageParams, moser: MoserSolveConfig | None = None):
        self.stage = stage
        self.dim = stage.dim_m
        self.dispatch = SectorDispatch(stage)
        n = stage.n
        self.smoother = ShearSmoother(mpq(1, 8 * n**4), moser)
        self.blocks = {}
        for k in range(1, n + 1):
            a, b, e, d = self.dispatch.g_params(k)
            self.blocks[k] = BlockShear(a, b, e, d, self.smoother, self.dim)
        self.b = self.dispatch.b
        self.shear = ThetaShear(self.b, self.dim)
        self.name = f"g_{n}"

    def _group(self, keys):
        groups: dict = {}
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
        return groups

    def forward(self, pts):
        out = [None] * len(pts)
        for k, idx in self._group([self.dispatch.sector_of(p[0]) for p in pts]).items():
            for i, y in zip(idx, self.blocks[k].forward([pts[i] for i in idx])):
                out[i] = y
        return out

    def inverse(self, pts):
        # g~_b^-1 o g_n preserves every 1/a cell, hence every sector
        base = self.shear.inverse(pts)
        out = [None] * len(pts)
        for k, idx in self._group([self.dispatch.sector_of(p[0]) for p in base]).items():
            for i, x in zip(idx, self.blocks[k].inverse([pts[i] for i in idx])):
                out[i] = x
        return out

    def jacobian(self, pts):
        J = np.empty((len(pts), self.dim, self.dim))
        for k, idx in self._group([self.dispatch.sector_of(p[0]) for p in pts]).items():
            J[idx] = self.blocks[k].jacobian([pts[i] for i in idx])
        return J

    def block_for(self, p) -> BlockShear:
        return self.blocks[self.dispatch.sector_of(p[0])]

    def enclosure(self, p):
        return self.block_for(p).enclosure(p)

    def local_tag(self, p) -> str:
        return self.block_for(p).local_tag(p)


# ---------------------------------------------------------------------------
# phi_n
# ---------------------------------------------------------------------------


class PsiCells:
    """psi_{mu,delta,1,j,eps2}: phi^-1_{eps2,1,j} on every 1/mu cell of [delta, 1-delta]^m."""

    def __init__(self, mu: int, delta, rot: RotationSmoother):
        self.mu = int(mu)
        self.delta = Q(delta)
        inv_d = 1 / self.delta
        if inv_d.denominator != 1 or self.mu % int(inv_d) != 0:
            raise ConfigError("1/delta must divide mu")
        self.rot = rot

    def _split(self, z):
        d = self.delta
        if not all(d <= c <= 1 - d for c in z):
            return None
        w = [self.mu * (c - d) for c in z]
        cells = [floor(v) for v in w]
        return cells, tuple(v - c for v, c in zip(w, cells))

    def _apply(self, zs, inverse_rot: bool):
        out = list(zs)
        jobs, idx = [], []
        for i, z in enumerate(zs):
            sp = self._split(z)
            if sp is not None:
                jobs.append(sp)
                idx.append(i)
        if jobs:
            imgs = self.rot.map_points([f for _, f in jobs], inverse=inverse_rot)
            d, mu = self.delta, self.mu
            for i, (cells, _), f2 in zip(idx, jobs, imgs):
                out[i] = tuple(d + (c + v) / mu for c, v in zip(cells, f2))
        return out, idx, jobs

    def forward(self, zs):
        return self._apply(zs, inverse_rot=True)[0]

    def inverse(self, zs):
        return self._apply(zs, inverse_rot=False)[0]

    def forward_with_jacobian(self, zs):
        out, idx, jobs = self._apply(zs, inverse_rot=True)
        m = len(zs[0]) if zs else self.rot.dim
        J = np.broadcast_to(np.eye(m), (len(zs), m, m)).copy()
        if idx:
            pre = [f for _, f in jobs]
            # D(phi^-1)(f) = inverse of D(phi) at phi^-1(f)
            back = self.rot.map_points(pre, inverse=True)
            J[idx] = np.linalg.inv(self.rot.jacobian_points(back))
        return out, J


class PhiTilde(ManifoldMap):
    """C_lambda^-1 o psi_{mu,delta,1,j,eps2} o phi_{eps,1,j} o C_lambda, 1/lambda-periodic."""

    def __init__(self, lam: int, mu: int, j: int, eps, delta, eps2, dim: int, rot_cache: dict | None = None):
        self.lam, self.mu, self.j = int(lam), int(mu), int(j)
        self.dim = dim
        cache = rot_cache if rot_cache is not None else {}
        key1, key2 = (str(Q(eps)), j), (str(Q(eps2)), j)
        if key1 not in cache:
            cache[key1] = RotationSmoother(Q(eps), 1, j, dim)
        if key2 not in cache:
            cache[key2] = RotationSmoother(Q(eps2), 1, j, dim)
        self.rot = cache[key1]
        self.psi = PsiCells(mu, delta, cache[key2])
        self.name = f"phi~[lam={self.lam},mu={self.mu},j={self.j}]"

    def _to_local(self, pts):
        base, loc = [], []
        for p in pts:
            u = self.lam * p[0]
            c = floor(u)
            base.append(c)
            loc.append((u - c,) + tuple(p[1:]))
        return base, loc

    def _from_local(self, base, loc):
        return [(mod1((c + z[0]) / self.lam),) + tuple(z[1:]) for c, z in zip(base, loc)]

    def forward(self, pts):
        base, loc = self._to_local(pts)
        loc = self.psi.forward(self.rot.map_points(loc))
        return self._from_local(base, loc)

    def inverse(self, pts):
        base, loc = self._to_local(pts)
        loc = self.rot.map_points(self.psi.inverse(loc), inverse=True)
        return self._from_local(base, loc)

    def forward_with_jacobian(self, pts):
        base, loc = self._to_local(pts)
        J1 = self.rot.jacobian_points(loc)
        mid = self.rot.map_points(loc)
        out, J2 = self.psi.forward_with_jacobian(mid)
        J = J2 @ J1
        # conjugate by C_lambda = diag(lambda, 1, ..., 1)
        lam = float(self.lam)
        J[:, 0, 1:] /= lam
        J[:, 1:, 0] *= lam
        return self._from_local(base, out), J

    def jacobian(self, pts):
        return self.forward_with_jacobian(pts)[1]


class PhiMap(ManifoldMap):
    """phi_n: phi~^(m) o ... o phi~^(2) on sector k, R_(1/q_n)-equivariant."""

    def __init__(self, stage: StageParams):
        self.stage = stage
        self.dim = m = stage.dim_m
        self.dispatch = SectorDispatch(stage)
        eps, delta, eps2 = self.dispatch.phi_widths()
        cache: dict = {}
        self.sectors = {}
        for k in range(1, stage.n + 1):
            facs = []
            for j in range(m, 1, -1):
                lam, mu = self.dispatch.phi_params(k, j)
                facs.append(PhiTilde(lam, mu, j, eps, delta, eps2, m, cache))
            self.sectors[k] = ComposedDiffeo(facs, name=f"phi_{stage.n}[k={k}]", dim=m)
        self.name = f"phi_{stage.n}"

    def _group(self, pts):
        groups: dict = {}
        for i, p in enumerate(pts):
            groups.setdefault(self.dispatch.sector_of(p[0]), []).append(i)
        return groups

    def _run(self, pts, method):
        out = [None] * len(pts)
        for k, idx in self._group(pts).items():
            res = getattr(self.sectors[k], method)([pts[i] for i in idx])
            for i, y in zip(idx, res):
                out[i] = y
        return out

    def forward(self, pts):
        return self._run(pts, "forward")

    def inverse(self, pts):
        # every factor maps each 1/lambda cell to itself, so sectors are kept
        return self._run(pts, "inverse")

    def forward_with_jacobian(self, pts):
        out = [None] * len(pts)
        J = np.empty((len(pts), self.dim, self.dim))
        for k, idx in self._group(pts).items():
            y, Jk = self.sectors[k].forward_with_jacobian([pts[i] for i in idx])
            for i, v in zip(idx, y):
                out[i] = v
            J[idx] = Jk
        return out, J

    def jacobian(self, pts):
        return self.forward_with_jacobian(pts)[1]

    def inverse_jacobian(self, pts):
        J = np.empty((len(pts), self.dim, self.dim))
        for k, idx in self._group(pts).items():
            J[idx] = self.sectors[k].inverse_jacobian([pts[i] for i in idx])
        return J


# ---------------------------------------------------------------------------
# stage assembly
# ---------------------------------------------------------------------------


def build_g_n(stage: StageParams, moser: MoserSolveConfig | None = None) -> GMap:
    """Construct g_n for ``stage``."""
    return GMap(stage, moser)


def build_phi_n(stage: StageParams) -> PhiMap:
    """Construct phi_n for ``stage``."""
    return PhiMap(stage)


@dataclass
class StageMaps:
    """Maps of one stage: g_n, phi_n, h_n, H_n, f_n and Phi_n."""

    stage: StageParams
    g: GMap
    phi: PhiMap
    h: ComposedDiffeo
    H: ComposedDiffeo
    f: ComposedDiffeo | None = None
    Phi: ComposedDiffeo | None = None


def build_stage_maps(
    stages: Sequence[StageParams],
    moser: MoserSolveConfig | None = None,
    upto: int | None = None,
) -> list:
    """Wire h_n, H_n, f_n and Phi_n lazily for n = 1..upto.

    Args:
        stages: Stage list as returned by ``desk_chain`` (N + 1 entries; the
            last one only provides alpha_(N+1)).
        moser: Moser flow settings shared by every g_n.
        upto: Number of stages to build (default: all but the last).

    Returns:
        List of ``StageMaps`` with index n - 1 for stage n.
    """
    N = len(stages) - 1 if upto is None else upto
    if N < 0 or N > len(stages):
        raise ConfigError("upto out of range")
    out = []
    hs = []
    for i in range(N):
        st = stages[i]
        g = build_g_n(st, moser)
        phi = build_phi_n(st)
        h = ComposedDiffeo([g, phi], name=f"h_{st.n}", dim=st.dim_m)
        hs.append(h)
        H = ComposedDiffeo(list(hs), name=f"H_{st.n}", dim=st.dim_m)
        f = Phi = None
        if i + 1 < len(stages):
            nxt = stages[i + 1]
            R = CircleRotation(nxt.alpha, st.dim_m)
            f = ComposedDiffeo([H, R, H.inv()], name=f"f_{st.n}", dim=st.dim_m)
            if st.m_n is not None:
                Rm = CircleRotation(st.m_n * nxt.alpha, st.dim_m)
                Phi = ComposedDiffeo([phi, Rm, phi.inv()], name=f"Phi_{st.n}", dim=st.dim_m)
        out.append(StageMaps(st, g, phi, h, H, f, Phi))
    return out


def f_zero(stages: Sequence[StageParams]) -> ManifoldMap:
    """f_0 = R_(alpha_1) (H_0 is the identity)."""
    return CircleRotation(stages[0].alpha, stages[0].dim_m)


def equivariance_residual(F: ManifoldMap, pts: list, shift, l: int = 1) -> float:
    """max over pts of the circle/sup distance between F(R x) and R F(x), R = R_(l shift)."""
    R = CircleRotation(l * Q(shift), F.dim)
    a = F.forward(R.forward(pts))
    b = R.forward(F.forward(pts))
    return max_point_distance(a, b)


def point_distance(p, q) -> float:
    """Max-coordinate distance with theta measured on the circle (exact, then floated)."""
    d0 = abs(mod1(p[0] - q[0]))
    d0 = min(d0, 1 - d0)
    ds = [d0] + [abs(x - y) for x, y in zip(p[1:], q[1:])]
    return float(max(ds))


def max_point_distance(A, B) -> float:
    return max((point_distance(p, q) for p, q in zip(A, B)), default=0.0)
