"""Partial partitions eta_n and zeta_n with exact rational boxes.

Index tuples are stored flat. For ``eta`` the order is the theta digits
``j_1^(1..N)`` with N = (m-1)k(k+1)/2, then ``j_i^(1..k+1)`` for
i = 2..m. For ``zeta`` it is ``j_1^(1..N)``, then ``j_2^(1..N+2)`` (the
last one is the fine r_1 digit), then ``j_i^(1..k)`` for i = 3..m.

Elements are generated lazily: counts are astronomically large even for
small q_n, so every aggregate (coverage, counts) is computed in closed
form and everything else works on uniform samples.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from gmpy2 import mpq

from ._rational import ceil, floor, mod1, to_str
from .exceptions import EmptyPartition, IndexOutOfRange, UnsupportedTag
from .stage_params import StageParams

FAMILIES = ("eta", "zeta")
TAGS = ("phi_inv", "Phi_n", "g_n∘Phi_n", "phi_n")


def _tri(m: int, k: int) -> int:
    """(m-1) k (k+1) / 2."""
    return (m - 1) * k * (k + 1) // 2


def _digits(js: Sequence[int], q: int, start: int = 1):
    """sum_l js[l-1] / q^(l + start - 1)."""
    s = mpq(0)
    for l, j in enumerate(js, start=start):
        s += mpq(j, q**l)
    return s


def sectors(family: str, stage: StageParams) -> list:
    """Admissible sector indices k."""
    if family == "eta":
        return list(range(2, stage.n)) if _range_nonempty(family, stage) else []
    if family == "zeta":
        return list(range(1, stage.n + 1)) if _range_nonempty(family, stage) else []
    raise UnsupportedTag(f"unknown family {family!r}")


def digit_bounds(family: str, stage: StageParams) -> tuple:
    """Inclusive range (lo, hi) of an ordinary digit."""
    n, q = stage.n, stage.q
    c = ceil(mpq(q, (10 if family == "eta" else 1) * n**4))
    return c, q - c - 1


def fine_bounds(stage: StageParams) -> tuple:
    """Inclusive range of the fine r_1 digit of zeta."""
    n, B = stage.n, stage.b
    return 8 * n * B, 8 * n**5 * B - 8 * n * B - 1


def _range_nonempty(family: str, stage: StageParams) -> bool:
    lo, hi = digit_bounds(family, stage)
    if lo > hi:
        return False
    if family == "zeta":
        a, b = fine_bounds(stage)
        return a <= b
    return True


def layout(family: str, stage: StageParams, k: int) -> list:
    """Per-position (label, lo, hi) of the flat index tuple."""
    m = stage.dim_m
    lo, hi = digit_bounds(family, stage)
    N = _tri(m, k)
    out = [(f"j1_{l}", lo, hi) for l in range(1, N + 1)]
    if family == "eta":
        for i in range(2, m + 1):
            out += [(f"j{i}_{l}", lo, hi) for l in range(1, k + 2)]
    else:
        out += [(f"j2_{l}", lo, hi) for l in range(1, N + 2)]
        a, b = fine_bounds(stage)
        out.append((f"j2_{N + 2}", a, b))
        for i in range(3, m + 1):
            out += [(f"j{i}_{l}", lo, hi) for l in range(1, k + 1)]
    return out


def _split(family: str, m: int, k: int, idx: Sequence[int]) -> dict:
    """Named digit groups of a flat index tuple."""
    N = _tri(m, k)
    idx = list(idx)
    g = {"j1": idx[:N]}
    pos = N
    if family == "eta":
        for i in range(2, m + 1):
            g[f"j{i}"] = idx[pos : pos + k + 1]
            pos += k + 1
    else:
        g["j2"] = idx[pos : pos + N + 2]
        pos += N + 2
        for i in range(3, m + 1):
            g[f"j{i}"] = idx[pos : pos + k]
            pos += k
    return g


# ---------------------------------------------------------------------------
# boxes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Product of closed rational intervals; theta is taken mod 1.

    ``bounds[0]`` holds the theta interval with ``lo`` in [0, 1) and
    ``hi = lo + width``.
    """

    bounds: tuple

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def widths(self) -> tuple:
        return tuple(hi - lo for lo, hi in self.bounds)

    def volume(self):
        v = mpq(1)
        for w in self.widths:
            v *= w
        return v

    def contains(self, p) -> bool:
        lo, hi = self.bounds[0]
        if mod1(p[0] - lo) > hi - lo:
            return False
        return all(a <= x <= b for x, (a, b) in zip(p[1:], self.bounds[1:]))

    def corners(self) -> list:
        out = [()]
        for lo, hi in self.bounds:
            out = [c + (v,) for c in out for v in (lo, hi)]
        return [(mod1(c[0]),) + c[1:] for c in out]

    def uniform(self, u: np.ndarray) -> list:
        """Map unit-cube samples ``u`` (float, shape (N, m)) into the box exactly."""
        ws = self.widths
        pts = []
        for row in np.atleast_2d(u):
            pts.append(
                tuple(
                    (mod1(lo + w * mpq(float(x))) if c == 0 else lo + w * mpq(float(x)))
                    for c, ((lo, _), w, x) in enumerate(zip(self.bounds, ws, row))
                )
            )
        return pts

    def local(self, p) -> np.ndarray:
        """Box-normalized coordinates of ``p`` (0 and 1 at the faces)."""
        out = []
        for c, ((lo, hi), x) in enumerate(zip(self.bounds, p)):
            d = x - lo
            if c == 0:
                d = mod1(d + mpq(1, 2) * (hi - lo)) - mpq(1, 2) * (hi - lo)
            out.append(float(d / (hi - lo)))
        return np.array(out)

    def diameter(self) -> float:
        return math.sqrt(sum(float(w) ** 2 for w in self.widths))

    def disjoint(self, other: "Box") -> bool:
        (a0, a1), (b0, b1) = self.bounds[0], other.bounds[0]
        # circle overlap test for theta
        d = mod1(b0 - a0)
        theta_apart = d > a1 - a0 and mod1(a0 - b0) > b1 - b0
        if theta_apart:
            return True
        return any(h1 < l2 or h2 < l1 for (l1, h1), (l2, h2) in zip(self.bounds[1:], other.bounds[1:]))

    def shifted(self, dtheta) -> "Box":
        lo, hi = self.bounds[0]
        new_lo = mod1(lo + dtheta)
        return Box(((new_lo, new_lo + hi - lo),) + tuple(self.bounds[1:]))


def _make_box(theta_lo, theta_hi, rest) -> Box:
    lo = mod1(theta_lo)
    return Box(((lo, lo + theta_hi - theta_lo),) + tuple(rest))


@dataclass(frozen=True)
class PartitionElement:
    """One element of eta_n or zeta_n (translated by l / q_n).

    Attributes:
        family: ``"eta"`` or ``"zeta"``.
        stage: Stage parameters.
        k: Sector index.
        indices: Flat index tuple.
        l: Translate in 0..q_n - 1.
        box: Exact box.
    """

    family: str
    stage: StageParams
    k: int
    indices: tuple
    l: int
    box: Box

    @property
    def volume(self):
        return self.box.volume()

    def contains(self, p) -> bool:
        return self.box.contains(p)

    def corners(self) -> list:
        return self.box.corners()

    def to_row(self) -> list:
        row = [self.family, self.stage.n, self.k, self.l, " ".join(map(str, self.indices))]
        for lo, hi in self.box.bounds:
            row += [to_str(lo), to_str(hi)]
        return row


def element(family: str, stage: StageParams, k: int, indices: Sequence[int], l: int = 0) -> PartitionElement:
    """Build the element with the given sector and digits.

    Raises:
        IndexOutOfRange: If k, l or any digit is not admissible.
    """
    if k not in sectors(family, stage):
        raise IndexOutOfRange(f"sector {k} not admissible for {family} at n={stage.n}")
    lay = layout(family, stage, k)
    idx = tuple(int(j) for j in indices)
    if len(idx) != len(lay):
        raise IndexOutOfRange(f"expected {len(lay)} indices, got {len(idx)}")
    for (name, lo, hi), j in zip(lay, idx):
        if not lo <= j <= hi:
            raise IndexOutOfRange(f"{name} = {j} outside [{lo}, {hi}]")
    if not 0 <= int(l) < stage.q:
        raise IndexOutOfRange("translate l must lie in 0..q_n-1")
    box = (_eta_box if family == "eta" else _zeta_box)(stage, k, idx)
    return PartitionElement(family, stage, k, idx, int(l), box.shifted(mpq(int(l), stage.q)))


def _eta_box(stage: StageParams, k: int, idx) -> Box:
    n, q, m = stage.n, stage.q, stage.dim_m
    N = _tri(m, k)
    g = _split("eta", m, k, idx)
    base = mpq(k - 1, n * q) + _digits(g["j1"], q) / (n * q)
    cell = mpq(1, n * q ** (1 + N))
    mar = mpq(1, 10 * n**5 * q ** (1 + N))
    rest = []
    for i in range(2, m + 1):
        s = _digits(g[f"j{i}"], q)
        w = mpq(1, q ** (k + 1))
        rm = mpq(1, 26 * n**4 * q ** (k + 1))
        rest.append((s + rm, s + w - rm))
    return _make_box(base + mar, base + cell - mar, rest)


def _zeta_box(stage: StageParams, k: int, idx) -> Box:
    n, q, m, B = stage.n, stage.q, stage.dim_m, stage.b
    N = _tri(m, k)
    g = _split("zeta", m, k, idx)
    base = mpq(k - 1, n * q) + _digits(g["j1"], q) / (n * q)
    cell = mpq(1, n * q ** (1 + N))
    mar = mpq(1, n**5 * q ** (1 + N))
    j2 = g["j2"]
    fine = mpq(1, 8 * n**5 * q ** (1 + N) * B)
    s1 = _digits(j2[:-1], q) + j2[-1] * fine
    fm = mpq(1, 8 * n**9 * q ** (1 + N) * B)
    rest = [(s1 + fm, s1 + fine - fm)]
    for i in range(3, m + 1):
        s = _digits(g[f"j{i}"], q)
        rm = mpq(1, n**4 * q**k)
        rest.append((s + rm, s + mpq(1, q**k) - rm))
    return _make_box(base + mar, base + cell - mar, rest)


# ---------------------------------------------------------------------------
# counts, coverage, sampling
# ---------------------------------------------------------------------------


def element_count(family: str, stage: StageParams, k: int | None = None) -> int:
    """Number of elements in one fundamental sector (all k, or sector k only)."""
    ks = sectors(family, stage) if k is None else [k]
    total = 0
    for kk in ks:
        c = 1
        for _, lo, hi in layout(family, stage, kk):
            c *= hi - lo + 1
        total += c
    return total


def element_volume(family: str, stage: StageParams, k: int):
    """Common volume of every element in sector k."""
    lay = layout(family, stage, k)
    idx = [lo for _, lo, _ in lay]
    return element(family, stage, k, idx).volume


def coverage(family: str, stage: StageParams):
    """Exact measure covered by the family on the whole of M."""
    total = mpq(0)
    for k in sectors(family, stage):
        total += element_count(family, stage, k) * element_volume(family, stage, k)
    return total * stage.q


def coverage_bound(stage: StageParams):
    """1 - 4m/n^2."""
    return 1 - mpq(4 * stage.dim_m, stage.n**2)


def sample_elements(
    family: str,
    stage: StageParams,
    count: int,
    seed: int,
    *,
    sector: int | None = None,
    translate: bool = True,
) -> list:
    """Draw ``count`` elements with i.i.d. uniform sector, digits and translate.

    A counter-based Philox stream keyed by ``seed`` makes the draw
    reproducible and splittable.

    Raises:
        EmptyPartition: If the family has no element at this stage.
    """
    if count < 1:
        raise ValueError("count must be positive")
    ks = sectors(family, stage) if sector is None else [sector]
    if not ks or (sector is not None and sector not in sectors(family, stage)):
        raise EmptyPartition(f"{family}_{stage.n} is empty")
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = []
    for _ in range(count):
        k = ks[int(rng.integers(len(ks)))]
        idx = [int(rng.integers(lo, hi + 1)) for _, lo, hi in layout(family, stage, k)]
        l = int(rng.integers(stage.q)) if translate else 0
        out.append(element(family, stage, k, idx, l))
    return out


def export_rows(elements: Iterable[PartitionElement]) -> str:
    """CSV text with family, n, k, l, indices and exact endpoints."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "n", "k", "l", "indices", "bounds"])
    for e in elements:
        r = e.to_row()
        w.writerow(r[:5] + [";".join(r[5:])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# exact membership
# ---------------------------------------------------------------------------


def _base_q(x, q: int, count: int):
    """First ``count`` base-q digits of x in [0, 1) and the scaled remainder."""
    t = x * q**count
    whole = floor(t)
    rem = t - whole
    digits = []
    for _ in range(count):
        whole, d = divmod(whole, q)
        digits.append(d)
    return digits[::-1], rem


def locate(family: str, stage: StageParams, p) -> PartitionElement | None:
    """The element of the family containing ``p``, or None.

    Works by exact digit decomposition of the coordinates, so it is a
    membership test over the whole (astronomically large) family.
    """
    if not sectors(family, stage):
        return None
    n, q, m = stage.n, stage.q, stage.dim_m
    th = mod1(p[0])
    l = floor(th * q)
    u = (th - mpq(l, q)) * n * q
    k = floor(u) + 1
    if k not in sectors(family, stage) or k > n:
        return None
    N = _tri(m, k)
    d1, _ = _base_q(u - (k - 1), q, N)
    idx = list(d1)
    if family == "eta":
        for i in range(2, m + 1):
            d, _ = _base_q(p[i - 1], q, k + 1)
            idx += d
    else:
        d, rem = _base_q(p[1], q, N + 1)
        B = stage.b
        idx += d + [floor(rem * 8 * n**5 * B)]
        for i in range(3, m + 1):
            d, _ = _base_q(p[i - 1], q, k)
            idx += d
    try:
        e = element(family, stage, k, idx, l)
    except IndexOutOfRange:
        return None
    return e if e.contains(p) else None


def diameter_bound(family: str, stage: StageParams):
    """sqrt(m)/q_n as a float (elements lie in a 1/q_n cube)."""
    return math.sqrt(stage.dim_m) / stage.q


# ---------------------------------------------------------------------------
# predicted images
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictedImage:
    """Exact image box of an element under a tagged map.

    For ``g_n∘Phi_n`` the image is g~_b(box), recorded through ``shear``.
    """

    source: PartitionElement
    tag: str
    box: Box
    shear: int = 0

    def contains(self, p) -> bool:
        if self.shear:
            p = (mod1(p[0] - self.shear * p[1]),) + tuple(p[1:])
        return self.box.contains(p)

    @property
    def theta_width(self):
        lo, hi = self.box.bounds[0]
        return hi - lo


def theta_shift(stage: StageParams, nxt: StageParams):
    """m_n alpha_(n+1) - 1/(n q_n) - a_n, an exact multiple of 1/q_n."""
    if stage.m_n is None or stage.a_n is None:
        raise ValueError("stage needs m_n and a_n")
    s = stage.m_n * nxt.alpha - mpq(1, stage.n * stage.q) - stage.a_n
    if (s * stage.q).denominator != 1:
        raise ValueError("m_n alpha_(n+1) - 1/(n q_n) - a_n is not a multiple of 1/q_n")
    return mod1(s)


def predicted_image(e: PartitionElement, tag: str, nxt: StageParams | None = None) -> PredictedImage:
    """Image box of ``e`` under phi_n^-1, Phi_n, g_n o Phi_n (eta) or phi_n (zeta).

    Raises:
        UnsupportedTag: For unknown tags or a family that does not fit the tag.
    """
    if tag not in TAGS:
        raise UnsupportedTag(tag)
    if tag == "phi_n":
        if e.family != "zeta":
            raise UnsupportedTag("phi_n images are only known for zeta elements")
        return PredictedImage(e, tag, _phi_zeta_box(e))
    if e.family != "eta":
        raise UnsupportedTag(f"{tag} images are only known for eta elements")
    if tag == "phi_inv":
        return PredictedImage(e, tag, _phi_inv_eta_box(e))
    if nxt is None:
        raise ValueError("Phi_n images need the next stage")
    box = _Phi_eta_box(e, nxt)
    if tag == "Phi_n":
        return PredictedImage(e, tag, box)
    return PredictedImage(e, tag, box, shear=e.stage.b)


def _eta_groups(e: PartitionElement):
    st = e.stage
    return st.n, st.q, st.dim_m, e.k, _split("eta", st.dim_m, e.k, e.indices)


def _phi_inv_eta_box(e: PartitionElement) -> Box:
    n, q, m, k, g = _eta_groups(e)
    P = (m - 1) * (k - 1) * k // 2
    N = _tri(m, k)
    j1 = g["j1"]
    th = mpq(k - 1, n * q) + _digits(j1[:P], q) / (n * q)
    for i in range(2, m + 1):
        th += _digits(g[f"j{i}"][:k], q, start=P + (i - 2) * k + 1) / (n * q)
    cell = mpq(1, n * q ** (N + 1))
    mar = mpq(1, 10 * n**5 * q ** (N + 1))
    rest = []
    rm = mpq(1, 26 * n**4 * q ** (k + 1))
    for i in range(2, m + 1):
        blk = j1[P + (i - 2) * k : P + (i - 1) * k]
        s = 1 - _digits(blk, q) - mpq(1, q**k) + mpq(g[f"j{i}"][k], q ** (k + 1))
        rest.append((s + rm, s + mpq(1, q ** (k + 1)) - rm))
    box = _make_box(th + mar, th + cell - mar, rest)
    return box.shifted(mpq(e.l, q))


def _Phi_eta_box(e: PartitionElement, nxt: StageParams) -> Box:
    st = e.stage
    n, q, m, k, g = _eta_groups(e)
    P = (m - 1) * (k - 1) * k // 2
    N = _tri(m, k)
    E = N + (m - 1) * (k + 1) + 1
    j1 = g["j1"]
    th = mpq(k, n * q) + _digits(j1[:P], q) / (n * q)
    for i in range(2, m + 1):
        th += _digits(g[f"j{i}"][:k], q, start=P + (i - 2) * k + 1) / (n * q)
    for i in range(2, m + 1):
        blk = j1[P + (i - 2) * k : P + (i - 1) * k]
        off = N + (i - 2) * (k + 1)
        th += _digits(blk, q, start=off + 1) / (n * q)
        th += mpq(1, n * q ** (off + k + 1))
        th -= mpq(g[f"j{i}"][k] + 1, n * q ** (off + k + 2))
    mar = mpq(1, 26 * n**5 * q**E)
    lo = th + mar
    hi = th + mpq(1, n * q**E) - mar
    shift_r = n * q ** (N + 1) * st.a_n
    rest = [(mpq(1, 10 * n**4) + shift_r, 1 - mpq(1, 10 * n**4) + shift_r)]
    rest += [(mpq(1, 26 * n**4), 1 - mpq(1, 26 * n**4))] * (m - 2)
    box = _make_box(lo, hi, rest)
    return box.shifted(mpq(e.l, q) + theta_shift(st, nxt))


def _phi_zeta_box(e: PartitionElement) -> Box:
    st = e.stage
    n, q, m, k, B = st.n, st.q, st.dim_m, e.k, st.b
    g = _split("zeta", m, k, e.indices)
    P = (m - 1) * (k - 1) * k // 2
    N = _tri(m, k)
    j1, j2 = g["j1"], g["j2"]
    th = mpq(k - 1, n * q) + _digits(j1[:P], q) / (n * q) + mpq(1, n * q ** (P + 1))
    th -= _digits(j2[:k], q, start=P + 1) / (n * q)
    for i in range(3, m + 1):
        th -= _digits(g[f"j{i}"], q, start=P + (i - 2) * k + 1) / (n * q)
    th -= mpq(1, n * q ** (N + 1))
    mar = mpq(1, n**5 * q ** (N + 1))
    lo = th + mar
    hi = th + mpq(1, n * q ** (N + 1)) - mar
    fine = mpq(1, 8 * n**5 * q ** (1 + N) * B)
    fm = mpq(1, 8 * n**9 * q ** (1 + N) * B)
    s1 = _digits(j1[P : P + k], q) + _digits(j2[k : N + 1], q, start=k + 1) + j2[-1] * fine
    rest = [(s1 + fm, s1 + fine - fm)]
    for i in range(3, m + 1):
        s = _digits(j1[P + (i - 2) * k : P + (i - 1) * k], q)
        rm = mpq(1, n**4 * q**k)
        rest.append((s + rm, s + mpq(1, q**k) - rm))
    return _make_box(lo, hi, rest).shifted(mpq(e.l, q))
