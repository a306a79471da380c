from __future__ import annotations

import math
from fractions import Fraction as F

import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given
from hypothesis import strategies as st

from aklab.exceptions import EmptyPartition, IndexOutOfRange, UnsupportedTag
from aklab.partitions import (
    coverage,
    coverage_bound,
    element,
    element_count,
    layout,
    locate,
    predicted_image,
    sample_elements,
    sectors,
)
from aklab.stage_params import desk_chain
from aklab.verification import Phi_map

CHAIN = desk_chain(4)


def _ceil(x: F) -> int:
    return -((-x.numerator) // x.denominator)


def eta_oracle(n, q, m, k, j1, jr):
    """Endpoints of an eta box written out directly with Fractions (m = 2 or 3)."""
    N = (m - 1) * (k + 1) * k // 2
    base = F(k - 1, n * q) + sum(F(j, n * q ** (l + 1)) for l, j in enumerate(j1, start=1))
    mar = F(1, 10 * n**5 * q ** (1 + N))
    theta = (base + mar, base + F(1, n * q ** (1 + N)) - mar)
    rest = []
    for js in jr:
        s = sum(F(j, q**l) for l, j in enumerate(js, start=1))
        rm = F(1, 26 * n**4 * q ** (k + 1))
        rest.append((s + rm, s + F(1, q ** (k + 1)) - rm))
    return [theta] + rest


def zeta_oracle(n, q, m, k, B, j1, j2, jr):
    N = (m - 1) * k * (k + 1) // 2
    base = F(k - 1, n * q) + sum(F(j, n * q ** (l + 1)) for l, j in enumerate(j1, start=1))
    mar = F(1, n**5 * q ** (1 + N))
    theta = (base + mar, base + F(1, n * q ** (1 + N)) - mar)
    s = sum(F(j, q**l) for l, j in enumerate(j2[:-1], start=1))
    den = 8 * n**5 * q ** (1 + N) * B
    s += F(j2[-1], den)
    fm = F(1, 8 * n**9 * q ** (1 + N) * B)
    out = [theta, (s + fm, s + F(j2[-1] + 1, den) - F(j2[-1], den) - fm)]
    for js in jr:
        t = sum(F(j, q**l) for l, j in enumerate(js, start=1))
        rm = F(1, n**4 * q**k)
        out.append((t + rm, t + F(1, q**k) - rm))
    return out


def _as_fractions(box):
    return [(F(int(lo.numerator), int(lo.denominator)), F(int(hi.numerator), int(hi.denominator))) for lo, hi in box.bounds]


@pytest.mark.parametrize("n", [3, 4])
def test_eta_boxes_match_fraction_oracle(n):
    stage = CHAIN[n - 1]
    rng = np.random.default_rng(n)
    q = stage.q
    lo = _ceil(F(q, 10 * n**4))
    for k in sectors("eta", stage):
        N = k * (k + 1) // 2
        j1 = [int(x) for x in rng.integers(lo, q - lo, N)]
        j2 = [int(x) for x in rng.integers(lo, q - lo, k + 1)]
        e = element("eta", stage, k, j1 + j2)
        assert _as_fractions(e.box) == eta_oracle(n, q, 2, k, j1, [j2])


@pytest.mark.parametrize("n", [3, 4])
def test_zeta_boxes_match_fraction_oracle(n):
    stage = CHAIN[n - 1]
    rng = np.random.default_rng(10 + n)
    q, B = stage.q, stage.b
    lo = _ceil(F(q, n**4))
    for k in sectors("zeta", stage):
        N = k * (k + 1) // 2
        j1 = [int(x) for x in rng.integers(lo, q - lo, N)]
        j2 = [int(x) for x in rng.integers(lo, q - lo, N + 1)]
        j2.append(int(rng.integers(8 * n * B, 8 * n**5 * B - 8 * n * B)))
        e = element("zeta", stage, k, j1 + j2)
        assert _as_fractions(e.box) == zeta_oracle(n, q, 2, k, B, j1, j2, [])


def test_eta_boxes_in_three_dimensions():
    stage = desk_chain(3, dim_m=3)[2]
    n, q = stage.n, stage.q
    k = 2
    lay = layout("eta", stage, k)
    idx = [lo + i for i, (_, lo, _) in enumerate(lay)]
    N = 2 * k * (k + 1) // 2
    j1, j2, j3 = idx[:N], idx[N : N + k + 1], idx[N + k + 1 :]
    e = element("eta", stage, k, idx)
    assert _as_fractions(e.box) == eta_oracle(n, q, 3, k, j1, [j2, j3])


def _coverage_oracle(family, stage):
    n, q, m, B = stage.n, stage.q, stage.dim_m, stage.b
    total = F(0)
    if family == "zeta":
        c = _ceil(F(q, n**4))
        D = q - 2 * c
        Df = 8 * n**5 * B - 16 * n * B
        for k in range(1, n + 1):
            N = (m - 1) * k * (k + 1) // 2
            vol = (F(1, n * q ** (1 + N)) - 2 * F(1, n**5 * q ** (1 + N)))
            vol *= F(1, 8 * n**5 * q ** (1 + N) * B) - 2 * F(1, 8 * n**9 * q ** (1 + N) * B)
            vol *= (F(1, q**k) - 2 * F(1, n**4 * q**k)) ** (m - 2)
            total += D ** (N + N + 1 + k * (m - 2)) * Df * vol
    else:
        c = _ceil(F(q, 10 * n**4))
        D = q - 2 * c
        for k in range(2, n):
            N = (m - 1) * k * (k + 1) // 2
            vol = F(1, n * q ** (1 + N)) - 2 * F(1, 10 * n**5 * q ** (1 + N))
            vol *= (F(1, q ** (k + 1)) - 2 * F(1, 26 * n**4 * q ** (k + 1))) ** (m - 1)
            total += D ** (N + (m - 1) * (k + 1)) * vol
    return total * q


@pytest.mark.parametrize("family", ["eta", "zeta"])
@pytest.mark.parametrize("n", [3, 4])
def test_coverage_closed_form(family, n):
    stage = CHAIN[n - 1]
    got = coverage(family, stage)
    assert F(int(got.numerator), int(got.denominator)) == _coverage_oracle(family, stage)


@pytest.mark.parametrize("n", [3, 4])
def test_zeta_coverage_meets_lower_bound(n):
    stage = CHAIN[n - 1]
    assert coverage("zeta", stage) >= coverage_bound(stage)
    assert coverage("zeta", stage) <= 1


def test_eta_empty_for_small_n():
    stage = CHAIN[1]
    assert sectors("eta", stage) == []
    with pytest.raises(EmptyPartition):
        sample_elements("eta", stage, 1, seed=0)


@pytest.mark.parametrize("family", ["eta", "zeta"])
def test_locate_round_trip(family):
    stage = CHAIN[2]
    for e in sample_elements(family, stage, 20, seed=3):
        u = np.random.default_rng(1).random((5, stage.dim_m))
        for p in e.box.uniform(u):
            found = locate(family, stage, p)
            assert found is not None
            assert (found.k, found.indices, found.l) == (e.k, e.indices, e.l)


def test_locate_misses_margins():
    stage = CHAIN[2]
    e = sample_elements("eta", stage, 1, seed=4)[0]
    (lo, hi), (r_lo, r_hi) = e.box.bounds
    outside = (lo - mpq(1, 10**80), (r_lo + r_hi) / 2)
    assert locate("eta", stage, outside) is None
    assert locate("eta", stage, (mpq(0), mpq(1, 2))) is None


@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_elements_are_disjoint(s1, s2):
    stage = CHAIN[2]
    a = sample_elements("zeta", stage, 1, seed=s1)[0]
    b = sample_elements("zeta", stage, 1, seed=s2)[0]
    same = (a.k, a.indices, a.l) == (b.k, b.indices, b.l)
    assert same or a.box.disjoint(b.box)


def test_neighbouring_elements_are_disjoint():
    stage = CHAIN[2]
    lay = layout("eta", stage, 2)
    idx = [lo for _, lo, _ in lay]
    a = element("eta", stage, 2, idx)
    for pos in range(len(idx)):
        nb = list(idx)
        nb[pos] += 1
        assert a.box.disjoint(element("eta", stage, 2, nb).box)


def test_diameter_within_cube():
    stage = CHAIN[2]
    for fam in ("eta", "zeta"):
        for e in sample_elements(fam, stage, 10, seed=8):
            assert e.box.diameter() <= math.sqrt(2) / stage.q


def test_element_count_is_product_of_ranges():
    stage = CHAIN[2]
    for k in sectors("eta", stage):
        expect = math.prod(hi - lo + 1 for _, lo, hi in layout("eta", stage, k))
        assert element_count("eta", stage, k) == expect


def test_index_out_of_range():
    stage = CHAIN[2]
    lay = layout("eta", stage, 2)
    idx = [lo for _, lo, _ in lay]
    with pytest.raises(IndexOutOfRange):
        element("eta", stage, 1, idx)
    bad = list(idx)
    bad[0] = lay[0][1] - 1
    with pytest.raises(IndexOutOfRange):
        element("eta", stage, 2, bad)
    with pytest.raises(IndexOutOfRange):
        element("eta", stage, 2, idx[:-1])
    with pytest.raises(IndexOutOfRange):
        element("eta", stage, 2, idx, l=stage.q)


def test_unsupported_tags():
    stage = CHAIN[2]
    e = sample_elements("eta", stage, 1, seed=0)[0]
    with pytest.raises(UnsupportedTag):
        predicted_image(e, "nope")
    with pytest.raises(UnsupportedTag):
        predicted_image(e, "phi_n")
    z = sample_elements("zeta", stage, 1, seed=0)[0]
    with pytest.raises(UnsupportedTag):
        predicted_image(z, "Phi_n", CHAIN[3])


def test_predicted_images_match_maps(maps3, chain3):
    sm = maps3[2]
    stage = chain3[2]
    u = np.random.default_rng(2).random((6, 2))
    for e in sample_elements("eta", stage, 4, seed=11):
        pts = e.box.uniform(u)
        img = predicted_image(e, "phi_inv")
        assert all(img.contains(p) for p in sm.phi.inverse(pts))
        img = predicted_image(e, "Phi_n", chain3[3])
        assert all(img.contains(p) for p in Phi_map(sm, chain3[3]).forward(pts))
    for e in sample_elements("zeta", stage, 4, seed=12):
        img = predicted_image(e, "phi_n")
        assert all(img.contains(p) for p in sm.phi.forward(e.box.uniform(u)))
