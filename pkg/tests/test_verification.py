from __future__ import annotations

from fractions import Fraction as F

import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given
from hypothesis import strategies as st

from aklab.conjugation import CircleRotation, IdentityMap, ManifoldMap, ThetaShear
from aklab.exceptions import GridTooCoarse, InsufficientSamples
from aklab.partitions import Box
from aklab.stage_params import desk_chain
from aklab.verification import (
    CheckResult,
    check_arithmetic,
    check_measure_preservation,
    check_rotation_block,
    check_rotation_correlation,
    check_rotation_distance,
    correlation_probe,
    estimate_distance,
    exact_verdict,
    mc_verdict,
    nontrivial_pairs,
    rotation_overlap,
    stream,
    unit_box,
)


class SquashR(ManifoldMap):
    """(theta, r) -> (theta, r^2): a diffeomorphism that does not preserve area."""

    def forward(self, pts):
        return [(p[0], p[1] * p[1]) for p in pts]


def _arcs(lo: F, length: F):
    lo = lo % 1
    if lo + length <= 1:
        return [(lo, lo + length)]
    return [(lo, F(1)), (F(0), lo + length - 1)]


def _overlap_oracle(alpha: F, A, B, m: int) -> F:
    """mu(B cap R^-m A) by splitting both theta arcs at 0."""
    (a0, a1), (ar0, ar1) = A
    (b0, b1), (br0, br1) = B
    theta = sum(
        max(F(0), min(x1, y1) - max(x0, y0))
        for x0, x1 in _arcs(a0 - m * alpha, a1 - a0)
        for y0, y1 in _arcs(b0, b1 - b0)
    )
    return theta * max(F(0), min(ar1, br1) - max(ar0, br0))


frac = st.fractions(min_value=0, max_value=1, max_denominator=500)


@st.composite
def boxes(draw):
    t = draw(frac)
    w = draw(st.fractions(min_value=F(1, 100), max_value=1, max_denominator=500))
    r0 = draw(st.fractions(min_value=0, max_value=F(1, 2), max_denominator=500))
    r1 = r0 + draw(st.fractions(min_value=F(1, 100), max_value=F(1, 2), max_denominator=500))
    return ((t, t + w), (r0, r1))


def _box(b):
    return Box(tuple((mpq(lo), mpq(hi)) for lo, hi in b))


@given(frac, boxes(), boxes(), st.integers(1, 7))
def test_rotation_overlap_matches_oracle(alpha, A, B, m):
    got = rotation_overlap(mpq(alpha), _box(A), _box(B), m)
    assert F(int(got.numerator), int(got.denominator)) == _overlap_oracle(alpha, A, B, m)


def test_whole_space_has_zero_correlation():
    M = unit_box(2)
    for r in correlation_probe(CircleRotation("2/9"), [1, 3], M, M, mc_samples=200):
        assert r["estimate"] == 1.0
        assert r["correlation"] == 0.0


def test_probe_rejects_few_samples():
    with pytest.raises(InsufficientSamples):
        correlation_probe(IdentityMap(), [1], unit_box(2), unit_box(2), mc_samples=99)


def test_rotation_correlation_oracle():
    res = check_rotation_correlation(mc_samples=6000, seed=1)
    assert res.passed, res.row()
    assert res.ms is not None


@pytest.mark.parametrize("b", [1, 4, 85])
def test_shear_norm_equals_b(b):
    assert estimate_distance("norm_k", ThetaShear(b), grid=32, k=1).value == b


def test_distance_to_self_is_zero():
    f = ThetaShear(3)
    for kind in ("d0", "dk", "d_infty"):
        assert estimate_distance(kind, f, f, grid=32).value == 0.0


def test_shear_distance_known_value():
    est = estimate_distance("dk", ThetaShear(2), ThetaShear(0), grid=64, k=1)
    assert est.value == pytest.approx(2.0)


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        estimate_distance("d0", IdentityMap(), IdentityMap(), grid=8)


def test_unknown_distance_kind():
    with pytest.raises(ValueError):
        estimate_distance("d7", IdentityMap(), IdentityMap(), grid=16)


def test_rotation_distance_is_exact():
    res = check_rotation_distance(grid=64, trials=10)
    assert res.passed and res.measured == 0


def test_verdict_rules():
    assert exact_verdict(1, 1) == "pass"
    assert exact_verdict(mpq(3, 2), 1) == "fail"
    assert mc_verdict(1.2, 1.0, 0.1) == "pass"
    assert mc_verdict(2.0, 1.0, 0.2) == "inconclusive"
    assert mc_verdict(2.0, 1.0, 0.01) == "fail"


def test_check_result_row():
    r = CheckResult("x", 3, float("inf"), 1.0, "record", ms=12.5)
    row = r.row()
    assert row["measured"] == "inf" and row["pass"] == "record" and row["ms"] is None
    assert r.row(with_time=True)["ms"] == 12.5
    assert r.ok and not r.passed
    assert CheckResult("x", None, 0.0, 1.0, "pass").row()["pass"] is True


def test_streams_are_reproducible_and_distinct():
    a = stream(7, 1).random(4)
    np.testing.assert_array_equal(a, stream(7, 1).random(4))
    assert not np.array_equal(a, stream(7, 2).random(4))
    assert not np.array_equal(a, stream(8, 1).random(4))


def test_measure_preservation_oracle():
    assert check_measure_preservation(ThetaShear(3), 2, boxes=30, mc_samples=4000, seed=2).passed


def test_measure_preservation_detects_distortion():
    assert not check_measure_preservation(SquashR(), 2, boxes=30, mc_samples=4000, seed=2).passed


def test_arithmetic_with_nontrivial_pairs():
    pairs = nontrivial_pairs(seed=0, count=2)
    res = check_arithmetic(desk_chain(3), extra_pairs=pairs)
    assert res.passed, res.row()


def test_rotation_block_check():
    assert check_rotation_block("1/10", samples=500).passed
