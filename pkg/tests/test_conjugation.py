from __future__ import annotations

import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given
from hypothesis import strategies as st

from aklab.blocks.shear import ShearSmoother
from aklab.conjugation import (
    BlockShear,
    CircleRotation,
    ComposedDiffeo,
    IdentityMap,
    SectorDispatch,
    ThetaShear,
    as_point,
    equivariance_residual,
    point_distance,
    sector_of,
)
from aklab.exceptions import ConfigError

unit = st.fractions(min_value=0, max_value=1, max_denominator=10**6)


def _pt(t, r):
    return (mpq(t.numerator, t.denominator), mpq(r.numerator, r.denominator))


def test_rotation_and_shear_closed_forms():
    R = CircleRotation(mpq(3, 4))
    assert R.forward([(mpq(1, 2), mpq(1, 3))]) == [(mpq(1, 4), mpq(1, 3))]
    G = ThetaShear(4)
    assert G.forward([(mpq(0), mpq(1, 3))]) == [(mpq(1, 3), mpq(1, 3))]
    J = G.jacobian([(mpq(0), mpq(1, 3))])[0]
    np.testing.assert_array_equal(J, [[1, 4], [0, 1]])


def test_composition_order():
    R = CircleRotation(mpq(1, 10))
    G = ThetaShear(2)
    F = ComposedDiffeo([R, G])
    p = (mpq(0), mpq(1, 4))
    assert F.forward([p]) == R.forward(G.forward([p]))
    assert F.inverse(F.forward([p])) == [p]


def test_identity_map():
    p = [(mpq(1, 3), mpq(2, 3))]
    assert IdentityMap(2).forward(p) == p


def test_block_shear_integrality():
    g = ShearSmoother("1/8")
    with pytest.raises(ConfigError):
        BlockShear(3, 4, mpq(1, 8), mpq(1, 5), g)


def test_sector_boundaries_go_lower():
    n, q = 3, 4160
    assert sector_of(mpq(1, n * q), n, q) == 1
    assert sector_of(mpq(1, n * q) + mpq(1, 10**9), n, q) == 2
    assert sector_of(mpq(0), n, q) == n


def test_dispatch_parameters(chain3):
    d = SectorDispatch(chain3[2])
    n, q, m = 3, chain3[2].q, 2
    a, b, eps, delta = d.g_params(2)
    assert a == n * q ** (1 + (m - 1) * 3) and b == chain3[2].b
    assert eps == mpq(1, 8 * n**4) and delta == mpq(1, 32 * n**4)


@given(unit, unit)
def test_h1_equivariance(maps3, t, r):
    h = maps3[0].h
    q = maps3[0].stage.q
    assert equivariance_residual(h, [_pt(t, r)], mpq(1, q)) <= 1e-12


@given(unit, unit)
def test_h2_round_trip(maps3, t, r):
    h = maps3[1].h
    p = _pt(t, r)
    assert point_distance(h.inverse(h.forward([p]))[0], as_point(p)) <= 1e-9


def _fd_columns(F, p, steps):
    cols = []
    for c, h in enumerate(steps):
        up = tuple(x + (h if i == c else 0) for i, x in enumerate(p))
        dn = tuple(x - (h if i == c else 0) for i, x in enumerate(p))
        fu, fd = F.forward([up, dn])
        dth = (fu[0] - fd[0] + mpq(1, 2)) % 1 - mpq(1, 2)
        cols.append(np.array([float(dth), float(fu[1] - fd[1])]) / float(2 * h))
    return np.stack(cols, axis=1)


def test_g_jacobian_matches_finite_differences(maps3):
    """Steps are scaled to the shear block that contains the point."""
    sm = maps3[0]
    rng = np.random.default_rng(5)
    pts = [as_point(x) for x in rng.random((20, 2))]
    for p, Jp in zip(pts, sm.g.jacobian(pts)):
        blk = sm.g.block_for(p)
        fd = _fd_columns(sm.g, p, (mpq(1, 10**6) / blk.a, blk.w / 10**6))
        np.testing.assert_allclose(fd, Jp, rtol=1e-4, atol=1e-6 * np.max(np.abs(Jp)))


def test_phi_jacobian_matches_finite_differences(maps3):
    """Steps are scaled to the 1/(lambda mu) x 1/mu cells of phi~."""
    sm = maps3[0]
    d = SectorDispatch(sm.stage)
    rng = np.random.default_rng(7)
    pts = [as_point(x) for x in rng.random((20, 2))]
    for p, Jp in zip(pts, sm.phi.jacobian(pts)):
        lam, mu = d.phi_params(d.sector_of(p[0]), 2)
        fd = _fd_columns(sm.phi, p, (mpq(1, 10**6 * lam * mu), mpq(1, 10**6 * mu)))
        np.testing.assert_allclose(fd, Jp, rtol=1e-4, atol=1e-6 * np.max(np.abs(Jp)))


def test_f_is_conjugate_rotation(maps3):
    sm = maps3[0]
    rng = np.random.default_rng(6)
    pts = [as_point(x) for x in rng.random((30, 2))]
    R = CircleRotation(maps3[1].stage.alpha)
    lhs = sm.f.forward(sm.H.forward(pts))
    rhs = sm.H.forward(R.forward(pts))
    assert max(point_distance(a, b) for a, b in zip(lhs, rhs)) <= 1e-9
