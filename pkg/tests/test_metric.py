from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aklab.conjugation import CircleRotation, ComposedDiffeo, IdentityMap, ThetaShear, as_point
from aklab.metric import (
    MetricSample,
    export_csv,
    invariance_residual,
    invariance_residuals,
    pullback_metric,
    pullback_metrics,
    stabilization_check,
)

PTS = [as_point(x) for x in np.random.default_rng(0).random((8, 2))]
vec = arrays(np.float64, 2, elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_identity_gives_flat_metric():
    for s in pullback_metrics(IdentityMap(), PTS):
        np.testing.assert_array_equal(s.gram, np.eye(2))


@pytest.mark.parametrize("b", [1, 4, 85])
def test_shear_pullback_closed_form(b):
    s = pullback_metric(ThetaShear(b), PTS[0])
    np.testing.assert_allclose(s.gram, [[1, -b], [-b, 1 + b * b]])
    assert s.is_valid()


def test_conjugated_rotation_preserves_metric():
    H = ThetaShear(16)
    f = ComposedDiffeo([H, CircleRotation("3/7"), H.inv()])
    V = np.random.default_rng(1).normal(size=(len(PTS), 2))
    W = np.random.default_rng(2).normal(size=(len(PTS), 2))
    for norm in ("omega", "euclid"):
        assert np.max(invariance_residuals(f, H, PTS, V, W, norm)) < 1e-12


def test_non_invariant_map_is_detected():
    f = ThetaShear(3)
    assert invariance_residual(f, IdentityMap(), PTS[0], [0, 1], [0, 1]) > 1


@given(vec, vec, st.floats(0.1, 100))
def test_residual_is_scale_free(v, w, c):
    f = ThetaShear(2)
    H = ThetaShear(5)
    r1 = invariance_residual(f, H, PTS[1], v, w)
    r2 = invariance_residual(f, H, PTS[1], c * v, w)
    assert r2 == pytest.approx(r1, rel=1e-9, abs=1e-12)


def test_unknown_norm_rejected():
    with pytest.raises(ValueError):
        invariance_residuals(IdentityMap(), IdentityMap(), PTS[:1], np.ones((1, 2)), np.ones((1, 2)), "l1")


def test_metric_sample_validity():
    assert not MetricSample(PTS[0], np.array([[1.0, 2.0], [0.0, 1.0]]), 1).is_valid()
    assert not MetricSample(PTS[0], np.diag([1.0, -1.0]), 1).is_valid()


def test_stage_one_metric_is_spd(maps3):
    for s in pullback_metrics(maps3[0].H, PTS, n=1):
        assert s.is_valid(tol=1e-9)


def test_stabilization_on_zeta(maps3, chain3):
    pts = [as_point(x) for x in np.random.default_rng(4).random((30, 2))]
    rep = stabilization_check(maps3[0].H, maps3[1].H, chain3[1], pts)
    assert rep.samples == 30
    assert rep.hits > 0
    scale = max(1.0, max(np.max(np.abs(s.gram)) for s in pullback_metrics(maps3[0].H, pts)))
    assert rep.max_diff <= 1e-9 * scale


def test_csv_export():
    text = export_csv(pullback_metrics(ThetaShear(2), PTS[:2], n=1, tag="zeta"))
    lines = text.splitlines()
    assert lines[0] == "x0,x1,g00,g01,g11,n,tag"
    assert len(lines) == 3 and lines[1].endswith(",1,zeta")
    assert export_csv([]) == ""
