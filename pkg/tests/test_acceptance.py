"""Acceptance suite: one test per criterion, each reporting pass/fail and runtime.

Run with ``pytest -s tests/test_acceptance.py`` to see lines as they finish;
a summary block is printed at the end either way.
"""

from __future__ import annotations

import subprocess
import sys
import time

import pytest

from aklab import verification as V
from aklab.conjugation import build_stage_maps
from aklab.stage_params import desk_chain


@pytest.fixture(scope="module")
def chain5():
    return desk_chain(5)


@pytest.fixture(scope="module")
def maps5(chain5):
    return build_stage_maps(chain5)


def _finish(report_criterion, number, results, t0, limit, note=""):
    secs = time.perf_counter() - t0
    ok = all(r.passed for r in results) and secs <= limit
    detail = "; ".join(f"{r.lemma}{'' if r.n is None else f'[n={r.n}]'}={r.verdict} ({r.measured:.3g})" for r in results)
    if secs > limit:
        detail += f"; runtime above {limit:.0f} s"
    report_criterion(number, ok, secs, (note + " " + detail).strip())
    for r in results:
        assert r.passed, r.row()
    assert secs <= limit, f"runtime {secs:.1f} s exceeds {limit} s"


def _control(r):
    """Negative controls must fail; wrap them so that pass means 'failed as expected'."""
    return V.CheckResult(r.lemma.replace("_negative", "") + "_control", r.n, r.measured, r.bound, "pass" if r.verdict == "fail" else "fail")


def test_criterion_01_shear_block(report_criterion):
    t0 = time.perf_counter()
    r = V.check_shear_block("1/16", samples=10_000, seed=0)
    _finish(report_criterion, 1, [r], t0, 60)


def test_criterion_02_rotation_block(report_criterion):
    t0 = time.perf_counter()
    r = V.check_rotation_block("1/10", samples=10_000, seed=0)
    _finish(report_criterion, 2, [r], t0, 60)


def test_criterion_03_equivariance(report_criterion, maps5):
    t0 = time.perf_counter()
    rs = [V.check_equivariance(maps5[n - 1], 1000, seed=0, tol=1e-12) for n in (1, 2, 3)]
    _finish(report_criterion, 3, rs, t0, 180)
    assert all(r.ms <= 60_000 for r in rs)


def test_criterion_04_outer_and_g_phi(report_criterion, maps5, chain5):
    t0 = time.perf_counter()
    sm = maps5[2]
    rs = [
        V.check_outer(sm, 50, 0),
        _control(V.check_outer(sm, 50, 0, negative=True)),
        V.check_g_phi(sm, chain5[3], 50, 0),
        _control(V.check_g_phi(sm, chain5[3], 50, 0, negative=True)),
    ]
    _finish(report_criterion, 4, rs, t0, 120)


def test_criterion_05_distribution(report_criterion, maps5, chain5):
    t0 = time.perf_counter()
    r = V.check_distribution(maps5[2], chain5[3], count=5, mc_samples=100_000, subboxes=20, seed=0)
    _finish(report_criterion, 5, [r], t0, 300, f"hull={r.detail['hull_error']:.1e}")


def test_criterion_06_cube(report_criterion, maps5, chain5):
    t0 = time.perf_counter()
    r = V.check_cube(maps5[4], chain5[5], cubes=20, seed=0)
    _finish(report_criterion, 6, [r], t0, 600)


def test_criterion_07_isometry(report_criterion, maps5):
    t0 = time.perf_counter()
    sm = maps5[2]
    rs = [V.check_isometry(sm, 50, 100, 10, 0, family="zeta"), _control(V.check_isometry(sm, 50, 100, 10, 0, family="eta"))]
    _finish(report_criterion, 7, rs, t0, 120)


def test_criterion_08_arithmetic(report_criterion, chain5):
    t0 = time.perf_counter()
    r = V.check_arithmetic(chain5, extra_pairs=V.nontrivial_pairs(0))
    _finish(report_criterion, 8, [r], t0, 60)


def test_criterion_09_metric(report_criterion, maps5):
    t0 = time.perf_counter()
    inv = V.check_metric_invariance(maps5[0], samples=1000, seed=0)
    stab = V.check_metric_stabilization(maps5[1], maps5[2], samples=1000, seed=0)
    note = f"hit_fraction={stab.detail['hit_fraction']:.3f} vs {stab.detail['fraction_bound']:.3f}"
    _finish(report_criterion, 9, [inv, stab], t0, 300, note)


def test_criterion_10_distances(report_criterion, maps5):
    from aklab.conjugation import ThetaShear

    t0 = time.perf_counter()
    sm = maps5[0]
    rs = [
        V.check_rotation_distance(grid=256, seed=0),
        V.check_konj0([sm.H, sm.g, ThetaShear(sm.stage.b)], trials=20, seed=0),
    ]
    _finish(report_criterion, 10, rs, t0, 120)


def test_criterion_11_correlation_oracle(report_criterion):
    t0 = time.perf_counter()
    r = V.check_rotation_correlation("3/7", (1, 2, 5), mc_samples=100_000, seed=0)
    _finish(report_criterion, 11, [r], t0, 120)


def test_criterion_12_reproducible_reports(report_criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"n_stages": 3, "mc_samples": 20000, "lemmas": '
                   '["block_rotation", "equivariance", "outer", "distri", "arithmetic", "correlation", "measure"]}')
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        proc = subprocess.run(
            [sys.executable, "-m", "aklab.harness.cli", "verify", "--config", str(cfg), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode in (0, 1), proc.stderr
        reports.append((out / "report.jsonl").read_bytes())
    secs = time.perf_counter() - t0
    same = reports[0] == reports[1]
    report_criterion(12, same, secs, f"{len(reports[0].splitlines()) - 1} rows, byte-identical={same}")
    assert same
