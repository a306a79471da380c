from __future__ import annotations

import json

import pytest

from aklab.exceptions import AKLabError, ConfigError
from aklab.harness import runner
from aklab.harness.cli import main
from aklab.harness.config import REPORT_SCHEMA, RunConfig


def _cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_stages": 2, "out": str(tmp_path / "out"), **kw}))
    return path


@pytest.mark.parametrize("sigma", ["1", "0", "3/2"])
def test_sigma_outside_unit_interval_rejected(sigma, tmp_path, capsys):
    with pytest.raises(ConfigError):
        RunConfig(sigma=sigma)
    assert main(["build", "--config", str(_cfg(tmp_path, sigma=sigma))]) == 2
    assert "sigma" in capsys.readouterr().err


def test_bad_config_fields_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"n_stages": 2, "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig(q1=100)
    with pytest.raises(ConfigError):
        RunConfig(lemmas=["nope"])
    with pytest.raises(ConfigError):
        RunConfig(mode="paper-faithful")


def test_config_round_trip(tmp_path):
    cfg = RunConfig(n_stages=3, q_overrides={2: 4160 * 2}, seed=9)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = RunConfig.load(path)
    assert again == cfg and again.stage_hash() == cfg.stage_hash()


def test_build_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["build", "--config", str(cfg)]) == 0
    files = sorted((tmp_path / "out" / "stages").rglob("*.json"))
    first = {p: p.read_bytes() for p in files}
    assert main(["build", "--config", str(cfg)]) == 0
    assert {p: p.read_bytes() for p in sorted((tmp_path / "out" / "stages").rglob("*.json"))} == first
    assert len([p for p in files if p.name.startswith("stage_")]) == 3


def test_out_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("AKLAB_OUT", str(tmp_path / "env"))
    assert RunConfig(out="ignored").out_dir() == tmp_path / "env"


def test_empty_lemma_list_exits_zero(tmp_path):
    assert main(["verify", "--config", str(_cfg(tmp_path)), "--lemmas", ""]) == 0
    assert not (tmp_path / "out" / "report.jsonl").exists()


def test_verify_report_is_reproducible(tmp_path, capsys):
    cfg = str(_cfg(tmp_path))
    args = ["verify", "--config", cfg, "--lemmas", "arithmetic,correlation", "--samples", "3000"]
    code = main(args)
    rep = tmp_path / "out" / "report.jsonl"
    first = rep.read_bytes()
    assert main(args) == code
    assert rep.read_bytes() == first
    header = json.loads(first.splitlines()[0])
    assert header == {"schema": REPORT_SCHEMA}
    rows = runner.read_report(rep)
    assert [r["lemma"] for r in rows] == ["arithmetic", "correlation_rotation"]
    assert rows[0]["pass"] is True
    assert all(r["ms"] is None for r in rows)
    timings = (tmp_path / "out" / "report.timings.jsonl").read_text().splitlines()
    assert all(json.loads(t)["ms"] > 0 for t in timings)
    capsys.readouterr()
    assert main(["report", "--config", cfg]) == code
    assert "arithmetic" in capsys.readouterr().out


def test_report_rejects_foreign_file(tmp_path):
    bad = tmp_path / "x.jsonl"
    bad.write_text('{"lemma": "x"}\n')
    with pytest.raises(AKLabError):
        runner.read_report(bad)
    assert main(["report", str(bad), "--out", str(tmp_path)]) == 2


def test_failing_row_sets_exit_code(tmp_path):
    from aklab.verification import CheckResult

    good = CheckResult("a", None, 0.0, 1.0, "pass")
    bad = CheckResult("b", None, 2.0, 1.0, "fail")
    assert runner.exit_code([good]) == 0
    assert runner.exit_code([good, bad]) == 1
    runner.write_report([good, bad], tmp_path)
    assert main(["report", str(tmp_path / "report.jsonl")]) == 1


def test_correlate_csv(tmp_path):
    cfg = str(_cfg(tmp_path))
    assert main(["correlate", "--config", cfg, "--stage", "0", "--samples", "500"]) == 0
    lines = (tmp_path / "out" / "correlation.csv").read_text().splitlines()
    assert lines[0] == "m,estimate,se,A_id,B_id,stage"
    assert len(lines) == 1 + 3 * 3
    m, est, se, a, b, n = lines[1].split(",")
    assert (a, b, n) == ("M", "M", "0") and float(est) == 0.0


def test_plan_negative_controls():
    tasks = runner.plan(RunConfig(n_stages=3), ["outer", "metric", "cube"])
    names = [(t.lemma, t.n) for t in tasks]
    assert ("outer_negative", 3) in names
    assert ("metric_invariance", 1) in names and ("metric_stabilization", 2) in names
    assert ("cube", 5) in names


def test_missing_stage_is_recorded_not_failed(tmp_path):
    cfg = RunConfig(n_stages=2, lemmas=["cube"], out=str(tmp_path))
    (res,) = runner.verify(cfg)
    assert res.verdict == "record" and "skipped" in res.detail


def test_seed_range_checked(tmp_path):
    assert main(["verify", "--config", str(_cfg(tmp_path)), "--seed", "-1"]) == 2
