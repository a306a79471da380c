"""Build and verify orchestration.

A verify run is a list of tasks ``(lemma, n)``. Tasks are independent,
run in a bounded pool, and are merged back in task order, so reports do
not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .. import verification as V
from ..blocks.shear import MoserSolveConfig, dump_tuned_steps, preload_tuned_steps
from ..conjugation import CircleRotation, ThetaShear, build_stage_maps
from ..exceptions import AKLabError, EmptyPartition
from ..partitions import Box
from ..stage_params import StageParams
from .config import REPORT_SCHEMA, RunConfig

log = logging.getLogger("aklab")

STAGE_DIR = "stages"
TUNED_FILE = "tuned_steps.json"


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------


def stage_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir() / STAGE_DIR / cfg.stage_hash()


def build(cfg: RunConfig) -> list:
    """Write one JSON file per stage; idempotent for a given config.

    Returns:
        Paths of the stage files.
    """
    d = stage_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for st in cfg.chain():
        p = d / f"stage_{st.n}.json"
        text = st.dumps() + "\n"
        if not p.exists() or p.read_text() != text:
            p.write_text(text)
        paths.append(p)
    (d / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1) + "\n")
    return paths


def load_stages(cfg: RunConfig) -> list:
    """Stage files of ``cfg``, building them first if missing."""
    d = stage_dir(cfg)
    files = sorted(d.glob("stage_*.json"), key=lambda p: int(p.stem.split("_")[1])) if d.exists() else []
    if len(files) != cfg.n_stages + 1:
        build(cfg)
        files = sorted(d.glob("stage_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    return [StageParams.from_dict(json.loads(p.read_text())) for p in files]


def save_tuned(cfg: RunConfig) -> None:
    (cfg.out_dir() / TUNED_FILE).write_text(dump_tuned_steps())


def load_tuned(cfg: RunConfig) -> None:
    p = cfg.out_dir() / TUNED_FILE
    if p.exists():
        preload_tuned_steps(json.loads(p.read_text()))


@lru_cache(maxsize=4)
def _context(cfg_json: str):
    cfg = RunConfig.from_dict(json.loads(cfg_json))
    load_tuned(cfg)
    stages = load_stages(cfg)
    maps = build_stage_maps(stages, MoserSolveConfig(tol_vol=cfg.tol_vol))
    return cfg, stages, maps


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    lemma: str
    n: int | None = None


def _skip(lemma: str, n, reason: str) -> V.CheckResult:
    return V.CheckResult(lemma, n, float("nan"), float("nan"), "record", detail={"skipped": reason})


def _control(res: V.CheckResult) -> V.CheckResult:
    """Negative control: passes exactly when the wrapped check fails."""
    out = V.CheckResult(
        res.lemma.replace("_negative", "_control"),
        res.n,
        res.measured,
        res.bound,
        "pass" if res.verdict == "fail" else "fail",
        se=res.se,
        seed=res.seed,
        samples=res.samples,
        ms=res.ms,
        detail=dict(res.detail, expected="fail", inner_verdict=res.verdict),
    )
    return out


def plan(cfg: RunConfig, lemmas=None) -> list:
    """Tasks for the selected lemmas, honoring ``cfg.stage``."""
    N = cfg.n_stages
    lemmas = cfg.lemmas if lemmas is None else lemmas
    eta_n = cfg.stage or min(3, N)
    tasks = []
    for lem in lemmas:
        if lem in ("block_shear", "block_rotation", "arithmetic", "distance", "correlation", "normH"):
            tasks.append(Task(lem))
        elif lem == "equivariance":
            ns = [cfg.stage] if cfg.stage else range(1, min(3, N) + 1)
            tasks += [Task(lem, n) for n in ns]
        elif lem in ("outer", "g_phi", "isometry"):
            tasks += [Task(lem, eta_n), Task(lem + "_negative", eta_n)]
        elif lem == "distri":
            tasks.append(Task(lem, eta_n))
        elif lem == "cube":
            tasks.append(Task(lem, cfg.stage or 5))
        elif lem == "metric":
            tasks.append(Task("metric_invariance", cfg.stage or 1))
            tasks.append(Task("metric_stabilization", cfg.stage or min(2, max(1, N - 1))))
        elif lem == "measure":
            tasks.append(Task(lem, cfg.stage or 1))
        elif lem == "points":
            ns = [cfg.stage] if cfg.stage else range(2, min(3, N) + 1)
            tasks += [Task(lem, n) for n in ns]
        elif lem == "iterate":
            ns = [cfg.stage] if cfg.stage else range(1, N)
            tasks += [Task(lem, n) for n in ns]
    return tasks


def run_task(cfg_json: str, task: Task) -> V.CheckResult:
    cfg, stages, maps = _context(cfg_json)
    lem, n, seed, S = task.lemma, task.n, cfg.seed, cfg.mc_samples
    N = len(maps)
    if n is not None and not (1 <= n <= N):
        return _skip(lem, n, f"stage {n} not built (n_stages = {cfg.n_stages})")
    sm = maps[n - 1] if n else None
    nxt = stages[n] if n else None
    try:
        if lem == "block_shear":
            return V.check_shear_block("1/16", 10_000, seed)
        if lem == "block_rotation":
            return V.check_rotation_block("1/10", 10_000, seed)
        if lem == "arithmetic":
            return V.check_arithmetic(stages)
        if lem == "equivariance":
            return V.check_equivariance(sm, 1000, seed, cfg.tol_region)
        if lem in ("outer", "outer_negative"):
            r = V.check_outer(sm, 50, seed, negative=lem.endswith("negative"), tol=cfg.tol_region)
            return _control(r) if lem.endswith("negative") else r
        if lem in ("g_phi", "g_phi_negative"):
            r = V.check_g_phi(sm, nxt, 50, seed, negative=lem.endswith("negative"), tol=cfg.tol_region)
            return _control(r) if lem.endswith("negative") else r
        if lem in ("isometry", "isometry_negative"):
            neg = lem.endswith("negative")
            r = V.check_isometry(sm, 50, 100, 10, seed, family="eta" if neg else "zeta")
            return _control(r) if neg else r
        if lem == "distri":
            return V.check_distribution(sm, nxt, 5, S, 20, seed)
        if lem == "cube":
            if n < 5:
                return _skip(lem, n, "needs n >= 5")
            return V.check_cube(sm, nxt, 20, 5000, 50, seed)
        if lem == "metric_invariance":
            return V.check_metric_invariance(sm, 1000, seed)
        if lem == "metric_stabilization":
            if n + 1 > N:
                return _skip(lem, n, "needs stage n + 1")
            return V.check_metric_stabilization(sm, maps[n], 1000, seed)
        if lem == "measure":
            return V.check_measure_preservation(sm.h, sm.stage.dim_m, 100, min(S, 10_000), seed, n=n)
        if lem == "points":
            return V.check_partition_diameters(maps, n, seed=seed)
        if lem == "normH":
            return V.check_norm_growth(maps, 1, min(cfg.grid, 128), seed)
        if lem == "iterate":
            if n + 1 > N:
                return _skip(lem, n, "needs stage n + 1")
            return V.check_iterate_distance(maps, stages, n, 1, 64, seed)
        if lem == "distance":
            return _distance_checks(maps, cfg)
        if lem == "correlation":
            return V.check_rotation_correlation("3/7", (1, 2, 5), S, seed)
    except EmptyPartition as exc:
        return _skip(lem, n, f"empty partition: {exc}")
    raise ValueError(f"unknown task {lem}")


def _distance_checks(maps, cfg) -> V.CheckResult:
    """d0 of rotations and the k = 0 conjugation inequality, merged into one row."""
    a = V.check_rotation_distance(cfg.grid, cfg.seed)
    pool = [maps[0].H, maps[0].g, ThetaShear(maps[0].stage.b, maps[0].stage.dim_m)]
    b = V.check_konj0(pool, 20, 64, 4, cfg.seed)
    ok = a.passed and b.passed
    return V.CheckResult(
        "distance",
        None,
        b.measured,
        b.bound,
        "pass" if ok else "fail",
        seed=cfg.seed,
        samples=a.samples + b.samples,
        ms=(a.ms or 0) + (b.ms or 0),
        detail={"d0_rotation_error": a.measured, "konj0_ratio": b.measured, "konj0": b.detail},
    )


def verify(cfg: RunConfig, lemmas=None) -> list:
    """Run the planned tasks and return CheckResults in task order."""
    tasks = plan(cfg, lemmas)
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_task, [cfg_json] * len(tasks), tasks))
    else:
        results = []
        for t in tasks:
            log.info("running %s (n = %s)", t.lemma, t.n)
            results.append(run_task(cfg_json, t))
    return results


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_report(results: list, out: Path, name: str = "report") -> tuple:
    """JSON lines without timings plus a separate timings file."""
    out.mkdir(parents=True, exist_ok=True)
    rep = out / f"{name}.jsonl"
    tim = out / f"{name}.timings.jsonl"
    header = json.dumps({"schema": REPORT_SCHEMA}, sort_keys=True)
    rep.write_text("\n".join([header] + [r.to_json() for r in results]) + "\n")
    tim.write_text("\n".join(json.dumps({"lemma": r.lemma, "n": r.n, "ms": r.ms}) for r in results) + "\n")
    return rep, tim


def read_report(path) -> list:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows or rows[0].get("schema") != REPORT_SCHEMA:
        raise AKLabError(f"{path} is not a {REPORT_SCHEMA} report")
    return rows[1:]


def exit_code(results: list) -> int:
    """0 iff every result passed or is record-only."""
    return 0 if all(r.ok for r in results) else 1


def summarize(rows: list) -> str:
    lines = [f"{'lemma':<24}{'n':>4}  {'verdict':<13}{'measured':>14}{'bound':>14}"]
    for r in rows:
        v = r["pass"]
        verdict = "pass" if v is True else "fail" if v is False else str(v)
        meas = r["measured"] if isinstance(r["measured"], str) else f"{r['measured']:.4g}"
        bnd = r["bound"] if isinstance(r["bound"], str) else f"{r['bound']:.4g}"
        lines.append(f"{r['lemma']:<24}{str(r['n'] or '-'):>4}  {verdict:<13}{meas:>14}{bnd:>14}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------


def default_boxes(m: int) -> dict:
    from gmpy2 import mpq

    full = Box(tuple((mpq(0), mpq(1)) for _ in range(m)))
    band1 = Box(((mpq(0), mpq(1, 4)),) + tuple((mpq(0), mpq(1)) for _ in range(m - 1)))
    band2 = Box(((mpq(1, 2), mpq(3, 4)),) + tuple((mpq(0), mpq(1, 2)) for _ in range(m - 1)))
    return {"M": full, "A1": band1, "B1": band2}


def correlate(cfg: RunConfig, samples: int | None = None) -> str:
    """CSV series m, estimate, se, A-id, B-id, stage for f_n (n = cfg.stage or 1).

    Stage 0 means the rotation R_(alpha_1).
    """
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    _, stages, maps = _context(cfg_json)
    n = cfg.stage if cfg.stage is not None else 1
    f = CircleRotation(stages[0].alpha, cfg.dim_m) if n == 0 else maps[n - 1].f
    boxes = default_boxes(cfg.dim_m)
    pairs = [("M", "M"), ("A1", "B1"), ("B1", "A1")]
    N = samples or min(cfg.mc_samples, 10_000)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "estimate", "se", "A_id", "B_id", "stage"])
    for k, (a, b) in enumerate(pairs):
        for row in V.correlation_probe(f, cfg.iterates, boxes[a], boxes[b], N, cfg.seed + k):
            w.writerow([row["m"], repr(row["correlation"]), repr(row["se"]), a, b, n])
    return buf.getvalue()
