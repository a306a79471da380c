"""Command line entry point: ``aklab build | verify | correlate | report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..exceptions import AKLabError
from . import runner
from .config import ALL_LEMMAS, RunConfig


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--stage", type=int, help="stage index for stage-specific checks")
    common.add_argument("--lemmas", help=f"comma-separated subset of: {', '.join(ALL_LEMMAS)}")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--samples", type=int, help="Monte Carlo sample count")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["paper-faithful", "desk"])
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="aklab", description="Desk-scale conjugation-construction laboratory")
    sub = p.add_subparsers(dest="cmd", required=True)
    sub.add_parser("build", parents=[common], help="write stage files")
    sub.add_parser("verify", parents=[common], help="run lemma checks, write a JSON-lines report")
    sub.add_parser("correlate", parents=[common], help="write a correlation CSV series")
    rp = sub.add_parser("report", parents=[common], help="summarize a report file")
    rp.add_argument("report", nargs="?", type=Path, help="report .jsonl (default: <out>/report.jsonl)")
    return p


def load_config(args) -> RunConfig:
    d = RunConfig().to_dict() if args.config is None else RunConfig.load(args.config).to_dict()
    if args.stage is not None:
        d["stage"] = args.stage
    if args.lemmas is not None:
        d["lemmas"] = [s for s in args.lemmas.split(",") if s]
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise AKLabError("seed must be an unsigned 64-bit integer")
        d["seed"] = args.seed
    if args.samples is not None:
        d["mc_samples"] = args.samples
    if args.out is not None:
        d["out"] = args.out
    if args.mode is not None:
        d["mode"] = args.mode
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        out = cfg.out_dir()
        if args.cmd == "build":
            paths = runner.build(cfg)
            print("\n".join(str(p) for p in paths))
            return 0
        if args.cmd == "verify":
            if not cfg.lemmas:
                return 0
            runner.load_tuned(cfg)
            results = runner.verify(cfg)
            runner.save_tuned(cfg)
            rep, _ = runner.write_report(results, out)
            print(runner.summarize([r.row() for r in results]))
            print(f"report: {rep}")
            return runner.exit_code(results)
        if args.cmd == "correlate":
            runner.load_tuned(cfg)
            text = runner.correlate(cfg, args.samples)
            out.mkdir(parents=True, exist_ok=True)
            path = out / "correlation.csv"
            path.write_text(text)
            print(f"series: {path}")
            return 0
        if args.cmd == "report":
            rows = runner.read_report(args.report or out / "report.jsonl")
            print(runner.summarize(rows))
            return 0 if all(r["pass"] in (True, "record") for r in rows) else 1
    except AKLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
