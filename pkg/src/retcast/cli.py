"""Command-line entry point: ``retcast <subcommand> [--config PATH] [--seed N] [--jobs N] [--out DIR]``.

Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .dataset import DataError, write_csv
from .pipeline import (PipelineError, _monthly_r2, breaks_stage, evaluate_stage, portfolio_stage, read_forecasts,
                       run_pipeline, sha256)
from .simgen import DgpConfig, simulate_dgp, write_truth

log = logging.getLogger("retcast")


class UsageError(ValueError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.out = args.out
    return cfg.validate()


def cmd_simulate(args):
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    out = Path(args.out or "sim")
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    for rep in range(args.reps):
        cfg = DgpConfig(model=args.model, T=args.T, P_C=args.pc, seed=seed + rep)
        try:
            cfg.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        panel, truth = simulate_dgp(cfg)
        stem = f"model{args.model}_rep{rep:03d}"
        write_csv(panel, out / f"{stem}.csv")
        write_truth(truth, out / f"{stem}_truth.json")
    print(f"wrote {args.reps} repetition(s) to {out}")
    return 0


def cmd_run(args, importance=False):
    cfg = _config(args)
    if importance:
        cfg = replace(cfg, extras=replace(cfg.extras, importance=True))
    man = run_pipeline(cfg)
    print(f"{man['status']}: {len(man['outputs'])} files in {cfg.out}, report digest {man['report_digest']}")
    return 0


def _load_results(cfg):
    out = Path(cfg.out)
    if not (out / "forecasts.csv").exists():
        raise UsageError(f"no forecasts.csv in {out}; run `retcast run` first")
    return out, read_forecasts(out)


def cmd_evaluate(args):
    cfg = _config(args)
    out, (fs, _) = _load_results(cfg)
    files, notes, _, _ = evaluate_stage(cfg, fs, out)
    for n in notes:
        log.warning(n)
    print("\n".join(str(f) for f in files))
    return 0


def cmd_breaks(args):
    cfg = _config(args)
    out, (fs, _) = _load_results(cfg)
    files, notes = breaks_stage(_monthly_r2(fs), None, out)
    for n in notes:
        log.warning(n)
    print("\n".join(str(f) for f in files))
    return 0


def cmd_portfolio(args):
    cfg = _config(args)
    out, (fs, history) = _load_results(cfg)
    files, notes = portfolio_stage(cfg, fs, history, out)
    for n in notes:
        log.warning(n)
    print("\n".join(str(f) for f in files))
    return 0


def cmd_report(args):
    """Print the R^2 table and check manifest digests against the files on disk."""
    out = Path(args.out or _config(args).out)
    man_path = out / "manifest.json"
    if not man_path.exists():
        raise UsageError(f"no manifest.json in {out}")
    man = json.loads(man_path.read_text())
    bad = [name for name, dig in man["outputs"].items()
           if not (out / name).exists() or sha256(out / name) != dig]
    print(f"status: {man['status']}" + (f" (failed at {man['failed_stage']})" if man["failed_stage"] else ""))
    r2 = out / "r2_oos.csv"
    if r2.exists():
        print(r2.read_text().rstrip())
    if bad:
        print("digest mismatch: " + ", ".join(bad))
        return 1
    print(f"all {len(man['outputs'])} digests verified")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="retcast", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="write simulated panels and truth files")
    s.add_argument("--model", type=int, choices=(1, 2), default=1)
    s.add_argument("--T", type=int, default=3600)
    s.add_argument("--pc", type=int, default=50)
    s.add_argument("--reps", type=int, default=1)
    for name, text in (("run", "full pipeline"), ("evaluate", "re-score saved forecasts"),
                       ("importance", "full pipeline with feature importance"),
                       ("breaks", "changepoints on monthly R^2"), ("portfolio", "mean-variance backtest"),
                       ("report", "summarize a run and verify digests")):
        sub.add_parser(name, parents=[common], help=text)
    return p


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "evaluate": cmd_evaluate,
            "importance": lambda a: cmd_run(a, importance=True), "breaks": cmd_breaks,
            "portfolio": cmd_portfolio, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        if isinstance(exc.__cause__, DataError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
