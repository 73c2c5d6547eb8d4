"""Command line: ``binqc {relax,round,improve,run,verify}``.

Exit codes: 0 success, 1 stage or check failure (JSON error record on
stderr), 2 bad configuration or usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ArtifactExistsError, ConfigError, FormatError
from .pipeline import STAGES, PipelineError, RunConfig, RunDirectory, load_config, run_pipeline
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

PLOT_SERIES = {"epsilon_vs_T": ("plot_epsilon_vs_T.csv", ("T", "dt", "epsilon", "bound", "penalty", "objective")),
               "penalty_vs_rho": ("plot_penalty_vs_rho.csv", ("rho", "penalty", "objective"))}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run file with [instance]/[relax]/[round]/[improve] sections")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: ./run)")
    common.add_argument("--seed", type=int, help="seed for random instances and verify suites")
    common.add_argument("--time-limit", type=float, help="seconds per branch-and-bound search")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="binqc", description="Binary quantum control: relax, round, improve.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("relax", parents=[common], help="continuous relaxation")
    sub.add_parser("round", parents=[common], help="round relax.csv to binary controls")
    sub.add_parser("improve", parents=[common], help="trust-region improvement of round.csv")
    sub.add_parser("run", parents=[common], help="all stages plus summary")
    v = sub.add_parser("verify", parents=[common], help="run a named check suite")
    v.add_argument("suite", choices=SUITES)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.time_limit is not None:
        if not args.time_limit > 0:
            raise ConfigError("--time-limit must be positive")
        cfg.time_limit = args.time_limit
    return cfg.validate()


def _fail(record: dict, code: int) -> int:
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def _verify(args) -> int:
    report = run_suite(args.suite, seed=0 if args.seed is None else args.seed)
    run = RunDirectory(args.out, args.force)
    json_name = f"verify_{args.suite.replace('-', '_')}.json"
    plots = [(PLOT_SERIES[k], rows) for k, rows in report["series"].items()]
    run.claim([json_name] + [name for (name, _), _ in plots])
    run.write_json(json_name, report)
    for (name, cols), rows in plots:
        run.write_rows(name, cols, [[r[c] for c in cols] for r in rows])
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} [{c['criterion']}] {c['name']}: "
              f"value={c['value']:.4g} bound={c['bound']:.4g} margin={c['margin']:.3g}")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return _verify(args)
        cfg = _config(args)
        stages = STAGES if args.command == "run" else (args.command,)
        result = run_pipeline(cfg, args.out, force=args.force, stages=stages)
    except (ConfigError, FormatError) as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, EXIT_CONFIG)
    except ArtifactExistsError as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, EXIT_CONFIG)
    except PipelineError as exc:
        return _fail(exc.failure, EXIT_FAILED)
    except FileNotFoundError as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, EXIT_FAILED)
    for stage, rep in result.reports.items():
        print(f"{stage}: objective={rep.objective:.6e} tv={rep.tv_value:.4g} status={rep.status}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
