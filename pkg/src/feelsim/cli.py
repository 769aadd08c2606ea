"""Command line entry point: ``feelsim run | suite | oracle | report``.

Exit status is 0 on success, otherwise the failing error's category:
2 configuration, 3 infeasible plan or deadline, 4 numerical, 5 file I/O.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, FeelsimError
from .experiment import (
    emit_report,
    format_table,
    load_config,
    load_records,
    output_dir,
    run_experiment,
    run_suite,
    summarize,
    write_table,
)
from .oracles import ORACLES

IO_EXIT = 5


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    result = run_experiment(config)
    csv_path, _ = emit_report(result, args.out or output_dir())
    print(json.dumps(result.summary, sort_keys=True))
    print(f"wrote {csv_path}")
    return 0


def _suite_configs(directory: Path, seeds: int):
    files = sorted(p for p in directory.glob("*.yaml") if not p.name.startswith("_"))
    if not files:
        raise ConfigError(f"no experiment files in {directory}")
    base = [load_config(p) for p in files]
    return [c.with_seed(s) for s in range(seeds) for c in base]


def _cmd_suite(args) -> int:
    out = Path(args.out or output_dir())
    configs = _suite_configs(Path(args.config_dir), args.seeds)
    suite = run_suite(configs, args.parallel, directory=out)
    write_table(suite.table, out / "suite.csv")
    print(format_table(suite.table))
    failed = [r for r in suite.runs if r["status"] != "ok"]
    for r in failed:
        print(f"{r['name']} seed {r['seed']}: {r['status']}", file=sys.stderr)
    return 1 if failed else 0


def _cmd_oracle(args) -> int:
    names = sorted(ORACLES) if args.name == "all" else [args.name]
    for name in names:
        if name not in ORACLES:
            raise ConfigError(f"unknown oracle {name!r}; choose from {', '.join(sorted(ORACLES))} or 'all'")
        for key, value in ORACLES[name]().items():
            print(f"{name}\t{key}\t{value!r}")
    return 0


def _cmd_report(args) -> int:
    table = summarize(load_records(args.records_dir))
    print(format_table(table))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feelsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one experiment file")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: $FEELSIM_OUTPUT_DIR or ./feelsim-out)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("suite", help="run every experiment file in a directory over several seeds")
    p.add_argument("config_dir")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("oracle", help="print reference values from the independent oracles")
    p.add_argument("name", help=f"one of: all, {', '.join(sorted(ORACLES))}")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("report", help="summarise metrics files written by run or suite")
    p.add_argument("records_dir")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FeelsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
