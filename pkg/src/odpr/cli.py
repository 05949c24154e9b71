"""``odpr`` command-line tool.

Subcommands: compute-priorities, run-bandit, run-tabular, property-suite,
export-figures.  Exit status is 0 only when every requested computation
completed and every check passed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from odpr import experiments
from odpr.algos import TrainingDivergence
from odpr.config import ConfigError, load_config
from odpr.dataset import DatasetError
from odpr.priority import WeightFileError
from odpr.suites import SUITES, run_suite
from odpr.value import ValueFitDivergence

EXIT_FAILED_CHECK = 1
EXIT_ERROR = 2


def _seeds(cfg, args):
    return (args.seed,) if args.seed is not None else cfg.seeds


def _out_dir(cfg, args, default):
    if args.out is not None:
        return Path(args.out)
    return cfg.get("output.dir") or Path(default)


def cmd_compute_priorities(args):
    cfg = load_config(args.config)
    out = _out_dir(cfg, args, "priorities")
    seed = _seeds(cfg, args)[0]
    d = experiments.make_dataset(cfg, seed)
    run = experiments.compute_priorities(d, cfg, seed)
    experiments.write_priority_artifacts(run, d, out)
    print(json.dumps({"out": str(out), "final": run.report["final"], "flags": run.report["flags"]}))
    return 0


def cmd_run_bandit(args):
    cfg = load_config(args.config)
    out = _out_dir(cfg, args, "bandit_run")
    _, summary = experiments.run_bandit(cfg, _seeds(cfg, args), out)
    brief = {name: {k: v[k] for k in ("distance_to_optimal", "expected_reward")}
             for name, v in summary["variants"].items()}
    print(json.dumps({"out": str(out), "variants": brief}, indent=2))
    return 0


def cmd_run_tabular(args):
    cfg = load_config(args.config)
    report = experiments.run_tabular(cfg, _seeds(cfg, args))
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    out = _out_dir(cfg, args, "tabular_run")
    out.mkdir(parents=True, exist_ok=True)
    (out / "tabular.json").write_text(text)
    print(json.dumps({"out": str(out), "passed": report["passed"]}))
    return 0 if report["passed"] else EXIT_FAILED_CHECK


def cmd_property_suite(args):
    report = run_suite(args.suite, trials=args.trials, seed=args.seed or 0)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.suite}.json").write_text(text)
    failed = sum(not t["passed"] for t in report["trials"])
    print(f"{report['suite']}: {'PASS' if report['passed'] else 'FAIL'} "
          f"({len(report['trials']) - failed}/{len(report['trials'])} trials)")
    if args.out is None:
        sys.stdout.write(text)
    return 0 if report["passed"] else EXIT_FAILED_CHECK


def cmd_export_figures(args):
    written = experiments.export_figures(args.run_dir, args.out)
    for path in written:
        print(path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="odpr", description="Offline decoupled prioritized resampling.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, type=Path, help="experiment config file")
        p.add_argument("--seed", type=int, help="run this seed instead of the config's seed list")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        return p

    with_config(sub.add_parser("compute-priorities", help="compute and save priority weights")) \
        .set_defaults(func=cmd_compute_priorities)
    with_config(sub.add_parser("run-bandit", help="train learners on the Gaussian bandit")) \
        .set_defaults(func=cmd_run_bandit)
    with_config(sub.add_parser("run-tabular", help="exact prioritization on tabular MDPs")) \
        .set_defaults(func=cmd_run_tabular)

    p = sub.add_parser("property-suite", help="run a verification suite")
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="write <suite>.json here instead of stdout")
    p.set_defaults(func=cmd_property_suite)

    p = sub.add_parser("export-figures", help="emit CSV plot data from a bandit run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path, help="defaults to <run_dir>/figures")
    p.set_defaults(func=cmd_export_figures)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, WeightFileError, ValueFitDivergence, TrainingDivergence,
            FileNotFoundError, ValueError) as err:
        print(f"odpr {args.command}: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
