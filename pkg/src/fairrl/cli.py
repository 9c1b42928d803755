"""Command-line entry point: ``fairrl run|datagen|eval|plot|verify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import _accel
from .datagen import EmpiricalFileError, GeneratorConfig, build_fico, build_synthetic
from .fileio import atomic_write_json
from .mdp import DegenerateConditioningError, Policy, ProblemSpec, kernel_report

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

log = logging.getLogger("fairrl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed list with one seed")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fairrl", description="Fairness-constrained tabular episodic RL.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", parents=[common], help="run an experiment from a JSON config")
    r.add_argument("config")

    d = sub.add_parser("datagen", parents=[common], help="write a problem instance")
    d.add_argument("variant", choices=("synthetic", "fico"))
    d.add_argument("--empirical", default=None, help="score-distribution JSON (fico only)")
    d.add_argument("--config", default=None, help="generator config JSON")
    d.add_argument("-o", "--output", default=None)

    e = sub.add_parser("eval", parents=[common], help="exact metrics of a policy")
    e.add_argument("spec")
    e.add_argument("policy")
    e.add_argument("--comparator", default=None, help="policy JSON to measure regret against")

    pl = sub.add_parser("plot", parents=[common], help="render SVG charts from metrics.csv")
    pl.add_argument("metrics")
    pl.add_argument("-o", "--output", default=None)

    v = sub.add_parser("verify", parents=[common], help="check a problem file")
    v.add_argument("spec")
    return p


def _cmd_run(args) -> int:
    from .harness import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.load(args.config)
    over = {}
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    if args.out is not None:
        over["out"] = args.out
    if args.threads is not None:
        over["threads"] = args.threads
    cfg = replace(cfg, **over)
    paths = run_experiment(cfg)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_datagen(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    doc["variant"] = args.variant
    if args.empirical:
        doc["empirical"] = args.empirical
    cfg = GeneratorConfig.from_dict(doc)
    spec = build_synthetic(cfg) if args.variant == "synthetic" else build_fico(cfg)
    target = args.output or args.out
    if target is None:
        print(json.dumps(spec.to_dict(), indent=1))
    else:
        atomic_write_json(target, spec.to_dict())
        print(target)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .metrics import episodic_return, reward_regret, violation_dp, violation_eqopt

    spec = ProblemSpec.load(args.spec)
    ids = spec.groups.group_ids
    policy = Policy.from_dict(json.loads(Path(args.policy).read_text()), ids)
    dp = violation_dp(policy, spec)
    report = {
        "return": episodic_return(policy, spec),
        "dp_violation": dp.mean,
        "dp_per_step": dp.per_step.tolist(),
    }
    try:
        eo = violation_eqopt(policy, spec)
        report |= {"eqopt_violation": eo.mean, "eqopt_per_step": eo.per_step.tolist()}
    except DegenerateConditioningError as exc:
        report["eqopt_violation"] = None
        report["eqopt_error"] = f"{exc} (denominator {exc.denominator:.3g})"
    if args.comparator:
        cmp = Policy.from_dict(json.loads(Path(args.comparator).read_text()), ids)
        report["regret"] = reward_regret(policy, spec, cmp)
    text = json.dumps(report, indent=1)
    if args.out:
        atomic_write_json(args.out, report)
    print(text)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import render_all

    out = args.output or args.out or str(Path(args.metrics).parent / "plots")
    for path in render_all(args.metrics, out):
        print(path)
    return EXIT_OK


def _cmd_verify(args) -> int:
    doc = json.loads(Path(args.spec).read_text())
    report = kernel_report(doc)
    if report["ok"]:
        try:
            ProblemSpec.from_dict(doc)
        except ValueError as exc:
            report["ok"] = False
            report["problems"].append(str(exc))
    print(json.dumps(report, indent=1))
    for problem in report["problems"]:
        print(f"verify: {problem}", file=sys.stderr)
    if not report["assumption_positive_kernel"]:
        print("verify: warning: some kernel entries are zero (positivity assumption not met)", file=sys.stderr)
    return EXIT_OK if report["ok"] else EXIT_FAILURE


COMMANDS = {"run": _cmd_run, "datagen": _cmd_datagen, "eval": _cmd_eval, "plot": _cmd_plot, "verify": _cmd_verify}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None:
        _accel.set_threads(args.threads)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, EmpiricalFileError, json.JSONDecodeError) as exc:
        print(f"fairrl {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
