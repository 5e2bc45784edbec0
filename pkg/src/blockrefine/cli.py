"""Command-line entry point (``blockrefine``)."""
import argparse
import json
import logging
import sys

from . import config as C
from .errors import BlockRefineError, ConfigError, NumericalError, StageError
from .gradcheck import run_gradcheck
from .pipeline import build_report, dumps_report, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

STAGE_VERBS = {
    "pretrain": "pretrain",
    "analyze-blocks": "analyze_blocks",
    "init-heads": "init_heads",
    "refine": "refine",
    "probe": "probe",
    "cluster": "cluster",
}


def _parser():
    p = argparse.ArgumentParser(prog="blockrefine", description="Desk-scale block refinement pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="global seed override")
        sp.add_argument("--out", help="output directory override")

    for verb in STAGE_VERBS:
        common(sub.add_parser(verb, help=f"run the {verb} stage"))
    run = sub.add_parser("run", help="run the configured stages in dependency order")
    common(run)
    run.add_argument("--stage", action="append", choices=C.STAGES,
                     help="restrict to this stage (repeatable)")
    rep = sub.add_parser("report", help="aggregate existing stage results into report.json")
    common(rep)
    gc = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    sub.add_parser("config", help="print the default config as YAML")
    return p


def _load(args):
    cfg = C.load_config(args.config) if args.config else C.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg.validate()


def _gradcheck(args):
    results = run_gradcheck(args.instances, args.seed)
    bad = [r for r in results if not r.ok]
    for r in bad:
        print(f"FAIL {r.component} #{r.instance} {r.target}: max abs err {r.max_abs_err:.3e}")
    print(f"gradcheck: {len(results) - len(bad)}/{len(results)} checks passed")
    return EXIT_NUMERIC if bad else EXIT_OK


def _dispatch(args):
    if args.verb == "gradcheck":
        return _gradcheck(args)
    if args.verb == "config":
        sys.stdout.write(C.dumps(C.ExperimentConfig()))
        return EXIT_OK
    cfg = _load(args)
    if args.verb == "report":
        report = build_report(cfg)
        with open(f"{cfg.out_dir}/report.json", "w") as f:
            f.write(dumps_report(report))
        print(json.dumps(sorted(report["stages"])))
        return EXIT_OK
    stages = [STAGE_VERBS[args.verb]] if args.verb in STAGE_VERBS else args.stage
    report = run_experiment(cfg, stages=stages)
    print(f"wrote {cfg.out_dir}/report.json ({', '.join(sorted(report['stages']))})")
    return EXIT_OK


def _exit_code(err):
    if isinstance(err, StageError):
        return _exit_code(err.cause)
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, NumericalError):
        return EXIT_NUMERIC
    return EXIT_FAIL


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except BlockRefineError as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
