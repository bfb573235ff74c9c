"""Command line entry point: ``aoisched {run,audit,beta-trace,export-penalties}``."""
import argparse
import logging
import sys

from . import experiments
from .experiments import ConfigError, load_config

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aoisched", description="AoI-based scheduling experiments for correlated sources.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)
    helps = {
        "run": "evaluate policies over the configured sweep and write a CSV",
        "audit": "check penalty bounds, cyclic optimality and the approximation gap",
        "beta-trace": "write per-episode learning traces of Online-MGF",
        "export-penalties": "write the per-source penalty tables as CSV",
    }
    for verb, text in helps.items():
        p = sub.add_parser(verb, help=text, description=text)
        p.add_argument("--config", metavar="PATH", help="INI config (defaults when omitted)")
        p.add_argument("--out", metavar="PATH", help="output file (overrides [output] path)")
        p.add_argument("--seeds", type=int, metavar="N", help="number of seeds")
        p.add_argument("--jobs", type=int, metavar="N", help="worker processes (-1: all cores)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
        overrides["trace_seeds"] = args.seeds
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output

    try:
        if args.verb == "run":
            rows = experiments.run(cfg, out)
            print(f"wrote {len(rows)} rows to {out}")
        elif args.verb == "audit":
            report = experiments.audit(cfg, out)
            for item in report.items:
                status = "pass" if item.ok else "FAIL"
                print(f"{status:4s}  {item.check:18s} {item.case:28s} {item.detail}")
            if not report.ok:
                return EXIT_AUDIT
        elif args.verb == "beta-trace":
            for s in experiments.beta_trace(cfg, out):
                print(f"zeta={s.zeta:g}: median episodes to beta<{cfg.trace_threshold:g} "
                      f"= {s.median:g}")
        elif args.verb == "export-penalties":
            tables = experiments.export_penalties(cfg, out)
            print(f"wrote {len(tables)} tables to {out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
