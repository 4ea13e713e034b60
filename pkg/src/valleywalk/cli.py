"""Command line entry point: ``valleywalk <subcommand> --config FILE [--seed N] [--out DIR]``.

Exit status is 0 when every gate passes, 2 when a gate fails and 1 on errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback

from . import experiments as ex
from .env_model import parse_model_string
from .errors import ValleyWalkError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_GATES_FAILED = 2

# subcommand -> experiment kinds it accepts (the first is the default)
SUBCOMMANDS = {
    "simulate": (ex.SIMULATE,),
    "valleys": (ex.VALLEY_STATS,),
    "constants": (ex.CONSTANTS, ex.IGLEHART_TAIL, ex.Z_TAIL),
    "limit-check": (ex.LIMIT_CHECK,),
    "occupation-tail": (ex.OCCUPATION_TAIL,),
    "quenched-check": (ex.QUENCHED_GATE,),
    "good-env": (ex.GOOD_ENV,),
    "interarrival": (ex.INTERARRIVAL,),
}


def _int_list(text: str) -> list:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valleywalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--model", help="e.g. beta:3,1.5 (overrides the config model)")
        p.add_argument("--workers", type=int)
        p.add_argument("--quiet", action="store_true", help="do not print the summary")
        if name in ("simulate", "valleys", "limit-check", "interarrival"):
            p.add_argument("--n", type=_int_list, help="comma separated n values")
            p.add_argument("--replicates", type=int)
        if name in ("simulate", "limit-check", "occupation-tail", "interarrival"):
            p.add_argument("--budget", type=int)
            p.add_argument("--fast", dest="fast", action="store_true", default=None)
            p.add_argument("--direct", dest="fast", action="store_false")
        if name == "valleys":
            p.add_argument("--gamma", type=float)
            p.add_argument("--A", dest="A", type=float)
    return parser


def config_from_args(args) -> ex.ExperimentConfig:
    kinds = SUBCOMMANDS[args.command]
    data = {}
    if args.config:
        import yaml
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValleyWalkError("config file must hold a mapping")
    kind = str(data.get("kind") or data.get("experiment") or kinds[0]).replace("-", "_")
    if kind not in kinds:
        raise ValleyWalkError("subcommand %s cannot run experiment kind %r" % (args.command, kind))
    data.pop("experiment", None)
    data["kind"] = kind
    if args.model:
        data["model"] = parse_model_string(args.model)
    overrides = {k: getattr(args, k, None) for k in ("seed", "out", "workers", "n", "replicates", "budget",
                                                    "fast", "gamma", "A")}
    return ex.ExperimentConfig.from_mapping(data, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        record = ex.run(cfg)
        if cfg.out:
            record.write(cfg.out)
    except (ValleyWalkError, OSError, ValueError, KeyError) as err:
        print("valleywalk: error: %s" % err, file=sys.stderr)
        return EXIT_ERROR
    except Exception:                                   # unexpected: keep the traceback
        traceback.print_exc()
        return EXIT_ERROR
    if not args.quiet:
        summary = record.summary()
        summary.pop("config")
        print(json.dumps(summary, indent=2, default=ex.jsonable))
    return EXIT_OK if record.passed else EXIT_GATES_FAILED


if __name__ == "__main__":
    sys.exit(main())
