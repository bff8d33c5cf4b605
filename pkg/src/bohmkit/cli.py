"""Command-line front end: run, validate and describe scenario configs.

Exit codes: 0 success, 2 configuration problems, 3 physical-regime or
numerical failures, 4 resource limits.
"""

import argparse
import io
import sys
from pathlib import Path

from .errors import ConfigurationError, EvaluationError, NumericalError, \
    RangeError, RegimeError, ResourceError
from .scenarios import describe_schema, validate_text


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bohmkit",
        description="Quantum-trajectory scenarios: conditional wavefunctions,"
                    " measurements and collision-model unravellings.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario config")
    run.add_argument("config", help="scenario config file")
    run.add_argument("--seed", type=int, default=None,
                     help="override the seed in the config")
    run.add_argument("--out", default=None,
                     help="output directory (default: <config stem>_out)")
    run.add_argument("--oracle", action="store_true",
                     help="also compute independent cross-checks")

    val = sub.add_parser("validate", help="check a config, report every "
                                          "problem")
    val.add_argument("config")

    sub.add_parser("schema", help="print the config schema")
    return parser


def _load(path):
    try:
        text = io.open(path, "r").read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}")
    return validate_text(text)


def _cmd_validate(args):
    cfg, errors = _load(args.config)
    if errors:
        for line in errors:
            print(f"error: {line}", file=sys.stderr)
        print(f"{len(errors)} problem(s) found", file=sys.stderr)
        return 2
    print(f"ok: {args.config} ({cfg.kind}, seed {cfg.seed}, "
          f"hash {cfg.config_hash})")
    return 0


def _cmd_run(args):
    cfg, errors = _load(args.config)
    if errors:
        for line in errors:
            print(f"error: {line}", file=sys.stderr)
        return 2
    out_dir = args.out or f"{Path(args.config).stem}_out"
    from .runner import run_scenario
    summary = run_scenario(cfg, out_dir, seed=args.seed, oracle=args.oracle)
    print(f"{cfg.kind}: wrote {len(summary['outputs'])} file(s) to "
          f"{out_dir}")
    for warning in summary["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    for key, value in sorted(summary["results"].items()):
        print(f"  {key} = {value}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "schema":
            print(describe_schema())
            return 0
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_run(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RangeError, NumericalError, EvaluationError, RegimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ResourceError, MemoryError) as exc:
        print(f"error: resource limit: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
