"""Command line entry point: ``tgplan {generate,dataset,train,eval,plan,all}``.

Exit codes: 0 on success, 1 on usage errors, 2 on data or validation errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiment import DataError, load_config, cmd_dataset, cmd_eval, cmd_generate, cmd_plan, cmd_train, run_all
from .learn import TrainingDiverged
from .pddl import PDDLError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

COMMANDS = {
    "generate": cmd_generate,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "all": run_all,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tgplan", description="Generate data, train and evaluate learned planning heuristics.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON or TOML experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed for instance generation and the split")
    p.add_argument("--seeds", type=int, nargs="+", help="training seeds")
    p.add_argument("--eval-cap", type=int, help="GBFS evaluation budget per instance")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--steps", type=int, help="optimizer steps per run")
    p.add_argument("--bound", choices=["hmax", "blind", "none"], action="append")
    p.add_argument("--dist", choices=["gaussian", "truncated"], action="append")
    p.add_argument("--sigma", choices=["fixed", "learned"], action="append")
    p.add_argument("--residual", choices=["ff", "none"], action="append")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    for key in ("out", "seed", "seeds", "eval_cap", "jobs"):
        v = getattr(args, key)
        if v is not None:
            o[key] = v
    if args.steps is not None:
        o["train"] = {"steps": args.steps}
    grid = {k: getattr(args, k) for k in ("dist", "sigma", "residual", "bound") if getattr(args, k)}
    if grid:
        o["grid"] = grid
    return o


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"tgplan: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
    except (OSError, ValueError) as e:
        print(f"tgplan: bad config: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = COMMANDS[args.command](cfg)
    except (DataError, PDDLError, TrainingDiverged, ValueError, OSError) as e:
        print(f"tgplan: error: {e}", file=sys.stderr)
        return EXIT_DATA
    if args.command in ("dataset",):
        print(json.dumps(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
