"""Command-line entry point: ``cplx-stgcn <subcommand> [--config C] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import NumericalError
from .pipelines import (RunConfig, cmd_datagen, cmd_eval, cmd_place, cmd_topology_transfer,
                        cmd_train_eval, cmd_verify_bounds)

log = logging.getLogger("cplx_stgcn")

SUBCOMMANDS = ("datagen", "place", "train", "eval", "verify-bounds", "transfer")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cplx-stgcn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="output directory")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "eval", "transfer"):
            s.add_argument("--task", choices=("pssf", "fdi"), help="override the config mode")
            s.add_argument("--data", help="directory written by datagen (default: regenerate)")
        if name in ("eval", "transfer"):
            s.add_argument("--checkpoint", required=(name == "eval"))
        if name == "transfer":
            s.add_argument("--line", type=int, help="branch index to trip")
    return p


def load_config(args) -> RunConfig:
    d: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    task = getattr(args, "task", None)
    if task is not None:
        d["mode"] = task
    elif args.command in ("datagen", "place", "verify-bounds"):
        d["mode"] = args.command
    elif d.get("mode") not in ("pssf", "fdi"):
        d["mode"] = "pssf"
    return RunConfig.from_dict(d)


def run(args) -> object:
    config = load_config(args)
    cmd = args.command
    if cmd == "datagen":
        return cmd_datagen(config)
    if cmd == "place":
        return cmd_place(config).to_json()
    if cmd == "train":
        return cmd_train_eval(config, args.data, log=lambda r: log.info("%s", r))
    if cmd == "eval":
        return cmd_eval(config, args.checkpoint, args.data)
    if cmd == "verify-bounds":
        reports = cmd_verify_bounds(config)
        bad = sum(not r.satisfied for r in reports)
        return {"rows": len(reports), "violations": bad}
    return cmd_topology_transfer(config, args.checkpoint, args.line)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        result = run(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result if isinstance(result, str) else json.dumps(result, default=str, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
