"""Command-line entry point: ``hedgelab <kind> --config FILE | --recipe NAME``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every failure prints exactly one diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import pydantic
import scipy

from hedgelab import __version__
from hedgelab.config import SCHEMAS, U64_MAX, ExperimentConfig, load_config, load_recipe, recipe_names
from hedgelab.csvio import render, write_csv
from hedgelab.errors import ConfigError, HedgeLabError
from hedgelab.experiments import OUTPUTS, plan

log = logging.getLogger("hedgelab")
DEFAULT_OUT = "hedgelab-out"
ENV_OUT = "HEDGELAB_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return value


def _threads(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid thread count {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hedgelab", description="Hedge-error and Monte Carlo experiments with CSV output.")
    parser.add_argument("--version", action="version", version=f"hedgelab {__version__}")
    parser.add_argument("--list-recipes", action="store_true", help="print bundled recipe names and exit")
    sub = parser.add_subparsers(dest="kind", metavar="KIND", parser_class=_Parser)
    for kind in SCHEMAS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="JSON config file")
        src.add_argument("--recipe", metavar="NAME", help="bundled recipe name")
        p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--threads", type=_threads, default=1, help="worker threads (output is independent of it)")
        p.add_argument("--quiet", action="store_true", help="suppress the run log")
    return parser


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.output_dir or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def _versions():
    return {"hedgelab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pydantic": pydantic.__version__}


def _fail(code, message):
    print(f"hedgelab: error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(2, exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.list_recipes:
        print("\n".join(recipe_names()))
        return 0
    if args.kind is None:
        return _fail(2, "missing experiment kind; choose one of " + ", ".join(SCHEMAS))

    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", force=True)
    try:
        cfg = load_config(args.config, args.kind) if args.config else load_recipe(args.recipe, args.kind)
        if args.seed is not None:
            cfg = ExperimentConfig(cfg.kind, cfg.params, args.seed, cfg.output_dir)
        out_dir = _output_dir(args, cfg)
        job = plan(cfg)
    except (ConfigError, HedgeLabError, ValueError) as exc:  # nothing has run yet: a config problem
        return _fail(2, exc)
    echo = cfg.echo()
    echo["output_dir"] = str(out_dir)
    log.info("config %s", json.dumps(echo, sort_keys=True))

    start = time.perf_counter()
    try:
        result = job(args.threads)
        rendered = {name: render(table) for name, table in result.tables.items()}
    except (HedgeLabError, ValueError, ArithmeticError) as exc:
        return _fail(1, exc)
    wall = time.perf_counter() - start

    try:
        outputs = {}
        for name in OUTPUTS[cfg.kind]:
            write_csv(result.tables[name], out_dir / name)
            outputs[name] = {"rows": len(result.tables[name].rows),
                             "sha256": hashlib.sha256(rendered[name].encode("utf-8")).hexdigest()}
        manifest = {"kind": cfg.kind, "config": echo, "master_seed": cfg.master_seed, "threads": args.threads,
                    "versions": _versions(), "wall_time_seconds": wall, "row_timings": result.timings,
                    "outputs": outputs}
        tmp = out_dir / ".manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, out_dir / "manifest.json")
    except OSError as exc:
        return _fail(1, exc)
    log.info("wrote %s (%.2f s)", ", ".join(str(out_dir / n) for n in outputs), wall)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
