"""Command-line entry point: ``fpoc <verb> ...``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FpocError, MapError
from .harness import (PlanSettings, cmd_eval, cmd_plan, cmd_render, cmd_sweep, cmd_train, load_config,
                      write_scatter_csv)


def _plan_settings(args) -> PlanSettings:
    return PlanSettings(mode=args.mode, model_source=args.source, model_steps=args.model_steps,
                        err_tol=args.err_tol, max_iters=args.max_iters)


def _oracle_check(args) -> int:
    from .oracle import exact_gradient, finite_diff_gradient, random_fixture, relative_error

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for j in range(args.fixtures):
        fx = random_fixture(rng, num_states=int(rng.integers(2, 6)), k=int(rng.integers(0, 3)),
                            num_tasks=int(rng.integers(1, 3)), c=(0.0, 0.2, 1.0)[j % 3])
        err = relative_error(exact_gradient(fx.mdp, fx.tables, fx.meta, fx.c).flat(),
                             finite_diff_gradient(fx.mdp, fx.tables, fx.meta, fx.c, args.step).flat())
        worst = max(worst, err)
    print(json.dumps({"fixtures": args.fixtures, "maxRelativeError": worst, "tolerance": args.tol}))
    return 0 if worst < args.tol else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpoc", description="Fast-planning option discovery experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", help="train one run per seed from a config file")
    t.add_argument("config")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=500)
    e.add_argument("--c", type=float, default=0.2)
    e.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plan", help="option-value iteration with a checkpoint's options")
    pl.add_argument("checkpoint", nargs="?")
    pl.add_argument("--options", choices=("learned", "hallway", "primitives"), default="learned")
    pl.add_argument("--map", default="fourroom")
    pl.add_argument("--mode", choices=("train", "test"), default="test")
    pl.add_argument("--source", choices=("exact", "learned"), default="exact")
    pl.add_argument("--model-steps", type=int, default=1_000_000)
    pl.add_argument("--err-tol", type=float, default=0.1)
    pl.add_argument("--max-iters", type=int, default=1000)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--repeats", type=int, default=1, help="also plan with this many initiation-set samples")
    pl.add_argument("--report", help="write the PlanReport JSON here")
    pl.add_argument("--scatter", help="append the scatter row to this CSV")

    sw = sub.add_parser("sweep", help="parameter sweep from a config with a [sweep] section")
    sw.add_argument("config")

    r = sub.add_parser("render", help="ASCII panels of options")
    r.add_argument("checkpoint", nargs="?")
    r.add_argument("--hallway", action="store_true", help="render the built-in hallway options")
    r.add_argument("--map", default="fourroom")

    o = sub.add_parser("oracle-check", help="exact gradient versus finite differences on random fixtures")
    o.add_argument("--fixtures", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--step", type=float, default=1e-5)
    o.add_argument("--tol", type=float, default=1e-5)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "train":
            print(cmd_train(load_config(args.config)))
        elif args.verb == "eval":
            print(json.dumps(cmd_eval(args.checkpoint, args.episodes, args.c, args.seed)))
        elif args.verb == "plan":
            report, row = cmd_plan(args.checkpoint, _plan_settings(args), args.seed, args.options, args.map,
                                   args.repeats)
            text = report.to_json()
            if "repeats" in row:
                text = json.dumps({**json.loads(text), "repeats": row["repeats"]})
            if args.report:
                Path(args.report).write_text(text)
            if args.scatter:
                write_scatter_csv(args.scatter, [row], append=True)
            print(text)
        elif args.verb == "sweep":
            print(cmd_sweep(load_config(args.config)))
        elif args.verb == "render":
            print(cmd_render(args.checkpoint, args.hallway, args.map))
        elif args.verb == "oracle-check":
            return _oracle_check(args)
    except (ConfigError, MapError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FpocError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
