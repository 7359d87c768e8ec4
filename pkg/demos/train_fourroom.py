"""Train MAOC and FPOC on the four-room training tasks, then plan on the test tasks.

A run of 5e6 steps (the default) is enough to see the interest functions
of FPOC switch options off where they do not pay for their consideration
cost.  Pass ``--steps 10000000`` for the budget used by the acceptance
suite.
"""
import argparse

import numpy as np

from fpoc.harness import PlanSettings, plan_options, render_options
from fpoc.learner import LearnerConfig, train
from fpoc.mdp import build_mdp, four_room

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=5_000_000)
parser.add_argument("--k", type=int, default=8)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

grid = four_room()
mdp = build_mdp(grid, "train")
settings = PlanSettings(mode="test")

for name, eta in (("maoc", 0.05), ("fpoc", 0.0)):
    cfg = LearnerConfig(k=args.k, algorithm=name, eta=eta, cbar=0.2, total_steps=args.steps,
                        eval_every=max(args.steps // 20, 1))
    state, curve = train(cfg, mdp, np.random.default_rng(args.seed))
    opts = state.option_set(cfg)
    report = plan_options(grid, opts, settings, seed=args.seed)
    print(f"\n{name.upper()} k={args.k}")
    for row in curve[::4] + curve[-1:]:
        print(f"  step {row.step:>9,}  compound return {row.mean:8.2f} +- {row.stderr:.2f}")
    print(f"  mean interest {opts.interest[:, :args.k].mean():.2f}; test planning: {report.iterations} sweeps, "
          f"{report.total_operations:,} operations")
    print(render_options(grid, opts).split("\n\n")[0])
