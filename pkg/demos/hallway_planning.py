"""Planning on the four-room test tasks with and without hallway options.

Each hallway option walks to the next room clockwise (option 0) or
counter-clockwise (option 1).  Adding them to the primitive actions
raises the per-state branching but cuts the number of sweeps enough to
lower the total operation count.
"""
import numpy as np

from fpoc.harness import render_options
from fpoc.mdp import build_mdp, four_room
from fpoc.options import OptionSet, make_hallway_options
from fpoc.planner import optimal_values, plan

grid = four_room()
print(grid.to_text())

hallway = make_hallway_options(grid)
print()
print(render_options(grid, hallway))

for mode in ("train", "test"):
    mdp = build_mdp(grid, mode)
    v_star = optimal_values(mdp)
    rng = np.random.default_rng(0)
    print(f"\n{mode} tasks: {mdp.num_tasks}")
    for name, opts in (("primitives", OptionSet.primitives(grid.num_states, 4)), ("hallway", hallway)):
        _, report = plan(mdp, opts, rng, v_star=v_star)
        print(f"  {name:10s} sweeps {report.iterations:3d}  operations {report.total_operations:>12,}"
              f"  final error {report.error_trace[-1]:.3f}")
