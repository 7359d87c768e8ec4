"""Four-node chain: how many sweeps does planning need, and how many options run per episode?

The best option from the left node reaches either middle node with
probability 1/2.  From the top node it finishes in one more decision,
from the bottom node in two.
"""
import numpy as np

from fpoc.executor import rollout
from fpoc.mdp import fig1_mdp, fig1_smdp
from fpoc.options import OptionSet
from fpoc.planner import optimal_values, option_value_iteration

mdp = fig1_mdp()
model = fig1_smdp()
v_star = optimal_values(mdp)
print("optimal values (left, top, bottom, terminal):", v_star[0])

# Start every estimate below anything attainable and sweep until exact.
omega = np.ones((4, 2), dtype=bool)
q, report, trace = option_value_iteration(model, omega, v_star, err_tol=1e-12, history=True)
for i, table in enumerate(trace):
    print(f"sweep {i}: values {table.max(axis=2)[0]}")
print("sweeps needed:", report.iterations)

# Run the depicted policy many times and count decisions per episode.
q_pref = np.zeros((1, 4, 2))
q_pref[0, :, 0] = 1.0
summary = rollout(mdp, OptionSet.primitives(4, 2), q_pref, 0.0, 10**6, np.random.default_rng(0))
print(f"mean options per episode: {summary.decisions.mean():.4f}")
