"""The exact objective and its gradient on a small random problem.

The objective is solved exactly by enumerating initiation sets; its
gradient is compared with central finite differences, and the objective
itself with a Monte-Carlo average of compound returns.
"""
import numpy as np

from fpoc.options import OptionSet
from fpoc.oracle import (
    exact_gradient,
    exact_objective,
    finite_diff_gradient,
    random_fixture,
    relative_error,
    simulate_compound_returns,
)

rng = np.random.default_rng(1)
fx = random_fixture(rng, num_states=5, k=2, num_tasks=2, c=0.2)
opts = OptionSet.from_tables(fx.tables)

values = exact_objective(fx.mdp, opts, fx.meta, fx.c)
print(f"J = {values.J:.5f}  (reward part {fx.mdp.d0 @ values.v_bar.sum(axis=0):.5f}, "
      f"cost part {fx.c * fx.mdp.d0 @ values.v_tilde.sum(axis=0):.5f})")

returns = simulate_compound_returns(fx.mdp, opts, fx.meta, fx.c, 200_000, rng)
est = fx.mdp.num_tasks * returns.mean()
se = fx.mdp.num_tasks * returns.std() / np.sqrt(returns.size)
print(f"Monte-Carlo J = {est:.5f} +- {se:.5f}")

g = exact_gradient(fx.mdp, fx.tables, fx.meta, fx.c)
fd = finite_diff_gradient(fx.mdp, fx.tables, fx.meta, fx.c)
print("interest gradient (exact):\n", g.w_int)
print("interest gradient (finite differences):\n", fd.w_int)
print(f"max relative error over all parameters: {relative_error(g.flat(), fd.flat()):.2e}")
