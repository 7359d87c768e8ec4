import numpy as np
import pytest

from fpoc.errors import EmptyInitiationSetError
from fpoc.executor import (
    Mode,
    compound_return,
    meta_policy,
    rollout,
    run_episode,
    sample_initiation_set,
)
from fpoc.mdp import fig1_mdp
from fpoc.options import OptionSet, make_hallway_options


def fig1_greedy():
    """Primitive options on the four-node chain with the depicted option (action 0) preferred."""
    mdp = fig1_mdp()
    q = np.zeros((1, 4, 2))
    q[0, :, 0] = 1.0
    return mdp, OptionSet.primitives(4, 2), q


def test_meta_policy():
    p = meta_policy([1.0, 3.0, 3.0, 0.0], [0, 1, 2], 0.3)
    np.testing.assert_allclose(p, [0.1, 0.45, 0.45, 0.0])
    np.testing.assert_allclose(meta_policy([1.0, 2.0], [0], 0.5), [1.0, 0.0])
    with pytest.raises(EmptyInitiationSetError):
        meta_policy([1.0], [], 0.1)


def test_initiation_set_frequencies(rng):
    o = OptionSet.from_adjustable(np.full((1, 2, 3), 1 / 3), np.full((1, 2), 0.5), np.array([[0.25, 0.0]]))
    counts = np.zeros(5)
    for _ in range(4000):
        counts[sample_initiation_set(o, 0, rng)] += 1
    np.testing.assert_allclose(counts / 4000, [0.25, 0, 1, 1, 1], atol=0.03)


def test_episode_trace(train_mdp, grid, rng):
    opts = make_hallway_options(grid)
    q = np.zeros((train_mdp.num_tasks, grid.num_states, opts.num_options))
    tr = run_episode(train_mdp, 3, opts, q, 0.1, Mode.LEARN, rng)
    assert tr.length == len(tr.rewards) == len(tr.states) - 1
    assert tr.decision_steps[0] == 0
    assert all(c == 6 for c in tr.decision_costs)
    assert tr.terminated[-1] or tr.truncated
    assert compound_return(tr, 0.2) == pytest.approx(tr.ret - 0.2 * 6 * len(tr.decision_steps))
    with pytest.raises(ValueError):
        compound_return(tr, -1.0)


def test_terminal_start_has_no_decisions(train_mdp, grid, rng):
    opts = OptionSet.primitives(grid.num_states, 4)
    q = np.zeros((train_mdp.num_tasks, grid.num_states, 4))
    tr = run_episode(train_mdp, 0, opts, q, 0.1, "greedy", rng, start_state=int(train_mdp.goals[0]))
    assert tr.length == 0 and tr.decision_steps == [] and tr.ret == 0.0


def test_truncation(train_mdp, grid, rng):
    opts = OptionSet.primitives(grid.num_states, 4)
    q = np.zeros((train_mdp.num_tasks, grid.num_states, 4))
    q[..., 0] = 1.0   # always "up": stuck against a wall
    start = int(grid.state_index[1, 3])
    tr = run_episode(train_mdp, 0, opts, q, 0.0, "greedy", rng, max_steps=7, start_state=start)
    assert tr.truncated and tr.length == 7
    with pytest.raises(ValueError):
        run_episode(train_mdp, 0, opts, q, 0.0, "greedy", rng, max_steps=0)


def test_fig1_python_episodes(rng):
    mdp, opts, q = fig1_greedy()
    decisions = [len(run_episode(mdp, 0, opts, q, 0.0, "greedy", rng).decision_steps) for _ in range(2000)]
    assert set(decisions) == {2, 3}
    assert np.mean(decisions) == pytest.approx(2.5, abs=0.05)


def test_fig1_expected_options():
    mdp, opts, q = fig1_greedy()
    summary = rollout(mdp, opts, q, 0.0, 10**6, np.random.default_rng(0))
    assert abs(summary.decisions.mean() - 2.5) < 0.01
    assert not summary.truncated.any()


def test_rollout_matches_python_executor(train_mdp, grid):
    opts = make_hallway_options(grid)
    rng = np.random.default_rng(5)
    q = rng.normal(size=(train_mdp.num_tasks, grid.num_states, opts.num_options))
    fast = rollout(train_mdp, opts, q, 0.2, 4000, np.random.default_rng(1), eps=0.1, max_steps=40)
    slow = [compound_return(run_episode(train_mdp, int(rng.integers(20)), opts, q, 0.1, "learn", rng,
                                        max_steps=40), 0.2)
            for _ in range(2000)]
    se = np.hypot(fast.stderr, np.std(slow) / np.sqrt(len(slow)))
    assert abs(fast.mean - np.mean(slow)) < 4 * se
