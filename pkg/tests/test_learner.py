import numpy as np
import pytest
from scipy.special import expit

from fpoc.errors import NonConvergentError
from fpoc.learner import (
    Algorithm,
    LearnerConfig,
    LearnerState,
    _run_steps,
    estimate_v,
    fpoc_step,
    initial_value,
    load_checkpoint,
    run_steps,
    save_checkpoint,
    td_errors,
    train,
)
from fpoc.mdp import TabularMdp, build_mdp, parse_grid, sample_index
from fpoc.options import PINNED_PREFERENCE, entropy_grad_binary
from fpoc.planner import optimal_values


def two_state_mdp():
    """State 0 reaches the terminal state 1 under both actions with reward -1."""
    ns = np.array([[[[1], [1]], [[1], [1]]]])
    reward = np.array([[[[-1.0], [-1.0]], [[0.0], [0.0]]]])
    return TabularMdp(ns, reward, np.ones(ns.shape), np.array([[False, True]]), np.array([1.0, 0.0]))


def fresh(cfg, mdp, seed):
    rng = np.random.default_rng(seed)
    return LearnerState.initial(cfg, mdp, rng), rng


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(alpha=0.0)
    with pytest.raises(ValueError):
        LearnerConfig(is_clip="none")
    with pytest.raises(ValueError):
        LearnerConfig(k=-1)
    assert LearnerConfig(algorithm="maoc").algorithm is Algorithm.MAOC
    assert LearnerConfig(k=3).draws_per_step == 13


def test_initial_state(train_mdp):
    cfg = LearnerConfig(k=2, algorithm="maoc")
    state, _ = fresh(cfg, train_mdp, 0)
    assert state.q.shape == (20, 104, 6)
    assert initial_value(cfg, train_mdp) == -104.0
    assert (state.q[train_mdp.terminal] == 0).all()
    np.testing.assert_array_equal(state.option_set(cfg).interest, 1.0)
    assert LearnerConfig(q_init=-3.0).q_init == initial_value(LearnerConfig(q_init=-3.0), train_mdp)


def test_hand_traced_step():
    mdp = two_state_mdp()
    cfg = LearnerConfig(k=1, alpha=0.1, epsilon=0.1, cbar=0.2, eta=0.05, q_init=-2.0)
    state = LearnerState(np.array([[[-2.0] * 3, [0.0] * 3]]), LearnerState.initial(cfg, mdp, np.random.default_rng(0)).tables,
                         1.0, 0, 0)
    # Option 0 in the set, greedy pick of index 0, action 0, no termination draw.
    u = np.array([[0.1, 0.5, 0.1, 0.2, 0.3, 0.9, 0.9, 0.0, 0.0]])
    _run_steps(state, cfg, mdp, u)
    a = cfg.alpha
    np.testing.assert_allclose(state.tables.w_pi[0, 0], [0.5 * a, -0.5 * a], atol=1e-15)
    assert state.tables.w_beta[1, 0] == 0.0
    assert state.tables.w_int[0, 0] == pytest.approx(-a * 0.25 * cfg.cbar)
    np.testing.assert_allclose(state.q[0, 0], [-2.0 + a, -2.0 + a, -2.0])
    assert (state.step_count, state.episodes, state.state, state.option) == (1, 1, 0, -1)


def test_termination_update_is_gradient_plus_entropy_ascent():
    # Chain 0 -> 1 -> 2 (terminal); one step from 0 to 1 while executing option 0.
    ns = np.array([[[[1], [1]], [[2], [2]], [[2], [2]]]])
    reward = np.array([[[[-1.0]] * 2, [[-1.0]] * 2, [[0.0]] * 2]])
    mdp = TabularMdp(ns, reward, np.ones(ns.shape), np.array([[False, False, True]]), np.array([1.0, 0.0, 0.0]))
    cfg = LearnerConfig(k=1, alpha=0.1, epsilon=0.1, cbar=0.2, eta=0.05)
    tables = LearnerState.initial(cfg, mdp, np.random.default_rng(0)).tables
    tables.w_beta[1, 0] = 0.7
    q = np.array([[[-1.9, -2.0, -2.0], [-1.5, -1.2, -1.0], [0.0, 0.0, 0.0]]])
    state = LearnerState(q.copy(), tables, 1.0, 0, 0)
    u = np.array([[0.1, 0.5, 0.1, 0.2, 0.3, 0.4, 0.99, 0.0, 0.0]])
    _run_steps(state, cfg, mdp, u)
    beta = expit(0.7)
    v2 = estimate_v(q[0, 1], [0.5], [0, 1, 2], cfg.epsilon, cfg.cbar)
    a, g = cfg.alpha, cfg.gamma
    expected = 0.7 - a * g * beta * (1 - beta) * (q[0, 1, 0] - v2) + a * g * cfg.eta * entropy_grad_binary(beta)
    assert state.tables.w_beta[1, 0] == pytest.approx(expected, abs=1e-15)
    assert state.option == 0 and state.state == 1


def test_td_errors_shared_branch(rng):
    delta, fired = td_errors(-1.0, [1.0, 2.0], [3.0, 4.0], False, 1.0, 5.0, 0.5, rng)
    assert fired
    np.testing.assert_allclose(delta, [-1.0 - 1.0 + 2.5, -1.0 - 2.0 + 2.5])
    delta, fired = td_errors(-1.0, [1.0, 2.0], [3.0, 4.0], False, 0.0, 5.0, 1.0, rng)
    assert not fired
    np.testing.assert_allclose(delta, [1.0, 1.0])
    delta, _ = td_errors(-1.0, [1.0, 2.0], [3.0, 4.0], True, 0.0, 5.0, 1.0, rng)
    np.testing.assert_allclose(delta, [-2.0, -3.0])


def test_maoc_equals_pinned_fpoc(train_mdp):
    maoc = LearnerConfig(k=2, algorithm="maoc")
    fpoc = LearnerConfig(k=2, algorithm="fpoc")
    s_maoc, r_maoc = fresh(maoc, train_mdp, 7)
    s_fpoc, r_fpoc = fresh(fpoc, train_mdp, 7)
    s_fpoc.tables.w_int[:] = PINNED_PREFERENCE
    run_steps(s_maoc, maoc, train_mdp, r_maoc, 10_000)
    run_steps(s_fpoc, fpoc, train_mdp, r_fpoc, 10_000)
    assert np.array_equal(s_maoc.q, s_fpoc.q)
    assert np.array_equal(s_maoc.tables.w_pi, s_fpoc.tables.w_pi)
    assert np.array_equal(s_maoc.tables.w_beta, s_fpoc.tables.w_beta)
    assert np.array_equal(s_fpoc.tables.w_int, np.full_like(s_fpoc.tables.w_int, PINNED_PREFERENCE))


def reference_q_learning(mdp, q, task, s, uniforms, alpha, eps, gamma):
    """Per-task one-step Q-learning with an epsilon-greedy behaviour policy.

    The bootstrap is the value of the epsilon-greedy policy at the next
    state.  Uniforms are consumed in the learner's ``2k + 7`` layout with k = 0.
    """
    N, S, A, _ = mdp.prob.shape
    for u in uniforms:
        row = q[task, s]
        if u[0] < eps:
            a = min(int(u[1] * A), A - 1)
        else:
            best = [h for h in range(A) if row[h] == max(row)]
            a = best[min(int(u[1] * len(best)), len(best) - 1)]
        j = sample_index(mdp.prob[task, s, a], u[3])
        s2 = int(mdp.next_state[task, s, a, j])
        r = mdp.reward[task, s, a, j]
        z = 1.0 if mdp.terminal[task, s2] else 0.0
        nxt = q[task, s2]
        total = 0.0
        for x in nxt:
            total += x
        v2 = (1.0 - eps) * max(nxt) + eps * total / A
        q[task, s, a] += alpha * (r - q[task, s, a] + gamma * (1.0 - z) * v2)
        if z == 1.0:
            task = min(int(u[5] * N), N - 1)
            s = sample_index(mdp.d0, u[6])
        else:
            s = s2
    return q


def test_k0_is_q_learning(train_mdp):
    cfg = LearnerConfig(k=0, algorithm="fpoc")
    state, rng = fresh(cfg, train_mdp, 3)
    task, s, q0 = state.task, state.state, state.q.copy()
    ref_rng = np.random.default_rng(3)
    ref_rng.random(2)    # the two draws that placed the initial state
    ref = reference_q_learning(train_mdp, q0, task, s, ref_rng.random((10_000, 7)), cfg.alpha, cfg.epsilon,
                               cfg.gamma)
    run_steps(state, cfg, train_mdp, rng, 10_000)
    assert np.array_equal(state.q, ref)


def test_blocking_invariance(train_mdp):
    cfg = LearnerConfig(k=2)
    a, ra = fresh(cfg, train_mdp, 1)
    b, rb = fresh(cfg, train_mdp, 1)
    run_steps(a, cfg, train_mdp, ra, 300)
    for _ in range(300):
        fpoc_step(b, cfg, train_mdp, rb)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.tables.w_int, b.tables.w_int)
    assert (a.task, a.state, a.option, a.step_count) == (b.task, b.state, b.option, b.step_count)


def test_single_step_touches_expected_rows(train_mdp):
    cfg = LearnerConfig(k=2, cbar=0.2, eta=0.05)
    state, rng = fresh(cfg, train_mdp, 4)
    run_steps(state, cfg, train_mdp, rng, 50)
    for _ in range(200):
        before = state.copy()
        n, s = state.task, state.state
        fpoc_step(state, cfg, train_mdp, rng)
        dq = np.argwhere(state.q != before.q)
        assert all(tuple(x[:2]) == (n, s) for x in dq)
        dpi = np.argwhere(state.tables.w_pi != before.tables.w_pi)
        assert all(x[0] == s for x in dpi)
        dint = np.argwhere(state.tables.w_int != before.tables.w_int)
        assert all(x[0] == s for x in dint)
        assert len(np.unique(np.argwhere(state.tables.w_beta != before.tables.w_beta)[:, 0])) <= 1


def test_policy_preferences_keep_zero_sum(train_mdp):
    cfg = LearnerConfig(k=2, eta=0.05)
    state, rng = fresh(cfg, train_mdp, 5)
    run_steps(state, cfg, train_mdp, rng, 20_000)
    assert np.abs(state.tables.w_pi).max() > 0
    np.testing.assert_allclose(state.tables.w_pi.sum(axis=2), 0.0, atol=1e-12)


def test_maoc_leaves_interest_alone(train_mdp):
    cfg = LearnerConfig(k=2, algorithm="maoc")
    state, rng = fresh(cfg, train_mdp, 6)
    run_steps(state, cfg, train_mdp, rng, 5000)
    np.testing.assert_array_equal(state.tables.w_int, PINNED_PREFERENCE)


def test_max_clip_diverges_or_runs(train_mdp):
    cfg = LearnerConfig(k=2, is_clip="max", alpha=0.5)
    state, rng = fresh(cfg, train_mdp, 0)
    try:
        run_steps(state, cfg, train_mdp, rng, 200_000)
    except NonConvergentError:
        return
    assert np.isfinite(state.q).all()


def test_train_zero_steps(train_mdp):
    cfg = LearnerConfig(k=1, total_steps=0)
    result = train(cfg, train_mdp, np.random.default_rng(0))
    assert result.curve == [] and result.state.step_count == 0


def test_train_curve_and_determinism(train_mdp):
    cfg = LearnerConfig(k=1, total_steps=25_000, eval_every=10_000, eval_episodes=50)
    s1, c1 = train(cfg, train_mdp, np.random.default_rng(2))
    s2, c2 = train(cfg, train_mdp, np.random.default_rng(2))
    assert [r.step for r in c1] == [10_000, 20_000]
    assert c1 == c2 and np.array_equal(s1.q, s2.q)
    assert s1.step_count == 25_000


def test_evaluation_does_not_perturb_training(train_mdp):
    a = LearnerConfig(k=1, total_steps=20_000, eval_every=5_000, eval_episodes=20)
    b = LearnerConfig(k=1, total_steps=20_000, eval_every=20_000, eval_episodes=20)
    sa, _ = train(a, train_mdp, np.random.default_rng(9))
    sb, _ = train(b, train_mdp, np.random.default_rng(9))
    assert np.array_equal(sa.q, sb.q)


def test_checkpoint_round_trip(tmp_path, train_mdp):
    cfg = LearnerConfig(k=2, algorithm="fpoc", eta=0.0)
    state, rng = fresh(cfg, train_mdp, 8)
    run_steps(state, cfg, train_mdp, rng, 3000)
    path = tmp_path / "ck.json"
    save_checkpoint(path, state, cfg, seed=8)
    back, cfg2, doc = load_checkpoint(path)
    assert cfg2 == cfg and doc["seed"] == 8
    assert np.array_equal(back.q, state.q)
    assert np.array_equal(back.tables.w_pi, state.tables.w_pi)
    assert (back.task, back.state, back.option, back.beta_prev) == (state.task, state.state, state.option,
                                                                     state.beta_prev)
    # Resuming from the checkpoint continues the same trajectory.
    clone = np.random.default_rng(0)
    run_steps(state, cfg, train_mdp, clone, 500)
    run_steps(back, cfg, train_mdp, np.random.default_rng(0), 500)
    assert np.array_equal(back.q, state.q)


def test_learning_finds_shortest_paths():
    grid = parse_grid("#######\n#G....#\n#....G#\n#######")
    mdp = build_mdp(grid, "train")
    cfg = LearnerConfig(k=0, total_steps=200_000, eval_every=200_000, eval_episodes=2000)
    state, curve = train(cfg, mdp, np.random.default_rng(0))
    v_star = optimal_values(mdp)
    # Every primitive decision costs 0.2 * 4 on top of the -1 step reward.
    assert curve[-1].mean == pytest.approx(1.8 * mdp.d0 @ v_star.mean(axis=0), abs=0.3)
    # Values are those of the epsilon-greedy behaviour, a little below the optimum.
    v = state.q.max(axis=2)
    assert (v <= v_star + 1e-9).all() and (v >= 1.2 * v_star - 0.1).all()
