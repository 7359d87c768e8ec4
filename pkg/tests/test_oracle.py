import numpy as np
import pytest

from fpoc.errors import PowerSetTooLargeError, SingularSystemError
from fpoc.learner import estimate_batch, estimate_m, estimate_v, sample_omegas
from fpoc.mdp import TabularMdp
from fpoc.options import OptionSet
from fpoc.oracle import (
    Fixture,
    MetaPreference,
    exact_gradient,
    exact_m_target,
    exact_objective,
    exact_option_model,
    exact_v_target,
    finite_diff_gradient,
    greedy_set_value,
    naive_m,
    occupancy,
    power_set,
    random_fixture,
    relative_error,
    set_probabilities,
    simulate_compound_returns,
)
from fpoc.planner import exact_option_models


def test_power_set():
    ps = power_set(3)
    assert ps.shape == (8, 3)
    assert len({tuple(r) for r in ps}) == 8
    with pytest.raises(PowerSetTooLargeError):
        power_set(13)


def test_set_probabilities_sum_to_one(rng):
    i = rng.random(4)
    pr = set_probabilities(i, power_set(4))
    assert pr.sum() == pytest.approx(1.0)
    # Marginal inclusion probability of each option is its interest.
    np.testing.assert_allclose(pr @ power_set(4), i)


def test_single_state_objective():
    # One live state, one action, reward -1, terminates surely: J = -1 - c * |A|.
    ns = np.array([[[[1]], [[1]]]])
    reward = np.array([[[[-1.0]], [[0.0]]]])
    mdp = TabularMdp(ns, reward, np.ones(ns.shape), np.array([[False, True]]), np.array([1.0, 0.0]))
    opts = OptionSet.primitives(2, 1)
    vals = exact_objective(mdp, opts, MetaPreference.uniform(1, 2, 1), 0.5)
    assert vals.J == pytest.approx(-1.5)
    assert vals.v_tilde[0, 0] == pytest.approx(-1.0)


def test_objective_matches_simulation():
    fx = random_fixture(np.random.default_rng(3), c=0.2)
    opts = OptionSet.from_tables(fx.tables)
    exact = exact_objective(fx.mdp, opts, fx.meta, fx.c)
    sims = simulate_compound_returns(fx.mdp, opts, fx.meta, fx.c, 100_000, np.random.default_rng(4))
    est = fx.mdp.num_tasks * sims.mean()
    se = fx.mdp.num_tasks * sims.std() / np.sqrt(sims.size)
    assert abs(est - exact.J) < 4 * se


def test_discounted_objective_matches_simulation():
    fx = random_fixture(np.random.default_rng(8), c=1.0, gamma=0.9)
    opts = OptionSet.from_tables(fx.tables)
    exact = exact_objective(fx.mdp, opts, fx.meta, fx.c)
    sims = simulate_compound_returns(fx.mdp, opts, fx.meta, fx.c, 100_000, np.random.default_rng(9))
    est = fx.mdp.num_tasks * sims.mean()
    assert abs(est - exact.J) < 4 * fx.mdp.num_tasks * sims.std() / np.sqrt(sims.size)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    fx = random_fixture(rng, c=[0.0, 0.2, 1.0][seed])
    g = exact_gradient(fx.mdp, fx.tables, fx.meta, fx.c)
    fd = finite_diff_gradient(fx.mdp, fx.tables, fx.meta, fx.c)
    assert relative_error(g.flat(), fd.flat()) < 1e-5


def test_occupancy_counts_decisions():
    # Primitives with gamma = 1: total occupancy equals the expected episode length.
    fx = random_fixture(np.random.default_rng(11), k=0, num_tasks=1)
    opts = OptionSet.from_tables(fx.tables)
    vals = exact_objective(fx.mdp, opts, fx.meta, 0.0)
    d = occupancy(fx.mdp, opts, vals, 0)
    expected_length = -float(fx.mdp.d0 @ _length_values(fx.mdp, opts, fx.meta))
    assert d.sum() == pytest.approx(expected_length)


def _length_values(mdp, opts, meta):
    unit = TabularMdp(mdp.next_state, np.where(mdp.terminal[..., None, None], 0.0, -1.0) * np.ones(mdp.reward.shape),
                      mdp.prob, mdp.terminal, mdp.d0, mdp.gamma)
    return exact_objective(unit, opts, meta, 0.0).v[0]


def test_option_model_agrees_with_planner(rng):
    fx = random_fixture(rng)
    opts = OptionSet.from_tables(fx.tables)
    model = exact_option_models(fx.mdp, opts)
    for n in range(fx.mdp.num_tasks):
        for h in range(opts.num_options):
            r, p = exact_option_model(fx.mdp, opts, h, n)
            np.testing.assert_allclose(model.r[n, :, h], r, atol=1e-12)
            np.testing.assert_allclose(model.p[n, :, h], p, atol=1e-12)


def test_option_model_singular():
    # A single self-looping state whose option never terminates.
    ns = np.array([[[[0]], [[1]]]])
    mdp = TabularMdp(ns, np.array([[[[-1.0]], [[0.0]]]]), np.ones(ns.shape), np.array([[False, True]]),
                     np.array([1.0, 0.0]))
    opts = OptionSet.from_adjustable(np.ones((2, 1, 1)), np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(SingularSystemError):
        exact_option_model(mdp, opts, 0)


def test_fixture_json_round_trip(rng):
    fx = random_fixture(rng)
    back = Fixture.from_json(fx.to_json())
    opts = OptionSet.from_tables(fx.tables)
    j0 = exact_objective(fx.mdp, opts, fx.meta, fx.c).J
    j1 = exact_objective(back.mdp, OptionSet.from_tables(back.tables), back.meta, back.c).J
    assert j0 == j1


def test_negative_cost_rejected(rng):
    fx = random_fixture(rng)
    with pytest.raises(ValueError):
        exact_objective(fx.mdp, OptionSet.from_tables(fx.tables), fx.meta, -0.1)


def test_estimators_single_set():
    q = np.array([1.0, 4.0, 2.0, 3.0])
    interest = np.array([0.3, 0.6])
    # omega = {0} plus primitives {2, 3}; eps = 0 makes A the max.
    v = estimate_v(q, interest, [0, 2, 3], 0.0, 0.0)
    assert v == pytest.approx(0.5 * (0.3 * 3.0 + 0.7 * 3.0) + 0.5 * (0.6 * 4.0 + 0.4 * 3.0))
    m = estimate_m(q, interest, [0, 2, 3], 0.0, 0.1)
    np.testing.assert_allclose(m, [0.21 * (3.0 - 3.0 - 0.1), 0.24 * (4.0 - 3.0 - 0.1)])
    assert greedy_set_value(q, [True, False, True, True], 0.3) == pytest.approx(0.7 * 3.0 + 0.1 * 6.0)


def test_estimators_k0_reduce_to_set_value():
    q = np.array([1.0, 3.0])
    assert estimate_v(q, np.zeros(0), [0, 1], 0.1, 0.2) == pytest.approx(0.9 * 3.0 + 0.1 * 2.0)
    assert estimate_m(q, np.zeros(0), [0, 1], 0.1, 0.2).shape == (0,)


def test_estimators_unbiased_small():
    rng = np.random.default_rng(21)
    q = rng.normal(size=6)
    interest = rng.random(3)
    masks = sample_omegas(interest, 6, 200_000, rng)
    v, m = estimate_batch(q, interest, masks, 0.1, 0.2)
    nm = naive_m(q, interest, masks, 0.1, 0.2)
    assert abs(v.mean() - exact_v_target(q, interest, 0.1, 0.2)) < 3 * v.std() / np.sqrt(v.size) + 1e-12
    target = exact_m_target(q, interest, 0.1, 0.2)
    np.testing.assert_array_less(np.abs(m.mean(axis=0) - target), 3 * m.std(axis=0) / np.sqrt(len(m)) + 1e-12)
    np.testing.assert_array_less(np.abs(nm.mean(axis=0) - target), 3 * nm.std(axis=0) / np.sqrt(len(nm)))


def test_batch_matches_single(rng):
    q = rng.normal(size=5)
    interest = rng.random(2)
    masks = sample_omegas(interest, 5, 20, rng)
    v, m = estimate_batch(q, interest, masks, 0.1, 0.2)
    for j in range(20):
        assert v[j] == estimate_v(q, interest, masks[j], 0.1, 0.2)
        np.testing.assert_array_equal(m[j], estimate_m(q, interest, masks[j], 0.1, 0.2))
