import numpy as np
import pytest

from fpoc.errors import (
    IndexOutOfRangeError,
    NoEmptyCellsError,
    NoGoalsForModeError,
    NonRectangularError,
    UnenclosedBoundaryError,
    UnknownCharacterError,
)
from fpoc.mdp import (
    TabularMdp,
    TaskMode,
    bfs_distances,
    build_mdp,
    check_episodic,
    fig1_mdp,
    load_map,
    parse_grid,
    step,
    two_room,
)

SMALL = """
#####
#.G.#
#..B#
#####
"""


def test_four_room_shape(grid):
    assert grid.num_states == 104
    assert grid.goals("train").size == 20
    assert grid.goals("test").size == 16
    assert not set(grid.goals("train")) & set(grid.goals("test"))


def test_round_trip_text(grid):
    assert parse_grid(grid.to_text(), name=grid.name) == grid


def test_state_ids_row_major():
    g = parse_grid(SMALL)
    assert g.num_states == 6
    np.testing.assert_array_equal(g.coords[:3], [[1, 1], [1, 2], [1, 3]])
    assert g.state_index[0, 0] == -1


@pytest.mark.parametrize("text, err", [
    ("###\n#.\n###", NonRectangularError),
    ("###\n#x#\n###", UnknownCharacterError),
    ("###\n###", NoEmptyCellsError),
    ("...\n#.#\n###", UnenclosedBoundaryError),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_grid(text)


def test_load_map_sources(tmp_path, grid):
    path = tmp_path / "m.map"
    path.write_text(SMALL)
    assert load_map(path).num_states == 6
    assert load_map("fourroom") == grid
    assert load_map(SMALL).num_states == 6
    with pytest.raises(FileNotFoundError):
        load_map("nowhere")


def test_no_goals_for_mode():
    g = parse_grid("####\n#.G#\n####")
    with pytest.raises(NoGoalsForModeError):
        build_mdp(g, TaskMode.TEST)


def test_grid_dynamics(grid, train_mdp):
    mdp = train_mdp
    assert mdp.num_tasks == 20 and mdp.num_actions == 4
    np.testing.assert_allclose(mdp.d0, 1.0 / grid.num_states)
    rng = np.random.default_rng(0)
    s = int(grid.state_index[1, 1])
    n = int(np.flatnonzero(mdp.goals != s)[0])
    # Moving up from the top-left corner bumps into a wall.
    out = step(mdp, n, s, 0, rng)
    assert out.next_state == s and out.reward == -1.0
    out = step(mdp, n, s, 1, rng)
    assert out.next_state == grid.state_index[2, 1]
    g = int(mdp.goals[0])
    assert mdp.terminal[0, g]
    assert step(mdp, 0, g, 1, rng) == (g, 0.0, True)


def test_step_out_of_range(train_mdp, rng):
    with pytest.raises(IndexOutOfRangeError):
        step(train_mdp, 20, 0, 0, rng)
    with pytest.raises(IndexOutOfRangeError):
        step(train_mdp, 0, 0, 4, rng)


def test_episodic(train_mdp, test_mdp):
    assert check_episodic(train_mdp) and check_episodic(test_mdp)
    assert check_episodic(build_mdp(two_room()))


def test_not_episodic():
    # State 1 loops forever and never reaches the terminal state 2.
    ns = np.array([[[[1], [0]], [[1], [1]], [[2], [2]]]])
    reward = -np.ones(ns.shape)
    reward[0, 2] = 0.0
    mdp = TabularMdp(ns, reward, np.ones(ns.shape), np.array([[False, False, True]]), np.array([1.0, 0.0, 0.0]))
    assert not check_episodic(mdp)


def test_terminal_must_self_loop():
    ns = np.array([[[[1], [0]], [[0], [0]]]])
    with pytest.raises(ValueError):
        TabularMdp(ns, -np.ones(ns.shape), np.ones(ns.shape), np.array([[False, True]]), np.array([1.0, 0.0]))


def test_bfs_distances(grid):
    goal = int(grid.state_index[1, 1])
    d = bfs_distances(grid, goal)
    assert d[goal] == 0
    assert d[grid.state_index[1, 2]] == 1
    assert np.isfinite(d).all()


def test_fig1_mdp_structure():
    mdp = fig1_mdp()
    assert mdp.num_states == 4 and mdp.num_tasks == 1
    P = mdp.transition_matrix()
    np.testing.assert_allclose(P[0, 0, 0], [0, 0.5, 0.5, 0])
    np.testing.assert_allclose(P[0, 2, 0], [0, 1, 0, 0])
    assert check_episodic(mdp)


def test_mdp_arrays_read_only(train_mdp):
    with pytest.raises(ValueError):
        train_mdp.reward[0, 0, 0, 0] = 5.0
