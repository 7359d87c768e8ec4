"""Multi-task episodic tabular MDPs and grid-map parsing.

Grid maps are plain text, one row per line::

    #  wall
    .  empty cell
    G  goal of a training task
    B  goal of a testing task

Non-wall cells are numbered in row-major order.  Each goal cell of the
selected kind defines one task whose only terminal state is that cell.
"""
from __future__ import annotations

import enum
import os
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import (
    IndexOutOfRangeError,
    NoEmptyCellsError,
    NoGoalsForModeError,
    NonRectangularError,
    UnenclosedBoundaryError,
    UnknownCharacterError,
)

ACTIONS = ("up", "down", "left", "right")
MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)], dtype=np.int64)

WALL, EMPTY, TRAIN_GOAL, TEST_GOAL = 0, 1, 2, 3
_CHARS = {"#": WALL, ".": EMPTY, "G": TRAIN_GOAL, "B": TEST_GOAL}
_SYMBOLS = {v: k for k, v in _CHARS.items()}


class TaskMode(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class GridSpec:
    """Parsed grid map.

    ``cells`` holds one of WALL/EMPTY/TRAIN_GOAL/TEST_GOAL per cell and
    ``state_index`` maps a cell to its StateId (-1 on walls).
    """

    cells: np.ndarray
    name: str = "grid"
    state_index: np.ndarray = field(init=False, repr=False)
    coords: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        index = np.full(cells.shape, -1, dtype=np.int64)
        rows, cols = np.nonzero(cells != WALL)
        index[rows, cols] = np.arange(rows.size)
        index.setflags(write=False)
        object.__setattr__(self, "state_index", index)
        coords = np.stack([rows, cols], axis=1)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def num_states(self) -> int:
        return len(self.coords)

    def goals(self, mode: TaskMode | str) -> np.ndarray:
        """StateIds of the goal cells of ``mode``, in row-major order."""
        kind = TRAIN_GOAL if TaskMode(mode) is TaskMode.TRAIN else TEST_GOAL
        r, c = np.nonzero(self.cells == kind)
        return self.state_index[r, c]

    def to_text(self) -> str:
        return "\n".join("".join(_SYMBOLS[int(v)] for v in row) for row in self.cells)

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return self.name == other.name and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.name, self.cells.tobytes()))


def parse_grid(text: str, name: str = "grid") -> GridSpec:
    lines = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise NoEmptyCellsError("empty map")
    width = len(lines[0])
    if any(len(line) != width for line in lines):
        raise NonRectangularError(f"rows of unequal length in map {name!r}")
    cells = np.empty((len(lines), width), dtype=np.int8)
    for r, line in enumerate(lines):
        for c, ch in enumerate(line):
            if ch not in _CHARS:
                raise UnknownCharacterError(f"unknown character {ch!r} at row {r}, col {c}")
            cells[r, c] = _CHARS[ch]
    if not np.any(cells != WALL):
        raise NoEmptyCellsError(f"map {name!r} has no non-wall cells")
    border = np.concatenate([cells[0], cells[-1], cells[:, 0], cells[:, -1]])
    if np.any(border != WALL):
        raise UnenclosedBoundaryError(f"map {name!r} is not enclosed by walls")
    return GridSpec(cells, name=name)


def load_map(source: str | os.PathLike) -> GridSpec:
    """Load a map from a path, a bundled asset name, or an inline string."""
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
        path = os.fspath(source)
        if os.path.exists(path):
            with open(path) as fh:
                return parse_grid(fh.read(), name=os.path.splitext(os.path.basename(path))[0])
        bundled = resources.files("fpoc.maps").joinpath(path if path.endswith(".map") else path + ".map")
        if bundled.is_file():
            return parse_grid(bundled.read_text(), name=os.path.splitext(bundled.name)[0])
        raise FileNotFoundError(path)
    return parse_grid(source)


def four_room() -> GridSpec:
    return load_map("fourroom.map")


def two_room() -> GridSpec:
    return load_map("tworoom.map")


class StepOutcome(NamedTuple):
    next_state: int
    reward: float
    terminated: bool


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite multi-task episodic MDP stored as padded outcome lists.

    For task ``n``, state ``s`` and action ``a`` the possible outcomes are
    ``next_state[n, s, a, j]`` with reward ``reward[n, s, a, j]`` and
    probability ``prob[n, s, a, j]``; unused slots have probability 0.
    """

    next_state: np.ndarray
    reward: np.ndarray
    prob: np.ndarray
    terminal: np.ndarray
    d0: np.ndarray
    gamma: float = 1.0
    grid: GridSpec | None = None
    goals: np.ndarray | None = None

    def __post_init__(self):
        for name, dtype in (("next_state", np.int64), ("reward", np.float64),
                            ("prob", np.float64), ("terminal", np.bool_), ("d0", np.float64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.prob.ndim != 4 or not (self.prob.shape == self.next_state.shape == self.reward.shape):
            raise ValueError("outcome tables must share a (N, S, A, K) shape")
        if self.terminal.shape != self.prob.shape[:2] or self.d0.shape != (self.prob.shape[1],):
            raise ValueError("terminal/d0 shapes do not match the outcome tables")
        if not np.allclose(self.prob.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("outcome probabilities must sum to 1")
        n, s = np.nonzero(self.terminal)
        live = self.prob[n, s] > 0
        if np.any(live & (self.next_state[n, s] != s[:, None, None])) or np.any(live & (self.reward[n, s] != 0)):
            raise ValueError("terminal states must self-loop with reward 0")
        if abs(self.d0.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @property
    def num_tasks(self) -> int:
        return self.prob.shape[0]

    @property
    def num_states(self) -> int:
        return self.prob.shape[1]

    @property
    def num_actions(self) -> int:
        return self.prob.shape[2]

    def transition_matrix(self) -> np.ndarray:
        """Dense ``P[n, s, a, s']``."""
        N, S, A, K = self.prob.shape
        P = np.zeros((N, S, A, S))
        n, s, a, _ = np.indices(self.prob.shape)
        np.add.at(P, (n, s, a, self.next_state), self.prob)
        return P

    def expected_reward(self) -> np.ndarray:
        """``r[n, s, a]`` = expected one-step reward."""
        return np.einsum("nsak,nsak->nsa", self.prob, self.reward)

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.next_state, self.reward, self.prob, self.terminal, self.d0,
                          gamma, self.grid, self.goals)


def build_mdp(grid: GridSpec, mode: TaskMode | str = TaskMode.TRAIN, gamma: float = 1.0) -> TabularMdp:
    """One task per goal cell of ``mode``; deterministic moves, reward -1 per step."""
    goals = grid.goals(mode)
    if goals.size == 0:
        raise NoGoalsForModeError(f"map {grid.name!r} has no {TaskMode(mode).value} goals")
    S, A, N = grid.num_states, len(ACTIONS), goals.size
    dest = np.empty((S, A), dtype=np.int64)
    for s, (r, c) in enumerate(grid.coords):
        for a, (dr, dc) in enumerate(MOVES):
            rr, cc = r + dr, c + dc
            inside = 0 <= rr < grid.height and 0 <= cc < grid.width
            dest[s, a] = grid.state_index[rr, cc] if inside and grid.cells[rr, cc] != WALL else s
    next_state = np.broadcast_to(dest[None, :, :, None], (N, S, A, 1)).copy()
    reward = np.full((N, S, A, 1), -1.0)
    terminal = np.zeros((N, S), dtype=bool)
    terminal[np.arange(N), goals] = True
    for n, g in enumerate(goals):
        next_state[n, g] = g
        reward[n, g] = 0.0
    prob = np.ones((N, S, A, 1))
    d0 = np.full(S, 1.0 / S)
    return TabularMdp(next_state, reward, prob, terminal, d0, gamma, grid, goals)


def step(mdp: TabularMdp, n: int, s: int, a: int, rng: np.random.Generator) -> StepOutcome:
    if not (0 <= n < mdp.num_tasks and 0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
        raise IndexOutOfRangeError(f"(task={n}, state={s}, action={a}) out of range")
    j = sample_index(mdp.prob[n, s, a], rng.random())
    s2 = int(mdp.next_state[n, s, a, j])
    return StepOutcome(s2, float(mdp.reward[n, s, a, j]), bool(mdp.terminal[n, s2]))


def sample_index(p: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from ``p`` using the uniform ``u``; never picks a zero-mass slot."""
    acc = 0.0
    last = 0
    for j in range(len(p)):
        if p[j] > 0.0:
            acc += p[j]
            last = j
            if u < acc:
                return j
    return last


def check_episodic(mdp: TabularMdp) -> bool:
    """Every non-terminal state can reach a terminal state of every task.

    Under a uniformly random policy this is equivalent to termination
    having positive probability within ``|S \\ terminals|`` steps.
    """
    P = mdp.transition_matrix().sum(axis=2) > 0
    for n in range(mdp.num_tasks):
        reached = mdp.terminal[n].copy()
        frontier = deque(np.flatnonzero(reached))
        preds = [np.flatnonzero(P[n, :, s]) for s in range(mdp.num_states)]
        while frontier:
            s = frontier.popleft()
            for p in preds[s]:
                if not reached[p]:
                    reached[p] = True
                    frontier.append(p)
        if not reached.all():
            return False
    return True


def bfs_distances(grid: GridSpec, target: int, blocked=()) -> np.ndarray:
    """Shortest move counts from every state to ``target`` (inf if unreachable).

    States in ``blocked`` are not expanded (paths may end but not pass there).
    """
    dist = np.full(grid.num_states, np.inf)
    dist[target] = 0
    blocked = set(int(b) for b in blocked)
    frontier = deque([target])
    while frontier:
        s = frontier.popleft()
        r, c = grid.coords[s]
        for dr, dc in MOVES:
            rr, cc = r + dr, c + dc
            if grid.cells[rr, cc] == WALL:
                continue
            t = grid.state_index[rr, cc]
            if np.isinf(dist[t]):
                dist[t] = dist[s] + 1
                if t not in blocked:
                    frontier.append(t)
    return dist


def fig1_mdp() -> TabularMdp:
    """Four-node option-level chain: left -> {top, bottom} -> ... -> terminal.

    State 0 is the left state, 1 and 2 the middle states, 3 the terminal.
    Action 0 is the depicted best option; action 1 idles in place.  The
    depicted option from the left state reaches either middle state with
    probability 1/2, the top middle state reaches the terminal directly and
    the bottom one passes through the top one.
    """
    next_state = np.array([
        [[1, 2], [0, 0]],
        [[3, 3], [1, 1]],
        [[1, 1], [2, 2]],
        [[3, 3], [3, 3]],
    ])
    prob = np.array([
        [[0.5, 0.5], [1.0, 0.0]],
        [[1.0, 0.0], [1.0, 0.0]],
        [[1.0, 0.0], [1.0, 0.0]],
        [[1.0, 0.0], [1.0, 0.0]],
    ])
    reward = np.full(prob.shape, -1.0)
    reward[3] = 0.0
    terminal = np.array([False, False, False, True])
    d0 = np.array([1.0, 0.0, 0.0, 0.0])
    return TabularMdp(next_state[None], reward[None], prob[None], terminal[None], d0, 1.0)


def fig1_smdp():
    """Option-level model of the four-node chain (see :func:`fig1_mdp`)."""
    from .planner import primitive_models

    return primitive_models(fig1_mdp())
