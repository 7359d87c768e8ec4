"""Options: adjustable parameter tables, primitive actions and hallway options.

Option indices are 0-based.  With ``k`` adjustable options and ``|A|``
actions, indices ``0..k-1`` are adjustable and ``k + a`` is the primitive
option for action ``a``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

from .errors import DegenerateDistributionError, IndexOutOfRangeError, UnsupportedGridError
from .mdp import MOVES, WALL, GridSpec, bfs_distances

PROB_CLAMP = 1e-12
# sigmoid(PINNED_PREFERENCE) == 1.0 exactly in float64.
PINNED_PREFERENCE = 50.0


@dataclass
class ParamTables:
    """Preference tables of the ``k`` adjustable options."""

    w_pi: np.ndarray    # (S, k, A)
    w_beta: np.ndarray  # (S, k)
    w_int: np.ndarray   # (S, k)

    @classmethod
    def zeros(cls, num_states: int, k: int, num_actions: int) -> "ParamTables":
        return cls(np.zeros((num_states, k, num_actions)), np.zeros((num_states, k)), np.zeros((num_states, k)))

    @property
    def num_states(self) -> int:
        return self.w_pi.shape[0]

    @property
    def k(self) -> int:
        return self.w_pi.shape[1]

    @property
    def num_actions(self) -> int:
        return self.w_pi.shape[2]

    @property
    def num_options(self) -> int:
        return self.k + self.num_actions

    def copy(self) -> "ParamTables":
        return ParamTables(self.w_pi.copy(), self.w_beta.copy(), self.w_int.copy())

    def validate(self):
        if not all(np.all(np.isfinite(w)) for w in (self.w_pi, self.w_beta, self.w_int)):
            raise ValueError("preference tables contain non-finite entries")

    def _check(self, s: int, h: int):
        if not (0 <= s < self.num_states and 0 <= h < self.num_options):
            raise IndexOutOfRangeError(f"(state={s}, option={h}) out of range")


def policy_dist(tables: ParamTables, s: int, h: int) -> np.ndarray:
    tables._check(s, h)
    if h >= tables.k:
        out = np.zeros(tables.num_actions)
        out[h - tables.k] = 1.0
        return out
    return softmax(tables.w_pi[s, h])


def termination_prob(tables: ParamTables, s: int, h: int) -> float:
    tables._check(s, h)
    return 1.0 if h >= tables.k else float(expit(tables.w_beta[s, h]))


def interest_prob(tables: ParamTables, s: int, h: int) -> float:
    tables._check(s, h)
    return 1.0 if h >= tables.k else float(expit(tables.w_int[s, h]))


def entropy(p) -> float:
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0)
    return float(-np.sum(p * np.log(p)))


def binary_entropy(p: float) -> float:
    return entropy([p, 1.0 - p])


def entropy_grad_policy(pi, clamp: bool = False) -> np.ndarray:
    """Gradient of the entropy of ``softmax(w)`` w.r.t. ``w``, given ``pi = softmax(w)``.

    Component ``a`` is ``-pi[a] * (log pi[a] + Ent(pi))``.  With ``clamp``
    probabilities are clipped to ``[1e-12, 1 - 1e-12]`` before the logarithm
    instead of raising on a degenerate distribution.
    """
    pi = np.asarray(pi, dtype=float)
    if clamp:
        logp = np.log(np.clip(pi, PROB_CLAMP, 1.0 - PROB_CLAMP))
    else:
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise DegenerateDistributionError("probabilities must lie strictly inside (0, 1)")
        logp = np.log(pi)
    ent = -np.sum(pi * logp)
    return -pi * (logp + ent)


def entropy_grad_binary(p: float, clamp: bool = False) -> float:
    """Derivative of ``Ent([p, 1-p])`` w.r.t. the logit of ``p``: ``p(1-p) log((1-p)/p)``."""
    if clamp:
        q = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
    elif not 0.0 < p < 1.0:
        raise DegenerateDistributionError("p must lie strictly inside (0, 1)")
    else:
        q = p
    return p * (1.0 - p) * math.log((1.0 - q) / q)


@dataclass
class OptionSet:
    """Probability tables for every option index, primitives included.

    ``pi[s, h, a]``, ``beta[s, h]`` and ``interest[s, h]`` cover all
    ``k + |A|`` indices; the last ``|A|`` are the primitive actions.
    """

    pi: np.ndarray
    beta: np.ndarray
    interest: np.ndarray
    k: int

    @property
    def num_states(self) -> int:
        return self.pi.shape[0]

    @property
    def num_options(self) -> int:
        return self.pi.shape[1]

    @property
    def num_actions(self) -> int:
        return self.pi.shape[2]

    @classmethod
    def primitives(cls, num_states: int, num_actions: int) -> "OptionSet":
        return cls.from_adjustable(np.zeros((num_states, 0, num_actions)), np.zeros((num_states, 0)),
                                   np.zeros((num_states, 0)))

    @classmethod
    def from_adjustable(cls, pi, beta, interest) -> "OptionSet":
        """Append the primitive options to adjustable ``pi (S,k,A)``, ``beta (S,k)``, ``interest (S,k)``."""
        pi = np.asarray(pi, dtype=float)
        S, k, A = pi.shape
        prim = np.broadcast_to(np.eye(A), (S, A, A))
        return cls(
            np.concatenate([pi, prim], axis=1),
            np.concatenate([np.asarray(beta, dtype=float), np.ones((S, A))], axis=1),
            np.concatenate([np.asarray(interest, dtype=float), np.ones((S, A))], axis=1),
            k,
        )

    @classmethod
    def from_tables(cls, tables: ParamTables, pin_interest: bool = False) -> "OptionSet":
        interest = np.ones_like(tables.w_int) if pin_interest else expit(tables.w_int)
        return cls.from_adjustable(softmax(tables.w_pi, axis=-1), expit(tables.w_beta), interest)

    def extend(self, other: "OptionSet") -> "OptionSet":
        """Adjustable options of ``self`` followed by those of ``other``."""
        k = self.k
        return OptionSet.from_adjustable(
            np.concatenate([self.pi[:, :k], other.pi[:, : other.k]], axis=1),
            np.concatenate([self.beta[:, :k], other.beta[:, : other.k]], axis=1),
            np.concatenate([self.interest[:, :k], other.interest[:, : other.k]], axis=1),
        )

    def to_json(self, grid: GridSpec | None = None) -> str:
        options = []
        for h in range(self.k):
            entry = {
                "greedy_action": np.argmax(self.pi[:, h], axis=1).tolist(),
                "policy": self.pi[:, h].tolist(),
                "termination": self.beta[:, h].tolist(),
                "interest": self.interest[:, h].tolist(),
            }
            options.append(entry)
        doc = {"version": 1, "num_states": self.num_states, "num_actions": self.num_actions,
               "options": options}
        if grid is not None:
            doc["map"] = grid.to_text()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "OptionSet":
        doc = json.loads(text)
        S, A = doc["num_states"], doc["num_actions"]
        opts = doc["options"]
        pi = np.array([o["policy"] for o in opts], dtype=float).reshape(len(opts), S, A).transpose(1, 0, 2)
        beta = np.array([o["termination"] for o in opts], dtype=float).reshape(len(opts), S).T
        interest = np.array([o["interest"] for o in opts], dtype=float).reshape(len(opts), S).T
        return cls.from_adjustable(pi, beta, interest)


@dataclass(frozen=True)
class HallwayLayout:
    rooms: np.ndarray        # room id per state, -1 on hallway cells
    hallways: tuple          # hallway StateIds
    order: tuple             # room ids in clockwise order


def _hallway_layout(grid: GridSpec) -> HallwayLayout:
    cells = grid.cells
    hallways = []
    for s, (r, c) in enumerate(grid.coords):
        if (cells[r - 1, c] == WALL and cells[r + 1, c] == WALL) or (cells[r, c - 1] == WALL and cells[r, c + 1] == WALL):
            hallways.append(s)
    rooms = np.full(grid.num_states, -1)
    hall = set(hallways)
    n_rooms = 0
    for start in range(grid.num_states):
        if start in hall or rooms[start] >= 0:
            continue
        rooms[start] = n_rooms
        stack = [start]
        while stack:
            s = stack.pop()
            r, c = grid.coords[s]
            for dr, dc in MOVES:
                t = grid.state_index[r + dr, c + dc]
                if t >= 0 and t not in hall and rooms[t] < 0:
                    rooms[t] = n_rooms
                    stack.append(t)
        n_rooms += 1
    if n_rooms != 4 or len(hallways) != 4:
        raise UnsupportedGridError(f"expected 4 rooms and 4 hallways, found {n_rooms} and {len(hallways)}")
    centre = np.array([grid.height - 1, grid.width - 1]) / 2.0
    angles = []
    for room in range(4):
        dr, dc = grid.coords[rooms == room].mean(axis=0) - centre
        angles.append(math.atan2(dr, dc))
    # Increasing screen angle (rows grow downward) is clockwise.
    order = tuple(int(i) for i in np.argsort(angles))
    return HallwayLayout(rooms, tuple(hallways), order)


def _neighbours(grid: GridSpec, s: int):
    r, c = grid.coords[s]
    for dr, dc in MOVES:
        t = grid.state_index[r + dr, c + dc]
        if t >= 0:
            yield int(t)


def make_hallway_options(grid: GridSpec) -> OptionSet:
    """Two deterministic options circulating clockwise (0) and counter-clockwise (1).

    Each option walks to the hallway leading into the next room of its
    direction and terminates on the first cell inside that room.  Interest
    is 1 everywhere.
    """
    layout = _hallway_layout(grid)
    S, A = grid.num_states, len(MOVES)
    pi = np.zeros((S, 2, A))
    beta = np.zeros((S, 2))
    for h, order in enumerate((layout.order, layout.order[::-1])):
        nxt = {order[i]: order[(i + 1) % 4] for i in range(4)}
        entrance, owner = {}, {}
        for hw in layout.hallways:
            adjacent = {int(layout.rooms[t]): t for t in _neighbours(grid, hw) if layout.rooms[t] >= 0}
            if len(adjacent) != 2:
                raise UnsupportedGridError("hallway does not join two rooms")
            a, b = adjacent
            src, dst = (a, b) if nxt[a] == b else (b, a)
            if nxt[src] != dst:
                raise UnsupportedGridError("rooms are not connected in a cycle")
            entrance[dst] = adjacent[dst]
            owner[hw] = src
        stops = set(entrance.values())
        beta[list(stops), h] = 1.0
        dist = {room: bfs_distances(grid, e, blocked=stops - {e}) for room, e in entrance.items()}
        for s in range(S):
            room = owner[s] if s in owner else int(layout.rooms[s])
            target = entrance[nxt[room]]
            d = dist[nxt[room]]
            r, c = grid.coords[s]
            best, best_a = math.inf, 0
            for a, (dr, dc) in enumerate(MOVES):
                t = grid.state_index[r + dr, c + dc]
                if t >= 0 and (t == target or t not in stops) and d[t] < best:
                    best, best_a = d[t], a
            pi[s, h, best_a] = 1.0
    return OptionSet.from_adjustable(pi, beta, np.ones((S, 2)))


def hallway_entrances(grid: GridSpec, option: int) -> np.ndarray:
    """StateIds where hallway option ``option`` terminates."""
    return np.flatnonzero(make_hallway_options(grid).beta[:, option] == 1.0)
