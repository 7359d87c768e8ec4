"""Call-and-return execution of options.

Initiation sets are sampled from interest functions at every decision
point, an epsilon-greedy meta-policy picks an option index from the set,
and the option runs until its termination function fires or the episode
ends.  The cost of a decision point is the size of its initiation set.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import EmptyInitiationSetError
from .mdp import TabularMdp, sample_index, step
from .options import OptionSet, ParamTables


class Mode(enum.Enum):
    LEARN = "learn"
    GREEDY = "greedy"


def _interest_row(options, s: int) -> tuple[np.ndarray, int]:
    if isinstance(options, ParamTables):
        return OptionSet.from_tables(options).interest[s], options.k
    return options.interest[s], options.k


def sample_initiation_set(options: OptionSet | ParamTables, s: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of the options available at ``s``; primitives are always present."""
    interest, k = _interest_row(options, s)
    keep = rng.random(k) < interest[:k]
    return np.concatenate([np.flatnonzero(keep), np.arange(k, interest.shape[0])])


def meta_policy(q_row, omega, eps: float) -> np.ndarray:
    """Epsilon-greedy distribution over all option indices restricted to ``omega``.

    Indices outside ``omega`` get 0; the greedy mass ``1 - eps`` is split
    evenly over the maximisers within ``omega`` and ``eps`` is spread
    uniformly over ``omega``.
    """
    q_row = np.asarray(q_row, dtype=float)
    omega = np.unique(np.asarray(omega, dtype=int))
    if omega.size == 0:
        raise EmptyInitiationSetError("initiation set is empty")
    probs = np.zeros(q_row.shape[0])
    vals = q_row[omega]
    greedy = omega[vals == vals.max()]
    probs[omega] = eps / omega.size
    probs[greedy] += (1.0 - eps) / greedy.size
    return probs


@dataclass
class EpisodeTrace:
    task: int
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    options: list = field(default_factory=list)
    terminated: list = field(default_factory=list)
    decision_steps: list = field(default_factory=list)
    initiation_sets: list = field(default_factory=list)
    decision_costs: list = field(default_factory=list)
    ret: float = 0.0
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.actions)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["initiation_sets"] = [list(map(int, o)) for o in self.initiation_sets]
        return json.dumps(doc, default=lambda x: x.item() if hasattr(x, "item") else x)


def run_episode(
    mdp: TabularMdp,
    n: int,
    options: OptionSet,
    q: np.ndarray,
    eps: float,
    mode: Mode | str,
    rng: np.random.Generator,
    max_steps: int | None = None,
    start_state: int | None = None,
) -> EpisodeTrace:
    """Roll out one call-and-return episode of task ``n``.

    ``q`` is the option-value table of shape ``(N, S, H)`` (or ``(S, H)``
    for the task).  Greedy mode uses ``eps = 0`` but still samples the
    initiation sets.  Episodes starting in a terminal state have no steps
    and no decisions.
    """
    mode = Mode(mode)
    eps = 0.0 if mode is Mode.GREEDY else eps
    max_steps = 10 * mdp.num_states if max_steps is None else max_steps
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    q_task = q[n] if q.ndim == 3 else q
    s = sample_index(mdp.d0, rng.random()) if start_state is None else start_state
    trace = EpisodeTrace(task=n)
    trace.states.append(int(s))
    if mdp.terminal[n, s]:
        return trace
    current = -1
    disc = 1.0
    while True:
        if current < 0:
            omega = sample_initiation_set(options, s, rng)
            current = int(rng.choice(q_task.shape[1], p=meta_policy(q_task[s], omega, eps)))
            trace.decision_steps.append(trace.length)
            trace.initiation_sets.append(omega)
            trace.decision_costs.append(int(omega.size))
        a = sample_index(options.pi[s, current], rng.random())
        out = step(mdp, n, s, a, rng)
        trace.options.append(current)
        trace.actions.append(int(a))
        trace.rewards.append(out.reward)
        trace.terminated.append(out.terminated)
        trace.states.append(out.next_state)
        trace.ret += disc * out.reward
        disc *= mdp.gamma
        if out.terminated:
            break
        if trace.length >= max_steps:
            trace.truncated = True
            break
        if rng.random() < options.beta[out.next_state, current]:
            current = -1
        s = out.next_state
    return trace


def compound_return(trace: EpisodeTrace, c: float) -> float:
    """Return minus ``c`` times the summed initiation-set sizes at decision points."""
    if c < 0:
        raise ValueError("c must be non-negative")
    return trace.ret - c * float(sum(trace.decision_costs))


@dataclass
class EvalSummary:
    compound_returns: np.ndarray
    returns: np.ndarray
    decisions: np.ndarray
    costs: np.ndarray
    lengths: np.ndarray
    truncated: np.ndarray
    tasks: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.compound_returns.mean())

    @property
    def stderr(self) -> float:
        n = self.compound_returns.size
        return float(self.compound_returns.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def rollout(
    mdp: TabularMdp,
    options: OptionSet,
    q: np.ndarray,
    c: float,
    episodes: int,
    rng: np.random.Generator,
    eps: float = 0.0,
    max_steps: int | None = None,
    tasks=None,
) -> EvalSummary:
    """Many call-and-return episodes in compiled code, tasks drawn uniformly."""
    max_steps = 10 * mdp.num_states if max_steps is None else max_steps
    tasks = np.arange(mdp.num_tasks) if tasks is None else np.asarray(tasks, dtype=np.int64)
    out = np.zeros((episodes, 6))
    _kernels.rollout_episodes(
        int(rng.integers(2**31 - 1)), episodes, tasks, mdp.next_state, mdp.reward, mdp.prob,
        mdp.terminal, mdp.d0, mdp.gamma, np.ascontiguousarray(options.pi), np.ascontiguousarray(options.beta),
        np.ascontiguousarray(options.interest), options.k, np.ascontiguousarray(q, dtype=float), eps,
        max_steps, out,
    )
    return EvalSummary(out[:, 0] - c * out[:, 2], out[:, 0], out[:, 1], out[:, 2], out[:, 3],
                       out[:, 4].astype(bool), out[:, 5].astype(int))
