"""Testing phase: option models, option-value iteration and operation counts.

Option models are stored per task as ``r[n, s, o]`` and
``p[n, s, o, x]``, the discount-weighted distribution of the state ``x`` in
which option ``o`` started in ``s`` terminates.  Planning runs synchronous
option-value iteration over a per-state sample of initiation sets and
stops once the mean value error against ``v*`` drops below a tolerance.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import NonConvergentError, SingularSystemError
from .mdp import TabularMdp
from .options import PROB_CLAMP, OptionSet, ParamTables


class ModelSource(str, enum.Enum):
    LEARNED = "learned"
    EXACT = "exact"


@dataclass
class OptionModel:
    r: np.ndarray              # (N, S, H)
    p: np.ndarray              # (N, S, H, S), discount folded in
    terminal: np.ndarray       # (N, S)
    source: ModelSource = ModelSource.EXACT
    reward_bound: float = 1.0  # max |one-step reward| of the underlying MDP

    @property
    def num_tasks(self) -> int:
        return self.r.shape[0]

    @property
    def num_states(self) -> int:
        return self.r.shape[1]

    @property
    def num_options(self) -> int:
        return self.r.shape[2]

    def pessimistic_value(self) -> float:
        return -self.num_states * self.reward_bound


def _reward_bound(mdp: TabularMdp) -> float:
    live = mdp.prob > 0
    return float(np.abs(mdp.reward[live]).max()) if live.any() else 0.0


def primitive_models(mdp: TabularMdp) -> OptionModel:
    """One-step models of the primitive actions (every action terminates after one step)."""
    r = mdp.expected_reward()
    p = mdp.gamma * mdp.transition_matrix()
    r[mdp.terminal] = 0.0
    p[mdp.terminal] = 0.0
    return OptionModel(r, p, mdp.terminal.copy(), ModelSource.EXACT, _reward_bound(mdp))


def exact_option_models(mdp: TabularMdp, options: OptionSet) -> OptionModel:
    """Closed-form models of every option index by solving the continuation system.

    Termination probabilities are floored at 1e-12 so an option that can
    never stop gets a huge negative (but finite) reward instead of a
    singular system.
    """
    N, S = mdp.num_tasks, mdp.num_states
    H = options.num_options
    P = mdp.transition_matrix()                  # (N, S, A, S)
    R = mdp.expected_reward()                    # (N, S, A)
    beta = np.clip(options.beta, PROB_CLAMP, 1.0)
    r = np.zeros((N, S, H))
    p = np.zeros((N, S, H, S))
    eye = np.eye(S)
    for n in range(N):
        live = ~mdp.terminal[n]
        alive_next = live.astype(float)
        for h in range(H):
            Ph = np.einsum("sa,sax->sx", options.pi[:, h], P[n])
            rh = np.einsum("sa,sa->s", options.pi[:, h], R[n])
            keep = (1.0 - beta[:, h]) * alive_next
            cont = mdp.gamma * Ph * keep[None, :]
            stop = mdp.gamma * Ph * (1.0 - keep)[None, :]
            try:
                sol = np.linalg.solve(eye - cont, np.column_stack([rh, stop]))
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError(f"option {h} model is singular in task {n}") from exc
            if not np.all(np.isfinite(sol)):
                raise SingularSystemError(f"option {h} model is not finite in task {n}")
            r[n, live, h] = sol[live, 0]
            p[n, live, h] = sol[live, 1:]
    return OptionModel(r, p, mdp.terminal.copy(), ModelSource.EXACT, _reward_bound(mdp))


@njit(cache=True)
def _model_learning_steps(seed, steps, next_state, reward, prob, terminal, d0, gamma, pi, beta, alpha, r, p):
    np.random.seed(seed)
    N, S, A, K = prob.shape
    H = pi.shape[1]
    target = np.zeros(S)
    n = min(int(np.random.random() * N), N - 1)
    s = _draw(d0, np.random.random())
    for _ in range(steps):
        if terminal[n, s]:
            n = min(int(np.random.random() * N), N - 1)
            s = _draw(d0, np.random.random())
            continue
        a = min(int(np.random.random() * A), A - 1)
        j = _draw(prob[n, s, a], np.random.random())
        s2 = next_state[n, s, a, j]
        rew = reward[n, s, a, j]
        z = terminal[n, s2]
        for h in range(H):
            if pi[s, h, a] <= 0.0:
                continue
            rho = pi[s, h, a] * A
            go_on = 0.0 if z else 1.0 - beta[s2, h]
            step = alpha * rho
            r[n, s, h] += step * (rew + gamma * go_on * r[n, s2, h] - r[n, s, h])
            for x in range(S):
                target[x] = gamma * go_on * p[n, s2, h, x]
            target[s2] += gamma * (1.0 - go_on)
            for x in range(S):
                p[n, s, h, x] += step * (target[x] - p[n, s, h, x])
        s = s2


@njit(cache=True)
def _draw(p, u):
    acc = 0.0
    last = 0
    for j in range(p.shape[0]):
        if p[j] > 0.0:
            acc += p[j]
            last = j
            if u < acc:
                return j
    return last


def learn_option_model(mdp: TabularMdp, options: OptionSet, steps: int, rng: np.random.Generator,
                       alpha: float = 0.1) -> OptionModel:
    """Intra-option model learning from a uniformly random behaviour policy.

    Every option whose policy could have taken the behaviour action is
    updated toward its one-step bootstrapped target, weighted by the ratio
    of its action probability to the behaviour probability ``1/|A|``.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if not 0.0 < alpha * options.num_actions <= 1.0:
        raise ValueError("alpha * |A| must lie in (0, 1] so weighted steps do not overshoot")
    N, S, H = mdp.num_tasks, mdp.num_states, options.num_options
    r = np.zeros((N, S, H))
    p = np.zeros((N, S, H, S))
    if steps:
        _model_learning_steps(int(rng.integers(2**31 - 1)), int(steps), mdp.next_state, mdp.reward, mdp.prob,
                              mdp.terminal, mdp.d0, mdp.gamma, np.ascontiguousarray(options.pi),
                              np.ascontiguousarray(options.beta), alpha, r, p)
    return OptionModel(r, p, mdp.terminal.copy(), ModelSource.LEARNED, _reward_bound(mdp))


def flat_value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 100_000,
                         init: float = 0.0, floor: float | None = None, history: bool = False):
    """Bellman optimality iteration over primitive actions, all tasks at once.

    Returns ``v`` of shape ``(N, S)``; with ``history`` also the list of
    per-sweep action-value tables ``(N, S, A)``.  ``floor`` clamps every
    backup from below (used with a pessimistic ``init``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = mdp.gamma * mdp.transition_matrix()
    R = mdp.expected_reward()
    live = ~mdp.terminal
    q = np.where(live[..., None], init, 0.0) * np.ones(R.shape)
    trace = []
    for _ in range(max_iters):
        v = q.max(axis=2)
        q_new = R + np.einsum("nsax,nx->nsa", P, v)
        if floor is not None:
            q_new = np.maximum(q_new, floor)
        q_new[mdp.terminal] = 0.0
        change = np.abs(q_new - q).max()
        q = q_new
        if history:
            trace.append(q.copy())
        if change < tol:
            v = q.max(axis=2)
            return (v, trace) if history else v
    raise NonConvergentError(f"value iteration did not converge in {max_iters} sweeps")


def optimal_values(mdp: TabularMdp) -> np.ndarray:
    """``v*[n, s]`` for every task."""
    return flat_value_iteration(mdp)


def sample_plan_sets(options: OptionSet | ParamTables, rng: np.random.Generator) -> np.ndarray:
    """One frozen initiation set per state as a boolean mask ``(S, H)``; primitives always in."""
    if isinstance(options, ParamTables):
        options = OptionSet.from_tables(options)
    mask = np.ones((options.num_states, options.num_options), dtype=bool)
    k = options.k
    mask[:, :k] = rng.random((options.num_states, k)) < options.interest[:, :k]
    return mask


def operation_count(iterations: int, omega_sizes, num_states: int, num_tasks: int) -> int:
    """``iterations * sum_s |omega(s)| * |S| * |N|`` as an exact integer."""
    sizes = np.asarray(omega_sizes, dtype=np.int64)
    if iterations < 0 or num_states < 0 or num_tasks < 0 or np.any(sizes < 0):
        raise ValueError("operation counts need non-negative inputs")
    return int(iterations) * int(sizes.sum()) * int(num_states) * int(num_tasks)


@dataclass
class PlanReport:
    iterations: int
    omega_sizes: list
    total_operations: int
    error_trace: list = field(default_factory=list)
    converged: bool = True
    num_states: int = 0
    num_tasks: int = 0

    def recount(self) -> int:
        return operation_count(self.iterations, self.omega_sizes, self.num_states, self.num_tasks)

    def to_json(self) -> str:
        return json.dumps({
            "iterations": self.iterations,
            "omegaSizes": [int(x) for x in self.omega_sizes],
            "totalOperations": self.total_operations,
            "meanValueError": [float(e) for e in self.error_trace],
            "converged": self.converged,
            "numStates": self.num_states,
            "numTasks": self.num_tasks,
        })

    @classmethod
    def from_json(cls, text: str) -> "PlanReport":
        d = json.loads(text)
        return cls(d["iterations"], d["omegaSizes"], d["totalOperations"], d["meanValueError"], d["converged"],
                   d["numStates"], d["numTasks"])


def _backup(model: OptionModel, omega: np.ndarray, q: np.ndarray, floor: float | None) -> np.ndarray:
    v = np.where(omega[None], q, -np.inf).max(axis=2)
    v[model.terminal] = 0.0
    q_new = model.r + np.einsum("nsox,nx->nso", model.p, v)
    if floor is not None:
        q_new = np.maximum(q_new, floor)
    q_new[model.terminal] = 0.0
    return q_new


def mean_value_error(q: np.ndarray, omega: np.ndarray, v_star: np.ndarray) -> float:
    v = np.where(omega[None], q, -np.inf).max(axis=2)
    return float((v_star - v).mean())


def option_value_iteration(model: OptionModel, omega: np.ndarray, v_star: np.ndarray, err_tol: float = 0.1,
                           max_iters: int = 1000, init: float | None = None, floor: bool = True,
                           history: bool = False):
    """Synchronous option-value iteration until the mean value error is below ``err_tol``.

    Q starts at the pessimistic value ``-|S| * max|reward|`` (or ``init``)
    and every backup is floored there, so the greedy values never
    decrease.  Returns ``(q, report)`` and, with ``history``, the list of
    per-sweep tables as a third element.
    """
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != model.r.shape[1:]:
        raise ValueError("omega must be a (S, H) mask")
    if not omega.any(axis=1).all():
        raise ValueError("every state needs a non-empty initiation set")
    low = model.pessimistic_value() if init is None else init
    q = np.full(model.r.shape, low)
    q[model.terminal] = 0.0
    errors = [mean_value_error(q, omega, v_star)]
    trace = [q.copy()] if history else None
    iterations = 0
    while errors[-1] >= err_tol and iterations < max_iters:
        q = _backup(model, omega, q, low if floor else None)
        iterations += 1
        errors.append(mean_value_error(q, omega, v_star))
        if history:
            trace.append(q.copy())
    sizes = omega.sum(axis=1)
    report = PlanReport(iterations, sizes.tolist(), operation_count(iterations, sizes, model.num_states,
                                                                      model.num_tasks),
                        errors, bool(errors[-1] < err_tol), model.num_states, model.num_tasks)
    q = np.where(omega[None], q, -np.inf)
    return (q, report, trace) if history else (q, report)


def plan(mdp: TabularMdp, options: OptionSet, rng: np.random.Generator, source: ModelSource | str = "exact",
         model_steps: int = 1_000_000, err_tol: float = 0.1, max_iters: int = 1000, v_star=None):
    """Full testing phase: models, one sampled initiation set per state, option-value iteration."""
    source = ModelSource(source)
    if source is ModelSource.EXACT:
        model = exact_option_models(mdp, options)
    else:
        model = learn_option_model(mdp, options, model_steps, rng)
    omega = sample_plan_sets(options, rng)
    v_star = optimal_values(mdp) if v_star is None else v_star
    return option_value_iteration(model, omega, v_star, err_tol, max_iters)
