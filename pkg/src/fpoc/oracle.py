"""Exact objective, gradient and estimator targets on small MDPs.

Everything here is computed by brute force: initiation sets are enumerated
over the power set of the adjustable options, and values come from dense
linear solves on the augmented chain over (state, option) pairs.  The
meta-policy over an initiation set is the normalized preference
``f(s, h) / sum_{h' in omega} f(s, h')`` with ``f = exp(w_f)``.

Conventions: the cost of a decision (the size of its initiation set) is
charged once, at the state where the decision is made; values are zero
at terminal states.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PowerSetTooLargeError, SingularSystemError
from .mdp import TabularMdp
from .options import OptionSet, ParamTables

MAX_POWER_SET_K = 12
MAX_UNKNOWNS = 2000


@dataclass
class MetaPreference:
    """Log-preferences ``w_f[n, s, h]``; the preference is ``f = exp(w_f)``."""

    w_f: np.ndarray

    @classmethod
    def uniform(cls, num_tasks: int, num_states: int, num_options: int) -> "MetaPreference":
        return cls(np.zeros((num_tasks, num_states, num_options)))

    @property
    def f(self) -> np.ndarray:
        return np.exp(self.w_f)


@dataclass
class ExactValues:
    q: np.ndarray          # (N, S, H) with cost c
    v: np.ndarray          # (N, S)
    q_bar: np.ndarray      # reward part
    v_bar: np.ndarray
    q_tilde: np.ndarray    # negative expected number of options considered
    v_tilde: np.ndarray
    mu_bar: np.ndarray     # (N, S, H): expected meta-policy over sampled sets
    expected_size: np.ndarray  # (S,): E|omega(s)|
    c: float
    J: float


def power_set(k: int) -> np.ndarray:
    """All subsets of ``range(k)`` as a ``(2**k, k)`` boolean array."""
    if k > MAX_POWER_SET_K:
        raise PowerSetTooLargeError(f"k={k} exceeds the enumeration limit {MAX_POWER_SET_K}")
    return np.array(list(itertools.product([False, True], repeat=k)), dtype=bool).reshape(2**k, k)


def set_probabilities(interest_row, subsets) -> np.ndarray:
    """``Pr(omega | s) = prod_{x in omega} i(x) * prod_{x not in omega} (1 - i(x))``."""
    i = np.asarray(interest_row, dtype=float)
    return np.where(subsets, i, 1.0 - i).prod(axis=1)


def _meta_tables(options: OptionSet, meta: MetaPreference):
    """Per (n, s): subset probabilities and meta-policies for every subset."""
    k, H = options.k, options.num_options
    subsets = power_set(k)
    full = np.ones((subsets.shape[0], H), dtype=bool)
    full[:, :k] = subsets
    pr = np.stack([set_probabilities(options.interest[s, :k], subsets) for s in range(options.num_states)])
    f = meta.f                                             # (N, S, H)
    mu = f[:, :, None, :] * full[None, None]               # (N, S, 2^k, H)
    mu /= mu.sum(axis=-1, keepdims=True)
    return full, pr, mu


def _check_size(mdp: TabularMdp, options: OptionSet):
    if mdp.num_states * options.num_options > MAX_UNKNOWNS:
        raise ValueError(f"fixture too large for dense solves ({MAX_UNKNOWNS} unknowns max)")


def _augmented(mdp: TabularMdp, options: OptionSet, mu_bar_n: np.ndarray, n: int):
    """Transition matrix ``M`` over (s, h) and option dynamics ``P_h(s, s')``."""
    S, H = mdp.num_states, options.num_options
    P = mdp.transition_matrix()[n]                        # (S, A, S)
    Ph = np.einsum("sha,sax->shx", options.pi, P)          # (S, H, S)
    live = (~mdp.terminal[n]).astype(float)
    beta = options.beta                                    # (S', H)
    stay = Ph * ((1.0 - beta.T)[None, :, :] * live[None, None, :])   # (s, h, s')
    switch = Ph * ((beta.T)[None, :, :] * live[None, None, :])       # (s, h, s')
    M = np.einsum("shx,hg->shxg", stay, np.eye(H)) + np.einsum("shx,xg->shxg", switch, mu_bar_n)
    return M.reshape(S * H, S * H), Ph, switch


def _solve(A, b, what: str):
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{what} system is singular") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError(f"{what} system has no finite solution")
    return x


def exact_option_model(mdp: TabularMdp, options: OptionSet, h: int, n: int = 0):
    """Reward vector ``r(s)`` and termination rows ``p(x | s)`` of option ``h`` in task ``n``.

    Rows of terminal states are zero.  Raises SingularSystemError if the
    option can run forever with gamma = 1.
    """
    S = mdp.num_states
    P = mdp.transition_matrix()[n]
    R = mdp.expected_reward()[n]
    Ph = np.einsum("sa,sax->sx", options.pi[:, h], P)
    rh = np.einsum("sa,sa->s", options.pi[:, h], R)
    keep = (1.0 - options.beta[:, h]) * (~mdp.terminal[n])
    cont = mdp.gamma * Ph * keep[None, :]
    stop = mdp.gamma * Ph * (1.0 - keep)[None, :]
    sol = _solve(np.eye(S) - cont, np.column_stack([rh, stop]), "option model")
    sol[mdp.terminal[n]] = 0.0
    return sol[:, 0], sol[:, 1:]


def exact_objective(mdp: TabularMdp, options: OptionSet, meta: MetaPreference, c: float) -> ExactValues:
    """Exact ``J = sum_n sum_s d0(s) (v_bar + c v_tilde)`` by enumeration and linear solves."""
    if c < 0:
        raise ValueError("c must be non-negative")
    _check_size(mdp, options)
    N, S, H = mdp.num_tasks, mdp.num_states, options.num_options
    full, pr, mu = _meta_tables(options, meta)
    mu_bar = np.einsum("so,nsoh->nsh", pr, mu)
    size = options.interest.sum(axis=1)                   # E|omega(s)|, primitives count 1 each
    R = mdp.expected_reward()
    q_bar = np.zeros((N, S, H))
    q_tilde = np.zeros((N, S, H))
    for n in range(N):
        M, Ph, switch = _augmented(mdp, options, mu_bar[n], n)
        rh = np.einsum("sha,sa->sh", options.pi, R[n])
        cost = -mdp.gamma * np.einsum("shx,x->sh", switch, size)
        live = np.repeat(~mdp.terminal[n], H)
        A = np.eye(S * H) - mdp.gamma * M
        sol = np.zeros((S * H, 2))
        sol[live] = _solve(A[np.ix_(live, live)], np.column_stack([rh.ravel(), cost.ravel()])[live], "value")
        q_bar[n] = sol[:, 0].reshape(S, H)
        q_tilde[n] = sol[:, 1].reshape(S, H)
    live = ~mdp.terminal
    v_bar = np.where(live, np.einsum("nsh,nsh->ns", mu_bar, q_bar), 0.0)
    v_tilde = np.where(live, np.einsum("nsh,nsh->ns", mu_bar, q_tilde) - size[None, :], 0.0)
    q = q_bar + c * q_tilde
    v = v_bar + c * v_tilde
    J = float(np.einsum("s,ns->", mdp.d0, v))
    return ExactValues(q, v, q_bar, v_bar, q_tilde, v_tilde, mu_bar, size, c, J)


@dataclass
class Gradient:
    w_pi: np.ndarray     # (S, k, A)
    w_beta: np.ndarray   # (S, k)
    w_int: np.ndarray    # (S, k)
    w_f: np.ndarray      # (N, S, H)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_pi.ravel(), self.w_beta.ravel(), self.w_int.ravel(), self.w_f.ravel()])


def occupancy(mdp: TabularMdp, options: OptionSet, values: ExactValues, n: int) -> np.ndarray:
    """Discounted (state, option) occupancy ``d(s, h)`` of task ``n`` from ``d0``."""
    S, H = mdp.num_states, options.num_options
    M, _, _ = _augmented(mdp, options, values.mu_bar[n], n)
    live = np.repeat(~mdp.terminal[n], H)
    start = (mdp.d0[:, None] * values.mu_bar[n]).ravel()
    A = np.eye(S * H) - mdp.gamma * M
    d = np.zeros(S * H)
    d[live] = _solve(A[np.ix_(live, live)].T, start[live], "occupancy")
    return d.reshape(S, H)


def exact_gradient(mdp: TabularMdp, tables: ParamTables, meta: MetaPreference, c: float) -> Gradient:
    """Exact gradient of ``J`` for softmax policies, sigmoid terminations/interests and preferences."""
    options = OptionSet.from_tables(tables)
    values = exact_objective(mdp, options, meta, c)
    N, k = mdp.num_tasks, options.k
    full, pr, mu = _meta_tables(options, meta)
    P = mdp.transition_matrix()
    R = mdp.expected_reward()
    g_pi = np.zeros_like(tables.w_pi)
    g_beta = np.zeros_like(tables.w_beta)
    g_int = np.zeros_like(tables.w_int)
    g_f = np.zeros_like(meta.w_f)
    i = options.interest[:, :k]
    for n in range(N):
        d = occupancy(mdp, options, values, n)
        q, v = values.q[n], values.v[n]
        live = (~mdp.terminal[n]).astype(float)
        beta = options.beta
        # Continuation value after landing in s' while executing h.
        U = ((1.0 - beta) * q + beta * v[:, None]) * live[:, None]
        q_sha = R[n][:, None, :] + mdp.gamma * np.einsum("sax,xh->sha", P[n], U)
        pi = options.pi
        g_pi += (d[:, :, None] * pi * (q_sha - q[:, :, None]))[:, :k]
        Ph = np.einsum("sha,sax->shx", pi, P[n])
        e = mdp.gamma * np.einsum("sh,shx->xh", d, Ph) * live[:, None]
        g_beta += (-e * beta * (1.0 - beta) * (q - v[:, None]))[:, :k]
        m = (mdp.d0 + (e * beta).sum(axis=1)) * live
        set_val = np.einsum("soh,sh->so", mu[n], q)                        # (S, 2^k)
        sub = full[None, :, :k].astype(float) - i[:, None, :]              # (S, 2^k, k)
        g_int += m[:, None] * (np.einsum("so,sox,so->sx", pr, sub, set_val) - c * i * (1.0 - i))
        dmu = mu[n] * (q[:, None, :] - set_val[:, :, None])               # (S, 2^k, H)
        g_f[n] = m[:, None] * np.einsum("so,soh->sh", pr, dmu)
    return Gradient(g_pi, g_beta, g_int, g_f)


def _objective_of(mdp, tables, meta, c) -> float:
    return exact_objective(mdp, OptionSet.from_tables(tables), meta, c).J


def finite_diff_gradient(mdp: TabularMdp, tables: ParamTables, meta: MetaPreference, c: float,
                         step: float = 1e-5) -> Gradient:
    """Central differences of ``J`` for every parameter."""
    if step <= 0:
        raise ValueError("step must be positive")
    out = Gradient(np.zeros_like(tables.w_pi), np.zeros_like(tables.w_beta), np.zeros_like(tables.w_int),
                   np.zeros_like(meta.w_f))
    arrays = [(tables.w_pi, out.w_pi), (tables.w_beta, out.w_beta), (tables.w_int, out.w_int),
              (meta.w_f, out.w_f)]
    for param, grad in arrays:
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + step
            hi = _objective_of(mdp, tables, meta, c)
            param[idx] = old - step
            lo = _objective_of(mdp, tables, meta, c)
            param[idx] = old
            grad[idx] = (hi - lo) / (2.0 * step)
    return out


def central_difference(fn, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = step
        g.flat[j] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return g


def relative_error(g, reference) -> float:
    """``max|g - reference| / max|reference|``."""
    g, reference = np.ravel(g), np.ravel(reference)
    scale = np.abs(reference).max()
    return float(np.abs(g - reference).max() / scale) if scale > 0 else float(np.abs(g).max())


# Targets for the sampled estimators of the learner, whose meta-policy is
# epsilon-greedy over the current option values.

def greedy_set_value(q_row, mask, eps: float) -> float:
    """Expected ``Q`` of the epsilon-greedy meta-policy restricted to ``mask``."""
    vals = np.asarray(q_row, dtype=float)[np.asarray(mask, dtype=bool)]
    return float((1.0 - eps) * vals.max() + eps * vals.mean())


def _set_masks(k: int, num_options: int) -> np.ndarray:
    subsets = power_set(k)
    full = np.ones((subsets.shape[0], num_options), dtype=bool)
    full[:, :k] = subsets
    return full


def exact_v_target(q_row, interest, eps: float, cbar: float) -> float:
    """``sum_omega Pr(omega) [A(omega) - cbar |omega & adjustable|]``."""
    interest = np.asarray(interest, dtype=float)
    k = interest.shape[0]
    masks = _set_masks(k, len(q_row))
    pr = set_probabilities(interest, masks[:, :k])
    vals = np.array([greedy_set_value(q_row, m, eps) for m in masks])
    return float(pr @ (vals - cbar * masks[:, :k].sum(axis=1)))


def exact_m_target(q_row, interest, eps: float, cbar: float) -> np.ndarray:
    """Derivative of the expected set value minus ``cbar * E|omega|`` w.r.t. each interest logit."""
    interest = np.asarray(interest, dtype=float)
    k = interest.shape[0]
    masks = _set_masks(k, len(q_row))
    pr = set_probabilities(interest, masks[:, :k])
    vals = np.array([greedy_set_value(q_row, m, eps) for m in masks])
    sub = masks[:, :k] - interest[None, :]
    return (pr * vals) @ sub - cbar * interest * (1.0 - interest)


def naive_m(q_row, interest, omega, eps: float, cbar: float) -> np.ndarray:
    """Score-function estimate ``(1{x in omega} - i(x)) A(omega) - cbar i(x)(1 - i(x))``.

    ``omega`` is an index list, a boolean mask over all options, or a
    2-D array of masks (one estimate per row).
    """
    q_row = np.asarray(q_row, dtype=float)
    interest = np.asarray(interest, dtype=float)
    k = interest.shape[0]
    mask = np.asarray(omega)
    if mask.dtype != np.bool_:
        idx = mask.astype(int)
        mask = np.zeros(len(q_row), dtype=bool)
        mask[idx] = True
    masks = np.atleast_2d(mask)
    vals = np.where(masks, q_row, -np.inf).max(axis=1)
    means = np.where(masks, q_row, 0.0).sum(axis=1) / masks.sum(axis=1)
    value = (1.0 - eps) * vals + eps * means
    out = (masks[:, :k] - interest) * value[:, None] - cbar * interest * (1.0 - interest)
    return out if mask.ndim == 2 else out[0]


# Random fixtures and their JSON form.

@dataclass
class Fixture:
    mdp: TabularMdp
    tables: ParamTables
    meta: MetaPreference
    c: float

    def to_json(self) -> str:
        m = self.mdp
        return json.dumps({
            "next_state": m.next_state.tolist(), "reward": m.reward.tolist(), "prob": m.prob.tolist(),
            "terminal": m.terminal.tolist(), "d0": m.d0.tolist(), "gamma": m.gamma,
            "w_pi": self.tables.w_pi.tolist(), "w_beta": self.tables.w_beta.tolist(),
            "w_int": self.tables.w_int.tolist(), "w_f": self.meta.w_f.tolist(), "c": self.c,
        })

    @classmethod
    def from_json(cls, text: str) -> "Fixture":
        d = json.loads(text)
        A = np.asarray(d["prob"]).shape[2]
        S = len(d["d0"])
        k = np.asarray(d.get("w_beta", np.zeros((S, 0)))).reshape(S, -1).shape[1]
        mdp = TabularMdp(np.array(d["next_state"]), np.array(d["reward"]), np.array(d["prob"]),
                         np.array(d["terminal"]), np.array(d["d0"]), d.get("gamma", 1.0))
        tables = ParamTables(np.array(d.get("w_pi", np.zeros((S, k, A))), dtype=float).reshape(S, k, A),
                             np.array(d.get("w_beta", np.zeros((S, k))), dtype=float).reshape(S, k),
                             np.array(d.get("w_int", np.zeros((S, k))), dtype=float).reshape(S, k))
        w_f = np.array(d.get("w_f", np.zeros((mdp.num_tasks, S, k + A))), dtype=float)
        return cls(mdp, tables, MetaPreference(w_f), float(d.get("c", 0.0)))


def random_mdp(rng: np.random.Generator, num_states: int, num_tasks: int, num_actions: int = 2,
               gamma: float = 1.0, terminal_mass: float = 0.2) -> TabularMdp:
    """Dense random multi-task MDP with one terminal state per task.

    Every non-terminal (s, a) sends at least ``terminal_mass`` of its
    probability to the task's terminal state, so every policy terminates.
    """
    S, A, N = num_states, num_actions, num_tasks
    goals = rng.integers(S, size=N)
    next_state = np.broadcast_to(np.arange(S), (N, S, A, S)).copy()
    prob = np.zeros((N, S, A, S))
    reward = rng.uniform(-1.0, 0.0, size=(N, S, A, S))
    terminal = np.zeros((N, S), dtype=bool)
    for n, g in enumerate(goals):
        terminal[n, g] = True
        mix = rng.dirichlet(np.ones(S), size=(S, A)) * (1.0 - terminal_mass)
        mix[:, :, g] += terminal_mass
        prob[n] = mix
        prob[n, g] = 0.0
        prob[n, g, :, g] = 1.0
        reward[n, g] = 0.0
    d0 = rng.dirichlet(np.ones(S))
    return TabularMdp(next_state, reward, prob, terminal, d0, gamma)


def random_fixture(rng: np.random.Generator, num_states: int = 5, k: int = 2, num_tasks: int = 2,
                   num_actions: int = 2, c: float = 0.2, gamma: float = 1.0) -> Fixture:
    """Random MDP with every option and meta-preference parameter uniform in [-1, 1]."""
    mdp = random_mdp(rng, num_states, num_tasks, num_actions, gamma)
    S, A = num_states, num_actions
    tables = ParamTables(rng.uniform(-1, 1, (S, k, A)), rng.uniform(-1, 1, (S, k)), rng.uniform(-1, 1, (S, k)))
    meta = MetaPreference(rng.uniform(-1, 1, (num_tasks, S, k + A)))
    return Fixture(mdp, tables, meta, c)


# Monte-Carlo counterpart of the objective, for cross-checks.

@njit(cache=True)
def _simulate(seed, episodes, task_ids, next_state, reward, prob, terminal, d0, gamma, pi, beta, interest,
              f, k, c, out):
    np.random.seed(seed)
    H = pi.shape[1]
    mask = np.zeros(H, dtype=np.bool_)
    w = np.zeros(H)
    for e in range(episodes):
        n = task_ids[e]
        s = _draw(d0, np.random.random())
        g = 0.0
        disc = 1.0
        cur = -1
        while not terminal[n, s]:
            if cur < 0:
                size = 0
                for h in range(H):
                    mask[h] = h >= k or np.random.random() < interest[s, h]
                    if mask[h]:
                        size += 1
                z = 0.0
                for h in range(H):
                    w[h] = f[n, s, h] if mask[h] else 0.0
                    z += w[h]
                for h in range(H):
                    w[h] /= z
                cur = _draw(w, np.random.random())
                g -= disc * c * size
            a = _draw(pi[s, cur], np.random.random())
            j = _draw(prob[n, s, a], np.random.random())
            s2 = next_state[n, s, a, j]
            g += disc * reward[n, s, a, j]
            disc *= gamma
            if not terminal[n, s2] and np.random.random() < beta[s2, cur]:
                cur = -1
            s = s2
        out[e] = g


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


def simulate_compound_returns(mdp: TabularMdp, options: OptionSet, meta: MetaPreference, c: float,
                              episodes_per_task: int, rng: np.random.Generator) -> np.ndarray:
    """Compound returns ``(N, episodes)`` under the preference meta-policy; decision costs discounted."""
    N = mdp.num_tasks
    ids = np.repeat(np.arange(N), episodes_per_task)
    out = np.zeros(ids.size)
    _simulate(int(rng.integers(2**31 - 1)), ids.size, ids, mdp.next_state, mdp.reward, mdp.prob, mdp.terminal,
              mdp.d0, mdp.gamma, np.ascontiguousarray(options.pi), np.ascontiguousarray(options.beta),
              np.ascontiguousarray(options.interest), np.ascontiguousarray(meta.f), options.k, c, out)
    return out.reshape(N, episodes_per_task)
