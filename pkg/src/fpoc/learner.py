"""Tabular multi-task option-critic learners (MAOC and FPOC).

FPOC learns option policies, terminations and interest functions together
with per-task option values.  MAOC is the same update with every interest
pinned to 1 and no interest updates.

Randomness is consumed in a fixed layout of ``2k + 7`` uniforms per step
(see ``_kernels.learner_steps``), so a run depends only on the generator
stream and not on how steps are batched.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import NonConvergentError
from .executor import rollout
from .mdp import TabularMdp, sample_index
from .options import PINNED_PREFERENCE, OptionSet, ParamTables

_BLOCK_ROWS = 1 << 15


class Algorithm(str, enum.Enum):
    MAOC = "maoc"
    FPOC = "fpoc"


@dataclass
class LearnerConfig:
    k: int = 2
    alpha: float = 0.01
    epsilon: float = 0.1
    cbar: float = 0.2
    eta: float = 0.05
    gamma: float = 1.0
    algorithm: Algorithm = Algorithm.FPOC
    total_steps: int = 10**7
    eval_every: int = 10**5
    eval_episodes: int = 500
    eval_c: float = 0.2
    is_clip: str = "min"
    eval_max_steps: int | None = None
    q_init: float | None = None    # None: pessimistic, -|S| * max|reward|
    td_branch: str = "shared"

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.validate()

    def validate(self):
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.cbar < 0 or self.eta < 0 or self.eval_c < 0:
            raise ValueError("cbar, eta and eval_c must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.is_clip not in ("max", "min"):
            raise ValueError("is_clip must be 'max' or 'min'")
        if self.td_branch not in ("shared", "per-option"):
            raise ValueError("td_branch must be 'shared' or 'per-option'")
        if self.total_steps < 0 or self.eval_every <= 0 or self.eval_episodes <= 0:
            raise ValueError("step counts must be positive")

    @property
    def learns_interest(self) -> bool:
        return self.algorithm is Algorithm.FPOC

    @property
    def draws_per_step(self) -> int:
        return 2 * self.k + 7

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algorithm"] = self.algorithm.value
        return d


@dataclass
class LearnerState:
    q: np.ndarray                  # (N, S, H)
    tables: ParamTables
    beta_prev: float = 1.0
    task: int = 0
    state: int = 0
    option: int = -1               # option being executed, -1 when a choice is due
    step_count: int = 0
    episodes: int = 0

    @classmethod
    def initial(cls, cfg: LearnerConfig, mdp: TabularMdp, rng: np.random.Generator) -> "LearnerState":
        """Zero tables; MAOC pins the interest preferences so every interest is exactly 1."""
        tables = ParamTables.zeros(mdp.num_states, cfg.k, mdp.num_actions)
        if not cfg.learns_interest:
            tables.w_int[:] = PINNED_PREFERENCE
        q = np.full((mdp.num_tasks, mdp.num_states, cfg.k + mdp.num_actions), initial_value(cfg, mdp))
        q[mdp.terminal] = 0.0
        u_task, u_state = rng.random(2)
        task = min(int(u_task * mdp.num_tasks), mdp.num_tasks - 1)
        return cls(q, tables, 1.0, task, sample_index(np.asarray(mdp.d0), u_state))

    def copy(self) -> "LearnerState":
        return LearnerState(self.q.copy(), self.tables.copy(), self.beta_prev, self.task, self.state,
                            self.option, self.step_count, self.episodes)

    def option_set(self, cfg: LearnerConfig) -> OptionSet:
        return OptionSet.from_tables(self.tables, pin_interest=not cfg.learns_interest)

    def _ctx(self) -> np.ndarray:
        return np.array([self.task, self.state, self.option, self.beta_prev, self.step_count, self.episodes],
                        dtype=float)

    def _load_ctx(self, ctx: np.ndarray):
        self.task, self.state, self.option = int(ctx[0]), int(ctx[1]), int(ctx[2])
        self.beta_prev = float(ctx[3])
        self.step_count, self.episodes = int(ctx[4]), int(ctx[5])


def initial_value(cfg: LearnerConfig, mdp: TabularMdp) -> float:
    """Initial option value: ``cfg.q_init`` or the pessimistic bound ``-|S| * max|reward|``."""
    if cfg.q_init is not None:
        return float(cfg.q_init)
    live = mdp.prob > 0
    return -mdp.num_states * float(np.abs(mdp.reward[live]).max())


def _as_mask(omega, num_options: int) -> np.ndarray:
    omega = np.asarray(omega)
    if omega.dtype == np.bool_ and omega.shape == (num_options,):
        return omega
    mask = np.zeros(num_options, dtype=np.bool_)
    mask[omega.astype(int)] = True
    return mask


def estimate_v(q_row, interest, omega, eps: float, cbar: float) -> float:
    """Low-variance estimate of the state value from one sampled initiation set.

    ``interest`` holds the ``k`` adjustable interests at the state and
    ``omega`` the sampled set (indices or a boolean mask over all options).
    """
    q_row = np.asarray(q_row, dtype=float)
    interest = np.asarray(interest, dtype=float)
    mask = _as_mask(omega, q_row.shape[0])
    return float(_kernels.estimate_v(q_row, interest, mask, interest.shape[0], eps, cbar))


def estimate_m(q_row, interest, omega, eps: float, cbar: float) -> np.ndarray:
    """Per-option interest-gradient estimate ``i(1-i) [A(omega + x) - A(omega - x) - cbar]``."""
    q_row = np.asarray(q_row, dtype=float)
    interest = np.asarray(interest, dtype=float)
    mask = _as_mask(omega, q_row.shape[0])
    out = np.zeros(interest.shape[0])
    _kernels.estimate_m(q_row, interest, mask, interest.shape[0], eps, cbar, out)
    return out


def sample_omegas(interest, num_options: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent initiation-set masks ``(n, H)`` at one state; primitives always included."""
    interest = np.asarray(interest, dtype=float)
    masks = np.ones((n, num_options), dtype=np.bool_)
    masks[:, : interest.shape[0]] = rng.random((n, interest.shape[0])) < interest
    return masks


def estimate_batch(q_row, interest, masks, eps: float, cbar: float):
    """Vectorized :func:`estimate_v` and :func:`estimate_m` over mask rows; returns ``(v, m)``."""
    q_row = np.asarray(q_row, dtype=float)
    interest = np.asarray(interest, dtype=float)
    masks = np.ascontiguousarray(masks, dtype=np.bool_)
    k = interest.shape[0]
    v = np.zeros(masks.shape[0])
    m = np.zeros((masks.shape[0], k))
    _kernels.estimate_batch(q_row, interest, masks, k, eps, cbar, v, m)
    return v, m


def td_errors(r: float, q_s, q_s2, z: bool, beta: float, v_s2: float, gamma: float, rng: np.random.Generator):
    """TD errors for every option index with one shared termination draw.

    With probability ``beta`` (termination of the executing option at the
    next state) every target bootstraps from ``v_s2``; otherwise each
    option bootstraps from its own value at the next state.  Returns
    ``(delta, fired)``.
    """
    fired = bool(rng.random() < beta)
    q_s = np.asarray(q_s, dtype=float)
    boot = np.full_like(q_s, v_s2) if fired else np.asarray(q_s2, dtype=float)
    return r - q_s + gamma * (1.0 - float(z)) * boot, fired


def _run_steps(state: LearnerState, cfg: LearnerConfig, mdp: TabularMdp, uniforms: np.ndarray):
    ctx = state._ctx()
    _kernels.learner_steps(
        uniforms, mdp.next_state, mdp.reward, mdp.prob, mdp.terminal, np.asarray(mdp.d0), cfg.gamma,
        state.q, state.tables.w_pi, state.tables.w_beta, state.tables.w_int, cfg.k,
        cfg.alpha, cfg.epsilon, cfg.cbar, cfg.eta, cfg.learns_interest,
        _kernels.CLIP_MAX if cfg.is_clip == "max" else _kernels.CLIP_MIN,
        _kernels.BRANCH_SHARED if cfg.td_branch == "shared" else _kernels.BRANCH_PER_OPTION, ctx,
    )
    state._load_ctx(ctx)
    if not (np.isfinite(state.q).all() and np.isfinite(state.tables.w_pi).all()):
        raise NonConvergentError(f"learner diverged before step {state.step_count}")


def fpoc_step(state: LearnerState, cfg: LearnerConfig, mdp: TabularMdp, rng: np.random.Generator) -> LearnerState:
    """One loop body of the learner, updating ``state`` in place."""
    _run_steps(state, cfg, mdp, rng.random((1, cfg.draws_per_step)))
    return state


def run_steps(state: LearnerState, cfg: LearnerConfig, mdp: TabularMdp, rng: np.random.Generator, steps: int):
    """``steps`` consecutive loop bodies; identical to calling :func:`fpoc_step` repeatedly."""
    while steps > 0:
        rows = min(steps, _BLOCK_ROWS)
        _run_steps(state, cfg, mdp, rng.random((rows, cfg.draws_per_step)))
        steps -= rows
    return state


@dataclass
class CurveRow:
    step: int
    mean: float
    stderr: float


@dataclass
class TrainResult:
    state: LearnerState
    curve: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.state, self.curve))


def evaluate(state: LearnerState, cfg: LearnerConfig, mdp: TabularMdp, rng: np.random.Generator,
             episodes: int | None = None):
    """Greedy call-and-return evaluation with no parameter updates."""
    return rollout(mdp, state.option_set(cfg), state.q, cfg.eval_c, episodes or cfg.eval_episodes, rng,
                   eps=0.0, max_steps=cfg.eval_max_steps)


def train(cfg: LearnerConfig, mdp: TabularMdp, rng: np.random.Generator,
          eval_rng: np.random.Generator | None = None, state: LearnerState | None = None,
          progress=None) -> TrainResult:
    """Run ``cfg.total_steps`` learner steps with periodic greedy evaluation.

    Evaluation draws from ``eval_rng`` (by default a child spawned from
    ``rng``'s seed sequence) so it never perturbs the training stream.
    """
    if mdp.gamma != cfg.gamma:
        mdp = mdp.with_gamma(cfg.gamma)
    if eval_rng is None:
        eval_rng = rng.spawn(1)[0]
    if state is None:
        state = LearnerState.initial(cfg, mdp, rng)
    curve = []
    done = 0
    while done < cfg.total_steps:
        chunk = min(cfg.eval_every - done % cfg.eval_every, cfg.total_steps - done)
        run_steps(state, cfg, mdp, rng, chunk)
        done += chunk
        if done % cfg.eval_every == 0:
            summary = evaluate(state, cfg, mdp, eval_rng)
            curve.append(CurveRow(done, summary.mean, summary.stderr))
            if progress is not None:
                progress(curve[-1])
    return TrainResult(state, curve)


CHECKPOINT_VERSION = 1


def checkpoint_dict(state: LearnerState, cfg: LearnerConfig, **extra) -> dict:
    """JSON-ready snapshot of a learner; floats round-trip exactly."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "q": state.q.tolist(),
        "w_pi": state.tables.w_pi.tolist(),
        "w_beta": state.tables.w_beta.tolist(),
        "w_int": state.tables.w_int.tolist(),
        "beta_prev": state.beta_prev,
        "task": state.task,
        "state": state.state,
        "option": state.option,
        "step_count": state.step_count,
        "episodes": state.episodes,
    }
    doc.update(extra)
    return doc


def save_checkpoint(path, state: LearnerState, cfg: LearnerConfig, **extra):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(state, cfg, **extra), fh)


def state_from_dict(doc: dict) -> tuple[LearnerState, LearnerConfig]:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = LearnerConfig(**doc["config"])
    S = len(doc["w_beta"])
    k, A = cfg.k, np.asarray(doc["q"]).shape[2] - cfg.k
    tables = ParamTables(np.array(doc["w_pi"], dtype=float).reshape(S, k, A),
                         np.array(doc["w_beta"], dtype=float).reshape(S, k),
                         np.array(doc["w_int"], dtype=float).reshape(S, k))
    state = LearnerState(np.array(doc["q"], dtype=float), tables, float(doc["beta_prev"]), int(doc["task"]),
                         int(doc["state"]), int(doc["option"]), int(doc["step_count"]), int(doc["episodes"]))
    return state, cfg


def load_checkpoint(path) -> tuple[LearnerState, LearnerConfig, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    state, cfg = state_from_dict(doc)
    return state, cfg, doc
