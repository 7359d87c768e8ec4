"""Experiment orchestration: configs, runs, planning evaluation and rendering.

Configs are INI files::

    [experiment]
    map = fourroom
    seeds = 0, 1, 2
    output_dir = runs

    [learner]
    algorithm = fpoc
    k = 8
    cbar = 0.2
    eta = 0.0
    total_steps = 10000000

    [plan]
    mode = test
    model_source = exact

    [sweep]
    k = 2, 4, 8
    cbar = 0.2
    eta = 0, 0.05

Every unspecified value falls back to the defaults below.  Outputs go to
``output_dir`` (overridable with the ``FPOC_OUTPUT_DIR`` environment
variable), one subdirectory per config hash.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .learner import LearnerConfig, load_checkpoint, save_checkpoint, train
from .mdp import ACTIONS, GridSpec, build_mdp, load_map
from .options import OptionSet, make_hallway_options
from .planner import PlanReport, optimal_values, plan

log = logging.getLogger(__name__)

OUTPUT_ENV = "FPOC_OUTPUT_DIR"
CURVE_COLUMNS = ("step", "meanCompoundReturn", "stderr", "runId", "configHash")
SCATTER_COLUMNS = ("runId", "configHash", "objectiveEstimate", "totalOperations", "converged")
RANK_WINDOW = 5


@dataclass
class PlanSettings:
    mode: str = "test"
    model_source: str = "exact"
    model_steps: int = 1_000_000
    err_tol: float = 0.1
    max_iters: int = 1000


@dataclass
class ExperimentConfig:
    map: str = "fourroom"
    mode: str = "train"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    seeds: list = field(default_factory=lambda: list(range(10)))
    output_dir: str = "runs"
    workers: int = 1
    plan: PlanSettings = field(default_factory=PlanSettings)
    sweep: dict = field(default_factory=dict)

    def resolved_output(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def config_hash(self, learner: LearnerConfig | None = None) -> str:
        """Short digest of everything that determines a run except the seed."""
        learner = learner or self.learner
        doc = {"map": self.map, "mode": self.mode, "learner": learner.to_dict()}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if kind is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(float(raw))
    if kind is float:
        return float(raw)
    return raw


def _field_kinds(cls) -> dict:
    kinds = {}
    for f in fields(cls):
        t = str(f.type)
        if "int" in t and "float" not in t:
            kinds[f.name] = int
        elif "float" in t:
            kinds[f.name] = float
        elif "bool" in t:
            kinds[f.name] = bool
        else:
            kinds[f.name] = str
    return kinds


def _section(parser, name, cls, base=None):
    if not parser.has_section(name):
        return base if base is not None else cls()
    kinds = _field_kinds(cls)
    values = {}
    for key, raw in parser.items(name):
        key = key.replace("-", "_")
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        try:
            values[key] = _parse_value(raw, kinds[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from exc
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def _number_list(raw: str, kind=float) -> list:
    try:
        return [kind(float(x)) if kind is int else kind(x) for x in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"bad list {raw!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig()
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            key = key.replace("-", "_")
            if key == "seeds":
                cfg.seeds = _number_list(raw, int)
            elif key in ("map", "mode", "output_dir"):
                setattr(cfg, key, raw.strip())
            elif key == "workers":
                cfg.workers = int(raw)
            else:
                raise ConfigError(f"unknown key {key!r} in [experiment]")
    cfg.learner = _section(parser, "learner", LearnerConfig, LearnerConfig())
    cfg.plan = _section(parser, "plan", PlanSettings, PlanSettings())
    if parser.has_section("sweep"):
        grid = {}
        for key, raw in parser.items("sweep"):
            if key == "algorithm":
                grid[key] = raw.replace(",", " ").split()
            elif key in ("k",):
                grid[key] = _number_list(raw, int)
            elif key in ("cbar", "eta"):
                grid[key] = _number_list(raw, float)
            else:
                raise ConfigError(f"unknown sweep key {key!r}")
        cfg.sweep = grid
    if cfg.mode not in ("train", "test"):
        raise ConfigError(f"mode must be train or test, got {cfg.mode!r}")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def resolve_map(source: str) -> GridSpec:
    try:
        return load_map(source)
    except FileNotFoundError as exc:
        raise ConfigError(f"map not found: {source}") from exc


# Single runs.

def final_objective(curve, window: int = RANK_WINDOW) -> float:
    """Mean compound return over the last ``window`` evaluations."""
    if not curve:
        return float("nan")
    return float(np.mean([row["mean"] if isinstance(row, dict) else row.mean for row in curve[-window:]]))


def run_one(map_source: str, mode: str, learner: LearnerConfig, seed: int, checkpoint_path: str | None = None,
            config_hash: str = "") -> dict:
    """Train one seed; returns a summary dict (and writes a checkpoint if asked)."""
    grid = resolve_map(map_source)
    mdp = build_mdp(grid, mode, learner.gamma)
    rng = np.random.default_rng(seed)
    result = train(learner, mdp, rng)
    curve = [{"step": r.step, "mean": r.mean, "stderr": r.stderr} for r in result.curve]
    summary = {"seed": seed, "configHash": config_hash, "runId": f"{config_hash}-s{seed}", "curve": curve,
               "objectiveEstimate": final_objective(curve)}
    if checkpoint_path:
        save_checkpoint(checkpoint_path, result.state, learner, seed=seed, map=grid.to_text(), mode=mode,
                        curve=curve, runId=summary["runId"], configHash=config_hash)
    return summary


def _run_job(job):
    return run_one(*job)


def run_many(jobs, workers: int = 1):
    """Run independent jobs sequentially or in a process pool; failures are logged and skipped."""
    results = []
    if workers <= 1:
        for job in jobs:
            try:
                results.append(_run_job(job))
            except Exception as exc:  # noqa: BLE001 - a failed run must not stop the batch
                log.error("run %s failed: %s", job, exc)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_job, job) for job in jobs]
        for job, fut in zip(jobs, futures):
            try:
                results.append(fut.result())
            except Exception as exc:  # noqa: BLE001
                log.error("run %s failed: %s", job, exc)
    return results


def write_curve_csv(path, summaries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for summ in summaries:
            for row in summ["curve"]:
                w.writerow([row["step"], repr(row["mean"]), repr(row["stderr"]), summ["runId"], summ["configHash"]])


def write_scatter_csv(path, rows, append: bool = False):
    exists = append and Path(path).exists()
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(SCATTER_COLUMNS)
        for r in rows:
            w.writerow([r["runId"], r["configHash"], repr(r["objectiveEstimate"]), r["totalOperations"],
                        str(bool(r["converged"])).lower()])


def cmd_train(cfg: ExperimentConfig) -> Path:
    """One run per seed: checkpoints plus a learning-curve CSV, under ``<output>/<configHash>``."""
    resolve_map(cfg.map)
    digest = cfg.config_hash()
    out = cfg.resolved_output() / digest
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.map, cfg.mode, cfg.learner, seed, str(out / f"seed{seed}.json"), digest) for seed in cfg.seeds]
    summaries = run_many(jobs, cfg.workers)
    write_curve_csv(out / "curve.csv", summaries)
    return out


# Evaluation and planning of checkpoints.

def options_from_checkpoint(doc: dict, cfg: LearnerConfig) -> OptionSet:
    from .learner import state_from_dict

    state, _ = state_from_dict(doc)
    return state.option_set(cfg)


def cmd_eval(checkpoint, episodes: int = 500, c: float = 0.2, seed: int = 0) -> dict:
    """Greedy evaluation of a checkpoint on its training tasks."""
    from .learner import evaluate

    state, learner, doc = load_checkpoint(checkpoint)
    grid = load_map(doc["map"]) if "map" in doc else resolve_map("fourroom")
    mdp = build_mdp(grid, doc.get("mode", "train"), learner.gamma)
    learner = replace(learner, eval_c=c)
    summary = evaluate(state, learner, mdp, np.random.default_rng(seed), episodes)
    return {"meanCompoundReturn": summary.mean, "stderr": summary.stderr, "episodes": episodes,
            "meanDecisions": float(summary.decisions.mean()), "meanLength": float(summary.lengths.mean()),
            "truncated": int(summary.truncated.sum())}


def plan_options(grid: GridSpec, options: OptionSet, settings: PlanSettings, seed: int = 0,
                 v_star=None) -> PlanReport:
    mdp = build_mdp(grid, settings.mode)
    _, report = plan(mdp, options, np.random.default_rng(seed), settings.model_source, settings.model_steps,
                     settings.err_tol, settings.max_iters, v_star)
    return report


def plan_repeats(grid: GridSpec, options: OptionSet, settings: PlanSettings, seed: int, repeats: int) -> dict:
    """Operation counts over ``repeats`` independent initiation-set samples."""
    if repeats <= 0:
        raise ValueError("repeats must be positive")
    v_star = optimal_values(build_mdp(grid, settings.mode))
    ops = [plan_options(grid, options, settings, seed + j, v_star).total_operations for j in range(repeats)]
    return {"repeats": repeats, "totalOperations": ops, "mean": float(np.mean(ops)),
            "std": float(np.std(ops, ddof=1)) if repeats > 1 else 0.0}


def cmd_plan(checkpoint: str | None, settings: PlanSettings, seed: int = 0, options: str = "learned",
             map_source: str = "fourroom", repeats: int = 1) -> tuple[PlanReport, dict]:
    """Plan on test or train tasks with a checkpoint's options (or a built-in baseline).

    ``options`` is ``learned`` (the checkpoint's), ``hallway`` (checkpoint's
    options plus the two hallway options, or the hallway options alone
    without a checkpoint) or ``primitives``.  The scatter row uses the
    initiation sets drawn from ``seed``; with ``repeats > 1`` it also
    carries the spread over further samples.
    """
    if repeats <= 0:
        raise ValueError("repeats must be positive")
    doc, learner, objective, run_id, digest = None, None, float("nan"), options, ""
    if checkpoint:
        _, learner, doc = load_checkpoint(checkpoint)
        grid = load_map(doc["map"])
        objective = final_objective(doc.get("curve", []))
        run_id, digest = doc.get("runId", Path(checkpoint).stem), doc.get("configHash", "")
    else:
        grid = resolve_map(map_source)
    num_actions = len(ACTIONS)
    if options == "primitives":
        opts = OptionSet.primitives(grid.num_states, num_actions)
    elif options == "hallway":
        opts = make_hallway_options(grid)
        if doc is not None:
            opts = options_from_checkpoint(doc, learner).extend(opts)
    elif doc is not None:
        opts = options_from_checkpoint(doc, learner)
    else:
        raise ConfigError("learned options need a checkpoint")
    report = plan_options(grid, opts, settings, seed)
    row = {"runId": run_id, "configHash": digest, "objectiveEstimate": objective,
           "totalOperations": report.total_operations, "converged": report.converged}
    if repeats > 1:
        row["repeats"] = plan_repeats(grid, opts, settings, seed, repeats)
    return report, row


def expand_grid(cfg: ExperimentConfig) -> list[LearnerConfig]:
    if not cfg.sweep or any(len(v) == 0 for v in cfg.sweep.values()):
        raise ConfigError("sweep grid is empty")
    keys = sorted(cfg.sweep)
    return [replace(cfg.learner, **dict(zip(keys, combo)))
            for combo in itertools.product(*(cfg.sweep[k] for k in keys))]


def rank_settings(summaries) -> list[dict]:
    """Group runs by config hash and rank by mean final objective over seeds, best first."""
    groups = {}
    for s in summaries:
        groups.setdefault(s["configHash"], []).append(s["objectiveEstimate"])
    ranked = [{"configHash": h, "score": float(np.mean(v)), "runs": len(v)} for h, v in groups.items()]
    return sorted(ranked, key=lambda r: r["score"], reverse=True)


def cmd_sweep(cfg: ExperimentConfig) -> Path:
    """Train every (setting, seed) pair, rank settings, and plan with every resulting checkpoint."""
    resolve_map(cfg.map)
    settings = expand_grid(cfg)
    out = cfg.resolved_output() / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    jobs, meta = [], {}
    for learner in settings:
        digest = cfg.config_hash(learner)
        meta[digest] = learner.to_dict()
        for seed in cfg.seeds:
            jobs.append((cfg.map, cfg.mode, learner, seed, str(out / f"{digest}-s{seed}.json"), digest))
    summaries = run_many(jobs, cfg.workers)
    write_curve_csv(out / "curves.csv", summaries)
    ranking = rank_settings(summaries)
    for r in ranking:
        r["config"] = meta[r["configHash"]]
    (out / "ranking.json").write_text(json.dumps(ranking, indent=1, sort_keys=True))
    rows = []
    for s in summaries:
        try:
            _, row = cmd_plan(str(out / f"{s['runId']}.json"), cfg.plan, seed=s["seed"])
            rows.append(row)
        except Exception as exc:  # noqa: BLE001
            log.error("planning for %s failed: %s", s["runId"], exc)
    write_scatter_csv(out / "scatter.csv", rows)
    return out


# ASCII rendering.

ARROWS = {0: "↑", 1: "↓", 2: "←", 3: "→"}


def _panel(grid: GridSpec, values, fmt) -> list[str]:
    lines = []
    for r in range(grid.height):
        line = []
        for c in range(grid.width):
            s = grid.state_index[r, c]
            line.append("#" if s < 0 else fmt(values[s]))
        lines.append("".join(line))
    return lines


def decile(p: float) -> str:
    return str(min(9, int(np.floor(p * 10))))


def render_options(grid: GridSpec, options: OptionSet) -> str:
    """Policy arrows, termination and interest deciles for each adjustable option, side by side."""
    blocks = []
    for h in range(options.k):
        pol = _panel(grid, options.pi[:, h].argmax(axis=1), lambda a: ARROWS[int(a)])
        term = _panel(grid, options.beta[:, h], decile)
        inter = _panel(grid, options.interest[:, h], decile)
        width = grid.width
        head = f"option {h}".ljust(width) + "   " + "termination".ljust(width) + "   " + "interest"
        blocks.append("\n".join([head] + [f"{a}   {b}   {c}" for a, b, c in zip(pol, term, inter)]))
    return "\n\n".join(blocks)


def cmd_render(checkpoint: str | None = None, hallway: bool = False, map_source: str = "fourroom") -> str:
    if checkpoint:
        _, learner, doc = load_checkpoint(checkpoint)
        grid = load_map(doc["map"])
        opts = options_from_checkpoint(doc, learner)
    else:
        grid = resolve_map(map_source)
        opts = make_hallway_options(grid) if hallway else OptionSet.primitives(grid.num_states, len(ACTIONS))
    return render_options(grid, opts)


def config_to_text(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg``."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {"map": cfg.map, "mode": cfg.mode, "seeds": ", ".join(map(str, cfg.seeds)),
                            "output_dir": cfg.output_dir, "workers": str(cfg.workers)}
    parser["learner"] = {k: ("none" if v is None else str(v)) for k, v in cfg.learner.to_dict().items()}
    parser["plan"] = {k: str(v) for k, v in asdict(cfg.plan).items()}
    if cfg.sweep:
        parser["sweep"] = {k: ", ".join(map(str, v)) for k, v in cfg.sweep.items()}
    from io import StringIO

    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()

