"""Milestone training/evaluation protocol, multi-seed aggregation and sweeps.

Each seed trains for ``total_dialogues`` and writes a snapshot every
``milestone`` dialogues.  Every snapshot is then reloaded and evaluated
greedily (no exploration, no learning) on ``eval_dialogues`` dialogues
that are the same for every snapshot of a seed.  Per-milestone metrics are
averaged over seeds with normal-approximation 95% intervals.

Outputs go to ``<output_dir>/<algorithm>-<space>-<config hash>/``::

    manifest.json        resolved config, package version, seeds, per-seed status
    metrics.csv          aggregated table
    seed_<s>/metrics.csv per-seed table
    seed_<s>/train.jsonl one line per training dialogue
    seed_<s>/milestone_<k>.snap
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from acer_lab import __version__
from acer_lab.acer import AcerAgent, Hyperparameters, run_training
from acer_lab.dialenv.env import DialogueEnv, EnvConfig
from acer_lab.dialenv.ontology import load_ontology
from acer_lab.dialenv.policies import random_valid_action, scripted_action
from acer_lab.errors import AcerLabError, ConfigurationError
from acer_lab.gpsarsa import GPConfig, GPModel, run_gp_training

CSV_HEADER = ("milestone", "dialogues", "success_mean", "success_ci95", "reward_mean", "reward_ci95", "turns_mean", "turns_ci95")
ABSENT = "NA"
EVAL_EPISODE_OFFSET = 10_000_000  # evaluation dialogues never reuse training goals
DEFAULT_ERROR_GRID = tuple(round(0.05 * i, 2) for i in range(11))


@dataclass
class ExperimentConfig:
    algorithm: str = "acer"
    action_space: str = "summary"
    mask: bool = True
    train_error: float = 0.0
    eval_errors: tuple[float, ...] | None = None  # None: evaluate at the training rate
    total_dialogues: int = 4000
    milestone: int = 200
    eval_dialogues: int = 200
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    gp_nu: float = 0.1
    gp_noise: float = 1.0
    ontology: str = "toy"
    output_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.hyper, dict):
            self.hyper = Hyperparameters(**self.hyper)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.eval_errors is not None:
            self.eval_errors = tuple(float(e) for e in self.eval_errors)

    def validate(self) -> ExperimentConfig:
        if self.algorithm not in ("acer", "gpsarsa"):
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.action_space not in ("summary", "master"):
            raise ConfigurationError(f"unknown action space {self.action_space!r}")
        if self.total_dialogues < 1 or self.milestone < 1 or self.total_dialogues % self.milestone:
            raise ConfigurationError("milestone size must divide the total number of dialogues")
        if self.eval_dialogues < 1:
            raise ConfigurationError("eval_dialogues must be positive")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be a non-empty list of distinct integers")
        for rate in (self.train_error, *(self.eval_errors or ())):
            if not 0.0 <= rate <= 1.0:
                raise ConfigurationError(f"error rate {rate} outside [0, 1]")
        load_ontology(self.ontology)  # raises ConfigurationError when missing
        self.gp_config()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["eval_errors"] = None if self.eval_errors is None else list(self.eval_errors)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def config_hash(self) -> str:
        # the output location is not part of the experiment's identity
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"{self.algorithm}-{self.action_space}-{self.config_hash()}"

    def env_config(self, seed: int, error_rate: float | None = None) -> EnvConfig:
        rate = self.train_error if error_rate is None else error_rate
        return EnvConfig(error_rate=rate, mask=self.mask, mode=self.action_space, ontology=self.ontology, seed=seed)

    def gp_config(self) -> GPConfig:
        return GPConfig(mode=self.action_space, gamma=self.hyper.gamma, nu=self.gp_nu, noise=self.gp_noise)


@dataclass(frozen=True)
class EvalResult:
    success: float
    reward: float
    turns: float


def aggregate_ci(values) -> tuple[float, float | None]:
    """Mean and normal-approximation 95% half-width; half-width is None below two values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ConfigurationError("cannot aggregate an empty list")
    if v.size < 2:
        return float(v.mean()), None
    if (v == v[0]).all():
        return float(v[0]), 0.0  # avoid rounding noise from the mean
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


# -- snapshots and evaluation -------------------------------------------------


def load_snapshot(data: bytes):
    """AcerAgent or GPModel, chosen by the snapshot's magic bytes."""
    if data[:8] == b"GPSARSA1":
        return GPModel.from_bytes(data)
    return AcerAgent.from_bytes(data)


def greedy_chooser(learner, env: DialogueEnv):
    """Frozen greedy policy of a learner; refuses a learner built for another space."""
    if isinstance(learner, GPModel):
        if learner.config.mode != env.config.mode or learner.belief_dim != env.n_features:
            raise ConfigurationError("GP snapshot does not match the environment's action space or features")
        return lambda features, mask: learner.select_action(features, mask, False)
    arch = learner.params.arch
    if arch.master != (env.config.mode == "master") or arch.input_dim != env.n_features or arch.n_actions != env.n_actions:
        raise ConfigurationError("ACER snapshot does not match the environment's action space or features")
    return learner.greedy_policy()


def evaluate_greedy(learner, env_config: EnvConfig, n_dialogues: int, seed: int) -> EvalResult:
    """Greedy dialogues on a fixed set of evaluation goals; ``learner`` is never modified.

    ``learner`` is an AcerAgent, a GPModel, or a factory ``env -> choose(features, mask)``
    for hand-written policies that need the environment (e.g. its belief state).
    """
    env = DialogueEnv(env_config)
    choose = greedy_chooser(learner, env) if isinstance(learner, (AcerAgent, GPModel)) else learner(env)
    success = reward = turns = 0.0
    for j in range(n_dialogues):
        features, mask = env.reset(episode=EVAL_EPISODE_OFFSET + j, seed=seed)
        while not env.done:
            res = env.step(choose(features, mask))
            features, mask = res.features, res.mask
        success += env.success
        reward += env.total_reward
        turns += env.turn
    return EvalResult(success / n_dialogues, reward / n_dialogues, turns / n_dialogues)


def scripted_policy(env: DialogueEnv):
    """Hand-written reference policy; summary actions are mapped to payloads by the environment."""
    return lambda features, mask: env.space.summary_actions[scripted_action(env.belief, env.space)]


def random_policy(seed: int):
    """Factory for the uniform random-valid-action baseline."""

    def factory(env):
        rng = np.random.default_rng([seed, 3])
        return lambda features, mask: random_valid_action(mask, rng)

    return factory


def evaluate_snapshot(path, env_config: EnvConfig, n_dialogues: int, seed: int) -> EvalResult:
    return evaluate_greedy(load_snapshot(Path(path).read_bytes()), env_config, n_dialogues, seed)


# -- protocol -----------------------------------------------------------------


def _fmt(x) -> str:
    return ABSENT if x is None else f"{x:.6f}"


def _snapshot_name(k: int) -> str:
    return f"milestone_{k:03d}.snap"


def _train_seed(config: ExperimentConfig, seed: int, seed_dir: Path):
    """Train one seed, writing a snapshot per milestone; the last one keeps the replay memory."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    env_config = config.env_config(seed)

    def on_milestone(dialogues, learner):
        k = dialogues // config.milestone
        if isinstance(learner, AcerAgent):
            blob = learner.to_bytes(include_memory=dialogues == config.total_dialogues)
        else:
            blob = learner.to_bytes()
        (seed_dir / _snapshot_name(k)).write_bytes(blob)

    with open(seed_dir / "train.jsonl", "w") as log_file:
        if config.algorithm == "acer":
            run_training(env_config, config.hyper, config.total_dialogues, seed, config.milestone, on_milestone, log_file)
        else:
            run_gp_training(env_config, config.gp_config(), config.total_dialogues, seed, config.milestone, on_milestone, log_file)


def _run_seed(config_dict: dict, seed: int, seed_dir: str) -> tuple[int, list | None, str | None]:
    """Worker: train then evaluate every milestone snapshot; returns (seed, rows, error)."""
    config = ExperimentConfig.from_dict(config_dict)
    seed_dir = Path(seed_dir)
    try:
        _train_seed(config, seed, seed_dir)
        rows = []
        eval_env = config.env_config(seed, (config.eval_errors or (config.train_error,))[0])
        for k in range(1, config.total_dialogues // config.milestone + 1):
            res = evaluate_snapshot(seed_dir / _snapshot_name(k), eval_env, config.eval_dialogues, seed)
            rows.append((k, k * config.milestone, res.success, res.reward, res.turns))
    except (AcerLabError, ArithmeticError, FloatingPointError) as exc:
        return seed, None, f"{type(exc).__name__}: {exc}"
    with open(seed_dir / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("milestone", "dialogues", "success", "reward", "turns"))
        for k, d, s, r, t in rows:
            w.writerow((k, d, _fmt(s), _fmt(r), _fmt(t)))
    return seed, rows, None


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("ACER_LAB_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def _map_seeds(fn, jobs):
    """Run ``fn(*job)`` for each job, in a process pool when allowed; results in job order."""
    workers = worker_count(len(jobs))
    if workers == 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


@dataclass
class ProtocolResult:
    run_dir: Path
    rows: list  # aggregated: (milestone, dialogues, (mean, ci) x 3)
    per_seed: dict  # seed -> list of (milestone, dialogues, success, reward, turns)
    failures: dict  # seed -> message

    @property
    def ok(self) -> bool:
        return not self.failures

    def final_success(self) -> dict:
        return {s: rows[-1][2] for s, rows in self.per_seed.items()}


def aggregate_rows(per_seed: dict) -> list:
    seeds = sorted(per_seed)
    if not seeds:
        return []
    out = []
    for i, (k, d, *_rest) in enumerate(per_seed[seeds[0]]):
        cols = []
        for j in (2, 3, 4):
            cols.append(aggregate_ci([per_seed[s][i][j] for s in seeds]))
        out.append((k, d, *cols))
    return out


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k, d, *stats in rows:
        w.writerow((k, d, *(_fmt(x) for pair in stats for x in pair)))
    return buf.getvalue()


def run_protocol(config: ExperimentConfig) -> ProtocolResult:
    """Train every seed, evaluate every milestone snapshot, aggregate across seeds."""
    config.validate()
    run_dir = config.run_dir()
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    jobs = [(config.to_dict(), s, str(run_dir / f"seed_{s}")) for s in config.seeds]
    per_seed, failures = {}, {}
    for seed, rows, err in _map_seeds(_run_seed, jobs):
        if err is None:
            per_seed[seed] = rows
        else:
            failures[seed] = err
    rows = aggregate_rows(per_seed)
    (run_dir / "metrics.csv").write_text(metrics_csv(rows))
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "version": __version__,
        "seeds": list(config.seeds),
        "status": {str(s): failures.get(s, "ok") for s in config.seeds},
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ProtocolResult(run_dir, rows, per_seed, failures)


# -- sweeps -------------------------------------------------------------------


def _eval_final(config_dict: dict, seed: int, snap: str, rates: tuple) -> tuple[int, list]:
    config = ExperimentConfig.from_dict(config_dict)
    learner = load_snapshot(Path(snap).read_bytes())
    return seed, [evaluate_greedy(learner, config.env_config(seed, r), config.eval_dialogues, seed) for r in rates]


def error_rate_sweep(config: ExperimentConfig, rates=None) -> tuple[ProtocolResult, list]:
    """Train at ``config.train_error``, then evaluate each seed's final snapshot at every rate.

    Writes ``error_sweep.csv`` with one row per evaluation rate.
    """
    rates = tuple(rates if rates is not None else (config.eval_errors or DEFAULT_ERROR_GRID))
    result = run_protocol(config)
    last = _snapshot_name(config.total_dialogues // config.milestone)
    jobs = [(config.to_dict(), s, str(result.run_dir / f"seed_{s}" / last), rates) for s in sorted(result.per_seed)]
    by_seed = dict(_map_seeds(_eval_final, jobs))
    table = []
    for i, rate in enumerate(rates):
        stats = [aggregate_ci([getattr(by_seed[s][i], m) for s in sorted(by_seed)]) for m in ("success", "reward", "turns")]
        table.append((rate, config.train_error, *stats))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("error_rate", "train_error", *CSV_HEADER[2:]))
    for rate, train, *stats in table:
        w.writerow((f"{rate:.2f}", f"{train:.2f}", *(_fmt(x) for pair in stats for x in pair)))
    (result.run_dir / "error_sweep.csv").write_text(buf.getvalue())
    return result, table


SWEEPABLE = {"c": float, "delta": float, "beta": float, "n_steps": int, "lam": float, "lr": float, "entropy_coef": float}


def sweep_hyper(config: ExperimentConfig, param: str, values) -> tuple[Path, dict]:
    """One full protocol per value of a hyperparameter; writes a combined CSV next to the runs."""
    if param not in SWEEPABLE:
        raise ConfigurationError(f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)}")
    values = [SWEEPABLE[param](v) for v in values]
    runs = {}
    for v in values:
        sub = replace(config, hyper=replace(config.hyper, **{param: v}))
        runs[v] = run_protocol(sub)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((param, *CSV_HEADER))
    for v, res in runs.items():
        for k, d, *stats in res.rows:
            w.writerow((v, k, d, *(_fmt(x) for pair in stats for x in pair)))
    key = hashlib.sha256(json.dumps([config.config_hash(), param, values]).encode()).hexdigest()[:12]
    out = Path(config.output_dir) / f"sweep-{param}-{key}.csv"
    out.write_text(buf.getvalue())
    return out, runs
