"""Actor-critic with experience replay.

Per sampled batch: Retrace targets for the critic, truncated importance
weights with a bias-correction term for the actor, an entropy bonus, and a
linearised KL trust region around an exponentially averaged policy.  All
transitions of a batch go through the network in one pass.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from acer_lab.dialenv.env import DialogueEnv, EnvConfig
from acer_lab.errors import ConfigurationError, NumericError, StoredDataError
from acer_lab.policynet import (
    POLICY_BLOCKS,
    AdamState,
    Architecture,
    NetworkParams,
    adam_direction,
    adam_step,
    backward_batch,
    forward_batch,
    init_params,
    kl_from_caches,
    soft_update_average,
)
from acer_lab.replay import EpisodeRecord, ReplayMemory


@dataclass
class Hyperparameters:
    lr: float = 0.001
    beta: float = 0.99  # average-policy retention
    gamma: float = 0.99
    delta: float = 1.0  # bound on the linearised KL increase
    c: float = 5.0  # importance-weight truncation for the actor
    lam: float = 1.0  # trace decay inside Retrace
    trace_clip: float = 1.0  # Retrace traces use lam * min(trace_clip, rho)
    n_steps: int = 1  # training steps per collected dialogue
    batch_size: int = 64
    replay_capacity: int = 2000
    entropy_coef: float = 0.01
    critic_coef: float = 1.0
    eps_start: float = 0.95
    eps_end: float = 0.0
    mu_mode: str = "mixed"  # "mixed": store the epsilon-greedy distribution; "pi": store pi
    truncate_is: bool = True  # False: plain importance weights, no bias correction
    sample_unit: str = "episodes"
    trust_region: str = "step"  # "step": bound the Adam step; "gradient": bound the raw actor gradient
    h1: int = 130
    h2: int = 50

    def __post_init__(self):
        checks = [
            (0.0 < self.gamma <= 1.0, "gamma must lie in (0, 1]"),
            (self.c > 0, "c must be positive"),
            (self.delta > 0, "delta must be positive"),
            (0.0 <= self.beta <= 1.0, "beta must lie in [0, 1]"),
            (0.0 <= self.lam <= 1.0, "lam must lie in [0, 1]"),
            (self.trace_clip > 0, "trace_clip must be positive"),
            (self.n_steps >= 1, "n_steps must be at least 1"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.replay_capacity >= 25, "replay_capacity must hold a full dialogue"),
            (self.lr > 0, "lr must be positive"),
            (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0, "epsilon endpoints must lie in [0, 1]"),
            (self.mu_mode in ("mixed", "pi"), "mu_mode must be 'mixed' or 'pi'"),
            (self.sample_unit in ("episodes", "transitions"), "sample_unit must be 'episodes' or 'transitions'"),
            (self.trust_region in ("step", "gradient"), "trust_region must be 'step' or 'gradient'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)


def epsilon(dialogue: int, total: int, start: float = 0.95, end: float = 0.0) -> float:
    """Linear exploration schedule: ``start`` at dialogue 0, ``end`` at dialogue ``total - 1``."""
    if total <= 1:
        return end
    frac = min(max(dialogue / (total - 1), 0.0), 1.0)
    return start + (end - start) * frac


# -- estimator pieces ---------------------------------------------------------


def is_weight(pi_prob, mu_prob):
    """rho = pi / mu; a zero behaviour probability means the record is corrupt."""
    pi_prob = np.asarray(pi_prob, dtype=np.float64)
    mu_prob = np.asarray(mu_prob, dtype=np.float64)
    if (mu_prob <= 0).any():
        raise StoredDataError("behaviour probability of a taken action is zero")
    return pi_prob / mu_prob


def truncate(rho, c: float):
    return np.minimum(c, rho)


def bias_weight(rho, c: float):
    """[(rho - c) / rho]_+, written as 1 - c/rho so that rho = inf gives 1."""
    rho = np.asarray(rho, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(rho > c, 1.0 - c / rho, 0.0)


def _retrace(rewards, q_taken, values, traces, starts, lengths, gamma):
    out = np.empty_like(rewards)
    carry = np.zeros(len(starts))  # gamma * (V_{t+1} + c_{t+1} (Qret_{t+1} - Q_{t+1})), zero past the end
    for t in range(int(lengths.max()) - 1, -1, -1):
        alive = lengths > t
        i = starts[alive] + t
        out[i] = rewards[i] + carry[alive]
        carry[alive] = gamma * (values[i] + traces[i] * (out[i] - q_taken[i]))
    return out


def retrace_targets(rewards, q_taken, values, rho, gamma: float, lam: float = 1.0, clip: float = 1.0) -> np.ndarray:
    """Backward Retrace recursion for one terminal episode.

    Qret_t = r_t + gamma V_{t+1} + gamma c_{t+1} (Qret_{t+1} - Q_{t+1}) with
    c = lam * min(clip, rho) and V, Q zero past the terminal step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("episode is empty")
    traces = lam * np.minimum(clip, np.asarray(rho, dtype=np.float64))
    return _retrace(
        rewards,
        np.asarray(q_taken, dtype=np.float64),
        np.asarray(values, dtype=np.float64),
        traces,
        np.array([0]),
        np.array([rewards.size]),
        gamma,
    )


def lambda_returns(rewards, values, rho, gamma: float, lam: float) -> np.ndarray:
    """R_t = r_t + (1 - lam) gamma V_{t+1} + lam gamma rho_{t+1} R_{t+1}, R_T = r_T."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    nxt = 0.0
    for t in range(rewards.size - 1, -1, -1):
        if t == rewards.size - 1:
            out[t] = rewards[t]
        else:
            out[t] = rewards[t] + (1 - lam) * gamma * values[t + 1] + lam * gamma * rho[t + 1] * nxt
        nxt = out[t]
    return out


def trust_region_project(g, k, delta: float):
    """Closest point to ``g`` in the half-space k.z <= delta."""
    g = np.asarray(g, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    kk = float(k @ k)
    if kk == 0.0:
        return g.copy()
    scale = max(0.0, (float(k @ g) - delta) / kk)
    return g - scale * k


# -- batched gradients --------------------------------------------------------


@dataclass
class Batch:
    beliefs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    mu: np.ndarray
    masks: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_episodes(cls, episodes: list[EpisodeRecord]) -> Batch:
        lengths = np.array([len(e) for e in episodes])
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        return cls(
            beliefs=np.concatenate([e.beliefs for e in episodes]),
            actions=np.concatenate([e.actions for e in episodes]),
            rewards=np.concatenate([e.rewards for e in episodes]),
            mu=np.concatenate([e.mu for e in episodes]),
            masks=np.concatenate([e.masks for e in episodes]),
            starts=starts,
            lengths=lengths,
        )

    def __len__(self):
        return len(self.actions)


@dataclass
class BatchGradients:
    actor: NetworkParams  # ascent direction of the actor objective (trunk + policy heads)
    critic: NetworkParams  # -grad of the squared Retrace error (trunk + Q heads)
    qret: np.ndarray
    values: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    bias_weights: np.ndarray
    cache: object


def batch_gradients(params: NetworkParams, batch: Batch, hyper: Hyperparameters) -> BatchGradients:
    """Actor and critic ascent directions, averaged over every transition in ``batch``."""
    cache = forward_batch(params, batch.beliefs, batch.masks)
    pi, q = cache.pi, cache.q
    n = len(batch)
    idx = np.arange(n)
    a = batch.actions
    values = (pi * q).sum(axis=1)
    rho = is_weight(pi[idx, a], batch.mu[idx, a])
    q_taken = q[idx, a]
    traces = hyper.lam * np.minimum(hyper.trace_clip, rho)
    qret = _retrace(batch.rewards, q_taken, values, traces, batch.starts, batch.lengths, hyper.gamma)

    dlogpi = np.zeros_like(pi)
    if hyper.truncate_is:
        rho_bar = truncate(rho, hyper.c)
        dlogpi[idx, a] = rho_bar * (qret - values)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho_all = np.where(batch.mu > 0, pi / batch.mu, np.where(pi > 0, np.inf, 0.0))
        w = bias_weight(rho_all, hyper.c)
        dlogpi += pi * w * (q - values[:, None])
    else:
        rho_bar = rho
        w = np.zeros_like(pi)
        dlogpi[idx, a] = rho * (qret - values)
    if hyper.entropy_coef:
        # d/dlogpi of H = -sum pi log pi, masked entries contribute nothing
        safe = np.where(pi > 0, cache.logpi, 0.0)
        dlogpi -= hyper.entropy_coef * pi * (safe + 1.0)
    dlogpi /= n
    dq = np.zeros_like(q)
    dq[idx, a] = hyper.critic_coef * 2.0 * (qret - q_taken) / n
    if not (np.isfinite(qret).all() and np.isfinite(dlogpi).all()):
        raise NumericError("non-finite Retrace target or actor coefficient")
    actor = backward_batch(params, cache, dlogpi, np.zeros_like(q))
    critic = backward_batch(params, cache, np.zeros_like(pi), dq)
    return BatchGradients(actor, critic, qret, values, rho, rho_bar, w, cache)


def episode_gradients(params: NetworkParams, episode: EpisodeRecord, hyper: Hyperparameters):
    """(g, dtheta) for a single stored dialogue."""
    out = batch_gradients(params, Batch.from_episodes([episode]), hyper)
    return out.actor, out.critic


def policy_names(params: NetworkParams) -> list[str]:
    return [n for n in POLICY_BLOCKS if n in params.blocks]


@dataclass
class StepStats:
    kl: float
    k_norm: float
    kz: float
    projected: bool
    qret_mean: float
    transitions: int


def apply_update(params, avg, adam, grads: BatchGradients, avg_pi, hyper: Hyperparameters):
    """One optimiser step under the linearised trust region, then soft-update the average.

    ``trust_region="step"`` projects the Adam-preconditioned ascent direction
    of the combined actor and critic gradient, so the bound applies to the
    step actually taken.  ``"gradient"`` projects the raw actor gradient
    before Adam rescales it.
    """
    names = policy_names(params)
    kl, k = kl_from_caches(params, avg_pi, grads.cache)
    kvec = k.flat(names)
    if hyper.trust_region == "gradient":
        g = grads.actor.flat(names)
        z = trust_region_project(g, kvec, hyper.delta)
        combined = grads.critic.with_flat(grads.critic.flat(names) + z, names)
        descent = NetworkParams(params.arch, {n: -x for n, x in combined.blocks.items()})
        new_params, new_adam = adam_step(params, descent, adam, hyper.lr)
    else:
        combined = grads.critic.with_flat(grads.critic.flat(names) + grads.actor.flat(names), names)
        direction, new_adam = adam_direction(combined, adam)
        g = direction.flat(names)
        z = trust_region_project(g, kvec, hyper.delta)
        direction = direction.with_flat(z, names)
        new_params = NetworkParams(params.arch, {n: p + hyper.lr * direction.blocks[n] for n, p in params.blocks.items()})
    if not new_params.all_finite():
        raise NumericError("parameters became non-finite after the update")
    new_avg = soft_update_average(avg, new_params, hyper.beta)
    stats = StepStats(
        kl=kl,
        k_norm=float(np.linalg.norm(kvec)),
        kz=float(kvec @ z),
        projected=bool(float(kvec @ g) > hyper.delta and float(kvec @ kvec) > 0),
        qret_mean=float(grads.qret.mean()),
        transitions=len(grads.qret),
    )
    return new_params, new_avg, new_adam, stats


# -- agent and training loop --------------------------------------------------


@dataclass
class AcerAgent:
    params: NetworkParams
    avg: NetworkParams
    adam: AdamState
    memory: ReplayMemory
    hyper: Hyperparameters
    dialogues: int = 0
    last_stats: StepStats | None = field(default=None, repr=False)

    @classmethod
    def create(cls, arch: Architecture, hyper: Hyperparameters, seed: int) -> AcerAgent:
        params = init_params(arch, np.random.default_rng([seed, 0, 2]))
        return cls(params, params.copy(), AdamState.fresh(params), ReplayMemory(hyper.replay_capacity), hyper)

    @staticmethod
    def architecture(env: DialogueEnv, hyper: Hyperparameters) -> Architecture:
        space = env.space
        master = env.config.mode == "master"
        return Architecture(
            input_dim=env.n_features,
            n_summary=space.n_summary,
            n_inform=space.n_inform,
            payload_bits=space.payload_bits if master else 0,
            h1=hyper.h1,
            h2=hyper.h2,
        )

    def policy(self, features, mask) -> np.ndarray:
        return forward_batch(self.params, features, mask).pi[0]

    def greedy(self, features, mask) -> int:
        pi = self.policy(features, mask)
        return int(np.argmax(np.where(mask, pi, -1.0)))

    def act(self, features, mask, eps: float, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        """Epsilon-greedy action and the behaviour distribution to store with it."""
        pi = self.policy(features, mask)
        greedy = int(np.argmax(np.where(mask, pi, -1.0)))
        valid = np.flatnonzero(mask)
        action = int(valid[rng.integers(len(valid))]) if rng.random() < eps else greedy
        if self.hyper.mu_mode == "pi":
            return action, pi
        mu = np.where(mask, eps / len(valid), 0.0)
        mu[greedy] += 1.0 - eps
        return action, mu

    def train_step(self, rng: np.random.Generator) -> StepStats | None:
        episodes = self.memory.sample(self.hyper.batch_size, rng, self.hyper.sample_unit)
        if not episodes:
            return None
        batch = Batch.from_episodes(episodes)
        grads = batch_gradients(self.params, batch, self.hyper)
        avg_pi = forward_batch(self.avg, batch.beliefs, batch.masks).pi
        self.params, self.avg, self.adam, self.last_stats = apply_update(self.params, self.avg, self.adam, grads, avg_pi, self.hyper)
        return self.last_stats

    def greedy_policy(self):
        """Frozen greedy policy for evaluation."""
        params = self.params.copy()

        def choose(features, mask):
            pi = forward_batch(params, features, mask).pi[0]
            return int(np.argmax(np.where(mask, pi, -1.0)))

        return choose

    # -- snapshots ------------------------------------------------------------

    def to_bytes(self, include_memory: bool = True) -> bytes:
        """Versioned snapshot; without memory the replay section is an empty buffer."""
        memory = self.memory if include_memory else ReplayMemory(self.memory.capacity)
        meta = {
            "hyper": asdict(self.hyper),
            "dialogues": self.dialogues,
            "adam": {"t": self.adam.t, "beta1": self.adam.beta1, "beta2": self.adam.beta2, "eps": self.adam.eps},
        }
        sections = [
            json.dumps(meta, sort_keys=True).encode(),
            self.params.to_bytes(),
            self.avg.to_bytes(),
            NetworkParams(self.params.arch, self.adam.m).to_bytes(),
            NetworkParams(self.params.arch, self.adam.v).to_bytes(),
            memory.to_bytes(),
        ]
        buf = io.BytesIO()
        buf.write(_SNAPSHOT_MAGIC)
        for s in sections:
            buf.write(struct.pack("<Q", len(s)))
            buf.write(s)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> AcerAgent:
        if data[:8] != _SNAPSHOT_MAGIC:
            raise StoredDataError("not an ACER snapshot (bad magic)")
        pos, sections = 8, []
        while pos < len(data):
            (n,) = struct.unpack_from("<Q", data, pos)
            sections.append(data[pos + 8 : pos + 8 + n])
            pos += 8 + n
        if len(sections) != 6 or pos != len(data):
            raise StoredDataError("snapshot is truncated or has extra sections")
        meta = json.loads(sections[0])
        params = NetworkParams.from_bytes(sections[1])
        adam = AdamState(
            NetworkParams.from_bytes(sections[3]).blocks,
            NetworkParams.from_bytes(sections[4]).blocks,
            meta["adam"]["t"],
            meta["adam"]["beta1"],
            meta["adam"]["beta2"],
            meta["adam"]["eps"],
        )
        return cls(
            params,
            NetworkParams.from_bytes(sections[2]),
            adam,
            ReplayMemory.from_bytes(sections[5]),
            Hyperparameters(**meta["hyper"]),
            meta["dialogues"],
        )


_SNAPSHOT_MAGIC = b"ACERSNP1"


@dataclass
class EpisodeLog:
    episode: int
    epsilon: float
    ret: float
    success: bool
    turns: int

    def to_json(self) -> str:
        return json.dumps({"episode": self.episode, "epsilon": round(self.epsilon, 12), "return": self.ret, "success": self.success, "turns": self.turns})


def collect_episode(env: DialogueEnv, choose, seed: int, episode: int, eps: float, rng, agent: AcerAgent | None = None):
    """Run one dialogue; with ``agent`` the behaviour distribution is recorded."""
    features, mask = env.reset(episode=episode, seed=seed)
    beliefs, actions, rewards, mus, masks = [], [], [], [], []
    while not env.done:
        if agent is not None:
            a, mu = agent.act(features, mask, eps, rng)
        else:
            a, mu = choose(features, mask), None
        res = env.step(a)
        beliefs.append(features)
        actions.append(a)
        rewards.append(res.reward)
        mus.append(mu)
        masks.append(mask)
        features, mask = res.features, res.mask
    record = None
    if agent is not None:
        record = EpisodeRecord(np.array(beliefs), np.array(actions), np.array(rewards), np.array(mus), np.array(masks))
    return record, float(sum(rewards)), bool(env.success), env.turn


def run_training(
    env_config: EnvConfig,
    hyper: Hyperparameters,
    total_dialogues: int,
    seed: int,
    milestone_every: int = 200,
    on_milestone=None,
    log=None,
    agent: AcerAgent | None = None,
):
    """Collect epsilon-greedy dialogues, store them, train ``n_steps`` times after each.

    ``on_milestone(dialogues, agent)`` is called every ``milestone_every``
    dialogues; ``log`` receives one JSON line per dialogue.  Passing an
    existing ``agent`` resumes from its dialogue counter.
    """
    env = DialogueEnv(env_config)
    if agent is None:
        agent = AcerAgent.create(AcerAgent.architecture(env, hyper), hyper, seed)
    records = []
    for i in range(agent.dialogues, total_dialogues):
        eps = epsilon(i, total_dialogues, hyper.eps_start, hyper.eps_end)
        rng = np.random.default_rng([seed, i, 1])
        record, ret, success, turns = collect_episode(env, None, seed, i, eps, rng, agent)
        agent.memory.store(record)
        for _ in range(hyper.n_steps):
            agent.train_step(rng)
        agent.dialogues = i + 1
        entry = EpisodeLog(i, eps, ret, success, turns)
        records.append(entry)
        if log is not None:
            log.write(entry.to_json() + "\n")
        if on_milestone is not None and milestone_every and agent.dialogues % milestone_every == 0:
            on_milestone(agent.dialogues, agent)
    return agent, records

