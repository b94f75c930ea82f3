"""On-policy GP-SARSA baseline with a sparse Gaussian-process Q-function.

The kernel on (belief, action) pairs is the scalar product of the beliefs
times an action kernel.  In summary mode the action kernel is a Kronecker
delta.  In master mode it is a delta on the summary action times the
cosine similarity of the two payload vectors.  The payload vector is the
name bit (always set) followed by the payload bitmask.

Both kernels are inner products of explicit feature vectors: ``b`` for a
plain action and ``b (x) p/|p|`` for a master inform.  The cross-action
delta splits the GP into one independent GP per summary action.  Data
therefore enter each GP only through the sufficient statistics
``sum phi phi^T`` and ``sum phi y``.  The posterior is the usual
projected-process (DTC) approximation on an online dictionary of
representative points.  A new point joins the dictionary when its kernel
residual against the current dictionary exceeds ``nu``.

Episodes are regressed on their discounted Monte-Carlo returns with
i.i.d. Gaussian noise.  This is the episodic Monte-Carlo form of GPTD, in
which the temporal-difference noise model collapses to plain regression
on returns.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass

import numpy as np

from acer_lab.dialenv.actions import ActionSpace
from acer_lab.dialenv.env import DialogueEnv, EnvConfig
from acer_lab.errors import ConfigurationError, InvalidMaskError, StoredDataError

log = logging.getLogger(__name__)

_MAGIC = b"GPSARSA1"


def payload_vector(payload: int, bits: int) -> np.ndarray:
    """Binary payload representation with the always-present name bit first."""
    v = np.zeros(bits + 1)
    v[0] = 1.0
    v[1:] = [(payload >> i) & 1 for i in range(bits)]
    return v


def unit_payload_vectors(bits: int) -> np.ndarray:
    """Row ``p`` is the unit-norm payload vector of bitmask ``p``."""
    vecs = np.array([payload_vector(p, bits) for p in range(2**bits)])
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


@dataclass(frozen=True)
class KernelSpec:
    mode: str
    space: ActionSpace

    def __post_init__(self):
        if self.mode not in ("summary", "master"):
            raise ConfigurationError(f"unknown kernel mode {self.mode!r}")

    @property
    def n_actions(self) -> int:
        return self.space.size(self.mode)

    def split(self, action: int) -> tuple[int, int | None]:
        """(summary index, payload or None) for an action index of this mode."""
        if not 0 <= action < self.n_actions:
            raise ConfigurationError(f"action {action} is not a {self.mode} action")
        if self.mode == "summary":
            return action, None
        m = self.space.master_action(action)
        return self.space.summary_index(m.summary), m.payload

    def action_factor(self, a: int, a2: int) -> float:
        s, p = self.split(a)
        s2, p2 = self.split(a2)
        if s != s2:
            return 0.0
        if p is None:
            return 1.0
        bits = self.space.payload_bits
        u, v = payload_vector(p, bits), payload_vector(p2, bits)
        return float(u @ v / np.sqrt((u @ u) * (v @ v)))

    def __call__(self, x, y) -> float:
        (b, a), (b2, a2) = x, y
        return float(np.dot(b, b2)) * self.action_factor(a, a2)

    def gram(self, points) -> np.ndarray:
        n = len(points)
        K = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                K[i, j] = K[j, i] = self(points[i], points[j])
        return K


class _ActionGP:
    """GP for one summary action over features b or b (x) payload."""

    def __init__(self, belief_dim: int, payload_dim: int | None):
        self.belief_dim = belief_dim
        self.payload_dim = payload_dim
        fdim = belief_dim * (payload_dim or 1)
        self.dict_b = np.zeros((0, belief_dim))
        self.dict_p = np.zeros((0, payload_dim or 0))
        self.S = np.zeros((fdim, fdim))
        self.s = np.zeros(fdim)
        self.count = 0
        self._kinv = np.zeros((0, 0))
        self.weights = np.zeros(0)
        self._M = np.zeros((0, 0))

    @property
    def size(self) -> int:
        return len(self.dict_b)

    def phi(self, b, p=None) -> np.ndarray:
        return b if p is None else np.kron(b, p)

    def k_dict(self, b, P=None) -> np.ndarray:
        """Kernel against the dictionary; rows follow ``P`` when payloads are given."""
        kb = self.dict_b @ b
        if P is None:
            return kb
        return (P @ self.dict_p.T) * kb[None, :]

    def residual(self, b, p=None) -> float:
        kxx = float(b @ b)  # unit payloads contribute a factor of 1
        if self.size == 0:
            return kxx
        k = self.k_dict(b, None if p is None else p[None, :])
        k = k if p is None else k[0]
        return kxx - float(k @ self._kinv @ k)

    def admit(self, b, p, nu: float) -> bool:
        if self.residual(b, p) <= nu:
            return False
        dict_b = np.vstack([self.dict_b, b])
        dict_p = self.dict_p if p is None else np.vstack([self.dict_p, p])
        K = dict_b @ dict_b.T
        if p is not None:
            K = K * (dict_p @ dict_p.T)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            log.warning("dictionary Gram matrix is singular; point rejected")
            return False
        if np.min(np.diag(L)) ** 2 < 1e-8 * max(1.0, float(np.max(np.diag(K)))):
            log.warning("dictionary Gram matrix is numerically singular; point rejected")
            return False
        self.dict_b, self.dict_p = dict_b, dict_p
        Linv = np.linalg.inv(L)
        self._kinv = Linv.T @ Linv
        return True

    def observe(self, b, p, y: float):
        f = self.phi(b, p)
        self.S += np.outer(f, f)
        self.s += f * y
        self.count += 1

    def dict_features(self) -> np.ndarray:
        if self.payload_dim is None:
            return self.dict_b
        return np.einsum("md,mp->mdp", self.dict_b, self.dict_p).reshape(self.size, -1)

    def refresh(self, noise: float):
        """Recompute the posterior weights and covariance correction."""
        if self.size == 0:
            self.weights, self._M = np.zeros(0), np.zeros((0, 0))
            return
        F = self.dict_features()
        K = F @ F.T
        A = F @ self.S @ F.T
        P = K + A / noise
        P = 0.5 * (P + P.T)
        Pinv = np.linalg.inv(P)
        self.weights = Pinv @ (F @ self.s) / noise
        self._M = Pinv - self._kinv

    def posterior(self, b, P=None):
        """Mean and variance at belief ``b``; per payload row when ``P`` is given."""
        kxx = float(b @ b)
        if self.size == 0:
            n = 1 if P is None else len(P)
            return np.zeros(n), np.full(n, kxx)
        k = self.k_dict(b, P)
        if P is None:
            k = k[None, :]
        mean = k @ self.weights
        var = kxx + np.einsum("ij,jk,ik->i", k, self._M, k)
        return mean, np.maximum(var, 0.0)


@dataclass
class GPConfig:
    mode: str = "summary"
    gamma: float = 0.99
    nu: float = 0.1  # sparsification threshold on the kernel residual
    noise: float = 1.0  # observation noise variance

    def __post_init__(self):
        if self.mode not in ("summary", "master"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.nu < 0 or self.noise <= 0:
            raise ConfigurationError("nu must be non-negative and noise positive")


class GPModel:
    def __init__(self, space: ActionSpace, belief_dim: int, config: GPConfig | None = None):
        self.config = config or GPConfig()
        self.space = space
        self.kernel = KernelSpec(self.config.mode, space)
        self.belief_dim = belief_dim
        self.master = self.config.mode == "master"
        self._payloads = unit_payload_vectors(space.payload_bits) if self.master else None
        pdim = space.payload_bits + 1
        self.gps = [
            _ActionGP(belief_dim, pdim if self.master and a.is_inform else None) for a in space.summary_actions
        ]
        self.dialogues = 0

    @property
    def n_actions(self) -> int:
        return self.kernel.n_actions

    @property
    def dictionary_size(self) -> int:
        return sum(g.size for g in self.gps)

    def _split(self, action: int):
        s, p = self.kernel.split(action)
        return s, None if p is None else self._payloads[p]

    def episode_update(self, beliefs, actions, rewards):
        """Regress every visited pair on its discounted return."""
        beliefs = np.asarray(beliefs, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        if beliefs.shape != (len(actions), self.belief_dim) or rewards.shape != (len(actions),):
            raise ConfigurationError("episode arrays disagree in shape")
        returns = np.zeros(len(rewards))
        acc = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            acc = rewards[t] + self.config.gamma * acc
            returns[t] = acc
        touched = set()
        for b, a, y in zip(beliefs, actions, returns):
            s, p = self._split(int(a))
            gp = self.gps[s]
            gp.admit(b, p, max(self.config.nu, 1e-10))
            gp.observe(b, p, y)
            touched.add(s)
        for s in sorted(touched):
            self.gps[s].refresh(self.config.noise)
        self.dialogues += 1

    def posterior(self, belief) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of Q for every action of the mode."""
        b = np.asarray(belief, dtype=np.float64)
        means, variances = [], []
        for a, gp in zip(self.space.summary_actions, self.gps):
            P = self._payloads if (self.master and a.is_inform) else None
            m, v = gp.posterior(b, P)
            means.append(m)
            variances.append(v)
        return np.concatenate(means), np.concatenate(variances)

    def select_action(self, belief, mask, explore: bool, rng: np.random.Generator | None = None) -> int:
        mean, var = self.posterior(belief)
        if explore:
            return thompson_choice(mean, var, mask, rng)
        return greedy_choice(mean, mask)

    # -- snapshots ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {"config": asdict(self.config), "belief_dim": self.belief_dim, "dialogues": self.dialogues,
                "ontology": self.space.ontology.to_dict()}
        sections = [json.dumps(meta, sort_keys=True).encode()]
        for gp in self.gps:
            head = struct.pack("<QQ", gp.size, gp.count)
            arrays = [gp.dict_b, gp.dict_p, gp.S, gp.s]
            sections.append(head + b"".join(np.ascontiguousarray(x, dtype="<f8").tobytes() for x in arrays))
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<Q", len(sections)))
        for s in sections:
            buf.write(struct.pack("<Q", len(s)))
            buf.write(s)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> GPModel:
        from acer_lab.dialenv.ontology import Ontology

        if data[:8] != _MAGIC:
            raise StoredDataError("not a GP-SARSA snapshot (bad magic)")
        try:
            (count,) = struct.unpack_from("<Q", data, 8)
            pos, sections = 16, []
            for _ in range(count):
                (n,) = struct.unpack_from("<Q", data, pos)
                sections.append(data[pos + 8 : pos + 8 + n])
                pos += 8 + n
            if pos != len(data) or any(len(s) == 0 for s in sections):
                raise StoredDataError("snapshot is truncated or has extra bytes")
            meta = json.loads(sections[0])
            model = cls(ActionSpace(Ontology.from_dict(meta["ontology"])), meta["belief_dim"], GPConfig(**meta["config"]))
            if len(sections) != 1 + len(model.gps):
                raise StoredDataError("snapshot action count does not match its ontology")
            model.dialogues = meta["dialogues"]
            for gp, sec in zip(model.gps, sections[1:]):
                m, n = struct.unpack_from("<QQ", sec, 0)
                fdim = gp.S.shape[0]
                shapes = [(m, gp.belief_dim), (m, gp.dict_p.shape[1]), (fdim, fdim), (fdim,)]
                off, arrays = 16, []
                for shape in shapes:
                    size = int(np.prod(shape)) * 8
                    if off + size > len(sec):
                        raise StoredDataError("GP section is truncated")
                    arrays.append(np.frombuffer(sec[off : off + size], dtype="<f8").reshape(shape).astype(np.float64))
                    off += size
                if off != len(sec):
                    raise StoredDataError("GP section has trailing bytes")
                gp.dict_b, gp.dict_p, gp.S, gp.s = arrays
                gp.count = n
                if m:
                    F = gp.dict_features()
                    gp._kinv = np.linalg.inv(F @ F.T)
                gp.refresh(model.config.noise)
        except (struct.error, KeyError, TypeError, ValueError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, StoredDataError):
                raise
            raise StoredDataError(f"corrupt GP-SARSA snapshot: {exc}") from None
        return model


def _check_mask(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ConfigurationError(f"mask has shape {mask.shape}, expected ({n},)")
    if not mask.any():
        raise InvalidMaskError("no valid action")
    return mask


def greedy_choice(means, mask) -> int:
    mask = _check_mask(mask, len(means))
    return int(np.argmax(np.where(mask, means, -np.inf)))


def thompson_choice(means, variances, mask, rng: np.random.Generator) -> int:
    """Draw one sample per action from its Gaussian marginal and take the best valid one."""
    mask = _check_mask(mask, len(means))
    draws = means + np.sqrt(variances) * rng.standard_normal(len(means))
    return int(np.argmax(np.where(mask, draws, -np.inf)))


def run_gp_training(
    env_config: EnvConfig,
    config: GPConfig,
    total_dialogues: int,
    seed: int,
    milestone_every: int = 200,
    on_milestone=None,
    log_file=None,
    model: GPModel | None = None,
):
    """Thompson-sampling dialogues, one posterior update after each.

    Mirrors the ACER loop: ``on_milestone(dialogues, model)`` every
    ``milestone_every`` dialogues, one JSON line per dialogue to ``log_file``.
    """
    from acer_lab.acer import EpisodeLog

    if env_config.mode != config.mode:
        raise ConfigurationError("environment and GP action-space modes differ")
    env = DialogueEnv(env_config)
    if model is None:
        model = GPModel(env.space, env.n_features, config)
    records = []
    for i in range(model.dialogues, total_dialogues):
        rng = np.random.default_rng([seed, i, 1])
        features, mask = env.reset(episode=i, seed=seed)
        beliefs, actions, rewards = [], [], []
        while not env.done:
            a = model.select_action(features, mask, True, rng)
            res = env.step(a)
            beliefs.append(features)
            actions.append(a)
            rewards.append(res.reward)
            features, mask = res.features, res.mask
        model.episode_update(np.array(beliefs), actions, rewards)
        entry = EpisodeLog(i, 1.0, float(sum(rewards)), bool(env.success), env.turn)
        records.append(entry)
        if log_file is not None:
            log_file.write(entry.to_json() + "\n")
        if on_milestone is not None and milestone_every and model.dialogues % milestone_every == 0:
            on_milestone(model.dialogues, model)
    return model, records
