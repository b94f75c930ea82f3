"""Shared-trunk actor-critic networks with hand-written reverse mode.

Two architectures share one parameter container:

* ``summary``: belief -> ReLU(h1) -> ReLU(h2) -> {policy logits, Q values}
  over the summary actions.
* ``master``: the summary heads plus a payload policy head and a payload Q
  head (``2**payload_bits`` outputs each).  The composed master policy is
  ``pi_s(A) * pi_p(P)`` for inform actions and ``pi_s(A)`` otherwise; the
  composed Q is ``Q_s(A) + Q_p(P)`` or ``Q_s(A)``.

Summary actions are laid out as ``n_summary - n_inform`` non-inform actions
followed by ``n_inform`` inform kinds.  Master actions keep the non-inform
block and then list ``n_inform x 2**payload_bits`` inform entries, payload
index fastest.  All arithmetic is float64.

Batched helpers (``forward_batch``/``backward_batch``) take beliefs of shape
``(B, input_dim)`` and masks of shape ``(B, n_actions)``; the single-sample
functions wrap them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from acer_lab.errors import ConfigurationError, InvalidMaskError, NumericError

POLICY_BLOCKS = ("w1", "b1", "w2", "b2", "pi_w", "pi_b", "pp_w", "pp_b")
CRITIC_BLOCKS = ("w1", "b1", "w2", "b2", "q_w", "q_b", "pq_w", "pq_b")
_ORDER = ("w1", "b1", "w2", "b2", "pi_w", "pi_b", "q_w", "q_b", "pp_w", "pp_b", "pq_w", "pq_b")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    n_summary: int
    n_inform: int = 4
    payload_bits: int = 0
    h1: int = 130
    h2: int = 50

    @property
    def master(self) -> bool:
        return self.payload_bits > 0

    @property
    def n_payloads(self) -> int:
        return 2**self.payload_bits if self.master else 0

    @property
    def n_noninform(self) -> int:
        return self.n_summary - self.n_inform

    @property
    def n_actions(self) -> int:
        if self.master:
            return self.n_noninform + self.n_inform * self.n_payloads
        return self.n_summary

    def block_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {
            "w1": (self.h1, self.input_dim),
            "b1": (self.h1,),
            "w2": (self.h2, self.h1),
            "b2": (self.h2,),
            "pi_w": (self.n_summary, self.h2),
            "pi_b": (self.n_summary,),
            "q_w": (self.n_summary, self.h2),
            "q_b": (self.n_summary,),
        }
        if self.master:
            shapes.update(
                pp_w=(self.n_payloads, self.h2),
                pp_b=(self.n_payloads,),
                pq_w=(self.n_payloads, self.h2),
                pq_b=(self.n_payloads,),
            )
        return shapes


@dataclass
class NetworkParams:
    """Named parameter blocks; also used to carry gradients of the same shape."""

    arch: Architecture
    blocks: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.arch.block_shapes()
        if set(shapes) != set(self.blocks):
            raise ConfigurationError(f"blocks {sorted(self.blocks)} do not match architecture {sorted(shapes)}")
        for name, shape in shapes.items():
            if self.blocks[name].shape != shape:
                raise ConfigurationError(f"block {name} has shape {self.blocks[name].shape}, expected {shape}")

    def names(self) -> list[str]:
        return [n for n in _ORDER if n in self.blocks]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def copy(self) -> NetworkParams:
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.blocks.items()})

    def zeros_like(self) -> NetworkParams:
        return NetworkParams(self.arch, {k: np.zeros_like(v) for k, v in self.blocks.items()})

    def flat(self, names=None) -> np.ndarray:
        names = self.names() if names is None else [n for n in self.names() if n in names]
        return np.concatenate([self.blocks[n].ravel() for n in names])

    def with_flat(self, vec: np.ndarray, names=None) -> NetworkParams:
        """Return a copy with the listed blocks replaced from a flat vector."""
        names = self.names() if names is None else [n for n in self.names() if n in names]
        out = self.copy()
        i = 0
        for n in names:
            size = out.blocks[n].size
            out.blocks[n] = np.asarray(vec[i : i + size], dtype=np.float64).reshape(out.blocks[n].shape).copy()
            i += size
        if i != len(vec):
            raise ConfigurationError(f"flat vector has {len(vec)} entries, blocks need {i}")
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.blocks.values())

    # -- serialization ------------------------------------------------------
    # Layout (all little-endian):
    #   8 bytes  magic b"ACERNET1"
    #   6 x u32  input_dim, n_summary, n_inform, payload_bits, h1, h2
    #   u64      number of float64 values that follow
    #   f64[]    blocks flattened in canonical order (w1,b1,w2,b2,pi_w,pi_b,
    #            q_w,q_b[,pp_w,pp_b,pq_w,pq_b]), each row-major
    MAGIC = b"ACERNET1"

    def to_bytes(self) -> bytes:
        a = self.arch
        vec = self.flat().astype("<f8")
        header = self.MAGIC + struct.pack("<6IQ", a.input_dim, a.n_summary, a.n_inform, a.payload_bits, a.h1, a.h2, vec.size)
        return header + vec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> NetworkParams:
        if data[:8] != cls.MAGIC:
            raise ConfigurationError("not a network snapshot")
        input_dim, n_summary, n_inform, payload_bits, h1, h2, n = struct.unpack_from("<6IQ", data, 8)
        arch = Architecture(input_dim, n_summary, n_inform, payload_bits, h1, h2)
        offset = 8 + struct.calcsize("<6IQ")
        vec = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
        template = NetworkParams(arch, {k: np.zeros(s) for k, s in arch.block_shapes().items()})
        return template.with_flat(vec)


def init_params(arch: Architecture, rng: np.random.Generator) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    shapes = arch.block_shapes()
    blocks = {}
    for name, shape in shapes.items():
        weight = {"b1": "w1", "b2": "w2"}.get(name, name[:-1] + "w" if name.endswith("_b") else name)
        fan_in = shapes[weight][1]
        bound = 1.0 / np.sqrt(fan_in)
        blocks[name] = rng.uniform(-bound, bound, size=shape)
    return NetworkParams(arch, blocks)


@dataclass
class PolicyOutput:
    pi: np.ndarray
    q: np.ndarray
    v: float


# -- softmax ----------------------------------------------------------------


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise InvalidMaskError("mask leaves no valid action")
    return mask


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities with ``-inf`` at masked entries; works on the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise NumericError("NaN logit")
    mask = _check_mask(mask)
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.exp(masked_log_softmax(logits, mask))


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# -- forward / backward -----------------------------------------------------


@dataclass
class _Cache:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    logpi: np.ndarray
    pi: np.ndarray
    q: np.ndarray
    payload_pi: np.ndarray | None = field(default=None)


def _as_batch(params: NetworkParams, beliefs, masks):
    x = np.atleast_2d(np.asarray(beliefs, dtype=np.float64))
    m = np.atleast_2d(np.asarray(masks, dtype=bool))
    arch = params.arch
    if x.shape[1] != arch.input_dim:
        raise ConfigurationError(f"belief has {x.shape[1]} features, network expects {arch.input_dim}")
    if m.shape != (x.shape[0], arch.n_actions):
        raise ConfigurationError(f"mask shape {m.shape} does not match {(x.shape[0], arch.n_actions)}")
    return x, m


def forward_batch(params: NetworkParams, beliefs, masks) -> _Cache:
    x, m = _as_batch(params, beliefs, masks)
    arch = params.arch
    b = params.blocks
    z1 = x @ b["w1"].T + b["b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ b["w2"].T + b["b2"]
    h2 = np.maximum(z2, 0.0)
    s = h2 @ b["pi_w"].T + b["pi_b"]
    qs = h2 @ b["q_w"].T + b["q_b"]
    payload_pi = None
    if arch.master:
        n0, k, p = arch.n_noninform, arch.n_inform, arch.n_payloads
        lp = _log_softmax(h2 @ b["pp_w"].T + b["pp_b"])
        payload_pi = np.exp(lp)
        qp = h2 @ b["pq_w"].T + b["pq_b"]
        bsz = x.shape[0]
        logits = np.empty((bsz, arch.n_actions))
        logits[:, :n0] = s[:, :n0]
        logits[:, n0:] = (s[:, n0:, None] + lp[:, None, :]).reshape(bsz, k * p)
        q = np.empty((bsz, arch.n_actions))
        q[:, :n0] = qs[:, :n0]
        q[:, n0:] = (qs[:, n0:, None] + qp[:, None, :]).reshape(bsz, k * p)
    else:
        logits, q = s, qs
    logpi = masked_log_softmax(logits, m)
    pi = np.exp(logpi)
    return _Cache(x, z1, h1, z2, h2, logpi, pi, q, payload_pi)


def state_values(cache: _Cache) -> np.ndarray:
    return (cache.pi * cache.q).sum(axis=1)


def backward_batch(params: NetworkParams, cache: _Cache, dlogpi, dq) -> NetworkParams:
    """Gradient of sum_b <dlogpi_b, log pi_b> + <dq_b, Q_b> w.r.t. every block.

    Entries of ``dlogpi`` at masked actions are ignored.
    """
    arch = params.arch
    b = params.blocks
    bsz = cache.x.shape[0]
    dlogpi = np.asarray(dlogpi, dtype=np.float64).reshape(bsz, -1)
    dq = np.asarray(dq, dtype=np.float64).reshape(bsz, -1)
    if dlogpi.shape[1] != arch.n_actions or dq.shape[1] != arch.n_actions:
        raise ConfigurationError("upstream gradient does not match the action space")
    u = np.where(np.isfinite(cache.logpi), dlogpi, 0.0)
    dlogits = u - cache.pi * u.sum(axis=1, keepdims=True)
    grads: dict[str, np.ndarray] = {}
    if arch.master:
        n0, k, p = arch.n_noninform, arch.n_inform, arch.n_payloads
        ds = np.empty((bsz, arch.n_summary))
        ds[:, :n0] = dlogits[:, :n0]
        blockwise = dlogits[:, n0:].reshape(bsz, k, p)
        ds[:, n0:] = blockwise.sum(axis=2)
        dpl = blockwise.sum(axis=1)
        dpp = dpl - cache.payload_pi * dpl.sum(axis=1, keepdims=True)
        dqs = np.empty((bsz, arch.n_summary))
        dqs[:, :n0] = dq[:, :n0]
        qblock = dq[:, n0:].reshape(bsz, k, p)
        dqs[:, n0:] = qblock.sum(axis=2)
        dqp = qblock.sum(axis=1)
        grads["pp_w"] = dpp.T @ cache.h2
        grads["pp_b"] = dpp.sum(axis=0)
        grads["pq_w"] = dqp.T @ cache.h2
        grads["pq_b"] = dqp.sum(axis=0)
        dh2 = ds @ b["pi_w"] + dqs @ b["q_w"] + dpp @ b["pp_w"] + dqp @ b["pq_w"]
    else:
        ds, dqs = dlogits, dq
        dh2 = ds @ b["pi_w"] + dqs @ b["q_w"]
    grads["pi_w"] = ds.T @ cache.h2
    grads["pi_b"] = ds.sum(axis=0)
    grads["q_w"] = dqs.T @ cache.h2
    grads["q_b"] = dqs.sum(axis=0)
    dz2 = dh2 * (cache.z2 > 0)
    grads["w2"] = dz2.T @ cache.h1
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ b["w2"]) * (cache.z1 > 0)
    grads["w1"] = dz1.T @ cache.x
    grads["b1"] = dz1.sum(axis=0)
    return NetworkParams(arch, grads)


def _single(params, belief, mask) -> PolicyOutput:
    cache = forward_batch(params, belief, mask)
    pi, q = cache.pi[0], cache.q[0]
    return PolicyOutput(pi=pi, q=q, v=float(pi @ q))


def forward_summary(params: NetworkParams, belief, mask) -> PolicyOutput:
    if params.arch.master:
        raise ConfigurationError("forward_summary needs a summary-space network")
    return _single(params, belief, mask)


def forward_master(params: NetworkParams, belief, mask) -> PolicyOutput:
    if not params.arch.master:
        raise ConfigurationError("forward_master needs a master-space network")
    return _single(params, belief, mask)


def forward(params: NetworkParams, belief, mask) -> PolicyOutput:
    return _single(params, belief, mask)


def backward(params: NetworkParams, belief, mask, upstream_pi_grad, upstream_q_grad) -> NetworkParams:
    cache = forward_batch(params, belief, mask)
    return backward_batch(params, cache, upstream_pi_grad, upstream_q_grad)


# -- optimisation -------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, **kw) -> AdamState:
        return cls(
            m={k: np.zeros_like(x) for k, x in params.blocks.items()},
            v={k: np.zeros_like(x) for k, x in params.blocks.items()},
            **kw,
        )

    def copy(self) -> AdamState:
        return AdamState(
            {k: x.copy() for k, x in self.m.items()},
            {k: x.copy() for k, x in self.v.items()},
            self.t,
            self.beta1,
            self.beta2,
            self.eps,
        )


def adam_direction(grads: NetworkParams, state: AdamState) -> tuple[NetworkParams, AdamState]:
    """Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps) for ``grads``; returns (direction, state)."""
    for name, g in grads.blocks.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in block {name}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    direction, m_new, v_new = {}, {}, {}
    for name, g in grads.blocks.items():
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        direction[name] = (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + state.eps)
        m_new[name], v_new[name] = m, v
    return NetworkParams(grads.arch, direction), AdamState(m_new, v_new, t, b1, b2, state.eps)


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState, lr: float):
    """One bias-corrected Adam descent step on ``grads``; returns (params, state)."""
    direction, new_state = adam_direction(grads, state)
    new_blocks = {name: p - lr * direction.blocks[name] for name, p in params.blocks.items()}
    return NetworkParams(params.arch, new_blocks), new_state


def soft_update_average(avg: NetworkParams, current: NetworkParams, beta: float) -> NetworkParams:
    """avg <- beta * avg + (1 - beta) * current on the policy blocks only."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigurationError(f"beta must lie in [0, 1], got {beta}")
    out = avg.copy()
    for name in POLICY_BLOCKS:
        if name in out.blocks:
            out.blocks[name] = beta * avg.blocks[name] + (1.0 - beta) * current.blocks[name]
    return out


def kl_from_caches(params: NetworkParams, avg_pi: np.ndarray, cache: _Cache):
    """Batch-mean KL(pi_avg || pi) and its gradient, given a forward cache of ``params``."""
    bsz = cache.x.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(avg_pi > 0, avg_pi * (np.log(avg_pi) - cache.logpi), 0.0)
    kl = float(terms.sum()) / bsz
    grad = backward_batch(params, cache, -avg_pi / bsz, np.zeros_like(cache.q))
    return kl, grad


def kl_and_grad(avg: NetworkParams, current: NetworkParams, beliefs, masks, avg_masks=None):
    """Batch-mean KL(pi_avg || pi_current) and its gradient w.r.t. ``current``.

    ``avg_masks`` defaults to ``masks``; differing supports are rejected.
    """
    if avg_masks is not None and not np.array_equal(np.asarray(avg_masks, bool), np.asarray(masks, bool)):
        raise InvalidMaskError("average and current policies have different supports")
    avg_pi = forward_batch(avg, beliefs, masks).pi
    cache = forward_batch(current, beliefs, masks)
    return kl_from_caches(current, avg_pi, cache)
