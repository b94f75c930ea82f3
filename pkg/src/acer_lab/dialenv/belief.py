"""System-side belief state, the focus tracker and the network featurisation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from acer_lab.dialenv.acts import USER_ACT_TYPES, ObservedAct
from acer_lab.errors import InputError

FEATURE_VERSION = "v1"
MATCH_BUCKETS = (0, 1, 2, 4)  # lower edges: 0, 1, 2-3, 4+


def slot_values(ontology, slot: str) -> tuple[str, ...]:
    """Tracked values of a constraint slot: ontology values then ``dontcare``."""
    return ontology.values[slot] + ("dontcare",)


@dataclass
class BeliefState:
    # per constraint slot: distribution over slot_values(...) + ("none",)
    slots: dict[str, np.ndarray]
    requested: frozenset[str] = frozenset()
    informed: frozenset[str] = frozenset()
    offered: str | None = None
    last_user_act: str = "null"
    last_system: int = -1
    turn: int = 0
    name_mentioned: str | None = None
    alternatives_requested: bool = False

    def copy(self) -> BeliefState:
        return replace(self, slots={k: v.copy() for k, v in self.slots.items()})

    def top(self, slot: str, ontology) -> str | None:
        dist = self.slots[slot]
        i = int(np.argmax(dist))
        vals = slot_values(ontology, slot)
        return None if i == len(vals) else vals[i]

    def grounded(self, slot: str, ontology) -> bool:
        return self.top(slot, ontology) is not None

    def mass_off_none(self, slot: str) -> float:
        return float(1.0 - self.slots[slot][-1])

    def constraints(self, ontology) -> dict[str, str]:
        """Current best guess of the user's constraints (slots whose top value is not none)."""
        out = {}
        for slot in ontology.constraints:
            v = self.top(slot, ontology)
            if v is not None:
                out[slot] = v
        return out


def fresh_belief(ontology) -> BeliefState:
    slots = {}
    for slot in ontology.constraints:
        dist = np.zeros(len(slot_values(ontology, slot)) + 1)
        dist[-1] = 1.0
        slots[slot] = dist
    return BeliefState(slots=slots)


def focus_update(dist: np.ndarray, observation: np.ndarray) -> np.ndarray:
    """b'(v) = o(v) + (1 - sum(o)) * b(v); ``observation`` has no mass on none."""
    observation = np.asarray(observation, dtype=np.float64)
    if (observation < 0).any() or (observation > 1).any():
        raise InputError("confidences must lie in [0, 1]")
    total = observation.sum()
    if total > 1.0 + 1e-12:
        raise InputError(f"observed confidence mass {total} exceeds 1")
    # a total a few ulps above 1 would leave tiny negative prior mass
    return observation + max(0.0, 1.0 - total) * np.asarray(dist, dtype=np.float64)


def observe(belief: BeliefState, obs: ObservedAct, ontology) -> BeliefState:
    """Fold one observed user act into the belief."""
    b = belief.copy()
    evidence = {s: np.zeros(len(v)) for s, v in b.slots.items()}
    requested = set(b.requested)
    if obs.act in ("inform", "affirm", "negate"):
        for (slot, value), conf in zip(obs.items, obs.confidences):
            if slot in evidence and value is not None:
                vals = slot_values(ontology, slot)
                if value in vals:
                    evidence[slot][vals.index(value)] += conf
            elif slot == "name" and value is not None:
                b.name_mentioned = value
    elif obs.act == "request":
        for slot, value in obs.items:
            if slot == "name":
                if value is not None:
                    b.name_mentioned = value
            elif slot in ontology.informable:
                requested.add(slot)
    elif obs.act == "reqalts":
        b.alternatives_requested = True
    for slot, o in evidence.items():
        total = o.sum()
        if total > 1.0:
            o = o / total
        if total > 0:
            b.slots[slot] = focus_update(b.slots[slot], o)
    b.requested = frozenset(requested)
    b.last_user_act = obs.act
    return b


def feature_dim(ontology, n_summary: int) -> int:
    slot_block = sum(len(slot_values(ontology, s)) + 1 for s in ontology.constraints)
    n_inf = len(ontology.informable)
    return slot_block + (n_summary + 1) + len(USER_ACT_TYPES) + 2 * n_inf + 3 + len(MATCH_BUCKETS) + 1


def featurize(belief: BeliefState, ontology, n_summary: int, max_turns: int = 25) -> np.ndarray:
    """Fixed-layout input vector.

    Blocks in order: per constraint slot distribution (values, dontcare,
    none); one-hot last system summary action (plus a start entry); one-hot
    last observed user act type; requested-slot indicators and informed-slot
    indicators over the informable slots; offered / alternatives-requested /
    name-mentioned flags; one-hot database match count bucket; turn / max_turns.
    """
    parts = [belief.slots[s] for s in ontology.constraints]
    sys_onehot = np.zeros(n_summary + 1)
    sys_onehot[belief.last_system if belief.last_system >= 0 else n_summary] = 1.0
    user_onehot = np.zeros(len(USER_ACT_TYPES))
    user_onehot[USER_ACT_TYPES.index(belief.last_user_act)] = 1.0
    requested = np.array([s in belief.requested for s in ontology.informable], dtype=float)
    informed = np.array([s in belief.informed for s in ontology.informable], dtype=float)
    flags = np.array([belief.offered is not None, belief.alternatives_requested, belief.name_mentioned is not None], dtype=float)
    n_match = len(ontology.matching(belief.constraints(ontology)))
    bucket = np.zeros(len(MATCH_BUCKETS))
    bucket[max(i for i, edge in enumerate(MATCH_BUCKETS) if n_match >= edge)] = 1.0
    turn = np.array([min(belief.turn, max_turns) / max_turns])
    return np.concatenate(parts + [sys_onehot, user_onehot, requested, informed, flags, bucket, turn])
