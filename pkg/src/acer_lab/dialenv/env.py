"""Slot-filling dialogue environment: simulated user, error channel, tracker, reward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from acer_lab.dialenv.actions import ActionSpace, MasterAction, SummaryAction
from acer_lab.dialenv.acts import ObservedAct, corrupt_semantics
from acer_lab.dialenv.belief import FEATURE_VERSION, BeliefState, feature_dim, featurize, fresh_belief, observe, slot_values
from acer_lab.dialenv.ontology import Ontology, load_ontology
from acer_lab.dialenv.user import AgendaUser, SystemTurn, UserConfig
from acer_lab.errors import ConfigurationError, InvalidMaskError, ProtocolError

SUCCESS_REWARD = 20.0
TURN_PENALTY = -1.0


@dataclass
class EnvConfig:
    error_rate: float = 0.0
    mask: bool = True
    mode: str = "summary"  # or "master"
    ontology: str = "toy"  # built-in name or path to a JSON file
    seed: int = 0
    goal_change_prob: float = 0.05
    open_prob: float = 0.6
    reqalts_prob: float = 0.1
    patience: int = 0
    max_turns: int = 25
    featurization: str = FEATURE_VERSION

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ConfigurationError(f"error_rate must lie in [0, 1], got {self.error_rate}")
        if self.mode not in ("summary", "master"):
            raise ConfigurationError(f"unknown action-space mode {self.mode!r}")
        if self.featurization != FEATURE_VERSION:
            raise ConfigurationError(f"unsupported featurization {self.featurization!r}")
        if self.max_turns < 1:
            raise ConfigurationError("max_turns must be positive")
        for name in ("goal_change_prob", "open_prob", "reqalts_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")

    def user_config(self) -> UserConfig:
        return UserConfig(
            open_prob=self.open_prob,
            goal_change_prob=self.goal_change_prob,
            reqalts_prob=self.reqalts_prob,
            patience=self.patience,
        )


@dataclass
class StepResult:
    reward: float
    features: np.ndarray
    mask: np.ndarray
    done: bool
    info: dict = field(default_factory=dict)


def summary_mask(belief: BeliefState, space: ActionSpace) -> np.ndarray:
    """Validity of every summary action in the current belief."""
    onto = space.ontology
    grounded = any(belief.grounded(s, onto) for s in onto.constraints)
    offered = belief.offered is not None
    out = np.zeros(space.n_summary, dtype=bool)
    for i, a in enumerate(space.summary_actions):
        if a.kind in ("confirm", "select"):
            out[i] = belief.mass_off_none(a.slot) > 0.0
        elif a.kind == "inform_standard":
            out[i] = grounded or offered
        elif a.kind == "inform_byname":
            out[i] = belief.name_mentioned is not None
        elif a.kind in ("inform_requested", "inform_alternatives"):
            out[i] = offered
        else:  # request, reqmore, bye
            out[i] = True
    return out


def execution_mask(belief: BeliefState, space: ActionSpace, mode: str = "summary", enabled: bool = True) -> np.ndarray:
    if not enabled:
        return np.ones(space.size(mode), dtype=bool)
    m = summary_mask(belief, space)
    return space.broadcast_mask(m) if mode == "master" else m


def summary_to_master(belief: BeliefState, action: SummaryAction, space: ActionSpace) -> MasterAction:
    """Fill the payload of an inform: requested slots plus the user's grounded constraints."""
    if not action.is_inform:
        return MasterAction(action)
    onto = space.ontology
    slots = set(belief.requested)
    for s in onto.constraints:
        v = belief.top(s, onto)
        if v is not None and v != "dontcare":
            slots.add(s)
    return MasterAction(action, space.payload_of(slots))


class DialogueEnv:
    """One dialogue at a time; all randomness comes from ``default_rng([seed, episode])``."""

    def __init__(self, config: EnvConfig | None = None, user=None, ontology: Ontology | None = None):
        self.config = config or EnvConfig()
        self.ontology = ontology or load_ontology(self.config.ontology)
        self.space = ActionSpace(self.ontology)
        self.user = user if user is not None else AgendaUser(self.ontology, self.config.user_config())
        self.n_features = feature_dim(self.ontology, self.space.n_summary)
        self.n_actions = self.space.size(self.config.mode)
        self.done = True

    # -- public protocol ------------------------------------------------------

    def reset(self, episode: int = 0, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        seed = self.config.seed if seed is None else seed
        self.rng = np.random.default_rng([seed, episode])
        opening = self.user.reset(self.rng)
        self.belief = fresh_belief(self.ontology)
        self.turn = 0
        self.done = False
        self.offered: str | None = None
        self.informed: set[str] = set()
        self.total_reward = 0.0
        self.success: bool | None = None
        self.log: list[tuple[str, str]] = [("USR", str(opening))]
        self._observe(opening)
        return self.features(), self.mask()

    def features(self) -> np.ndarray:
        return featurize(self.belief, self.ontology, self.space.n_summary, self.config.max_turns)

    def mask(self) -> np.ndarray:
        return execution_mask(self.belief, self.space, self.config.mode, self.config.mask)

    def resolve(self, action) -> MasterAction:
        """Turn an index (in the configured mode) or an action object into a master action."""
        if isinstance(action, MasterAction):
            return action
        if isinstance(action, SummaryAction):
            return summary_to_master(self.belief, action, self.space)
        index = int(action)
        if self.config.mode == "master":
            return self.space.master_action(index)
        if not 0 <= index < self.space.n_summary:
            raise IndexError(index)
        return summary_to_master(self.belief, self.space.summary_actions[index], self.space)

    def step(self, action) -> StepResult:
        if self.done:
            raise ProtocolError("dialogue has finished; call reset()")
        master = self.resolve(action)
        sidx = self.space.summary_index(master.summary)
        if self.config.mask and not summary_mask(self.belief, self.space)[sidx]:
            raise InvalidMaskError(f"action {master.summary} is masked in the current belief")
        self.turn += 1
        reward = TURN_PENALTY
        turn = self._system_turn(master)
        self.log.append(("SYS", _describe(master, turn, self.space)))
        reply = self.user.respond(turn, self.rng)
        self.belief.last_system = sidx
        self.belief.turn = self.turn
        if reply is not None:
            self.log.append(("USR", str(reply)))
            self._observe(reply)
        if reply is None or reply.act == "bye" or self.turn >= self.config.max_turns:
            self.done = True
            self.success = self._successful()
            reward += SUCCESS_REWARD if self.success else 0.0
        self.total_reward += reward
        info = {"turn": self.turn, "success": self.success, "offered": self.offered}
        return StepResult(reward, self.features(), self.mask(), self.done, info)

    # -- internals ------------------------------------------------------------

    def _observe(self, act) -> ObservedAct:
        obs = corrupt_semantics(act, self.config.error_rate, self.rng, self.ontology)
        self.belief = observe(self.belief, obs, self.ontology)
        return obs

    def _system_turn(self, master: MasterAction) -> SystemTurn:
        a = master.summary
        if not a.is_inform:
            value = self.belief.top(a.slot, self.ontology) if a.kind == "confirm" else None
            options = ()
            if a.kind == "select":
                dist = self.belief.slots[a.slot][:-1]
                vals = slot_values(self.ontology, a.slot)
                options = tuple(vals[i] for i in np.argsort(-dist, kind="stable")[:2])
            return SystemTurn(a, value=value, options=options)
        entity = self._select_entity(a.kind)
        payload = self.space.payload_slots(master.payload)
        if entity is not None:
            if entity["name"] != self.offered:
                self.offered = entity["name"]
                self.informed = set()
            self.informed.update(payload)
            self.belief.offered = self.offered
            self.belief.informed = frozenset(self.informed)
            self.belief.alternatives_requested = False
        return SystemTurn(a, entity=entity, payload=payload)

    def _select_entity(self, kind: str) -> dict | None:
        onto = self.ontology
        if kind == "inform_standard":
            matches = onto.matching(self.belief.constraints(onto))
            return matches[0] if matches else None
        if kind == "inform_byname":
            return onto.entity(self.belief.name_mentioned) or onto.entity(self.offered)
        if kind == "inform_requested":
            return onto.entity(self.offered)
        matches = onto.matching(self.belief.constraints(onto))
        names = [e["name"] for e in matches]
        if self.offered in names:
            i = names.index(self.offered)
            rest = matches[i + 1 :] + matches[:i]
        else:
            rest = matches
        return rest[0] if rest else None

    def _successful(self) -> bool:
        entity = self.ontology.entity(self.offered)
        if entity is None:
            return False
        goal = self.user.goal
        if any(entity[s] != v for s, v in goal.constraints.items() if v != "dontcare"):
            return False
        if entity["name"] in self.user.rejected:
            return False
        return set(goal.requests) <= self.informed


def _describe(master: MasterAction, turn: SystemTurn, space: ActionSpace) -> str:
    a = master.summary
    if not a.is_inform:
        return str(a)
    if turn.entity is None:
        return f"{a} -> inform(name=none)"
    items = ",".join(f"{s}={turn.entity[s]}" for s in turn.payload)
    return f"{a} -> inform(name={turn.entity['name']}{',' if items else ''}{items})"
