"""Agenda-based simulated user and a scripted user for regression traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from acer_lab.dialenv.actions import SummaryAction
from acer_lab.dialenv.acts import DialogueAct


@dataclass
class UserGoal:
    constraints: dict[str, str]
    requests: tuple[str, ...] = ()

    def value(self, slot: str) -> str:
        return self.constraints.get(slot, "dontcare")


@dataclass
class UserConfig:
    open_prob: float = 0.6  # opening act carries at least one constraint
    goal_change_prob: float = 0.05  # per turn, before an offer is accepted, at most once
    reqalts_prob: float = 0.1  # user rejects the first suitable offer and asks for another
    patience: int = 2  # extra thank-yous before hanging up
    min_constraints: int = 1
    max_constraints: int = 3
    max_requests: int = 3


@dataclass
class SystemTurn:
    """What the user perceives of a system action (system output is noise-free)."""

    action: SummaryAction
    entity: dict | None = None
    payload: tuple[str, ...] = ()
    value: str | None = None
    options: tuple[str, ...] = ()


class Agenda:
    """Stack of pending user acts, ``bye()`` at the bottom."""

    def __init__(self):
        self.stack: list[DialogueAct] = [DialogueAct("bye")]

    def push(self, act: DialogueAct):
        self.stack.append(act)

    def pop(self) -> DialogueAct:
        if len(self.stack) == 1:
            return self.stack[0]
        return self.stack.pop()

    def peek(self) -> DialogueAct:
        return self.stack[-1]

    def drop_slot(self, slot: str):
        self.stack = [a for a in self.stack if not (a.act == "inform" and a.slots() == [slot])]

    def replace_value(self, slot: str, value: str):
        self.stack = [DialogueAct("inform", ((slot, value),)) if a.act == "inform" and a.slots() == [slot] else a for a in self.stack]

    def __len__(self):
        return len(self.stack)


@dataclass
class AgendaUser:
    ontology: object
    config: UserConfig = field(default_factory=UserConfig)

    def reset(self, rng: np.random.Generator) -> DialogueAct:
        self.goal = self.sample_goal(rng)
        self.agenda = Agenda()
        if self.goal.requests:
            self.agenda.push(DialogueAct("request", tuple((r, None) for r in self.goal.requests)))
        for slot in reversed(self.ontology.constraints):
            if slot in self.goal.constraints:
                self.agenda.push(DialogueAct("inform", ((slot, self.goal.constraints[slot]),)))
        self.mentioned: set[str] = set()
        self.rejected: set[str] = set()
        self.accepted: str | None = None
        self.informed: set[str] = set()
        self.satisfied = False
        self.hung_up = False
        self.thanks = 0
        self.goal_changed = False
        self.asked_alternatives = False
        self.wants_alternatives = bool(rng.random() < self.config.reqalts_prob) and len(self.ontology.matching(self.goal.constraints)) >= 2
        if rng.random() < self.config.open_prob:
            slots = [s for s in self.ontology.constraints if s in self.goal.constraints]
            chosen = [s for s in slots if rng.random() < 0.5] or [slots[int(rng.integers(len(slots)))]]
            return self._inform(chosen)
        return DialogueAct("hello")

    def sample_goal(self, rng: np.random.Generator) -> UserGoal:
        cfg = self.config
        slots = self.ontology.constraints
        hi = min(cfg.max_constraints, len(slots))
        n = int(rng.integers(cfg.min_constraints, hi + 1))
        chosen = sorted(rng.choice(len(slots), size=n, replace=False))
        entity = self.ontology.entities[int(rng.integers(len(self.ontology.entities)))]
        constraints = {slots[i]: entity[slots[i]] for i in chosen}
        pool = self.ontology.user_requests
        k = int(rng.integers(0, min(cfg.max_requests, len(pool)) + 1))
        requests = tuple(pool[i] for i in sorted(rng.choice(len(pool), size=k, replace=False)))
        return UserGoal(constraints, requests)

    # -- turn handling --------------------------------------------------------

    def respond(self, turn: SystemTurn, rng: np.random.Generator) -> DialogueAct | None:
        """User reply to a system turn; ``None`` once the system says bye."""
        kind = turn.action.kind
        if kind == "bye":
            return None
        if self.satisfied:
            self.thanks += 1
            if self.thanks > self.config.patience:
                self.hung_up = True
                return DialogueAct("bye")
            return DialogueAct("thankyou")
        changed = self._maybe_change_goal(rng) if self.accepted is None else None
        slot = turn.action.slot
        if kind in ("request", "select"):
            reply = self._inform([slot])
        elif kind == "confirm":
            truth = self.goal.value(slot)
            self._mention(slot)
            reply = DialogueAct("affirm" if turn.value == truth else "negate", ((slot, truth),))
        elif kind == "reqmore":
            reply = self._next_from_agenda()
        else:
            reply = self._judge(turn.entity, turn.payload)
        if changed is not None:
            reply = _merge(reply, changed)
        return reply

    def _mention(self, slot):
        self.mentioned.add(slot)
        self.agenda.drop_slot(slot)

    def _inform(self, slots) -> DialogueAct:
        for s in slots:
            self._mention(s)
        return DialogueAct("inform", tuple((s, self.goal.value(s)) for s in slots))

    def _next_from_agenda(self) -> DialogueAct:
        top = self.agenda.peek()
        if top.act == "inform":
            self.agenda.pop()
            self.mentioned.update(top.slots())
            return top
        if self.accepted is not None:
            return self._after_accept()
        return self._inform(list(self.goal.constraints))

    def _judge(self, entity: dict | None, payload) -> DialogueAct:
        if entity is None:
            return self._inform(list(self.goal.constraints))
        wrong = [s for s, v in self.goal.constraints.items() if entity[s] != v]
        if wrong:
            return self._inform(wrong)
        name = entity["name"]
        if name in self.rejected or (self.wants_alternatives and not self.asked_alternatives):
            self.rejected.add(name)
            self.asked_alternatives = True
            return DialogueAct("reqalts")
        if self.accepted != name:
            self.accepted = name
            self.informed = set()
        self.informed.update(payload)
        return self._after_accept()

    def _after_accept(self) -> DialogueAct:
        pending = [r for r in self.goal.requests if r not in self.informed]
        if pending:
            return DialogueAct("request", (("name", self.accepted),) + tuple((r, None) for r in pending))
        self.satisfied = True
        return DialogueAct("thankyou")

    def _maybe_change_goal(self, rng) -> tuple[str, str] | None:
        if self.goal_changed or not self.goal.constraints or rng.random() >= self.config.goal_change_prob:
            return None
        self.goal_changed = True
        slots = list(self.goal.constraints)
        slot = slots[int(rng.integers(len(slots)))]
        options = []
        for v in self.ontology.values[slot]:
            if v != self.goal.constraints[slot] and self.ontology.matching({**self.goal.constraints, slot: v}):
                options.append(v)
        if not options:
            return None
        value = options[int(rng.integers(len(options)))]
        self.goal.constraints[slot] = value
        self.agenda.replace_value(slot, value)
        if self.wants_alternatives and len(self.ontology.matching(self.goal.constraints)) < 2:
            self.wants_alternatives = False
        return (slot, value) if slot in self.mentioned else None


def _merge(reply: DialogueAct, item: tuple[str, str]) -> DialogueAct:
    if reply.act in ("inform", "affirm", "negate"):
        items = [i for i in reply.items if i[0] != item[0]] + [item]
        return DialogueAct(reply.act, tuple(items))
    return DialogueAct("inform", (item,))


class ScriptedUser:
    """Replays a fixed list of user acts against a known goal."""

    def __init__(self, goal: UserGoal, acts: list[DialogueAct]):
        self.script = list(acts)
        self._goal = goal

    def reset(self, rng=None) -> DialogueAct:
        self.goal = UserGoal(dict(self._goal.constraints), tuple(self._goal.requests))
        self.rejected: set[str] = set()
        self.hung_up = False
        self._pos = 1
        self._last_offer = None
        return self.script[0]

    def respond(self, turn: SystemTurn, rng=None) -> DialogueAct | None:
        if turn.action.kind == "bye":
            return None
        if turn.entity is not None:
            self._last_offer = turn.entity["name"]
        act = self.script[self._pos] if self._pos < len(self.script) else DialogueAct("bye")
        self._pos += 1
        if act.act == "reqalts" and self._last_offer is not None:
            self.rejected.add(self._last_offer)
        if act.act == "bye":
            self.hung_up = True
        return act
