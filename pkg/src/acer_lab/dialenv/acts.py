"""Dialogue acts, their string form, and the semantic error channel."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

USER_ACT_TYPES = ("null", "hello", "inform", "request", "affirm", "negate", "reqalts", "thankyou", "bye")

Item = tuple[str, "str | None"]


@dataclass(frozen=True)
class DialogueAct:
    act: str
    items: tuple[Item, ...] = ()

    def __str__(self) -> str:
        body = ",".join(slot if value is None else f"{slot}={value}" for slot, value in self.items)
        return f"{self.act}({body})"

    def slots(self) -> list[str]:
        return [s for s, _ in self.items]

    @classmethod
    def parse(cls, text: str) -> DialogueAct:
        """Parse ``act(slot=value,slot,...)``; quotes around values are dropped."""
        m = re.fullmatch(r"\s*([A-Za-z_]+)\s*\((.*)\)\s*", text)
        if not m:
            raise ValueError(f"cannot parse dialogue act {text!r}")
        items = []
        body = m.group(2).strip()
        if body:
            for part in re.split(r",(?=(?:[^\"]*\"[^\"]*\")*[^\"]*$)", body):
                part = part.strip()
                if "=" in part:
                    slot, value = part.split("=", 1)
                    items.append((slot.strip(), value.strip().strip('"')))
                else:
                    items.append((part, None))
        return cls(m.group(1), tuple(items))


@dataclass(frozen=True)
class ObservedAct:
    """A user act as seen by the dialogue manager, with confidence scores."""

    act: str
    items: tuple[Item, ...]
    act_confidence: float
    confidences: tuple[float, ...]
    # which concepts were corrupted: act type, then (slot, value) per item
    corrupted_act: bool = False
    corrupted: tuple[tuple[bool, bool], ...] = field(default=())


def value_pool(ontology, slot: str) -> tuple[str, ...]:
    """Values a concept for ``slot`` can take in the channel."""
    if slot in ontology.constraints:
        return ontology.values[slot] + ("dontcare",)
    if slot == "name":
        return tuple(e["name"] for e in ontology.entities)
    return tuple(sorted({e[slot] for e in ontology.entities}))


def slot_pool(ontology, slot: str) -> tuple[str, ...]:
    if slot in ontology.constraints:
        return ontology.constraints
    return tuple(s for s in ontology.informable if s not in ontology.constraints) + ("name",)


def _other(options, current, rng: np.random.Generator):
    choices = [o for o in options if o != current]
    return choices[int(rng.integers(len(choices)))]


def corrupt_semantics(act: DialogueAct, error_rate: float, rng: np.random.Generator, ontology) -> ObservedAct:
    """Replace each semantic concept independently with probability ``error_rate``.

    Concepts are the act type, each item's slot and each item's value.  A
    replaced slot also moves the value into the new slot's value set (still
    differing from the original).  Concepts carry confidence 1 when the rate
    is zero; otherwise corrupted concepts draw U[0.4, 0.9] and clean ones
    U[0.7, 1.0].
    """
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError(f"error rate must lie in [0, 1], got {error_rate}")
    if error_rate == 0.0:
        return ObservedAct(act.act, act.items, 1.0, tuple(1.0 for _ in act.items), False, tuple((False, False) for _ in act.items))

    def confidence(bad: bool) -> float:
        return float(rng.uniform(0.4, 0.9) if bad else rng.uniform(0.7, 1.0))

    bad_act = bool(rng.random() < error_rate)
    act_type = _other(USER_ACT_TYPES, act.act, rng) if bad_act else act.act
    items, confs, flags = [], [], []
    for slot, value in act.items:
        bad_slot = bool(rng.random() < error_rate)
        bad_value = value is not None and bool(rng.random() < error_rate)
        new_slot = _other(slot_pool(ontology, slot), slot, rng) if bad_slot else slot
        new_value = value
        if value is not None and (bad_slot or bad_value):
            new_value = _other(value_pool(ontology, new_slot), value, rng)
        items.append((new_slot, new_value))
        confs.append(confidence(bad_slot or bad_value))
        flags.append((bad_slot, bad_value))
    return ObservedAct(act_type, tuple(items), confidence(bad_act), tuple(confs), bad_act, tuple(flags))
