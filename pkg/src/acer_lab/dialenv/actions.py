"""Summary and master action spaces.

Summary actions, in index order::

    request+<c> for each constraint slot c
    confirm+<c> for each constraint slot c
    select+<c>  for each constraint slot c
    reqmore, bye
    inform_standard, inform_byname, inform_requested, inform_alternatives

Master indices keep the first ``3C + 2`` non-inform actions and then list
the four inform kinds with every payload, payload fastest:
``index = 3C + 2 + kind * 2**I + payload`` where ``payload`` is the bitmask
over the informable slots (bit i = ``ontology.informable[i]``).  With the
caminfo ontology (C=3, I=8) that is 11 + 4 * 256 = 1035 actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INFORM_KINDS = ("inform_standard", "inform_byname", "inform_requested", "inform_alternatives")


@dataclass(frozen=True)
class SummaryAction:
    kind: str
    slot: str | None = None

    @property
    def is_inform(self) -> bool:
        return self.kind in INFORM_KINDS

    def __str__(self) -> str:
        return f"{self.kind}_{self.slot}" if self.slot else self.kind


@dataclass(frozen=True)
class MasterAction:
    summary: SummaryAction
    payload: int | None = None

    def __post_init__(self):
        if self.summary.is_inform != (self.payload is not None):
            raise ValueError("payload must be present exactly for inform actions")


class ActionSpace:
    def __init__(self, ontology):
        self.ontology = ontology
        c = ontology.constraints
        self.summary_actions: tuple[SummaryAction, ...] = (
            *(SummaryAction("request", s) for s in c),
            *(SummaryAction("confirm", s) for s in c),
            *(SummaryAction("select", s) for s in c),
            SummaryAction("reqmore"),
            SummaryAction("bye"),
            *(SummaryAction(k) for k in INFORM_KINDS),
        )
        self._summary_index = {a: i for i, a in enumerate(self.summary_actions)}
        self.payload_bits = len(ontology.informable)
        self.n_payloads = 2**self.payload_bits
        self.n_summary = len(self.summary_actions)
        self.n_inform = len(INFORM_KINDS)
        self.n_noninform = self.n_summary - self.n_inform
        self.n_master = self.n_noninform + self.n_inform * self.n_payloads

    def size(self, mode: str) -> int:
        return self.n_master if mode == "master" else self.n_summary

    def summary_index(self, action: SummaryAction) -> int:
        return self._summary_index[action]

    def index_master(self, action: MasterAction) -> int:
        i = self._summary_index[action.summary]
        if not action.summary.is_inform:
            return i
        if not 0 <= action.payload < self.n_payloads:
            raise ValueError(f"payload {action.payload} out of range")
        return self.n_noninform + (i - self.n_noninform) * self.n_payloads + action.payload

    def master_action(self, index: int) -> MasterAction:
        if not 0 <= index < self.n_master:
            raise IndexError(index)
        if index < self.n_noninform:
            return MasterAction(self.summary_actions[index])
        kind, payload = divmod(index - self.n_noninform, self.n_payloads)
        return MasterAction(self.summary_actions[self.n_noninform + kind], payload)

    def payload_slots(self, payload: int) -> tuple[str, ...]:
        return tuple(s for i, s in enumerate(self.ontology.informable) if payload >> i & 1)

    def payload_of(self, slots) -> int:
        wanted = set(slots)
        return sum(1 << i for i, s in enumerate(self.ontology.informable) if s in wanted)

    def summary_of_master(self, index: int) -> int:
        """Summary index that a master index belongs to."""
        if index < self.n_noninform:
            return index
        return self.n_noninform + (index - self.n_noninform) // self.n_payloads

    def broadcast_mask(self, summary_mask):
        """Expand a summary-level mask to the master layout."""
        summary_mask = np.asarray(summary_mask, dtype=bool)
        return np.concatenate([summary_mask[: self.n_noninform], np.repeat(summary_mask[self.n_noninform :], self.n_payloads)])
