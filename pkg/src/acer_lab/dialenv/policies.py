"""Hand-written reference policies over the summary action space."""

from __future__ import annotations

import numpy as np

from acer_lab.dialenv.actions import ActionSpace, SummaryAction
from acer_lab.dialenv.belief import BeliefState


def scripted_action(belief: BeliefState, space: ActionSpace) -> int:
    """Request every constraint, offer, answer requests, close on thanks."""
    onto = space.ontology
    if belief.last_user_act == "thankyou":
        return space.summary_index(SummaryAction("bye"))
    for slot in onto.constraints:
        if not belief.grounded(slot, onto):
            return space.summary_index(SummaryAction("request", slot))
    if belief.offered is not None and belief.alternatives_requested:
        return space.summary_index(SummaryAction("inform_alternatives"))
    if belief.offered is None or belief.last_user_act in ("inform", "negate"):
        return space.summary_index(SummaryAction("inform_standard"))
    if belief.last_user_act == "request":
        return space.summary_index(SummaryAction("inform_requested"))
    return space.summary_index(SummaryAction("reqmore"))


def random_valid_action(mask: np.ndarray, rng: np.random.Generator) -> int:
    valid = np.flatnonzero(mask)
    return int(valid[rng.integers(len(valid))])
