"""Line-oriented scripted dialogues ("SYS: act" / "USR: act").

A trace may start with ``GOAL:`` and ``REQUESTS:`` header lines::

    GOAL: pricerange=moderate
    REQUESTS: phone
    SYS: hello()
    USR: inform(type=restaurant)
    SYS: request_pricerange()
    ...

System lines name summary actions; ``inform()`` is the standard inform and
``hello()`` is a greeting that is not sent through the environment.
"""

from __future__ import annotations

from dataclasses import dataclass

from acer_lab.dialenv.actions import INFORM_KINDS, SummaryAction
from acer_lab.dialenv.acts import DialogueAct
from acer_lab.dialenv.env import DialogueEnv, EnvConfig
from acer_lab.dialenv.user import ScriptedUser, UserGoal


@dataclass
class Trace:
    goal: UserGoal
    system: list[SummaryAction]
    user: list[DialogueAct]


def parse_system_act(text: str) -> SummaryAction | None:
    name = DialogueAct.parse(text).act
    if name == "hello":
        return None
    if name == "inform":
        return SummaryAction("inform_standard")
    if name in INFORM_KINDS or name in ("reqmore", "bye"):
        return SummaryAction(name)
    kind, _, slot = name.partition("_")
    if kind in ("request", "confirm", "select") and slot:
        return SummaryAction(kind, slot)
    raise ValueError(f"unknown system action {text!r}")


def parse_trace(text: str) -> Trace:
    constraints, requests, system, user = {}, (), [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, body = line.partition(":")
        body = body.strip()
        tag = tag.strip().upper()
        if tag == "GOAL":
            constraints = dict(p.split("=", 1) for p in body.split(",") if p)
        elif tag == "REQUESTS":
            requests = tuple(p.strip() for p in body.split(",") if p.strip())
        elif tag == "SYS":
            act = parse_system_act(body)
            if act is not None:
                system.append(act)
        elif tag == "USR":
            user.append(DialogueAct.parse(body))
        else:
            raise ValueError(f"unrecognised trace line {raw!r}")
    return Trace(UserGoal(constraints, requests), system, user)


def replay_trace(trace: Trace, config: EnvConfig | None = None) -> DialogueEnv:
    """Drive an environment with the trace's system acts against its scripted user."""
    config = config or EnvConfig(ontology="caminfo")
    env = DialogueEnv(config, user=ScriptedUser(trace.goal, trace.user))
    env.reset()
    for act in trace.system:
        if env.done:
            break
        env.step(act)
    return env
