"""Simulated slot-filling dialogue environment."""

from acer_lab.dialenv.actions import INFORM_KINDS, ActionSpace, MasterAction, SummaryAction
from acer_lab.dialenv.acts import DialogueAct, ObservedAct, corrupt_semantics
from acer_lab.dialenv.belief import BeliefState, feature_dim, featurize, focus_update, fresh_belief, observe
from acer_lab.dialenv.env import DialogueEnv, EnvConfig, StepResult, execution_mask, summary_mask, summary_to_master
from acer_lab.dialenv.ontology import Ontology, load_ontology
from acer_lab.dialenv.policies import random_valid_action, scripted_action
from acer_lab.dialenv.user import AgendaUser, ScriptedUser, SystemTurn, UserConfig, UserGoal

__all__ = [
    "INFORM_KINDS",
    "ActionSpace",
    "AgendaUser",
    "BeliefState",
    "DialogueAct",
    "DialogueEnv",
    "EnvConfig",
    "MasterAction",
    "ObservedAct",
    "Ontology",
    "ScriptedUser",
    "StepResult",
    "SummaryAction",
    "SystemTurn",
    "UserConfig",
    "UserGoal",
    "corrupt_semantics",
    "execution_mask",
    "feature_dim",
    "featurize",
    "focus_update",
    "fresh_belief",
    "load_ontology",
    "observe",
    "random_valid_action",
    "scripted_action",
    "summary_mask",
    "summary_to_master",
]
