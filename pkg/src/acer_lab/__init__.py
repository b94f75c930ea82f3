"""Off-policy actor-critic with experience replay for slot-filling dialogue."""

__version__ = "0.1.0"
