"""Slot-filling ontology: entity database plus slot metadata.

JSON schema (see ``data/toy.json``)::

    {
      "name": "toy",
      "informable": [8 slot names, payload bit order],
      "constraints": [slots the user may constrain, subset of informable],
      "user_requests": [slots the user may ask about],
      "values": {"<constraint slot>": [values...]},
      "entities": [{"name": ..., "<slot>": ..., ...}, ...]
    }

Every entity must define ``name`` and every informable slot, and constraint
slot values must come from ``values``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from acer_lab.errors import ConfigurationError

BUILTIN = ("toy", "caminfo")


@dataclass(frozen=True)
class Ontology:
    name: str
    informable: tuple[str, ...]
    constraints: tuple[str, ...]
    user_requests: tuple[str, ...]
    values: dict[str, tuple[str, ...]]
    entities: tuple[dict[str, str], ...]

    def __post_init__(self):
        if not self.entities:
            raise ConfigurationError("ontology has no entities")
        if not set(self.constraints) <= set(self.informable):
            raise ConfigurationError("constraint slots must be informable")
        if not set(self.user_requests) <= set(self.informable):
            raise ConfigurationError("user-requestable slots must be informable")
        for slot in self.constraints:
            if not self.values.get(slot):
                raise ConfigurationError(f"constraint slot {slot} has no values")
        for ent in self.entities:
            missing = {"name", *self.informable} - set(ent)
            if missing:
                raise ConfigurationError(f"entity {ent.get('name')} lacks slots {sorted(missing)}")
            for slot in self.constraints:
                if ent[slot] not in self.values[slot]:
                    raise ConfigurationError(f"entity {ent['name']} has unknown {slot} value {ent[slot]!r}")

    @classmethod
    def from_dict(cls, data: dict) -> Ontology:
        try:
            return cls(
                name=data.get("name", "custom"),
                informable=tuple(data["informable"]),
                constraints=tuple(data["constraints"]),
                user_requests=tuple(data["user_requests"]),
                values={k: tuple(v) for k, v in data["values"].items()},
                entities=tuple(dict(e) for e in data["entities"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"ontology is missing field {exc}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "informable": list(self.informable),
            "constraints": list(self.constraints),
            "user_requests": list(self.user_requests),
            "values": {k: list(v) for k, v in self.values.items()},
            "entities": [dict(e) for e in self.entities],
        }

    def entity(self, name: str | None) -> dict[str, str] | None:
        if name is None:
            return None
        for e in self.entities:
            if e["name"] == name:
                return e
        return None

    def matching(self, constraints: dict[str, str]) -> list[dict[str, str]]:
        """Entities satisfying every non-dontcare constraint, in database order."""
        active = {s: v for s, v in constraints.items() if v != "dontcare"}
        return [e for e in self.entities if all(e[s] == v for s, v in active.items())]


def load_ontology(source: str | Path) -> Ontology:
    """Load a built-in ontology by name or a JSON file by path."""
    if str(source) in BUILTIN:
        text = resources.files("acer_lab.dialenv").joinpath("data", f"{source}.json").read_text()
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigurationError(f"ontology file not found: {path}")
        text = path.read_text()
    return Ontology.from_dict(json.loads(text))
