"""Subject/family registry: who is kin to whom, and in which relation.

On disk this is a JSON document::

    {"subjects": [{"id": ..., "family": ..., "role": ...}, ...],
     "pairs":    [{"a": ..., "b": ..., "relation": ..., "kin": true}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError
from .fileio import write_text_atomic

RELATIONS = ("F-S", "F-D", "M-S", "M-D", "B-B", "S-B", "S-S")

RELATION_ROLES = {
    "F-S": ("father", "son"),
    "F-D": ("father", "daughter"),
    "M-S": ("mother", "son"),
    "M-D": ("mother", "daughter"),
    "B-B": ("brother", "brother"),
    "S-B": ("sister", "brother"),
    "S-S": ("sister", "sister"),
}


@dataclass(frozen=True)
class Subject:
    id: str
    family: str
    role: str


@dataclass(frozen=True)
class RegistryPair:
    a: str
    b: str
    relation: str
    kin: bool


@dataclass
class KinRegistry:
    subjects: list[Subject] = field(default_factory=list)
    pairs: list[RegistryPair] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.subjects}
        if len(self._by_id) != len(self.subjects):
            raise FormatError("duplicate subject ids in registry")
        for p in self.pairs:
            for sid in (p.a, p.b):
                if sid not in self._by_id:
                    raise FormatError(f"pair references unknown subject {sid!r}")
            if p.relation not in RELATIONS:
                raise FormatError(f"unknown relation {p.relation!r}")

    def subject(self, sid: str) -> Subject:
        return self._by_id[sid]

    def family_of(self, sid: str) -> str:
        return self._by_id[sid].family

    def relations(self) -> list[str]:
        seen = {p.relation for p in self.pairs if p.kin}
        return [r for r in RELATIONS if r in seen]

    def kin_pairs(self, relation: str) -> list[RegistryPair]:
        return [p for p in self.pairs if p.kin and p.relation == relation]

    def role_pools(self, relation: str) -> tuple[list[str], list[str]]:
        """Subjects usable on each side of the relation, from its kin pairs."""
        kin = self.kin_pairs(relation)
        a_pool = sorted({p.a for p in kin})
        b_pool = sorted({p.b for p in kin})
        return a_pool, b_pool

    def to_json(self) -> str:
        doc = {
            "subjects": [
                {"id": s.id, "family": s.family, "role": s.role}
                for s in self.subjects
            ],
            "pairs": [
                {"a": p.a, "b": p.b, "relation": p.relation, "kin": p.kin}
                for p in self.pairs
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        write_text_atomic(path, self.to_json())


def load_registry(path: str | Path) -> KinRegistry:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid registry JSON ({exc})") from exc
    try:
        subjects = [Subject(s["id"], s["family"], s["role"]) for s in doc["subjects"]]
        pairs = [
            RegistryPair(p["a"], p["b"], p["relation"], bool(p["kin"]))
            for p in doc["pairs"]
        ]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: registry missing field {exc}") from exc
    return KinRegistry(subjects=subjects, pairs=pairs)
