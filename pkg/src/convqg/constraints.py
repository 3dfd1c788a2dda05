"""Textual constraints and their natural-language rendering.

Every constraint kind (knowledge triplet, expected answer, caption, fact)
renders to the guidance sentence fed to the text encoder. Triplet entities
are lowercased; the masked entity renders as the canonical [MASK] token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

MASK_TOKEN = "[MASK]"
_MASK_RE = re.compile(r"\[mask\]", re.IGNORECASE)

RELATION_TEMPLATES = {
    "UsedFor": "is used for",
    "ReceivesAction": "receives action",
    "HasA": "has a",
    "Causes": "causes",
    "HasProperty": "has a property",
    "CreatedBy": "is created by",
    "DefinedAs": "is defined as",
    "AtLocation": "is at location of",
    "HasSubEvent": "has",
    "MadeUpOf": "is made of",
    "HasPrerequisite": "has prerequisite to",
    "Desires": "desires",
    "NotDesires": "not desires",
    "IsA": "is a",
    "CapableOf": "is capable of",
}

RELATIONS = tuple(RELATION_TEMPLATES)

CONSTRAINT_KINDS = ("triplet", "answer", "caption", "fact")

MASKED_SLOTS = ("subject", "object", "none")


def template(relation: str) -> str:
    try:
        return RELATION_TEMPLATES[relation]
    except KeyError:
        raise ValueError(f"unknown relation name: {relation!r}") from None


@dataclass(frozen=True)
class KnowledgeTriplet:
    subject: str
    relation: str
    object: str
    masked_slot: str = "none"

    def __post_init__(self):
        template(self.relation)  # validates the name
        if self.masked_slot not in MASKED_SLOTS:
            raise ValueError(f"masked_slot must be one of {MASKED_SLOTS}, got {self.masked_slot!r}")
        if not self.subject or not self.object:
            raise ValueError("triplet entities must be non-empty")

    def with_mask(self, slot: str) -> "KnowledgeTriplet":
        return replace(self, masked_slot=slot)

    @property
    def answer(self) -> str:
        """The masked entity, i.e. what the generated question asks for."""
        if self.masked_slot == "subject":
            return self.subject
        if self.masked_slot == "object":
            return self.object
        raise ValueError("triplet has no masked slot")


@dataclass(frozen=True)
class Constraint:
    kind: str
    payload: object  # KnowledgeTriplet for kind="triplet", str otherwise

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind: {self.kind!r}")
        if self.kind == "triplet":
            if not isinstance(self.payload, KnowledgeTriplet):
                raise ValueError("triplet constraint needs a KnowledgeTriplet payload")
        elif not isinstance(self.payload, str) or not self.payload.strip():
            raise ValueError(f"{self.kind} constraint needs non-empty text")


def canonicalize_mask(text: str) -> str:
    """Fold any case variant of the bracketed mask to the canonical token."""
    return _MASK_RE.sub(MASK_TOKEN, text)


def render(constraint: Constraint) -> str:
    """The guidance sentence t' for a constraint."""
    if constraint.kind == "triplet":
        t = constraint.payload
        subject = MASK_TOKEN if t.masked_slot == "subject" else t.subject.lower()
        obj = MASK_TOKEN if t.masked_slot == "object" else t.object.lower()
        return f"{subject} {template(t.relation)} {obj}"
    if constraint.kind == "answer":
        return f"The answer to the question is {constraint.payload}"
    # caption and fact sentences pass through verbatim (mask canonicalized)
    return canonicalize_mask(constraint.payload)


def constraint_to_json(constraint: Constraint) -> dict:
    if constraint.kind == "triplet":
        t = constraint.payload
        return {
            "type": "triplet",
            "subject": t.subject,
            "relation": t.relation,
            "object": t.object,
            "masked_slot": t.masked_slot,
        }
    return {"type": constraint.kind, constraint.kind: constraint.payload}


def constraint_from_json(obj: dict) -> Constraint:
    kind = obj.get("type")
    if kind == "triplet":
        return Constraint(
            "triplet",
            KnowledgeTriplet(
                subject=obj["subject"],
                relation=obj["relation"],
                object=obj["object"],
                masked_slot=obj.get("masked_slot", "none"),
            ),
        )
    if kind in ("answer", "caption", "fact"):
        return Constraint(kind, obj[kind])
    raise ValueError(f"unknown constraint type: {kind!r}")
