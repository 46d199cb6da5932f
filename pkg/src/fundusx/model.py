"""Core domain types: collections, records, identifiers, and their validation.

All types are immutable value objects; validation returns violation lists
rather than raising, because malformed corpus entries are expected data.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

_EMAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+\.[^@\s]+$")
_COLLECTION_NAME_RE = re.compile(r"^[a-z0-9][a-z0-9_-]*$")

UNIT_NORM_TOL = 1e-6


def record_murag_id(collection_name: str, catalogno: str, image_name: str) -> str:
    """Deterministic id for a record; stable across ingest runs."""
    h = hashlib.blake2b(digest_size=16)
    h.update(b"record\x1f")
    h.update(collection_name.encode("utf-8"))
    h.update(b"\x1f")
    h.update(catalogno.encode("utf-8"))
    h.update(b"\x1f")
    h.update(image_name.encode("utf-8"))
    return h.hexdigest()


def collection_murag_id(collection_name: str) -> str:
    """Deterministic id for a collection; stable across ingest runs."""
    h = hashlib.blake2b(digest_size=16)
    h.update(b"collection\x1f")
    h.update(collection_name.encode("utf-8"))
    return h.hexdigest()


@dataclass(frozen=True)
class ContactInfo:
    name: str
    email: str

    def to_json(self) -> dict[str, str]:
        return {"name": self.name, "email": self.email}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ContactInfo":
        return cls(name=obj["name"], email=obj["email"])


@dataclass(frozen=True)
class FieldSpec:
    name: str
    label: str
    label_de: str

    def to_json(self) -> dict[str, str]:
        return {"name": self.name, "label": self.label, "label_de": self.label_de}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "FieldSpec":
        return cls(name=obj["name"], label=obj["label"], label_de=obj["label_de"])


@dataclass(frozen=True)
class CollectionDescriptor:
    """A named collection of records with a bilingual description and field schema."""

    murag_id: str
    collection_name: str
    title: str
    title_de: str
    description: str
    description_de: str
    contacts: tuple[ContactInfo, ...] = ()
    title_fields: tuple[str, ...] = ()
    fields: tuple[FieldSpec, ...] = ()

    def field_names(self) -> set[str]:
        return {f.name for f in self.fields}

    def to_json(self) -> dict[str, Any]:
        return {
            "murag_id": self.murag_id,
            "collection_name": self.collection_name,
            "title": self.title,
            "title_de": self.title_de,
            "description": self.description,
            "description_de": self.description_de,
            "contacts": [c.to_json() for c in self.contacts],
            "title_fields": list(self.title_fields),
            "fields": [f.to_json() for f in self.fields],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "CollectionDescriptor":
        return cls(
            murag_id=obj["murag_id"],
            collection_name=obj["collection_name"],
            title=obj["title"],
            title_de=obj["title_de"],
            description=obj["description"],
            description_de=obj["description_de"],
            contacts=tuple(ContactInfo.from_json(c) for c in obj.get("contacts", [])),
            title_fields=tuple(obj.get("title_fields", [])),
            fields=tuple(FieldSpec.from_json(f) for f in obj.get("fields", [])),
        )


@dataclass(frozen=True)
class RecordDescriptor:
    """A single collection item: title, catalog number, image, free-form details.

    Records with several images share a ``fundus_id`` and differ only in
    ``image_name`` (and consequently ``murag_id``).
    """

    murag_id: str
    fundus_id: int
    title: str
    catalogno: str
    collection_name: str
    image_name: str
    details: Mapping[str, str] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "murag_id": self.murag_id,
            "fundus_id": self.fundus_id,
            "title": self.title,
            "catalogno": self.catalogno,
            "collection_name": self.collection_name,
            "image_name": self.image_name,
            "details": dict(self.details),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "RecordDescriptor":
        return cls(
            murag_id=obj["murag_id"],
            fundus_id=int(obj["fundus_id"]),
            title=obj["title"],
            catalogno=obj["catalogno"],
            collection_name=obj["collection_name"],
            image_name=obj["image_name"],
            details=dict(obj.get("details", {})),
        )


def validate_collection(
    candidate: CollectionDescriptor,
    existing: Iterable[CollectionDescriptor] = (),
) -> list[str]:
    """Return all schema violations for *candidate*; empty list means ok.

    *existing* supplies the corpus state needed for uniqueness checks.
    """
    violations: list[str] = []
    if not candidate.murag_id:
        violations.append("empty murag_id")
    if not candidate.collection_name:
        violations.append("empty collection_name")
    elif not _COLLECTION_NAME_RE.match(candidate.collection_name):
        violations.append(f"collection_name not URL-safe: {candidate.collection_name!r}")
    if not candidate.title:
        violations.append("empty title")
    if not candidate.description:
        violations.append("empty description")

    for other in existing:
        if other.collection_name == candidate.collection_name:
            violations.append(f"duplicate collection_name {candidate.collection_name!r}")
            break

    for contact in candidate.contacts:
        if not contact.name:
            violations.append("contact with empty name")
        if not _EMAIL_RE.match(contact.email):
            violations.append(f"invalid contact email {contact.email!r}")

    seen_fields: set[str] = set()
    for spec in candidate.fields:
        if not spec.name:
            violations.append("field with empty name")
        elif spec.name in seen_fields:
            violations.append(f"duplicate field name {spec.name!r}")
        seen_fields.add(spec.name)

    known = candidate.field_names()
    for name in candidate.title_fields:
        if name not in known:
            violations.append(f"dangling title field {name!r}")
    return violations


def validate_record(
    candidate: RecordDescriptor,
    parent: CollectionDescriptor | None,
) -> list[str]:
    """Return all violations for *candidate* under its parent collection."""
    violations: list[str] = []
    if not candidate.murag_id:
        violations.append("empty murag_id")
    if parent is None:
        violations.append(f"unknown collection {candidate.collection_name!r}")
    else:
        known = parent.field_names()
        for key in candidate.details:
            if key not in known:
                violations.append(f"unknown detail field {key!r}")
    if not candidate.image_name:
        violations.append("empty image_name")
    if not candidate.title:
        violations.append("empty title")
    return violations


def derive_title(record: RecordDescriptor, parent: CollectionDescriptor) -> str:
    """Compose the display title from the parent's title fields.

    Values of ``parent.title_fields`` present in ``record.details`` are joined
    with ", " in field order; when none are present the stored record title is
    used verbatim.
    """
    parts = [
        record.details[name]
        for name in parent.title_fields
        if name in record.details and record.details[name]
    ]
    if not parts:
        return record.title
    return ", ".join(parts)


def normalize_vector(vec: np.ndarray) -> np.ndarray:
    """Return *vec* scaled to unit Euclidean norm as float32.

    Raises ValueError for zero (or numerically zero) vectors, which have no
    direction in the embedding space.
    """
    arr = np.asarray(vec, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    norm = float(np.linalg.norm(arr))
    if norm < 1e-12:
        raise ValueError("cannot normalize a zero vector")
    return arr / np.float32(norm)


def is_unit_vector(vec: np.ndarray, tol: float = UNIT_NORM_TOL) -> bool:
    return abs(float(np.linalg.norm(vec)) - 1.0) <= tol
