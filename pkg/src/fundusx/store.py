"""Read-mostly corpus store: collections, records, and their image files.

Populated once by the ingest pipeline, then served read-only. Records and
collections are kept fully in memory (they are small next to the indexes);
images stay on disk and are streamed on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .model import CollectionDescriptor, RecordDescriptor, derive_title

RECORDS_FILE = "records.db"
COLLECTIONS_FILE = "collections.db"
IMAGES_DIR = "images"

_MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


class StoreError(Exception):
    pass


class NotFoundError(StoreError):
    """Lookup failed; carries the offending identifier."""

    def __init__(self, kind: str, identifier: str) -> None:
        super().__init__(f"{kind} not found: {identifier!r}")
        self.kind = kind
        self.identifier = identifier


@dataclass(frozen=True)
class CorpusStats:
    total_records: int
    total_collections: int
    records_per_collection: dict[str, int]

    def to_json(self) -> dict:
        return {
            "total_records": self.total_records,
            "total_collections": self.total_collections,
            "records_per_collection": dict(self.records_per_collection),
        }


def media_type_for(image_name: str) -> str:
    suffix = Path(image_name).suffix.lower()
    media = _MEDIA_TYPES.get(suffix)
    if media is None:
        raise StoreError(f"no media type for image {image_name!r}")
    return media


class CorpusStore:
    def __init__(self, image_dir: Path | None = None) -> None:
        self._records: dict[str, RecordDescriptor] = {}
        self._collections_by_name: dict[str, CollectionDescriptor] = {}
        self._collections_by_id: dict[str, CollectionDescriptor] = {}
        self._image_dir = image_dir

    def __len__(self) -> int:
        return len(self._records) + len(self._collections_by_name)

    def add_collection(self, collection: CollectionDescriptor) -> None:
        if collection.collection_name in self._collections_by_name:
            raise StoreError(f"collection {collection.collection_name!r} already stored")
        if self._murag_id_taken(collection.murag_id):
            raise StoreError(f"murag_id {collection.murag_id!r} already stored")
        self._collections_by_name[collection.collection_name] = collection
        self._collections_by_id[collection.murag_id] = collection

    def add_record(self, record: RecordDescriptor) -> None:
        if self._murag_id_taken(record.murag_id):
            raise StoreError(f"murag_id {record.murag_id!r} already stored")
        self._records[record.murag_id] = record

    def _murag_id_taken(self, murag_id: str) -> bool:
        return murag_id in self._records or murag_id in self._collections_by_id

    # -- retrieval ---------------------------------------------------------

    def get_record(self, murag_id: str) -> RecordDescriptor:
        record = self._records.get(murag_id)
        if record is None:
            raise NotFoundError("record", murag_id)
        return record

    def get_collection(self, name_or_id: str) -> CollectionDescriptor:
        collection = self._collections_by_name.get(name_or_id) or self._collections_by_id.get(
            name_or_id
        )
        if collection is None:
            raise NotFoundError("collection", name_or_id)
        return collection

    def has_entity(self, murag_id: str) -> bool:
        return murag_id in self._records or murag_id in self._collections_by_id

    def list_collections(self) -> list[CollectionDescriptor]:
        return sorted(self._collections_by_name.values(), key=lambda c: c.collection_name)

    def iter_records(self) -> list[RecordDescriptor]:
        return list(self._records.values())

    def stats(self) -> CorpusStats:
        per_collection = {name: 0 for name in sorted(self._collections_by_name)}
        for record in self._records.values():
            per_collection[record.collection_name] = (
                per_collection.get(record.collection_name, 0) + 1
            )
        return CorpusStats(
            total_records=len(self._records),
            total_collections=len(self._collections_by_name),
            records_per_collection=per_collection,
        )

    def display_title(self, record: RecordDescriptor) -> str:
        parent = self._collections_by_name.get(record.collection_name)
        if parent is None:
            return record.title
        return derive_title(record, parent)

    # -- images ------------------------------------------------------------

    @property
    def image_dir(self) -> Path | None:
        return self._image_dir

    def get_image(self, image_name: str) -> tuple[bytes, str]:
        if self._image_dir is None:
            raise NotFoundError("image", image_name)
        # image names come from stored records or URLs; never let them escape
        path = (self._image_dir / image_name).resolve()
        if not str(path).startswith(str(self._image_dir.resolve())) or not path.is_file():
            raise NotFoundError("image", image_name)
        return path.read_bytes(), media_type_for(image_name)

    # -- persistence -------------------------------------------------------

    def save(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / COLLECTIONS_FILE).open("w", encoding="utf-8") as fh:
            for collection in self._collections_by_name.values():
                fh.write(json.dumps(collection.to_json(), ensure_ascii=False) + "\n")
        with (directory / RECORDS_FILE).open("w", encoding="utf-8") as fh:
            for record in self._records.values():
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, directory: Path) -> "CorpusStore":
        store = cls(image_dir=directory / IMAGES_DIR)
        collections_path = directory / COLLECTIONS_FILE
        records_path = directory / RECORDS_FILE
        if not collections_path.is_file() or not records_path.is_file():
            raise StoreError(f"no corpus store at {directory}")
        with collections_path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    store.add_collection(CollectionDescriptor.from_json(json.loads(line)))
        with records_path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    store.add_record(RecordDescriptor.from_json(json.loads(line)))
        return store
