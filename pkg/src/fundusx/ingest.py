"""Batch ingest: manifest -> validated store + embedded indexes + snapshots.

Validation rejects entries one by one (real collection data is messy) while
an embedding-provider failure aborts the whole run, since a half-embedded
index is semantically corrupt. Everything is built in a staging directory
and atomically swapped into place, so a store directory is either complete
or absent. Re-running on identical input yields byte-identical snapshots
under the stub embedder.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

from .bm25 import (
    Bm25Index,
    Bm25Params,
    COLLECTION_DESCRIPTION,
    COLLECTION_TITLE,
    LexicalDoc,
    RECORD_TITLE,
)
from .embedding import EmbeddingError, EmbeddingProvider
from .hnsw import HnswIndex, HnswParams
from .model import (
    CollectionDescriptor,
    ContactInfo,
    FieldSpec,
    RecordDescriptor,
    collection_murag_id,
    record_murag_id,
    validate_collection,
    validate_record,
)
from .store import COLLECTIONS_FILE, CorpusStore, IMAGES_DIR, RECORDS_FILE, media_type_for
from .tools import SearchIndexes

LOCK_FILE = "manifest.lock"
STORE_FORMAT_VERSION = 1

INDEX_FILES = {
    "record_image": "hnsw_image.idx",
    "record_title": "hnsw_rtitle.idx",
    "collection_title": "hnsw_ctitle.idx",
    "collection_description": "hnsw_cdesc.idx",
}
BM25_FILE = "bm25.idx"

TEXT_BATCH_SIZE = 64


class IngestError(Exception):
    pass


class ManifestError(IngestError):
    pass


@dataclass(frozen=True)
class RejectedEntry:
    kind: str
    identifier: str
    violations: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "identifier": self.identifier,
            "violations": list(self.violations),
        }


@dataclass
class IngestReport:
    collections_total: int = 0
    records_total: int = 0
    collections_accepted: int = 0
    records_accepted: int = 0
    rejected: list[RejectedEntry] = field(default_factory=list)
    build_seconds: dict[str, float] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)
    out_dir: str = ""

    def to_json(self) -> dict:
        return {
            "collections": {
                "total": self.collections_total,
                "accepted": self.collections_accepted,
            },
            "records": {"total": self.records_total, "accepted": self.records_accepted},
            "rejected": [r.to_json() for r in self.rejected],
            "build_seconds": dict(self.build_seconds),
            "checksums": dict(self.checksums),
            "out_dir": self.out_dir,
        }


@dataclass
class CorpusManifest:
    image_root: Path
    collections: list[dict]
    records: list[dict]


def load_manifest(manifest_path: Path) -> CorpusManifest:
    """Parse a JSON-lines manifest; structural problems abort the run."""
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    image_root = manifest_path.parent / "images"
    collections: list[dict] = []
    records: list[dict] = []
    with manifest_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except ValueError as exc:
                raise ManifestError(f"{manifest_path}:{lineno}: invalid JSON: {exc}") from exc
            kind = entry.get("kind")
            if kind == "manifest":
                root = Path(entry.get("image_root", "images"))
                image_root = root if root.is_absolute() else manifest_path.parent / root
            elif kind == "collection":
                collections.append(entry)
            elif kind == "record":
                records.append(entry)
            else:
                raise ManifestError(
                    f"{manifest_path}:{lineno}: unknown entry kind {kind!r}"
                )
    return CorpusManifest(image_root=image_root, collections=collections, records=records)


def _collection_from_entry(entry: dict) -> CollectionDescriptor:
    name = entry.get("collection_name", "")
    return CollectionDescriptor(
        murag_id=collection_murag_id(name),
        collection_name=name,
        title=entry.get("title", ""),
        title_de=entry.get("title_de", ""),
        description=entry.get("description", ""),
        description_de=entry.get("description_de", ""),
        contacts=tuple(
            ContactInfo(name=c.get("name", ""), email=c.get("email", ""))
            for c in entry.get("contacts", [])
        ),
        title_fields=tuple(entry.get("title_fields", [])),
        fields=tuple(
            FieldSpec(
                name=f.get("name", ""),
                label=f.get("label", ""),
                label_de=f.get("label_de", ""),
            )
            for f in entry.get("fields", [])
        ),
    )


def _record_from_entry(entry: dict) -> RecordDescriptor:
    return RecordDescriptor(
        murag_id=record_murag_id(
            entry.get("collection_name", ""),
            entry.get("catalogno", ""),
            entry.get("image_name", ""),
        ),
        fundus_id=int(entry.get("fundus_id", 0)),
        title=entry.get("title", ""),
        catalogno=entry.get("catalogno", ""),
        collection_name=entry.get("collection_name", ""),
        image_name=entry.get("image_name", ""),
        details=dict(entry.get("details", {})),
    )


def _batched(items: list[str], size: int) -> list[list[str]]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def ingest(
    manifest_path: Path,
    out_dir: Path,
    embedder: EmbeddingProvider,
    hnsw_params: HnswParams | None = None,
    bm25_params: Bm25Params | None = None,
    image_root: Path | None = None,
) -> IngestReport:
    manifest = load_manifest(manifest_path)
    root = image_root or manifest.image_root
    report = IngestReport(
        collections_total=len(manifest.collections),
        records_total=len(manifest.records),
        out_dir=str(out_dir),
    )

    # validate collections
    accepted_collections: list[CollectionDescriptor] = []
    by_name: dict[str, CollectionDescriptor] = {}
    for entry in manifest.collections:
        candidate = _collection_from_entry(entry)
        violations = validate_collection(candidate, accepted_collections)
        if violations:
            report.rejected.append(
                RejectedEntry(
                    kind="collection",
                    identifier=candidate.collection_name or "<unnamed>",
                    violations=tuple(violations),
                )
            )
            continue
        accepted_collections.append(candidate)
        by_name[candidate.collection_name] = candidate
    report.collections_accepted = len(accepted_collections)

    # validate records
    accepted_records: list[RecordDescriptor] = []
    seen_ids = {c.murag_id for c in accepted_collections}
    by_fundus_id: dict[int, RecordDescriptor] = {}
    for entry in manifest.records:
        candidate = _record_from_entry(entry)
        violations = validate_record(candidate, by_name.get(candidate.collection_name))
        image_path = root / candidate.image_name if candidate.image_name else None
        if image_path is not None and not image_path.is_file():
            violations.append(f"missing image {candidate.image_name!r}")
        if candidate.murag_id in seen_ids:
            violations.append(f"duplicate murag_id {candidate.murag_id!r}")
        sibling = by_fundus_id.get(candidate.fundus_id)
        if sibling is not None:
            if sibling.image_name == candidate.image_name:
                violations.append(
                    f"fundus_id {candidate.fundus_id} reused with the same image"
                )
            for attr in ("collection_name", "catalogno", "title"):
                if getattr(sibling, attr) != getattr(candidate, attr):
                    violations.append(
                        f"fundus_id {candidate.fundus_id} conflicts on {attr}"
                    )
        if violations:
            report.rejected.append(
                RejectedEntry(
                    kind="record",
                    identifier=candidate.catalogno or candidate.image_name or "<record>",
                    violations=tuple(violations),
                )
            )
            continue
        seen_ids.add(candidate.murag_id)
        by_fundus_id.setdefault(candidate.fundus_id, candidate)
        accepted_records.append(candidate)
    report.records_accepted = len(accepted_records)

    # embed everything before touching the filesystem: a provider failure
    # must abort without leaving partial snapshots behind
    try:
        record_title_vecs = []
        for batch in _batched([r.title for r in accepted_records], TEXT_BATCH_SIZE):
            record_title_vecs.extend(embedder.embed_text(batch))
        collection_title_vecs = []
        for batch in _batched([c.title for c in accepted_collections], TEXT_BATCH_SIZE):
            collection_title_vecs.extend(embedder.embed_text(batch))
        collection_desc_vecs = []
        for batch in _batched([c.description for c in accepted_collections], TEXT_BATCH_SIZE):
            collection_desc_vecs.extend(embedder.embed_text(batch))
        record_image_vecs = []
        for record in accepted_records:
            image_bytes = (root / record.image_name).read_bytes()
            record_image_vecs.append(
                embedder.embed_image(image_bytes, media_type_for(record.image_name))
            )
    except EmbeddingError as exc:
        raise IngestError(f"embedding provider failed, run aborted: {exc}") from exc

    params = hnsw_params or HnswParams()
    staging = out_dir.parent / (out_dir.name + ".staging")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        store = CorpusStore()
        for collection in accepted_collections:
            store.add_collection(collection)
        for record in accepted_records:
            store.add_record(record)
        store.save(staging)

        image_out = staging / IMAGES_DIR
        image_out.mkdir(exist_ok=True)
        for record in accepted_records:
            target = image_out / record.image_name
            if not target.exists():
                shutil.copyfile(root / record.image_name, target)

        def build_hnsw(name: str, ids: list[str], vectors) -> None:
            started = time.perf_counter()
            index = HnswIndex(dim=embedder.dimension, params=params)
            for entry_id, vec in zip(ids, vectors):
                index.insert(entry_id, vec)
            index.save(staging / INDEX_FILES[name])
            report.build_seconds[name] = time.perf_counter() - started

        record_ids = [r.murag_id for r in accepted_records]
        collection_ids = [c.murag_id for c in accepted_collections]
        build_hnsw("record_image", record_ids, record_image_vecs)
        build_hnsw("record_title", record_ids, record_title_vecs)
        build_hnsw("collection_title", collection_ids, collection_title_vecs)
        build_hnsw("collection_description", collection_ids, collection_desc_vecs)

        started = time.perf_counter()
        docs = [
            LexicalDoc(id=r.murag_id, kind=RECORD_TITLE, text=r.title)
            for r in accepted_records
        ]
        docs.extend(
            LexicalDoc(id=c.murag_id, kind=COLLECTION_TITLE, text=c.title)
            for c in accepted_collections
        )
        docs.extend(
            LexicalDoc(id=c.murag_id, kind=COLLECTION_DESCRIPTION, text=c.description)
            for c in accepted_collections
        )
        Bm25Index.build(docs, bm25_params).save(staging / BM25_FILE)
        report.build_seconds["bm25"] = time.perf_counter() - started

        checksums: dict[str, str] = {}
        for path in sorted(staging.rglob("*")):
            if path.is_file():
                rel = path.relative_to(staging).as_posix()
                checksums[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
        lock = {
            "format_version": STORE_FORMAT_VERSION,
            "collections": len(accepted_collections),
            "records": len(accepted_records),
            "dimension": embedder.dimension,
            "checksums": checksums,
        }
        (staging / LOCK_FILE).write_text(
            json.dumps(lock, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        report.checksums = checksums

        if out_dir.exists():
            shutil.rmtree(out_dir)
        staging.rename(out_dir)
    except Exception:
        if staging.exists():
            shutil.rmtree(staging)
        raise
    return report


@dataclass
class StoreBundle:
    store: CorpusStore
    lexical: Bm25Index
    indexes: SearchIndexes
    dimension: int


def load_store_bundle(store_dir: Path, verify: bool = True) -> StoreBundle:
    """Open a built store directory; optionally verify the lock checksums."""
    lock_path = store_dir / LOCK_FILE
    if not lock_path.is_file():
        raise IngestError(f"not a store directory (no {LOCK_FILE}): {store_dir}")
    lock = json.loads(lock_path.read_text(encoding="utf-8"))
    if lock.get("format_version") != STORE_FORMAT_VERSION:
        raise IngestError(
            f"store format version {lock.get('format_version')} unsupported"
        )
    if verify:
        for rel, expected in lock["checksums"].items():
            path = store_dir / rel
            if not path.is_file():
                raise IngestError(f"store file missing: {rel}")
            actual = hashlib.sha256(path.read_bytes()).hexdigest()
            if actual != expected:
                raise IngestError(f"checksum mismatch for {rel}")
    store = CorpusStore.load(store_dir)
    indexes = SearchIndexes(
        record_image=HnswIndex.load(store_dir / INDEX_FILES["record_image"]),
        record_title=HnswIndex.load(store_dir / INDEX_FILES["record_title"]),
        collection_title=HnswIndex.load(store_dir / INDEX_FILES["collection_title"]),
        collection_description=HnswIndex.load(
            store_dir / INDEX_FILES["collection_description"]
        ),
    )
    lexical = Bm25Index.load(store_dir / BM25_FILE)
    return StoreBundle(
        store=store,
        lexical=lexical,
        indexes=indexes,
        dimension=int(lock.get("dimension", 0)),
    )
