import json
from pathlib import Path

import pytest

from fundusx.embedding import EmbeddingError, StubEmbedder
from fundusx.fixture import generate_fixture
from fundusx.hnsw import HnswParams
from fundusx.ingest import (
    BM25_FILE,
    INDEX_FILES,
    IngestError,
    LOCK_FILE,
    ManifestError,
    ingest,
    load_manifest,
    load_store_bundle,
)
from fundusx.bm25 import RECORD_TITLE

FAST_PARAMS = HnswParams(M=8, ef_construction=32, ef_search=64, seed=7)


def run_ingest(manifest, out_dir, dim=24):
    return ingest(manifest, out_dir, StubEmbedder(dimension=dim), hnsw_params=FAST_PARAMS)


class TestFixtureGenerator:
    def test_round_robin_distribution(self, tmp_path):
        manifest = generate_fixture(42, 3, 12, tmp_path)
        parsed = load_manifest(manifest)
        assert len(parsed.collections) == 3
        assert len(parsed.records) == 12
        per = {}
        for entry in parsed.records:
            per[entry["collection_name"]] = per.get(entry["collection_name"], 0) + 1
        assert sorted(per.values()) == [4, 4, 4]

    def test_same_seed_identical_output(self, tmp_path):
        m1 = generate_fixture(42, 3, 12, tmp_path / "a")
        m2 = generate_fixture(42, 3, 12, tmp_path / "b")
        assert m1.read_text() == m2.read_text()
        images_a = sorted((tmp_path / "a" / "images").iterdir())
        images_b = sorted((tmp_path / "b" / "images").iterdir())
        assert [p.name for p in images_a] == [p.name for p in images_b]
        for pa, pb in zip(images_a, images_b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        m1 = generate_fixture(1, 2, 6, tmp_path / "a")
        m2 = generate_fixture(2, 2, 6, tmp_path / "b")
        assert m1.read_text() != m2.read_text()

    def test_precondition(self, tmp_path):
        with pytest.raises(ValueError):
            generate_fixture(42, 3, 2, tmp_path)
        with pytest.raises(ValueError):
            generate_fixture(42, 0, 0, tmp_path)

    def test_multi_image_record_present(self, tmp_path):
        manifest = generate_fixture(42, 3, 12, tmp_path)
        parsed = load_manifest(manifest)
        by_fid = {}
        for entry in parsed.records:
            by_fid.setdefault(entry["fundus_id"], []).append(entry)
        pairs = [entries for entries in by_fid.values() if len(entries) > 1]
        assert pairs, "fixture should contain a multi-image record"
        for entries in pairs:
            images = {e["image_name"] for e in entries}
            assert len(images) == len(entries)
            assert len({e["catalogno"] for e in entries}) == 1


class TestIngest:
    def test_fixture_ingest_counts_and_snapshots(self, tmp_path):
        manifest = generate_fixture(42, 3, 12, tmp_path / "src")
        report = run_ingest(manifest, tmp_path / "store")
        assert report.collections_accepted == 3
        assert report.records_accepted == 12
        assert report.rejected == []
        for name in INDEX_FILES.values():
            assert (tmp_path / "store" / name).is_file()
        assert (tmp_path / "store" / BM25_FILE).is_file()
        assert (tmp_path / "store" / LOCK_FILE).is_file()
        assert set(report.build_seconds) == {
            "record_image",
            "record_title",
            "collection_title",
            "collection_description",
            "bm25",
        }

    def test_missing_image_rejects_only_that_record(self, tmp_path):
        manifest = generate_fixture(42, 3, 12, tmp_path / "src")
        parsed = load_manifest(manifest)
        victim = parsed.records[4]["image_name"]
        (tmp_path / "src" / "images" / victim).unlink()
        report = run_ingest(manifest, tmp_path / "store")
        assert report.records_accepted == 11
        assert len(report.rejected) == 1
        rejected = report.rejected[0]
        assert rejected.kind == "record"
        assert any("missing image" in v for v in rejected.violations)
        # accepted + rejected == input count
        assert report.records_accepted + 1 == report.records_total

    def test_double_ingest_byte_identical(self, tmp_path):
        manifest = generate_fixture(42, 3, 12, tmp_path / "src")
        r1 = run_ingest(manifest, tmp_path / "store1")
        r2 = run_ingest(manifest, tmp_path / "store2")
        assert r1.checksums == r2.checksums
        for rel in r1.checksums:
            a = (tmp_path / "store1" / rel).read_bytes()
            b = (tmp_path / "store2" / rel).read_bytes()
            assert a == b, f"{rel} differs between runs"

    def test_manifest_not_found(self, tmp_path):
        with pytest.raises(ManifestError):
            run_ingest(tmp_path / "nope.jsonl", tmp_path / "store")

    def test_malformed_manifest_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind": "collection"\n')
        with pytest.raises(ManifestError):
            run_ingest(path, tmp_path / "store")

    def test_unknown_kind_aborts(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind": "wormhole"}\n')
        with pytest.raises(ManifestError):
            run_ingest(path, tmp_path / "store")

    def test_provider_failure_leaves_nothing(self, tmp_path):
        manifest = generate_fixture(42, 2, 6, tmp_path / "src")

        class FailingEmbedder(StubEmbedder):
            def embed_image(self, image, media_type):
                raise EmbeddingError("gpu on fire")

        out = tmp_path / "store"
        with pytest.raises(IngestError):
            ingest(manifest, out, FailingEmbedder(dimension=16), hnsw_params=FAST_PARAMS)
        assert not out.exists()
        assert not (tmp_path / "store.staging").exists()

    def test_duplicate_record_rejected(self, tmp_path):
        manifest = generate_fixture(42, 2, 4, tmp_path / "src")
        lines = manifest.read_text().strip().splitlines()
        record_line = next(l for l in lines if json.loads(l)["kind"] == "record")
        manifest.write_text("\n".join(lines + [record_line]) + "\n")
        report = run_ingest(manifest, tmp_path / "store")
        assert report.records_accepted == 4
        assert any(
            "duplicate murag_id" in v for r in report.rejected for v in r.violations
        )

    def test_conflicting_fundus_id_rejected(self, tmp_path):
        manifest = generate_fixture(42, 2, 4, tmp_path / "src")
        lines = [json.loads(l) for l in manifest.read_text().strip().splitlines()]
        records = [e for e in lines if e["kind"] == "record"]
        clone = dict(records[0])
        clone["title"] = "Completely different"
        clone["catalogno"] = "X-9999"
        images = tmp_path / "src" / "images"
        clone_image = records[1]["image_name"]
        clone["image_name"] = clone_image  # reuses another record's image file
        # write conflicting entry sharing fundus_id but differing title
        conflicting = dict(clone)
        manifest.write_text(
            "\n".join(json.dumps(e) for e in lines + [conflicting]) + "\n"
        )
        report = run_ingest(manifest, tmp_path / "store")
        assert any(
            "conflicts on" in v or "duplicate murag_id" in v
            for r in report.rejected
            for v in r.violations
        )


class TestPostIngestInvariants:
    def test_stats_match_accepted_counts(self, fixture_corpus):
        stats = fixture_corpus.bundle.store.stats()
        assert stats.total_collections == fixture_corpus.report.collections_accepted
        assert stats.total_records == fixture_corpus.report.records_accepted
        assert stats.total_records == sum(stats.records_per_collection.values())

    def test_every_record_validates(self, fixture_corpus):
        from fundusx.model import validate_record

        store = fixture_corpus.bundle.store
        for record in store.iter_records():
            parent = store.get_collection(record.collection_name)
            assert validate_record(record, parent) == []

    def test_no_duplicate_murag_ids(self, fixture_corpus):
        store = fixture_corpus.bundle.store
        ids = [r.murag_id for r in store.iter_records()]
        ids += [c.murag_id for c in store.list_collections()]
        assert len(ids) == len(set(ids))

    def test_each_record_indexed_exactly_once(self, fixture_corpus):
        bundle = fixture_corpus.bundle
        records = bundle.store.iter_records()
        record_ids = sorted(r.murag_id for r in records)
        assert sorted(bundle.indexes.record_title.ids) == record_ids
        assert sorted(bundle.indexes.record_image.ids) == record_ids
        hits = {
            h.id
            for r in records
            for h in bundle.lexical.search(r.title, k=50, kinds=(RECORD_TITLE,))
        }
        assert hits == set(record_ids)

    def test_bundle_checksum_verification(self, tmp_path):
        manifest = generate_fixture(42, 2, 4, tmp_path / "src")
        run_ingest(manifest, tmp_path / "store")
        target = tmp_path / "store" / "records.db"
        target.write_text(target.read_text() + "\n")
        with pytest.raises(IngestError, match="checksum mismatch"):
            load_store_bundle(tmp_path / "store")

    def test_bundle_load_without_lock(self, tmp_path):
        with pytest.raises(IngestError):
            load_store_bundle(tmp_path)
