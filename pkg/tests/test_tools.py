import io
import json

import numpy as np
import pytest
from PIL import Image

from fundusx.embedding import StubEmbedder
from fundusx.hnsw import HnswIndex, HnswParams
from fundusx.lvlm import (
    LvlmGateway,
    LvlmResponse,
    ModelInfo,
    ScriptedLvlm,
    ToolCall,
)
from fundusx.store import CorpusStore
from fundusx.prompts import (
    IMAGE_VQA,
    REWRITE_TEXT_TO_IMAGE,
    REWRITE_TEXT_TO_TEXT,
    load_prompt,
)
from fundusx.tools import (
    DetectedObject,
    MalformedModelOutputError,
    QueryRewriter,
    SearchIndexes,
    TEXT_TO_IMAGE,
    TEXT_TO_TEXT,
    ToolContext,
    build_tool_registry,
    parse_detected_objects,
)

from oracles import exact_top_k


def make_gateway(script):
    gateway = LvlmGateway()
    gateway.register(
        ModelInfo(model_id="stub", display_name="Stub", provider="stub"),
        ScriptedLvlm(script),
    )
    return gateway


def registry_for(corpus, gateway=None, model=None):
    bundle = corpus.bundle
    return build_tool_registry(
        store=bundle.store,
        lexical_index=bundle.lexical,
        indexes=bundle.indexes,
        embedder=corpus.embedder,
        gateway=gateway,
        analysis_model=model,
    )


def dispatch(registry, name, arguments=None, uploads=None):
    call = ToolCall(id="t1", name=name, arguments=arguments or {})
    return registry.dispatch(call, ToolContext(uploads=uploads or {}))


class TestDatabaseTools:
    def test_stats_match_fixture(self, fixture_corpus):
        result = dispatch(registry_for(fixture_corpus), "get_stats")
        assert result.ok
        stats = result.payload
        assert stats["total_collections"] == 3
        assert stats["total_records"] == 12
        assert sum(stats["records_per_collection"].values()) == 12

    def test_get_record_roundtrip(self, fixture_corpus):
        record = fixture_corpus.bundle.store.iter_records()[0]
        result = dispatch(
            registry_for(fixture_corpus), "get_record", {"murag_id": record.murag_id}
        )
        assert result.ok
        assert result.payload["murag_id"] == record.murag_id
        assert result.payload["display_title"]

    def test_get_record_not_found(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus), "get_record", {"murag_id": "nonexistent"}
        )
        assert not result.ok
        assert result.error_kind == "not_found"
        assert "nonexistent" in result.error_detail
        assert result.parameter_fault
        message = json.loads(result.message_text())
        assert message["error"] == "not_found"

    def test_list_collections_sorted(self, fixture_corpus):
        result = dispatch(registry_for(fixture_corpus), "list_collections")
        names = [c["collection_name"] for c in result.payload]
        assert names == sorted(names)
        assert len(names) == 3

    def test_get_collection_by_name_and_id(self, fixture_corpus):
        registry = registry_for(fixture_corpus)
        by_name = dispatch(registry, "get_collection", {"name_or_id": "minerals"})
        assert by_name.ok
        by_id = dispatch(
            registry, "get_collection", {"name_or_id": by_name.payload["murag_id"]}
        )
        assert by_id.payload == by_name.payload


class TestLexicalTools:
    def test_mineral_query_ranks_mineral_collection_first(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus), "lexical_search_collections", {"query": "mineral"}
        )
        assert result.ok and result.payload
        top = result.payload[0]
        assert top["title"] == "Mineralogical Collection"

    def test_collection_hits_deduplicated(self, fixture_corpus):
        # "collection" occurs in both title and description docs of minerals
        result = dispatch(
            registry_for(fixture_corpus),
            "lexical_search_collections",
            {"query": "collection", "k": 10},
        )
        ids = [h["murag_id"] for h in result.payload]
        assert len(ids) == len(set(ids))

    def test_no_match_returns_empty(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus), "lexical_search_records", {"query": "xyzzy"}
        )
        assert result.ok
        assert result.payload == []

    def test_k_one_returns_single_best(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus),
            "lexical_search_records",
            {"query": "quartz goose astrolabe", "k": 1},
        )
        assert result.ok
        assert len(result.payload) == 1

    def test_invalid_k(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus), "lexical_search_records", {"query": "x", "k": 0}
        )
        assert not result.ok
        assert result.error_kind == "invalid_parameters"
        assert result.parameter_fault


class TestQueryRewriter:
    def test_rewrites_via_model(self):
        gateway = make_gateway(
            [LvlmResponse(final_text="a photo of beautiful minerals, geology")]
        )
        rewriter = QueryRewriter(gateway, "stub")
        assert (
            rewriter.rewrite("beautiful minerals", TEXT_TO_IMAGE)
            == "a photo of beautiful minerals, geology"
        )

    def test_mode_selects_instruction(self):
        stub = ScriptedLvlm(
            [LvlmResponse(final_text="r1"), LvlmResponse(final_text="r2")]
        )
        gateway = LvlmGateway()
        gateway.register(ModelInfo("stub", "Stub", "stub"), stub)
        rewriter = QueryRewriter(gateway, "stub")
        rewriter.rewrite("q", TEXT_TO_IMAGE)
        rewriter.rewrite("q", TEXT_TO_TEXT)
        assert stub.calls[0].system_prompt == load_prompt(REWRITE_TEXT_TO_IMAGE)
        assert stub.calls[1].system_prompt == load_prompt(REWRITE_TEXT_TO_TEXT)

    def test_provider_failure_falls_back_to_raw(self):
        gateway = make_gateway([])  # script exhausted -> generate raises
        rewriter = QueryRewriter(gateway, "stub")
        assert rewriter.rewrite("raw query", TEXT_TO_TEXT) == "raw query"

    def test_never_empty(self):
        gateway = make_gateway([LvlmResponse(final_text="")])
        rewriter = QueryRewriter(gateway, "stub")
        assert rewriter.rewrite("raw", TEXT_TO_IMAGE) == "raw"

    def test_empty_query_rejected(self):
        with pytest.raises(ValueError):
            QueryRewriter(None, None).rewrite("", TEXT_TO_IMAGE)


class TestSimilarityTools:
    def test_records_by_image_self_similarity(self, fixture_corpus):
        store = fixture_corpus.bundle.store
        record = store.iter_records()[0]
        image, _media = store.get_image(record.image_name)
        result = dispatch(
            registry_for(fixture_corpus),
            "sim_search_records_by_image",
            {"image_name": record.image_name, "k": 1},
        )
        assert result.ok
        top = result.payload["hits"][0]
        assert top["murag_id"] == record.murag_id
        assert top["score"] == pytest.approx(1.0, abs=1e-6)

    def test_uploaded_image_resolved_from_context(self, fixture_corpus):
        store = fixture_corpus.bundle.store
        record = store.iter_records()[3]
        image, media = store.get_image(record.image_name)
        result = dispatch(
            registry_for(fixture_corpus),
            "sim_search_records_by_image",
            {"image_name": "upload:photo1", "k": 1},
            uploads={"upload:photo1": (image, media)},
        )
        assert result.ok
        assert result.payload["hits"][0]["murag_id"] == record.murag_id

    def test_records_by_text_matches_bruteforce(self, fixture_corpus):
        # seeded 50-record corpus, ef_search >= corpus size: HNSW candidate set
        # is exhaustive, so the tool must equal the oracle exactly
        embedder = StubEmbedder(dimension=24)
        store = CorpusStore()
        params = HnswParams(M=8, ef_construction=64, ef_search=64, seed=3)
        title_index = HnswIndex(dim=24, params=params)
        image_index = HnswIndex(dim=24, params=params)
        entries = {}
        for i in range(50):
            title = f"specimen number {i}"
            vec = embedder.embed_text([title])[0]
            entry_id = f"r{i:03d}"
            title_index.insert(entry_id, vec)
            image_index.insert(entry_id, vec)
            entries[entry_id] = vec
        indexes = SearchIndexes(
            record_image=image_index,
            record_title=title_index,
            collection_title=HnswIndex(dim=24, params=params),
            collection_description=HnswIndex(dim=24, params=params),
        )
        from fundusx.tools import SimilarityTools

        sim = SimilarityTools(indexes, embedder, store)
        query = "dusty drawer of curiosities"
        payload = sim.records_by_text(query, k=5, target="title")
        expected = exact_top_k(entries, embedder.embed_text([query])[0], 5)
        got = [(h["murag_id"], h["score"]) for h in payload["hits"]]
        assert [i for i, _ in got] == [i for i, _ in expected]
        for (_, got_score), (_, want_score) in zip(got, expected):
            assert got_score == pytest.approx(want_score, abs=1e-9)

    def test_rewrite_applied_for_image_target(self, fixture_corpus):
        stub = ScriptedLvlm([LvlmResponse(final_text="a photo of quartz")])
        gateway = LvlmGateway()
        gateway.register(ModelInfo("stub", "Stub", "stub"), stub)
        registry = registry_for(fixture_corpus, gateway, "stub")
        result = dispatch(
            registry, "sim_search_records_by_text", {"query": "quartz", "target": "image"}
        )
        assert result.ok
        assert result.payload["query"] == "a photo of quartz"
        assert stub.calls[0].system_prompt == load_prompt(REWRITE_TEXT_TO_IMAGE)

    def test_rewrite_uses_text_mode_for_title_target(self, fixture_corpus):
        stub = ScriptedLvlm([LvlmResponse(final_text="quartz specimens")])
        gateway = LvlmGateway()
        gateway.register(ModelInfo("stub", "Stub", "stub"), stub)
        registry = registry_for(fixture_corpus, gateway, "stub")
        result = dispatch(
            registry, "sim_search_records_by_text", {"query": "quartz", "target": "title"}
        )
        assert result.ok
        assert stub.calls[0].system_prompt == load_prompt(REWRITE_TEXT_TO_TEXT)

    def test_k_zero_is_a_parameter_fault(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus),
            "sim_search_records_by_text",
            {"query": "x", "k": 0},
        )
        assert not result.ok
        assert result.error_kind == "invalid_parameters"
        assert result.parameter_fault

    def test_empty_index_is_not_a_parameter_fault(self, fixture_corpus):
        embedder = fixture_corpus.embedder
        empty = SearchIndexes(
            record_image=HnswIndex(dim=32),
            record_title=HnswIndex(dim=32),
            collection_title=HnswIndex(dim=32),
            collection_description=HnswIndex(dim=32),
        )
        registry = build_tool_registry(
            store=fixture_corpus.bundle.store,
            lexical_index=fixture_corpus.bundle.lexical,
            indexes=empty,
            embedder=embedder,
        )
        result = dispatch(registry, "sim_search_records_by_text", {"query": "x"})
        assert not result.ok
        assert result.error_kind == "empty_index"
        assert not result.parameter_fault

    def test_collections_by_text_merges_both_indexes(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus),
            "sim_search_collections_by_text",
            {"query": "old scientific things", "k": 3},
        )
        assert result.ok
        ids = [h["murag_id"] for h in result.payload["hits"]]
        assert len(ids) == len(set(ids)) == 3
        scores = [h["score"] for h in result.payload["hits"]]
        assert scores == sorted(scores, reverse=True)


GOOSE_DETECTION = json.dumps(
    [
        {
            "name": "goose",
            "description": "bronze goose statue",
            "bounding_box": {"x": 100, "y": 100, "width": 50, "height": 50},
        }
    ]
)


def big_png(size=256) -> bytes:
    buffer = io.BytesIO()
    Image.new("RGB", (size, size), (90, 90, 110)).save(buffer, format="PNG")
    return buffer.getvalue()


class TestDetectionParsing:
    def test_schema_example(self):
        objects = parse_detected_objects(GOOSE_DETECTION, (256, 256))
        assert objects == [
            DetectedObject(
                name="goose",
                description="bronze goose statue",
                x=100,
                y=100,
                width=50,
                height=50,
            )
        ]

    def test_fenced_json_accepted(self):
        objects = parse_detected_objects(f"```json\n{GOOSE_DETECTION}\n```", None)
        assert objects[0].name == "goose"

    def test_prose_rejected(self):
        with pytest.raises(MalformedModelOutputError):
            parse_detected_objects("I see a goose standing on a plinth.", None)

    def test_box_outside_bounds_rejected(self):
        with pytest.raises(MalformedModelOutputError):
            parse_detected_objects(GOOSE_DETECTION, (120, 120))

    def test_zero_area_rejected(self):
        bad = json.dumps(
            [{"name": "x", "description": "", "bounding_box": {"x": 0, "y": 0, "width": 0, "height": 5}}]
        )
        with pytest.raises(MalformedModelOutputError):
            parse_detected_objects(bad, None)


class TestImageTools:
    def test_detect_objects_happy_path(self, fixture_corpus):
        gateway = make_gateway([LvlmResponse(final_text=GOOSE_DETECTION)])
        registry = registry_for(fixture_corpus, gateway, "stub")
        result = dispatch(
            registry,
            "image_detect_objects",
            {"image_name": "upload:museum"},
            uploads={"upload:museum": (big_png(), "image/png")},
        )
        assert result.ok
        assert result.payload == [json.loads(GOOSE_DETECTION)[0]]

    def test_detect_objects_retries_once_then_fails(self, fixture_corpus):
        stub = ScriptedLvlm(
            [
                LvlmResponse(final_text="definitely not json"),
                LvlmResponse(final_text="still prose"),
            ]
        )
        gateway = LvlmGateway()
        gateway.register(ModelInfo("stub", "Stub", "stub"), stub)
        registry = registry_for(fixture_corpus, gateway, "stub")
        result = dispatch(
            registry,
            "image_detect_objects",
            {"image_name": "upload:museum"},
            uploads={"upload:museum": (big_png(), "image/png")},
        )
        assert not result.ok
        assert result.error_kind == "malformed_model_output"
        assert len(stub.calls) == 2  # exactly one reprompt retry

    def test_detect_objects_retry_then_success(self, fixture_corpus):
        gateway = make_gateway(
            [LvlmResponse(final_text="oops"), LvlmResponse(final_text=GOOSE_DETECTION)]
        )
        registry = registry_for(fixture_corpus, gateway, "stub")
        result = dispatch(
            registry,
            "image_detect_objects",
            {"image_name": "upload:museum"},
            uploads={"upload:museum": (big_png(), "image/png")},
        )
        assert result.ok

    def test_vqa_scripted_answer(self, fixture_corpus):
        stub = ScriptedLvlm([LvlmResponse(final_text="a plinth")])
        gateway = LvlmGateway()
        gateway.register(ModelInfo("stub", "Stub", "stub"), stub)
        registry = registry_for(fixture_corpus, gateway, "stub")
        record = fixture_corpus.bundle.store.iter_records()[0]
        result = dispatch(
            registry,
            "image_vqa",
            {"image_name": record.image_name, "question": "What is under the statue?"},
        )
        assert result.ok
        assert result.payload == "a plinth"
        call = stub.calls[0]
        assert call.system_prompt == load_prompt(IMAGE_VQA)
        # metadata of the owning record travels with the question
        user_text = call.history[0].text()
        assert "What is under the statue?" in user_text
        assert "Title:" in user_text

    def test_caption_concise_flag(self, fixture_corpus):
        stub = ScriptedLvlm([LvlmResponse(final_text="a tiny caption")])
        gateway = LvlmGateway()
        gateway.register(ModelInfo("stub", "Stub", "stub"), stub)
        registry = registry_for(fixture_corpus, gateway, "stub")
        record = fixture_corpus.bundle.store.iter_records()[0]
        result = dispatch(
            registry,
            "image_caption",
            {"image_name": record.image_name, "concise": True},
        )
        assert result.ok
        assert "concise" in stub.calls[0].history[0].text()

    def test_unknown_image_not_found(self, fixture_corpus):
        gateway = make_gateway([LvlmResponse(final_text="unused")])
        registry = registry_for(fixture_corpus, gateway, "stub")
        result = dispatch(registry, "image_ocr", {"image_name": "nope.png"})
        assert not result.ok
        assert result.error_kind == "not_found"


class TestRegistry:
    def test_specs_roundtrip_for_fixture_calls(self, fixture_corpus):
        gateway = make_gateway([])
        registry = registry_for(fixture_corpus, gateway, "stub")
        fixture_calls = {
            "get_record": {"murag_id": "x"},
            "get_collection": {"name_or_id": "minerals"},
            "list_collections": {},
            "get_stats": {},
            "lexical_search_records": {"query": "quartz", "k": 3},
            "lexical_search_collections": {"query": "mineral"},
            "sim_search_records_by_text": {"query": "q", "target": "image", "k": 5},
            "sim_search_collections_by_text": {"query": "q", "target": "description"},
            "sim_search_records_by_image": {"image_name": "a.png", "k": 2},
            "image_vqa": {"image_name": "a.png", "question": "?"},
            "image_caption": {"image_name": "a.png", "concise": False},
            "image_ocr": {"image_name": "a.png"},
            "image_detect_objects": {"image_name": "a.png"},
        }
        from fundusx.lvlm import validate_tool_arguments

        specs = {s.name: s for s in registry.specs()}
        assert set(fixture_calls) == set(specs)
        for name, args in fixture_calls.items():
            assert validate_tool_arguments(specs[name], args) == []

    def test_unknown_tool(self, fixture_corpus):
        result = dispatch(registry_for(fixture_corpus), "warp_drive", {})
        assert not result.ok
        assert result.error_kind == "unknown_tool"

    def test_argument_validation_happens_before_execution(self, fixture_corpus):
        result = dispatch(
            registry_for(fixture_corpus), "get_record", {"murag_id": 42}
        )
        assert not result.ok
        assert result.error_kind == "invalid_parameters"
