from types import SimpleNamespace

import pytest

from fundusx.embedding import StubEmbedder
from fundusx.fixture import generate_fixture
from fundusx.hnsw import HnswParams
from fundusx.ingest import ingest, load_store_bundle


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The standard 3-collection / 12-record corpus, fully ingested."""
    base = tmp_path_factory.mktemp("corpus")
    manifest = generate_fixture(seed=42, n_collections=3, n_records=12, out_dir=base / "src")
    embedder = StubEmbedder(dimension=32)
    store_dir = base / "store"
    report = ingest(
        manifest,
        store_dir,
        embedder,
        hnsw_params=HnswParams(M=8, ef_construction=32, ef_search=64, seed=7),
    )
    bundle = load_store_bundle(store_dir)
    return SimpleNamespace(
        bundle=bundle,
        report=report,
        store_dir=store_dir,
        manifest_path=manifest,
        embedder=embedder,
    )
