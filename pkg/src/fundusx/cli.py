"""Command-line interface: corpus fixtures, ingest, ad-hoc queries, serving."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .bm25 import COLLECTION_DESCRIPTION, COLLECTION_TITLE, RECORD_TITLE
from .embedding import EmbeddingProviderConfig, build_embedder
from .fixture import generate_fixture
from .hnsw import HnswParams
from .ingest import IngestError, ManifestError, ingest, load_store_bundle


@click.group()
def main() -> None:
    """Explore scientific collections: ingest data, query indexes, serve chat."""


@main.command("fixture")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--collections", "n_collections", type=int, default=3, show_default=True)
@click.option("--records", "n_records", type=int, default=12, show_default=True)
def fixture_cmd(out_dir: Path, seed: int, n_collections: int, n_records: int) -> None:
    """Generate a synthetic corpus manifest with placeholder images."""
    try:
        manifest = generate_fixture(seed, n_collections, n_records, out_dir)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {manifest}")


@main.command("ingest")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--embedder", "embedder_kind", type=click.Choice(["stub", "remote"]), default="stub", show_default=True)
@click.option("--endpoint", default="", help="Embedding service URL (remote embedder).")
@click.option("--dim", type=int, default=None, help="Embedding dimension (defaults to the provider's).")
@click.option("--image-root", type=click.Path(path_type=Path), default=None)
@click.option("--hnsw-m", type=int, default=16, show_default=True)
@click.option("--hnsw-ef-construction", type=int, default=200, show_default=True)
@click.option("--hnsw-ef-search", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True, help="HNSW level-sampling seed.")
def ingest_cmd(
    manifest_path: Path,
    out_dir: Path,
    embedder_kind: str,
    endpoint: str,
    dim: int | None,
    image_root: Path | None,
    hnsw_m: int,
    hnsw_ef_construction: int,
    hnsw_ef_search: int,
    seed: int,
) -> None:
    """Validate a manifest, embed all fields, and build the store."""
    embed_config = EmbeddingProviderConfig(
        endpoint=endpoint, dimension=dim if dim else (64 if embedder_kind == "stub" else 1152)
    )
    try:
        embedder = build_embedder(embedder_kind, embed_config)
        report = ingest(
            manifest_path,
            out_dir,
            embedder,
            hnsw_params=HnswParams(
                M=hnsw_m,
                ef_construction=hnsw_ef_construction,
                ef_search=hnsw_ef_search,
                seed=seed,
            ),
            image_root=image_root,
        )
    except ManifestError as exc:
        raise click.ClickException(f"manifest not usable: {exc}")
    except (IngestError, ValueError) as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(report.to_json(), indent=2))
    if report.rejected:
        click.echo(f"warning: {len(report.rejected)} entries rejected", err=True)


@main.command("stats")
@click.option("--store", "store_dir", type=click.Path(path_type=Path), required=True)
def stats_cmd(store_dir: Path) -> None:
    """Print the totals of a built store."""
    try:
        bundle = load_store_bundle(store_dir)
    except IngestError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(bundle.store.stats().to_json(), indent=2))


@main.command("search")
@click.option("--store", "store_dir", type=click.Path(path_type=Path), required=True)
@click.option("--query", required=True)
@click.option(
    "--mode",
    type=click.Choice(
        ["lexical-records", "lexical-collections", "records-by-text", "collections-by-text"]
    ),
    default="lexical-records",
    show_default=True,
)
@click.option("-k", type=int, default=10, show_default=True)
def search_cmd(store_dir: Path, query: str, mode: str, k: int) -> None:
    """Ad-hoc index queries for debugging a built store."""
    try:
        bundle = load_store_bundle(store_dir)
    except IngestError as exc:
        raise click.ClickException(str(exc))
    if mode == "lexical-records":
        hits = bundle.lexical.search(query, k, kinds=(RECORD_TITLE,))
        rows = [{"murag_id": h.id, "score": h.score} for h in hits]
    elif mode == "lexical-collections":
        hits = bundle.lexical.search(query, k, kinds=(COLLECTION_TITLE, COLLECTION_DESCRIPTION))
        rows = [{"murag_id": h.id, "kind": h.kind, "score": h.score} for h in hits]
    else:
        from .embedding import StubEmbedder
        from .hnsw import EmptyIndexError

        embedder = StubEmbedder(dimension=bundle.dimension)
        vector = embedder.embed_text([query])[0]
        index = (
            bundle.indexes.record_image
            if mode == "records-by-text"
            else bundle.indexes.collection_title
        )
        try:
            rows = [{"murag_id": h.id, "score": h.score} for h in index.search(vector, k)]
        except EmptyIndexError as exc:
            raise click.ClickException(str(exc))
    for row in rows:
        click.echo(json.dumps(row))
    if not rows:
        click.echo("no matches", err=True)


@main.command("serve")
@click.option("--store", "store_dir", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--models", "models_path", type=click.Path(path_type=Path), default=None,
              help="JSON file with model registry entries.")
def serve_cmd(store_dir: Path, host: str, port: int, models_path: Path | None) -> None:
    """Run the chat API over a built store (offline demo models by default)."""
    try:
        import uvicorn
    except ImportError:
        click.echo("uvicorn is required to serve (pip install uvicorn)", err=True)
        sys.exit(1)
    from .server import create_app_from_store

    entries = None
    if models_path is not None:
        entries = json.loads(models_path.read_text(encoding="utf-8"))
    try:
        app = create_app_from_store(store_dir, model_entries=entries)
    except IngestError as exc:
        raise click.ClickException(str(exc))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
