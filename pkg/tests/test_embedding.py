import json

import httpx
import numpy as np
import pytest

from fundusx.embedding import (
    EmbeddingProviderConfig,
    MalformedResponseError,
    OversizePayloadError,
    ProviderUnreachableError,
    RemoteEmbedder,
    StubEmbedder,
    UnsupportedMediaTypeError,
    build_embedder,
)

PNG_A = b"\x89PNG\r\n\x1a\n" + b"A" * 64
PNG_B = b"\x89PNG\r\n\x1a\n" + b"B" * 64


class TestStubEmbedder:
    def test_text_determinism(self):
        stub = StubEmbedder(dimension=32)
        a = stub.embed_text(["a"])[0]
        b = stub.embed_text(["a"])[0]
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        stub = StubEmbedder(dimension=64)
        for vec in stub.embed_text(["alpha", "beta", "gamma"]):
            assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)
            assert vec.shape == (64,)

    def test_order_preserved_and_distinct(self):
        stub = StubEmbedder(dimension=32)
        vecs = stub.embed_text(["one", "two"])
        again = stub.embed_text(["two", "one"])
        assert np.array_equal(vecs[0], again[1])
        assert np.array_equal(vecs[1], again[0])
        assert not np.array_equal(vecs[0], vecs[1])

    def test_image_determinism(self):
        stub = StubEmbedder(dimension=32)
        assert np.array_equal(
            stub.embed_image(PNG_A, "image/png"), stub.embed_image(PNG_A, "image/png")
        )

    def test_different_images_not_collinear(self):
        stub = StubEmbedder(dimension=32)
        a = stub.embed_image(PNG_A, "image/png")
        b = stub.embed_image(PNG_B, "image/png")
        assert float(a @ b) < 1.0 - 1e-6

    def test_unsupported_media_type(self):
        stub = StubEmbedder(dimension=32)
        with pytest.raises(UnsupportedMediaTypeError):
            stub.embed_image(PNG_A, "image/tiff")

    def test_oversize_payload(self):
        stub = StubEmbedder(dimension=32, max_image_bytes=16)
        with pytest.raises(OversizePayloadError):
            stub.embed_image(PNG_A, "image/png")

    def test_empty_inputs_rejected(self):
        stub = StubEmbedder(dimension=32)
        with pytest.raises(ValueError):
            stub.embed_text([])
        with pytest.raises(ValueError):
            stub.embed_text(["ok", ""])

    def test_text_image_domains_separated(self):
        stub = StubEmbedder(dimension=32)
        text_vec = stub.embed_text([PNG_A.decode("latin-1")])[0]
        image_vec = stub.embed_image(PNG_A, "image/png")
        assert not np.array_equal(text_vec, image_vec)


def recorded_transport(vectors_by_count):
    """Transport double returning canned vectors, one per requested input."""

    def handler(request: httpx.Request) -> httpx.Response:
        if request.url.path.endswith("/embed/text"):
            n = len(json.loads(request.content)["texts"])
        else:
            n = 1
        return httpx.Response(200, json={"vectors": vectors_by_count(n)})

    return httpx.MockTransport(handler)


class TestRemoteEmbedder:
    def config(self, **kw):
        defaults = dict(endpoint="http://embed.test", dimension=4, retries=1)
        defaults.update(kw)
        return EmbeddingProviderConfig(**defaults)

    def test_known_vector_passes_through(self):
        transport = recorded_transport(lambda n: [[0.5, 0.5, 0.5, 0.5]] * n)
        remote = RemoteEmbedder(self.config(), transport=transport)
        vec = remote.embed_text(["anything"])[0]
        assert vec == pytest.approx(np.array([0.5, 0.5, 0.5, 0.5]), abs=1e-9)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)

    def test_batch_order_preserved(self):
        def vectors(n):
            return [[float(i + 1), 0.0, 0.0, 0.0] for i in range(n)]

        remote = RemoteEmbedder(self.config(), transport=recorded_transport(vectors))
        vecs = remote.embed_text(["a", "b", "c"])
        # all normalize to e1, so check count and shape
        assert len(vecs) == 3
        for vec in vecs:
            assert vec == pytest.approx(np.array([1.0, 0.0, 0.0, 0.0]), abs=1e-9)

    def test_image_upload_roundtrip(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["content_type"] = request.headers["content-type"]
            seen["body"] = request.content
            return httpx.Response(200, json={"vectors": [[0.0, 1.0, 0.0, 0.0]]})

        remote = RemoteEmbedder(self.config(), transport=httpx.MockTransport(handler))
        vec = remote.embed_image(PNG_A, "image/png")
        assert seen["content_type"] == "image/png"
        assert seen["body"] == PNG_A
        assert vec == pytest.approx(np.array([0.0, 1.0, 0.0, 0.0]), abs=1e-9)

    def test_unreachable_after_retries(self):
        attempts = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            attempts["n"] += 1
            raise httpx.ConnectError("refused", request=request)

        remote = RemoteEmbedder(self.config(retries=2), transport=httpx.MockTransport(handler))
        with pytest.raises(ProviderUnreachableError):
            remote.embed_text(["x"])
        assert attempts["n"] == 3

    def test_malformed_response(self):
        transport = httpx.MockTransport(
            lambda request: httpx.Response(200, json={"nope": []})
        )
        remote = RemoteEmbedder(self.config(), transport=transport)
        with pytest.raises(MalformedResponseError):
            remote.embed_text(["x"])

    def test_wrong_dimension_rejected(self):
        transport = recorded_transport(lambda n: [[1.0, 2.0]] * n)
        remote = RemoteEmbedder(self.config(), transport=transport)
        with pytest.raises(MalformedResponseError):
            remote.embed_text(["x"])

    def test_wrong_count_rejected(self):
        transport = httpx.MockTransport(
            lambda request: httpx.Response(200, json={"vectors": [[1.0, 0, 0, 0]]})
        )
        remote = RemoteEmbedder(self.config(), transport=transport)
        with pytest.raises(MalformedResponseError):
            remote.embed_text(["a", "b"])


def test_build_embedder_kinds():
    assert isinstance(build_embedder("stub"), StubEmbedder)
    cfg = EmbeddingProviderConfig(endpoint="http://x", dimension=8)
    assert isinstance(build_embedder("remote", cfg), RemoteEmbedder)
    with pytest.raises(ValueError):
        build_embedder("quantum")
