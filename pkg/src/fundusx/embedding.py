"""Gateway to a text/image embedding provider in one aligned cross-modal space.

Two interchangeable implementations sit behind ``EmbeddingProvider``: an HTTP
client for a remote embedding service, and a deterministic stub that projects
input bytes to stable pseudo-embeddings so the retrieval plumbing is testable
offline. The stub makes no attempt at semantic alignment.

Vectors are unit-normalized client-side unconditionally (idempotent if the
provider already normalizes).
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .model import normalize_vector

DEFAULT_DIMENSION = 1152  # native width of the default cross-modal checkpoint

SUPPORTED_MEDIA_TYPES = ("image/png", "image/jpeg")


class EmbeddingError(Exception):
    pass


class ProviderUnreachableError(EmbeddingError):
    pass


class MalformedResponseError(EmbeddingError):
    pass


class UnsupportedMediaTypeError(EmbeddingError):
    pass


class OversizePayloadError(EmbeddingError):
    pass


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    endpoint: str = ""
    dimension: int = DEFAULT_DIMENSION
    timeout: float = 30.0
    retries: int = 2
    max_image_bytes: int = 8 * 1024 * 1024
    max_concurrency: int = 8

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


class EmbeddingProvider(Protocol):
    dimension: int

    def embed_text(self, texts: Sequence[str]) -> list[np.ndarray]: ...

    def embed_image(self, image: bytes, media_type: str) -> np.ndarray: ...


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("texts must be a non-empty list")
    for i, text in enumerate(texts):
        if not text:
            raise ValueError(f"texts[{i}] is empty")


def _check_image(image: bytes, media_type: str, limit: int) -> None:
    if media_type not in SUPPORTED_MEDIA_TYPES:
        raise UnsupportedMediaTypeError(f"unsupported media type {media_type!r}")
    if len(image) > limit:
        raise OversizePayloadError(f"image of {len(image)} bytes exceeds limit {limit}")


class StubEmbedder:
    """Hash-seeded fake embeddings: pure, stable, and collision-resistant.

    Input bytes are hashed (with a domain tag separating text from images)
    into a 64-bit seed that drives standard-normal deviates, which are then
    normalized. Identical input always yields the identical vector.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0,
                 max_image_bytes: int = 8 * 1024 * 1024) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.max_image_bytes = max_image_bytes

    def _project(self, domain: bytes, payload: bytes) -> np.ndarray:
        h = hashlib.blake2b(digest_size=8, key=self.seed.to_bytes(8, "little"))
        h.update(domain)
        h.update(payload)
        seed64 = int.from_bytes(h.digest(), "little")
        deviates = np.random.Generator(np.random.PCG64(seed64)).standard_normal(self.dimension)
        return normalize_vector(deviates)

    def embed_text(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        return [self._project(b"text\x1f", t.encode("utf-8")) for t in texts]

    def embed_image(self, image: bytes, media_type: str) -> np.ndarray:
        _check_image(image, media_type, self.max_image_bytes)
        return self._project(b"image\x1f", image)


class RemoteEmbedder:
    """HTTP client for the embedding service.

    Wire format: ``POST {endpoint}/embed/text`` with ``{"texts": [...]}``, or
    ``POST {endpoint}/embed/image`` with the raw image body and its media type
    as Content-Type. Both answer ``{"vectors": [[...], ...]}``.
    """

    def __init__(
        self,
        config: EmbeddingProviderConfig,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        if not config.endpoint:
            raise ValueError("remote embedder requires an endpoint URL")
        self.config = config
        self.dimension = config.dimension
        self._client = httpx.Client(
            base_url=config.endpoint, timeout=config.timeout, transport=transport
        )
        self._gate = threading.Semaphore(config.max_concurrency)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, **kwargs) -> httpx.Response:
        last_error: Exception | None = None
        for _ in range(self.config.retries + 1):
            try:
                with self._gate:
                    response = self._client.post(path, **kwargs)
                response.raise_for_status()
                return response
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
        raise ProviderUnreachableError(
            f"embedding provider unreachable after {self.config.retries + 1} attempts: {last_error}"
        )

    def _parse_vectors(self, response: httpx.Response, expected: int) -> list[np.ndarray]:
        try:
            body = response.json()
            vectors = body["vectors"]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponseError(f"no 'vectors' array in response: {exc}") from exc
        if not isinstance(vectors, list) or len(vectors) != expected:
            raise MalformedResponseError(
                f"expected {expected} vectors, got {len(vectors) if isinstance(vectors, list) else type(vectors)}"
            )
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != self.dimension:
                raise MalformedResponseError(
                    f"vector of dimension {arr.shape} does not match configured {self.dimension}"
                )
            out.append(normalize_vector(arr))
        return out

    def embed_text(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        response = self._post("/embed/text", json={"texts": list(texts)})
        return self._parse_vectors(response, expected=len(texts))

    def embed_image(self, image: bytes, media_type: str) -> np.ndarray:
        _check_image(image, media_type, self.config.max_image_bytes)
        response = self._post(
            "/embed/image", content=image, headers={"Content-Type": media_type}
        )
        return self._parse_vectors(response, expected=1)[0]


def build_embedder(
    kind: str,
    config: EmbeddingProviderConfig | None = None,
    transport: httpx.BaseTransport | None = None,
) -> EmbeddingProvider:
    cfg = config or EmbeddingProviderConfig()
    if kind == "stub":
        return StubEmbedder(dimension=cfg.dimension, max_image_bytes=cfg.max_image_bytes)
    if kind == "remote":
        return RemoteEmbedder(cfg, transport=transport)
    raise ValueError(f"unknown embedder kind {kind!r}")
