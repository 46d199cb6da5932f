"""HTTP service exposing sessions, chat, model listing, and image retrieval.

All payload shapes are artifact-defined and versioned under /v1. Message
processing is synchronous: one request, one complete agent reply. Sessions
live in memory with TTL eviction; a run in flight holds the session's lock
and concurrent posts to the same session get 409.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from fastapi import FastAPI, Request, Response
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse
from starlette.datastructures import UploadFile

from .agent import (
    AgentConfig,
    AgentReply,
    AgentRuntime,
    ChatSession,
    PortalConfig,
    RECORD_TAG,
    Segment,
    TagSegment,
    TextSegment,
    build_system_prompt,
    new_session,
    parse_render_tags,
)
from .embedding import SUPPORTED_MEDIA_TYPES
from .ingest import StoreBundle, load_store_bundle
from .lvlm import (
    ChatPart,
    ChatTurn,
    EchoLvlm,
    LvlmGateway,
    LvlmResponse,
    ModelInfo,
    ToolCall,
    ToolSpec,
)
from .store import CorpusStore, NotFoundError
from .tools import build_tool_registry

logger = logging.getLogger(__name__)

API_PREFIX = "/v1"


@dataclass(frozen=True)
class ApiConfig:
    session_ttl: float = 3600.0
    max_upload_bytes: int = 8 * 1024 * 1024
    cors_origins: tuple[str, ...] = ()
    portal: PortalConfig = PortalConfig()
    agent: AgentConfig = AgentConfig()

    def __post_init__(self) -> None:
        if self.session_ttl <= 0:
            raise ValueError("session TTL must be positive")
        if self.max_upload_bytes <= 0:
            raise ValueError("upload limit must be positive")


def _error(status: int, kind: str, detail: str = "") -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": kind, "detail": detail})


class SessionManager:
    """In-memory sessions with TTL eviction and per-session run locks."""

    def __init__(self, ttl: float, clock: Callable[[], float] = time.time) -> None:
        self._ttl = ttl
        self._clock = clock
        self._sessions: dict[str, ChatSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def create(self, model_id: str, system_prompt: str) -> ChatSession:
        session_id = secrets.token_urlsafe(16)
        session = new_session(session_id, model_id, system_prompt, now=self._clock())
        with self._guard:
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        return session

    def get(self, session_id: str) -> ChatSession | None:
        now = self._clock()
        with self._guard:
            session = self._sessions.get(session_id)
            if session is None:
                return None
            if now - session.last_active > self._ttl:
                del self._sessions[session_id]
                del self._locks[session_id]
                return None
            return session

    def lock_for(self, session_id: str) -> threading.Lock | None:
        with self._guard:
            return self._locks.get(session_id)


class DemoLvlm:
    """Offline default model: lexically searches, then renders the hits.

    Lets the whole stack (loop, tools, render tags, cards) be exercised by
    hand without any real model behind it.
    """

    def generate(
        self,
        system_prompt: str,
        history: Sequence[ChatTurn],
        tools: Sequence[ToolSpec],
        model_id: str,
    ) -> LvlmResponse:
        last_user = next((t for t in reversed(history) if t.role == "user"), None)
        query = last_user.text().strip() if last_user else ""
        if history and history[-1].role == "tool":
            try:
                hits = json.loads(history[-1].text())
            except ValueError:
                hits = []
            if hits:
                tags = " ".join(
                    f"<{RECORD_TAG} murag_id='{h['murag_id']}' />" for h in hits[:3]
                )
                return LvlmResponse(
                    final_text=f"Here is what I found for *{query}*:\n\n{tags}"
                )
            return LvlmResponse(
                final_text=f"I could not find anything matching *{query}*."
            )
        if not query or not any(t.name == "lexical_search_records" for t in tools):
            return LvlmResponse(
                final_text="Hello! Ask me about the collections, e.g. try a keyword."
            )
        return LvlmResponse(
            tool_calls=(
                ToolCall(
                    id="demo_1",
                    name="lexical_search_records",
                    arguments={"query": query, "k": 3},
                ),
            )
        )


def _record_card(store: CorpusStore, murag_id: str) -> dict[str, Any]:
    record = store.get_record(murag_id)
    collection_title = ""
    try:
        collection_title = store.get_collection(record.collection_name).title
    except NotFoundError:
        pass
    return {
        "murag_id": record.murag_id,
        "title": store.display_title(record),
        "record_title": record.title,
        "fundus_id": record.fundus_id,
        "catalogno": record.catalogno,
        "collection_name": record.collection_name,
        "collection_title": collection_title,
        "image_url": f"{API_PREFIX}/images/{record.image_name}",
        "details": dict(record.details),
    }


def _collection_card(store: CorpusStore, murag_id: str) -> dict[str, Any]:
    collection = store.get_collection(murag_id)
    count = store.stats().records_per_collection.get(collection.collection_name, 0)
    return {
        "murag_id": collection.murag_id,
        "collection_name": collection.collection_name,
        "title": collection.title,
        "title_de": collection.title_de,
        "description": collection.description,
        "description_de": collection.description_de,
        "contacts": [c.to_json() for c in collection.contacts],
        "record_count": count,
    }


def _segments_payload(store: CorpusStore, segments: Sequence[Segment]) -> list[dict[str, Any]]:
    payload: list[dict[str, Any]] = []
    for segment in segments:
        if isinstance(segment, TextSegment):
            payload.append({"kind": "text", "text": segment.text})
        elif isinstance(segment, TagSegment):
            try:
                if segment.tag.kind == RECORD_TAG:
                    payload.append(
                        {"kind": "record", "record": _record_card(store, segment.tag.murag_id)}
                    )
                else:
                    payload.append(
                        {
                            "kind": "collection",
                            "collection": _collection_card(store, segment.tag.murag_id),
                        }
                    )
            except NotFoundError:
                # resolved at reply time but deleted since: degrade to text
                payload.append({"kind": "text", "text": segment.tag.serialize()})
    return payload


@dataclass
class ServerState:
    bundle: StoreBundle | None
    gateway: LvlmGateway | None
    sessions: SessionManager
    runtime: AgentRuntime | None
    config: ApiConfig
    ready: bool = False
    trace_log: list[dict[str, Any]] = field(default_factory=list)


def build_gateway_from_entries(entries: Sequence[dict[str, Any]]) -> LvlmGateway:
    """Construct the model registry from config entries, preserving order."""
    from .lvlm import OpenAiCompatibleLvlm, ScriptedLvlm, load_script

    gateway = LvlmGateway()
    for entry in entries:
        provider_kind = entry.get("provider", "stub")
        info = ModelInfo(
            model_id=entry["model_id"],
            display_name=entry.get("display_name", entry["model_id"]),
            provider=provider_kind,
        )
        if provider_kind == "stub":
            if "script" in entry:
                gateway.register(info, ScriptedLvlm(load_script(entry["script"])))
            else:
                gateway.register(info, EchoLvlm())
        elif provider_kind == "demo":
            gateway.register(info, DemoLvlm())
        elif provider_kind == "openai-compatible":
            gateway.register(
                info,
                OpenAiCompatibleLvlm(
                    endpoint=entry["endpoint"],
                    api_key=entry.get("api_key", ""),
                    timeout=float(entry.get("timeout", 60.0)),
                ),
            )
        else:
            raise ValueError(f"unknown provider kind {provider_kind!r}")
    gateway.ensure_ready()
    return gateway


def create_app(
    bundle: StoreBundle | None,
    gateway: LvlmGateway | None,
    embedder=None,
    config: ApiConfig | None = None,
    analysis_model: str | None = None,
    clock: Callable[[], float] = time.time,
) -> FastAPI:
    """Assemble the service from components.

    Passing ``bundle=None`` yields a not-ready app (health answers 503), which
    is also the state of a real deployment before its store finished loading.
    """
    cfg = config or ApiConfig()
    app = FastAPI(title="fundusx", version="1.0")

    state = ServerState(
        bundle=bundle,
        gateway=gateway,
        sessions=SessionManager(cfg.session_ttl, clock),
        runtime=None,
        config=cfg,
    )
    if bundle is not None and gateway is not None:
        gateway.ensure_ready()
        registry = build_tool_registry(
            store=bundle.store,
            lexical_index=bundle.lexical,
            indexes=bundle.indexes,
            embedder=embedder,
            gateway=gateway,
            analysis_model=analysis_model or gateway.list_models()[0].model_id,
        )
        state.runtime = AgentRuntime(
            gateway=gateway,
            registry=registry,
            store=bundle.store,
            config=cfg.agent,
            trace_sink=state.trace_log.append,
        )
        state.ready = True
    app.state.fundusx = state

    if cfg.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(cfg.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def not_ready() -> JSONResponse:
        return _error(503, "not_ready", "store is not loaded yet")

    @app.get(f"{API_PREFIX}/health")
    def health() -> Response:
        if not state.ready or state.bundle is None:
            return not_ready()
        stats = state.bundle.store.stats()
        return JSONResponse(
            {
                "status": "ok",
                "records": stats.total_records,
                "collections": stats.total_collections,
                "indexes": {
                    "record_image": len(state.bundle.indexes.record_image),
                    "record_title": len(state.bundle.indexes.record_title),
                    "collection_title": len(state.bundle.indexes.collection_title),
                    "collection_description": len(
                        state.bundle.indexes.collection_description
                    ),
                    "lexical_docs": len(state.bundle.lexical),
                },
            }
        )

    @app.get(f"{API_PREFIX}/models")
    def list_models() -> Response:
        if state.gateway is None:
            return not_ready()
        return JSONResponse(
            {
                "models": [
                    {
                        "model_id": m.model_id,
                        "display_name": m.display_name,
                        "provider": m.provider,
                    }
                    for m in state.gateway.list_models()
                ]
            }
        )

    @app.post(f"{API_PREFIX}/sessions")
    def create_session(body: dict) -> Response:
        if not state.ready or state.gateway is None:
            return not_ready()
        model_id = body.get("model_id", "")
        if not state.gateway.has_model(model_id):
            return _error(400, "unknown_model", f"no model {model_id!r}")
        session = state.sessions.create(model_id, build_system_prompt(cfg.portal))
        return JSONResponse(status_code=201, content={"session_id": session.session_id})

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/messages")
    async def post_message(session_id: str, request: Request) -> Response:
        if not state.ready or state.runtime is None:
            return not_ready()
        session = state.sessions.get(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")

        content_length = request.headers.get("content-length")
        if content_length and int(content_length) > cfg.max_upload_bytes:
            return _error(413, "payload_too_large", "request exceeds the upload limit")

        text = ""
        image_bytes: bytes | None = None
        image_media: str | None = None
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            raw_text = form.get("text")
            text = raw_text if isinstance(raw_text, str) else ""
            upload = form.get("image")
            if isinstance(upload, UploadFile):
                image_bytes = await upload.read()
                image_media = upload.content_type or ""
        else:
            try:
                body = json.loads(await request.body() or b"{}")
            except ValueError:
                return _error(400, "invalid_request", "body is not valid JSON")
            text = str(body.get("text", ""))

        if image_bytes is not None:
            if len(image_bytes) > cfg.max_upload_bytes:
                return _error(413, "payload_too_large", "image exceeds the upload limit")
            if image_media not in SUPPORTED_MEDIA_TYPES:
                return _error(
                    415, "unsupported_media_type", f"media type {image_media!r}"
                )
        if not text and image_bytes is None:
            return _error(400, "invalid_request", "message needs text or an image")

        lock = state.sessions.lock_for(session_id)
        if lock is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        if not lock.acquire(blocking=False):
            return _error(409, "run_in_flight", "a message is already being processed")
        try:
            parts: list[ChatPart] = []
            if text:
                parts.append(ChatPart(text=text))
            if image_bytes is not None:
                image_id = f"upload:{uuid.uuid4().hex[:12]}"
                session.uploads[image_id] = (image_bytes, image_media or "")
                parts.append(
                    ChatPart(
                        image=image_bytes, media_type=image_media, image_id=image_id
                    )
                )
            turn = ChatTurn(role="user", parts=tuple(parts))
            # the loop blocks on model and tool calls; keep the event loop free
            reply: AgentReply = await run_in_threadpool(
                state.runtime.run, session, turn, session.uploads
            )
            session.touch(clock())
            trace_id = uuid.uuid4().hex
            return JSONResponse(
                {
                    "trace_id": trace_id,
                    "stop_reason": reply.stop_reason,
                    "markdown": reply.markdown_text,
                    "segments": _segments_payload(state.bundle.store, reply.segments),
                }
            )
        finally:
            lock.release()

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/history")
    def get_history(session_id: str) -> Response:
        if not state.ready or state.bundle is None:
            return not_ready()
        session = state.sessions.get(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        turns = []
        for turn in session.history:
            if turn.role == "user":
                turns.append(
                    {
                        "role": "user",
                        "text": turn.text(),
                        "has_image": any(p.is_image for p in turn.parts),
                    }
                )
            elif turn.role == "assistant" and not turn.tool_calls:
                segments, _tags = parse_render_tags(turn.text())
                turns.append(
                    {
                        "role": "assistant",
                        "text": turn.text(),
                        "segments": _segments_payload(state.bundle.store, segments),
                    }
                )
        return JSONResponse({"session_id": session_id, "turns": turns})

    @app.get(f"{API_PREFIX}/images/{{image_name}}")
    def get_image(image_name: str) -> Response:
        if not state.ready or state.bundle is None:
            return not_ready()
        try:
            data, media_type = state.bundle.store.get_image(image_name)
        except NotFoundError:
            return _error(404, "unknown_image", f"no image {image_name!r}")
        return Response(content=data, media_type=media_type)

    return app


def create_app_from_store(
    store_dir: Path,
    model_entries: Sequence[dict[str, Any]] | None = None,
    config: ApiConfig | None = None,
) -> FastAPI:
    """Production assembly: load a built store and configure the registry."""
    from .embedding import StubEmbedder

    bundle = load_store_bundle(store_dir)
    entries = list(model_entries or [])
    if not entries:
        entries = [
            {"model_id": "demo", "display_name": "Offline demo agent", "provider": "demo"},
            {"model_id": "echo", "display_name": "Echo stub", "provider": "stub"},
        ]
    gateway = build_gateway_from_entries(entries)
    embedder = StubEmbedder(dimension=bundle.dimension)
    return create_app(bundle, gateway, embedder=embedder, config=config)
