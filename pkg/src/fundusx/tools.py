"""The agent's tools: database lookup, lexical search, similarity search with
query rewriting, and LVLM-backed image analysis.

Tools never raise into the agent loop. Failures become structured tool
messages ``{"error": kind, "detail": ...}``; ``parameter_fault`` tells the
loop whether the model may retry the tool with corrected arguments.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from PIL import Image

from . import prompts
from .bm25 import (
    Bm25Index,
    COLLECTION_DESCRIPTION,
    COLLECTION_TITLE,
    RECORD_TITLE,
)
from .embedding import EmbeddingProvider
from .hnsw import EmptyIndexError, HnswIndex, SearchHit
from .lvlm import (
    ChatPart,
    ChatTurn,
    LvlmGateway,
    ParamSpec,
    ToolCall,
    ToolSpec,
    validate_tool_arguments,
)
from .store import CorpusStore, NotFoundError

DEFAULT_K = 10

TEXT_TO_IMAGE = "text-to-image"
TEXT_TO_TEXT = "text-to-text"

_REWRITE_PROMPTS = {
    TEXT_TO_IMAGE: prompts.REWRITE_TEXT_TO_IMAGE,
    TEXT_TO_TEXT: prompts.REWRITE_TEXT_TO_TEXT,
}


class ToolFault(Exception):
    """Internal signal converted into an error tool message.

    parameter_fault marks errors the model itself can fix by correcting its
    arguments (bad ids, invalid values); everything else tells the loop to
    stop offering the tool for the rest of the run.
    """

    def __init__(self, kind: str, detail: str, parameter_fault: bool) -> None:
        super().__init__(detail)
        self.kind = kind
        self.detail = detail
        self.parameter_fault = parameter_fault


class MalformedModelOutputError(ToolFault):
    def __init__(self, detail: str) -> None:
        super().__init__("malformed_model_output", detail, parameter_fault=False)


@dataclass(frozen=True)
class DetectedObject:
    name: str
    description: str
    x: int
    y: int
    width: int
    height: int

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "bounding_box": {
                "x": self.x,
                "y": self.y,
                "width": self.width,
                "height": self.height,
            },
        }


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_detected_objects(
    text: str, image_size: tuple[int, int] | None = None
) -> list[DetectedObject]:
    """Parse the object-detection JSON contract, validating bounding boxes."""
    body = text.strip()
    fenced = _FENCE_RE.search(body)
    if fenced:
        body = fenced.group(1).strip()
    try:
        raw = json.loads(body)
    except ValueError as exc:
        raise MalformedModelOutputError(f"detection output is not JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise MalformedModelOutputError("detection output must be a JSON array")
    objects: list[DetectedObject] = []
    for i, entry in enumerate(raw):
        try:
            box = entry["bounding_box"]
            obj = DetectedObject(
                name=str(entry["name"]),
                description=str(entry.get("description", "")),
                x=int(box["x"]),
                y=int(box["y"]),
                width=int(box["width"]),
                height=int(box["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedModelOutputError(f"malformed detection entry {i}: {exc}") from exc
        if obj.x < 0 or obj.y < 0 or obj.width <= 0 or obj.height <= 0:
            raise MalformedModelOutputError(
                f"detection entry {i} has an invalid bounding box"
            )
        if image_size is not None:
            img_w, img_h = image_size
            if obj.x + obj.width > img_w or obj.y + obj.height > img_h:
                raise MalformedModelOutputError(
                    f"detection entry {i} exceeds image bounds {img_w}x{img_h}"
                )
        objects.append(obj)
    return objects


@dataclass
class SearchIndexes:
    """One vector index per embedded field."""

    record_image: HnswIndex
    record_title: HnswIndex
    collection_title: HnswIndex
    collection_description: HnswIndex


@dataclass(frozen=True)
class ToolContext:
    """Per-dispatch state: images the user uploaded in this session."""

    uploads: Mapping[str, tuple[bytes, str]] = field(default_factory=dict)


@dataclass(frozen=True)
class ToolResult:
    call: ToolCall
    ok: bool
    payload: Any = None
    error_kind: str | None = None
    error_detail: str | None = None
    parameter_fault: bool = False

    def message_text(self) -> str:
        if self.ok:
            return json.dumps(self.payload, ensure_ascii=False)
        return json.dumps(
            {"error": self.error_kind, "detail": self.error_detail}, ensure_ascii=False
        )


class QueryRewriter:
    """LVLM pass reformulating a query into a retrieval-friendly form.

    Never raises and never returns an empty string: on any provider problem
    the original query is used unchanged.
    """

    def __init__(self, gateway: LvlmGateway | None, model_id: str | None) -> None:
        self._gateway = gateway
        self._model_id = model_id

    def rewrite(self, raw: str, mode: str) -> str:
        if not raw:
            raise ValueError("query must be non-empty")
        if mode not in _REWRITE_PROMPTS:
            raise ValueError(f"unknown rewrite mode {mode!r}")
        if self._gateway is None or self._model_id is None:
            return raw
        try:
            response = self._gateway.generate(
                system_prompt=prompts.load_prompt(_REWRITE_PROMPTS[mode]),
                history=[ChatTurn.user_text(raw)],
                tools=[],
                model_id=self._model_id,
            )
        except Exception:
            return raw
        if response.final_text:
            return response.final_text
        return raw


def _hits_json(hits: list[SearchHit], store: CorpusStore) -> list[dict[str, Any]]:
    out = []
    for hit in hits:
        entry: dict[str, Any] = {"murag_id": hit.id, "score": hit.score}
        try:
            record = store.get_record(hit.id)
            entry["title"] = store.display_title(record)
            entry["collection_name"] = record.collection_name
        except NotFoundError:
            try:
                entry["title"] = store.get_collection(hit.id).title
            except NotFoundError:
                pass
        out.append(entry)
    return out


class DatabaseTools:
    def __init__(self, store: CorpusStore) -> None:
        self._store = store

    def get_record(self, murag_id: str) -> dict[str, Any]:
        record = self._store.get_record(murag_id)
        payload = record.to_json()
        payload["display_title"] = self._store.display_title(record)
        return payload

    def get_collection(self, name_or_id: str) -> dict[str, Any]:
        return self._store.get_collection(name_or_id).to_json()

    def list_collections(self) -> list[dict[str, Any]]:
        return [
            {
                "murag_id": c.murag_id,
                "collection_name": c.collection_name,
                "title": c.title,
                "description": c.description,
            }
            for c in self._store.list_collections()
        ]

    def get_stats(self) -> dict[str, Any]:
        return self._store.stats().to_json()


class LexicalTools:
    def __init__(self, index: Bm25Index, store: CorpusStore, default_k: int = DEFAULT_K) -> None:
        self._index = index
        self._store = store
        self._default_k = default_k

    def search_records(self, query: str, k: int | None = None) -> list[dict[str, Any]]:
        k = self._check_k(k)
        hits = self._index.search(query, k, kinds=(RECORD_TITLE,))
        return _hits_json([SearchHit(id=h.id, score=h.score) for h in hits], self._store)

    def search_collections(self, query: str, k: int | None = None) -> list[dict[str, Any]]:
        k = self._check_k(k)
        # a collection may match via its title and its description; keep the
        # best score per collection
        raw = self._index.search(
            query, k=max(k * 4, k), kinds=(COLLECTION_TITLE, COLLECTION_DESCRIPTION)
        )
        best: dict[str, float] = {}
        for hit in raw:
            if hit.id not in best or hit.score > best[hit.id]:
                best[hit.id] = hit.score
        merged = [SearchHit(id=i, score=s) for i, s in best.items()]
        merged.sort(key=lambda h: (-h.score, h.id))
        return _hits_json(merged[:k], self._store)

    def _check_k(self, k: int | None) -> int:
        if k is None:
            return self._default_k
        if k < 1:
            raise ToolFault("invalid_parameters", "k must be >= 1", parameter_fault=True)
        return k


class SimilarityTools:
    def __init__(
        self,
        indexes: SearchIndexes,
        embedder: EmbeddingProvider,
        store: CorpusStore,
        rewriter: QueryRewriter | None = None,
        default_k: int = DEFAULT_K,
    ) -> None:
        self._indexes = indexes
        self._embedder = embedder
        self._store = store
        self._rewriter = rewriter or QueryRewriter(None, None)
        self._default_k = default_k

    def records_by_text(
        self, query: str, k: int | None = None, target: str = "image"
    ) -> dict[str, Any]:
        k = self._check_k(k)
        if target not in ("image", "title"):
            raise ToolFault(
                "invalid_parameters", f"unknown target {target!r}", parameter_fault=True
            )
        mode = TEXT_TO_IMAGE if target == "image" else TEXT_TO_TEXT
        rewritten = self._rewriter.rewrite(query, mode)
        index = (
            self._indexes.record_image if target == "image" else self._indexes.record_title
        )
        hits = self._search(index, rewritten)
        return {"query": rewritten, "hits": _hits_json(hits[:k], self._store)}

    def collections_by_text(
        self, query: str, k: int | None = None, target: str | None = None
    ) -> dict[str, Any]:
        k = self._check_k(k)
        if target not in (None, "title", "description"):
            raise ToolFault(
                "invalid_parameters", f"unknown target {target!r}", parameter_fault=True
            )
        searched: list[HnswIndex] = []
        if target in (None, "title"):
            searched.append(self._indexes.collection_title)
        if target in (None, "description"):
            searched.append(self._indexes.collection_description)
        best: dict[str, float] = {}
        for index in searched:
            for hit in self._search(index, query):
                if hit.id not in best or hit.score > best[hit.id]:
                    best[hit.id] = hit.score
        merged = [SearchHit(id=i, score=s) for i, s in best.items()]
        merged.sort(key=lambda h: (-h.score, h.id))
        return {"query": query, "hits": _hits_json(merged[:k], self._store)}

    def records_by_image(
        self, image: bytes, media_type: str, k: int | None = None
    ) -> dict[str, Any]:
        k = self._check_k(k)
        vector = self._embedder.embed_image(image, media_type)
        try:
            hits = self._indexes.record_image.search(vector, k)
        except EmptyIndexError as exc:
            raise ToolFault("empty_index", str(exc), parameter_fault=False) from exc
        return {"hits": _hits_json(hits, self._store)}

    def _search(self, index: HnswIndex, query_text: str) -> list[SearchHit]:
        vector = self._embedder.embed_text([query_text])[0]
        try:
            # fetch a merge-friendly amount; callers slice to their k
            return index.search(vector, max(self._default_k * 4, 40))
        except EmptyIndexError as exc:
            raise ToolFault("empty_index", str(exc), parameter_fault=False) from exc

    def _check_k(self, k: int | None) -> int:
        if k is None:
            return self._default_k
        if k < 1:
            raise ToolFault("invalid_parameters", "k must be >= 1", parameter_fault=True)
        return k


class ImageTools:
    """LVLM-backed image analysis with the canonical task instructions."""

    def __init__(
        self,
        gateway: LvlmGateway,
        model_id: str,
        store: CorpusStore,
    ) -> None:
        self._gateway = gateway
        self._model_id = model_id
        self._store = store

    def metadata_for(self, image_name: str) -> str:
        record = self._find_record(image_name)
        if record is None:
            return ""
        lines = [f"Title: {self._store.display_title(record)}"]
        for key, value in record.details.items():
            lines.append(f"{key}: {value}")
        return "\n".join(lines)

    def _find_record(self, image_name: str):
        for record in self._store.iter_records():
            if record.image_name == image_name:
                return record
        return None

    def _ask(
        self, prompt_name: str, image: bytes, media_type: str, user_text: str
    ) -> str:
        turn = ChatTurn(
            role="user",
            parts=(
                ChatPart(text=user_text),
                ChatPart(image=image, media_type=media_type),
            ),
        )
        response = self._gateway.generate(
            system_prompt=prompts.load_prompt(prompt_name),
            history=[turn],
            tools=[],
            model_id=self._model_id,
        )
        if response.final_text is None:
            raise MalformedModelOutputError("image analysis returned tool calls")
        return response.final_text

    def vqa(self, image: bytes, media_type: str, question: str, metadata: str) -> str:
        text = f"Question: {question}"
        if metadata:
            text += f"\n\nImage metadata:\n{metadata}"
        return self._ask(prompts.IMAGE_VQA, image, media_type, text)

    def caption(self, image: bytes, media_type: str, metadata: str, concise: bool = False) -> str:
        text = "Please caption this image."
        if concise:
            text += " Keep the caption concise."
        if metadata:
            text += f"\n\nImage metadata:\n{metadata}"
        return self._ask(prompts.IMAGE_CAPTION, image, media_type, text)

    def ocr(self, image: bytes, media_type: str, metadata: str) -> str:
        text = "Please extract all text from this image."
        if metadata:
            text += f"\n\nImage metadata:\n{metadata}"
        return self._ask(prompts.IMAGE_OCR, image, media_type, text)

    def detect_objects(
        self, image: bytes, media_type: str, metadata: str
    ) -> list[DetectedObject]:
        size = _image_size(image)
        text = "Please detect all prominent objects in this image."
        if metadata:
            text += f"\n\nImage metadata:\n{metadata}"
        raw = self._ask(prompts.IMAGE_OBJECT_DETECTION, image, media_type, text)
        try:
            return parse_detected_objects(raw, size)
        except MalformedModelOutputError:
            retry_text = (
                text
                + "\n\nYour previous output was not valid. Output only the JSON array in the specified format."
            )
            raw = self._ask(prompts.IMAGE_OBJECT_DETECTION, image, media_type, retry_text)
            return parse_detected_objects(raw, size)


def _image_size(image: bytes) -> tuple[int, int] | None:
    try:
        with Image.open(io.BytesIO(image)) as img:
            return img.size
    except Exception:
        return None


@dataclass(frozen=True)
class RegisteredTool:
    spec: ToolSpec
    fn: Callable[[dict[str, Any], ToolContext], Any]


class ToolRegistry:
    """Validates and dispatches tool calls; results come back in call order."""

    def __init__(self) -> None:
        self._tools: dict[str, RegisteredTool] = {}

    def register(self, spec: ToolSpec, fn: Callable[[dict[str, Any], ToolContext], Any]) -> None:
        if spec.name in self._tools:
            raise ValueError(f"tool {spec.name!r} registered twice")
        self._tools[spec.name] = RegisteredTool(spec=spec, fn=fn)

    def specs(self) -> list[ToolSpec]:
        return [t.spec for t in self._tools.values()]

    def spec(self, name: str) -> ToolSpec:
        return self._tools[name].spec

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def dispatch(self, call: ToolCall, context: ToolContext | None = None) -> ToolResult:
        context = context or ToolContext()
        tool = self._tools.get(call.name)
        if tool is None:
            return ToolResult(
                call=call,
                ok=False,
                error_kind="unknown_tool",
                error_detail=f"no tool named {call.name!r}",
                parameter_fault=True,
            )
        violations = validate_tool_arguments(tool.spec, call.arguments)
        if violations:
            return ToolResult(
                call=call,
                ok=False,
                error_kind="invalid_parameters",
                error_detail="; ".join(violations),
                parameter_fault=True,
            )
        try:
            payload = tool.fn(dict(call.arguments), context)
        except ToolFault as fault:
            return ToolResult(
                call=call,
                ok=False,
                error_kind=fault.kind,
                error_detail=fault.detail,
                parameter_fault=fault.parameter_fault,
            )
        except NotFoundError as exc:
            return ToolResult(
                call=call,
                ok=False,
                error_kind="not_found",
                error_detail=str(exc),
                parameter_fault=True,
            )
        except Exception as exc:  # tools must never crash the loop
            return ToolResult(
                call=call,
                ok=False,
                error_kind="internal_error",
                error_detail=f"{type(exc).__name__}: {exc}",
                parameter_fault=False,
            )
        return ToolResult(call=call, ok=True, payload=payload)


def _resolve_image(
    image_name: str, store: CorpusStore, context: ToolContext
) -> tuple[bytes, str]:
    if image_name in context.uploads:
        return context.uploads[image_name]
    return store.get_image(image_name)


def build_tool_registry(
    store: CorpusStore,
    lexical_index: Bm25Index,
    indexes: SearchIndexes,
    embedder: EmbeddingProvider,
    gateway: LvlmGateway | None = None,
    analysis_model: str | None = None,
    default_k: int = DEFAULT_K,
) -> ToolRegistry:
    """Wire all four tool families into a registry the agent can call.

    The query rewriter and image analysis run on *analysis_model*; without a
    gateway the similarity tools fall back to un-rewritten queries and the
    image analysis tools are not registered.
    """
    db = DatabaseTools(store)
    lexical = LexicalTools(lexical_index, store, default_k)
    rewriter = QueryRewriter(gateway, analysis_model)
    similarity = SimilarityTools(indexes, embedder, store, rewriter, default_k)

    registry = ToolRegistry()
    k_param = ParamSpec(
        name="k",
        type="integer",
        description=f"How many results to return (default {default_k}).",
        required=False,
    )
    image_name_param = ParamSpec(
        name="image_name",
        type="string",
        description="Image file name of a record, or the id of an uploaded image.",
    )

    registry.register(
        ToolSpec(
            name="get_record",
            description="Fetch a single record by its murag_id.",
            parameters=(ParamSpec(name="murag_id", type="string", description="The record's murag_id."),),
        ),
        lambda args, ctx: db.get_record(args["murag_id"]),
    )
    registry.register(
        ToolSpec(
            name="get_collection",
            description="Fetch a collection by collection_name or murag_id.",
            parameters=(
                ParamSpec(
                    name="name_or_id",
                    type="string",
                    description="collection_name or murag_id of the collection.",
                ),
            ),
        ),
        lambda args, ctx: db.get_collection(args["name_or_id"]),
    )
    registry.register(
        ToolSpec(
            name="list_collections",
            description="List all collections, sorted by collection_name.",
        ),
        lambda args, ctx: db.list_collections(),
    )
    registry.register(
        ToolSpec(
            name="get_stats",
            description="Aggregate statistics: total records, total collections, records per collection.",
        ),
        lambda args, ctx: db.get_stats(),
    )
    registry.register(
        ToolSpec(
            name="lexical_search_records",
            description="Keyword (BM25) search over record titles.",
            parameters=(
                ParamSpec(name="query", type="string", description="Search terms."),
                k_param,
            ),
        ),
        lambda args, ctx: lexical.search_records(args["query"], args.get("k")),
    )
    registry.register(
        ToolSpec(
            name="lexical_search_collections",
            description="Keyword (BM25) search over collection titles and descriptions.",
            parameters=(
                ParamSpec(name="query", type="string", description="Search terms."),
                k_param,
            ),
        ),
        lambda args, ctx: lexical.search_collections(args["query"], args.get("k")),
    )
    registry.register(
        ToolSpec(
            name="sim_search_records_by_text",
            description=(
                "Semantic search for records. target='image' finds records whose "
                "image matches the text (cross-modal); target='title' matches titles."
            ),
            parameters=(
                ParamSpec(name="query", type="string", description="Natural-language query."),
                k_param,
                ParamSpec(
                    name="target",
                    type="string",
                    description="Which embedding to search.",
                    required=False,
                    enum=("image", "title"),
                ),
            ),
        ),
        lambda args, ctx: similarity.records_by_text(
            args["query"], args.get("k"), args.get("target", "image")
        ),
    )
    registry.register(
        ToolSpec(
            name="sim_search_collections_by_text",
            description="Semantic search for collections by title and/or description embedding.",
            parameters=(
                ParamSpec(name="query", type="string", description="Natural-language query."),
                k_param,
                ParamSpec(
                    name="target",
                    type="string",
                    description="Restrict to one embedding; omit to search both.",
                    required=False,
                    enum=("title", "description"),
                ),
            ),
        ),
        lambda args, ctx: similarity.collections_by_text(
            args["query"], args.get("k"), args.get("target")
        ),
    )
    registry.register(
        ToolSpec(
            name="sim_search_records_by_image",
            description="Find records whose image looks similar to the given image.",
            parameters=(image_name_param, k_param),
        ),
        lambda args, ctx: similarity.records_by_image(
            *_resolve_image(args["image_name"], store, ctx), k=args.get("k")
        ),
    )

    if gateway is not None and analysis_model is not None:
        image_tools = ImageTools(gateway, analysis_model, store)

        def run_vqa(args: dict[str, Any], ctx: ToolContext) -> Any:
            image, media = _resolve_image(args["image_name"], store, ctx)
            return image_tools.vqa(
                image, media, args["question"], image_tools.metadata_for(args["image_name"])
            )

        def run_caption(args: dict[str, Any], ctx: ToolContext) -> Any:
            image, media = _resolve_image(args["image_name"], store, ctx)
            return image_tools.caption(
                image,
                media,
                image_tools.metadata_for(args["image_name"]),
                args.get("concise", False),
            )

        def run_ocr(args: dict[str, Any], ctx: ToolContext) -> Any:
            image, media = _resolve_image(args["image_name"], store, ctx)
            return image_tools.ocr(image, media, image_tools.metadata_for(args["image_name"]))

        def run_detect(args: dict[str, Any], ctx: ToolContext) -> Any:
            image, media = _resolve_image(args["image_name"], store, ctx)
            objects = image_tools.detect_objects(
                image, media, image_tools.metadata_for(args["image_name"])
            )
            return [obj.to_json() for obj in objects]

        registry.register(
            ToolSpec(
                name="image_vqa",
                description="Answer a question about an image.",
                parameters=(
                    image_name_param,
                    ParamSpec(name="question", type="string", description="The question to answer."),
                ),
            ),
            run_vqa,
        )
        registry.register(
            ToolSpec(
                name="image_caption",
                description="Generate a descriptive caption for an image.",
                parameters=(
                    image_name_param,
                    ParamSpec(
                        name="concise",
                        type="boolean",
                        description="Produce a short caption instead of a detailed one.",
                        required=False,
                    ),
                ),
            ),
            run_caption,
        )
        registry.register(
            ToolSpec(
                name="image_ocr",
                description="Extract text visible in an image.",
                parameters=(image_name_param,),
            ),
            run_ocr,
        )
        registry.register(
            ToolSpec(
                name="image_detect_objects",
                description="Detect prominent objects in an image with bounding boxes.",
                parameters=(image_name_param,),
            ),
            run_detect,
        )

    return registry
