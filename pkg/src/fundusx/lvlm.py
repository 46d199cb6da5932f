"""Provider-agnostic chat interface to vision-language models with tool calling.

The neutral ChatTurn/ToolCall data model is the only thing the agent ever
sees; adapters translate to vendor wire formats. A scripted stub replays
canned responses in strict order so the full agent loop is testable without
any provider.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx

ROLES = ("system", "user", "assistant", "tool")
PARAM_TYPES = ("string", "integer", "number", "boolean")


class LvlmError(Exception):
    pass


class UnknownModelError(LvlmError):
    pass


class LvlmUnreachableError(LvlmError):
    pass


class ScriptExhaustedError(LvlmError):
    """The scripted stub was asked for more generations than it holds."""


class ConfigurationError(LvlmError):
    pass


@dataclass(frozen=True)
class ChatPart:
    """Either a text fragment or an image; exactly one of the two."""

    text: str | None = None
    image: bytes | None = None
    media_type: str | None = None
    image_id: str | None = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.image is None):
            raise ValueError("a chat part holds exactly one of text or image")
        if self.image is not None and not self.media_type:
            raise ValueError("image parts need a media type")

    @property
    def is_image(self) -> bool:
        return self.image is not None


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "name": self.name, "arguments": dict(self.arguments)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ToolCall":
        return cls(
            id=obj.get("id", ""),
            name=obj["name"],
            arguments=dict(obj.get("arguments", {})),
        )


@dataclass(frozen=True)
class ChatTurn:
    """One message in a session history.

    Tool turns carry the id of the call they answer. Assistant turns that
    request tools carry the calls and may have no content parts; every other
    turn must have at least one part.
    """

    role: str
    parts: tuple[ChatPart, ...] = ()
    tool_call_id: str | None = None
    tool_calls: tuple[ToolCall, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool turns must carry the id of the call they answer")
        if self.tool_calls and self.role != "assistant":
            raise ValueError("only assistant turns may carry tool calls")
        if not self.parts and not self.tool_calls:
            raise ValueError("turn must have parts (or, for assistants, tool calls)")

    def text(self) -> str:
        return "".join(p.text for p in self.parts if p.text is not None)

    @staticmethod
    def user_text(text: str) -> "ChatTurn":
        return ChatTurn(role="user", parts=(ChatPart(text=text),))


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    description: str = ""
    required: bool = True
    enum: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.type not in PARAM_TYPES:
            raise ValueError(f"unknown parameter type {self.type!r}")


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: tuple[ParamSpec, ...] = ()


@dataclass(frozen=True)
class LvlmResponse:
    """Either a non-empty batch of tool calls or a final text, never both."""

    tool_calls: tuple[ToolCall, ...] = ()
    final_text: str | None = None

    def __post_init__(self) -> None:
        if bool(self.tool_calls) == (self.final_text is not None):
            raise ValueError("response is exactly one of tool_calls or final_text")

    @property
    def is_tool_call(self) -> bool:
        return bool(self.tool_calls)


def validate_tool_arguments(spec: ToolSpec, arguments: Mapping[str, Any]) -> list[str]:
    """Schema-check call arguments before any tool executes."""
    violations: list[str] = []
    known = {p.name: p for p in spec.parameters}
    for name in arguments:
        if name not in known:
            violations.append(f"unknown parameter {name!r}")
    for param in spec.parameters:
        if param.name not in arguments:
            if param.required:
                violations.append(f"missing required parameter {param.name!r}")
            continue
        value = arguments[param.name]
        if param.type == "string" and not isinstance(value, str):
            violations.append(f"parameter {param.name!r} must be a string")
        elif param.type == "integer" and (isinstance(value, bool) or not isinstance(value, int)):
            violations.append(f"parameter {param.name!r} must be an integer")
        elif param.type == "number" and (
            isinstance(value, bool) or not isinstance(value, (int, float))
        ):
            violations.append(f"parameter {param.name!r} must be a number")
        elif param.type == "boolean" and not isinstance(value, bool):
            violations.append(f"parameter {param.name!r} must be a boolean")
        elif param.enum is not None and isinstance(value, str) and value not in param.enum:
            violations.append(
                f"parameter {param.name!r} must be one of {list(param.enum)}"
            )
    return violations


@dataclass(frozen=True)
class ModelInfo:
    model_id: str
    display_name: str
    provider: str


class LvlmProvider(Protocol):
    def generate(
        self,
        system_prompt: str,
        history: Sequence[ChatTurn],
        tools: Sequence[ToolSpec],
        model_id: str,
    ) -> LvlmResponse: ...


@dataclass
class GenerateCall:
    """Captured stub invocation, for trace assertions in tests."""

    system_prompt: str
    history: tuple[ChatTurn, ...]
    tools: tuple[ToolSpec, ...]
    model_id: str


class ScriptedLvlm:
    """Replays a fixed script of responses, strictly in order.

    Requesting more generations than scripted raises ScriptExhaustedError so
    runaway agent loops fail the test instead of hanging.
    """

    def __init__(self, script: Sequence[LvlmResponse]) -> None:
        self._script = list(script)
        self._cursor = 0
        self.calls: list[GenerateCall] = []

    @property
    def remaining(self) -> int:
        return len(self._script) - self._cursor

    def generate(
        self,
        system_prompt: str,
        history: Sequence[ChatTurn],
        tools: Sequence[ToolSpec],
        model_id: str,
    ) -> LvlmResponse:
        self.calls.append(
            GenerateCall(system_prompt, tuple(history), tuple(tools), model_id)
        )
        if self._cursor >= len(self._script):
            raise ScriptExhaustedError(
                f"script exhausted after {len(self._script)} generations"
            )
        response = self._script[self._cursor]
        self._cursor += 1
        return response


class EchoLvlm:
    """Stateless provider answering with the last user text; thread-safe."""

    def generate(
        self,
        system_prompt: str,
        history: Sequence[ChatTurn],
        tools: Sequence[ToolSpec],
        model_id: str,
    ) -> LvlmResponse:
        for turn in reversed(history):
            if turn.role == "user":
                text = turn.text() or "(an image)"
                return LvlmResponse(final_text=f"You said: {text}")
        return LvlmResponse(final_text="Hello!")


def response_from_json(obj: Mapping[str, Any]) -> LvlmResponse:
    if "tool_calls" in obj:
        calls = []
        for i, call in enumerate(obj["tool_calls"]):
            calls.append(
                ToolCall(
                    id=call.get("id") or f"call_{i + 1}",
                    name=call["name"],
                    arguments=dict(call.get("arguments", {})),
                )
            )
        return LvlmResponse(tool_calls=tuple(calls))
    return LvlmResponse(final_text=obj["final_text"])


def load_script(path: Path | str) -> list[LvlmResponse]:
    """Read a JSON fixture: an ordered array of canned responses."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [response_from_json(obj) for obj in data]


class OpenAiCompatibleLvlm:
    """Adapter for any /chat/completions-style endpoint with function calling.

    Refusals and content-filter blocks come back as final text instead of
    raising, so a chat session never hard-crashes on a provider's "no".
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        timeout: float = 60.0,
        retries: int = 1,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(
            base_url=endpoint, timeout=timeout, headers=headers, transport=transport
        )
        self._retries = retries

    def close(self) -> None:
        self._client.close()

    @staticmethod
    def _encode_turn(turn: ChatTurn) -> dict[str, Any]:
        if turn.role == "tool":
            return {
                "role": "tool",
                "tool_call_id": turn.tool_call_id,
                "content": turn.text(),
            }
        if turn.tool_calls:
            return {
                "role": "assistant",
                "content": turn.text() or None,
                "tool_calls": [
                    {
                        "id": call.id,
                        "type": "function",
                        "function": {
                            "name": call.name,
                            "arguments": json.dumps(dict(call.arguments)),
                        },
                    }
                    for call in turn.tool_calls
                ],
            }
        content: list[dict[str, Any]] = []
        for part in turn.parts:
            if part.text is not None:
                content.append({"type": "text", "text": part.text})
            else:
                encoded = base64.b64encode(part.image or b"").decode("ascii")
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:{part.media_type};base64,{encoded}"},
                    }
                )
        return {"role": turn.role, "content": content}

    @staticmethod
    def _encode_tools(tools: Sequence[ToolSpec]) -> list[dict[str, Any]]:
        encoded = []
        for tool in tools:
            properties: dict[str, Any] = {}
            required: list[str] = []
            for param in tool.parameters:
                schema: dict[str, Any] = {"type": param.type}
                if param.description:
                    schema["description"] = param.description
                if param.enum is not None:
                    schema["enum"] = list(param.enum)
                properties[param.name] = schema
                if param.required:
                    required.append(param.name)
            encoded.append(
                {
                    "type": "function",
                    "function": {
                        "name": tool.name,
                        "description": tool.description,
                        "parameters": {
                            "type": "object",
                            "properties": properties,
                            "required": required,
                        },
                    },
                }
            )
        return encoded

    def generate(
        self,
        system_prompt: str,
        history: Sequence[ChatTurn],
        tools: Sequence[ToolSpec],
        model_id: str,
    ) -> LvlmResponse:
        messages = [{"role": "system", "content": system_prompt}]
        messages.extend(self._encode_turn(t) for t in history)
        body: dict[str, Any] = {"model": model_id, "messages": messages}
        if tools:
            body["tools"] = self._encode_tools(tools)

        last_error: Exception | None = None
        for _ in range(self._retries + 1):
            try:
                response = self._client.post("/chat/completions", json=body)
                break
            except httpx.TransportError as exc:
                last_error = exc
        else:
            raise LvlmUnreachableError(f"provider unreachable: {last_error}")

        if response.status_code >= 400:
            # surfaced as a reply so the session stays usable
            return LvlmResponse(
                final_text=f"The model provider rejected the request ({response.status_code})."
            )
        try:
            message = response.json()["choices"][0]["message"]
        except (ValueError, KeyError, IndexError) as exc:
            raise LvlmUnreachableError(f"malformed provider response: {exc}") from exc

        raw_calls = message.get("tool_calls") or []
        if raw_calls:
            calls = tuple(
                ToolCall(
                    id=call.get("id") or f"call_{i + 1}",
                    name=call["function"]["name"],
                    arguments=json.loads(call["function"].get("arguments") or "{}"),
                )
                for i, call in enumerate(raw_calls)
            )
            return LvlmResponse(tool_calls=calls)
        refusal = message.get("refusal")
        if refusal:
            return LvlmResponse(final_text=str(refusal))
        return LvlmResponse(final_text=message.get("content") or "")


class LvlmGateway:
    """Model registry plus dispatch; entries keep their configuration order."""

    def __init__(self) -> None:
        self._entries: list[tuple[ModelInfo, LvlmProvider]] = []
        self._by_id: dict[str, LvlmProvider] = {}

    def register(self, info: ModelInfo, provider: LvlmProvider) -> None:
        if info.model_id in self._by_id:
            raise ConfigurationError(f"model {info.model_id!r} registered twice")
        self._entries.append((info, provider))
        self._by_id[info.model_id] = provider

    def ensure_ready(self) -> None:
        if not self._entries:
            raise ConfigurationError("no models configured; refusing to start")

    def list_models(self) -> list[ModelInfo]:
        return [info for info, _ in self._entries]

    def has_model(self, model_id: str) -> bool:
        return model_id in self._by_id

    def generate(
        self,
        system_prompt: str,
        history: Sequence[ChatTurn],
        tools: Sequence[ToolSpec],
        model_id: str,
    ) -> LvlmResponse:
        provider = self._by_id.get(model_id)
        if provider is None:
            raise UnknownModelError(f"unknown model {model_id!r}")
        return provider.generate(system_prompt, history, tools, model_id)
