"""The agentic loop: per-session history, generate/dispatch cycles, and the
render-tag output contract.

Each user turn triggers: generate -> while the model requests tools, dispatch
them all in call order, append one tool turn per call, regenerate. A hard
iteration cap bounds the loop no matter how the model behaves. Render tags in
the final text are resolved against the store; tags pointing nowhere are
stripped and logged rather than breaking the conversation.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from . import prompts
from .lvlm import (
    ChatPart,
    ChatTurn,
    LvlmError,
    LvlmGateway,
    LvlmResponse,
    ToolSpec,
)
from .store import CorpusStore
from .tools import ToolContext, ToolRegistry, ToolResult

logger = logging.getLogger(__name__)

RECORD_TAG = "FundusRecord"
COLLECTION_TAG = "FundusCollection"

_TAG_RE = re.compile(
    r"<(FundusRecord|FundusCollection)\s+murag_id='([^'<>]*)'\s*/>"
)

DEFAULT_ITERATION_CAP = 8
DEFAULT_HISTORY_TURN_BUDGET = 60

ITERATION_CAP_MESSAGE = (
    "I am sorry, I could not finish working on this request within my step "
    "limit. Could you rephrase or narrow it down?"
)


@dataclass(frozen=True)
class PortalConfig:
    """Deployment-specific template parameters of the agent system prompt."""

    name: str = "FUNDus!"
    description: str = (
        "FUNDus! is a research portal that provides public access to the "
        "scientific collections of its partner institutions. It contains "
        "records from many fields of research, from mineralogy to zoology, "
        "each described by images and curated metadata. We want to promote "
        "the joy of research and discovery!"
    )


def build_system_prompt(portal: PortalConfig | None = None) -> str:
    """Instantiate the agent instruction template; pure and deterministic."""
    cfg = portal or PortalConfig()
    template = prompts.load_prompt(prompts.AGENT_SYSTEM)
    return template.replace("{{PORTAL_NAME}}", cfg.name).replace(
        "{{PORTAL_DESCRIPTION}}", cfg.description
    )


@dataclass(frozen=True)
class RenderTag:
    kind: str  # RECORD_TAG | COLLECTION_TAG
    murag_id: str

    def serialize(self) -> str:
        return f"<{self.kind} murag_id='{self.murag_id}' />"


@dataclass(frozen=True)
class TextSegment:
    text: str


@dataclass(frozen=True)
class TagSegment:
    tag: RenderTag


Segment = TextSegment | TagSegment


def parse_render_tags(markdown: str) -> tuple[list[Segment], list[RenderTag]]:
    """Split markdown into text segments and render tags, in source order.

    Only the exact tag grammar is recognized; anything else (missing quotes,
    unknown tag names, stray angle brackets) passes through as literal text.
    """
    segments: list[Segment] = []
    tags: list[RenderTag] = []
    cursor = 0
    for match in _TAG_RE.finditer(markdown):
        if match.start() > cursor:
            segments.append(TextSegment(markdown[cursor : match.start()]))
        tag = RenderTag(kind=match.group(1), murag_id=match.group(2))
        segments.append(TagSegment(tag))
        tags.append(tag)
        cursor = match.end()
    if cursor < len(markdown):
        segments.append(TextSegment(markdown[cursor:]))
    return segments, tags


@dataclass
class ChatSession:
    session_id: str
    model_id: str
    history: list[ChatTurn]
    created_at: float
    last_active: float
    # images uploaded in this session, addressable by tools in later turns
    uploads: dict[str, tuple[bytes, str]] = field(default_factory=dict)

    def touch(self, now: float) -> None:
        if now > self.last_active:
            self.last_active = now


def new_session(
    session_id: str,
    model_id: str,
    system_prompt: str,
    now: float | None = None,
) -> ChatSession:
    ts = time.time() if now is None else now
    return ChatSession(
        session_id=session_id,
        model_id=model_id,
        history=[ChatTurn(role="system", parts=(ChatPart(text=system_prompt),))],
        created_at=ts,
        last_active=ts,
    )


@dataclass(frozen=True)
class AgentReply:
    markdown_text: str
    segments: tuple[Segment, ...]
    render_tags: tuple[RenderTag, ...]
    trace: tuple[ToolResult, ...]
    stop_reason: str  # "final" | "iteration_cap" | "provider_error"


@dataclass(frozen=True)
class AgentConfig:
    iteration_cap: int = DEFAULT_ITERATION_CAP
    history_turn_budget: int = DEFAULT_HISTORY_TURN_BUDGET


def check_history_wellformed(history: Sequence[ChatTurn]) -> list[str]:
    """Structural invariants of a session history; empty list means ok."""
    problems: list[str] = []
    if not history or history[0].role != "system":
        problems.append("history must begin with the system turn")
        return problems
    pending: list[str] = []  # tool-call ids awaiting their tool turns, in order
    last_role = "system"
    for i, turn in enumerate(history[1:], start=1):
        if turn.role == "system":
            problems.append(f"turn {i}: unexpected extra system turn")
        elif turn.role == "tool":
            if not pending:
                problems.append(f"turn {i}: tool turn without a pending tool call")
            elif turn.tool_call_id != pending[0]:
                problems.append(
                    f"turn {i}: tool turn answers {turn.tool_call_id!r}, expected {pending[0]!r}"
                )
            else:
                pending.pop(0)
            last_role = "tool"
        else:
            if pending:
                problems.append(
                    f"turn {i}: {turn.role} turn while tool calls {pending!r} are unanswered"
                )
                pending.clear()
            if turn.role == "assistant":
                if last_role == "assistant":
                    problems.append(f"turn {i}: consecutive assistant turns")
                pending.extend(call.id for call in turn.tool_calls)
            elif turn.role == "user" and last_role == "user":
                problems.append(f"turn {i}: consecutive user turns")
            last_role = turn.role
    if pending:
        problems.append(f"history ends with unanswered tool calls {pending!r}")
    return problems


class AgentRuntime:
    """Executes the tool-calling loop against one gateway/registry/store."""

    def __init__(
        self,
        gateway: LvlmGateway,
        registry: ToolRegistry,
        store: CorpusStore,
        config: AgentConfig | None = None,
        trace_sink: Callable[[dict[str, Any]], None] | None = None,
    ) -> None:
        self._gateway = gateway
        self._registry = registry
        self._store = store
        self._config = config or AgentConfig()
        self._trace_sink = trace_sink

    def _emit(self, event: dict[str, Any]) -> None:
        if self._trace_sink is not None:
            self._trace_sink(event)

    def _provider_history(self, history: Sequence[ChatTurn]) -> list[ChatTurn]:
        """Oldest-first truncation to the turn budget, cut at a user turn."""
        body = list(history[1:])
        budget = self._config.history_turn_budget
        if len(body) <= budget:
            return body
        start = len(body) - budget
        while start < len(body) and body[start].role != "user":
            start += 1
        return body[start:]

    def run(
        self,
        session: ChatSession,
        user_turn: ChatTurn,
        uploads: Mapping[str, tuple[bytes, str]] | None = None,
    ) -> AgentReply:
        if user_turn.role != "user":
            raise ValueError("the incoming turn must have role 'user'")
        system_prompt = session.history[0].text()
        context = ToolContext(uploads=dict(uploads or {}))

        session.history.append(user_turn)
        self._emit(
            {"event": "turn_appended", "session_id": session.session_id, "role": "user"}
        )

        trace: list[ToolResult] = []
        disabled: set[str] = set()
        final_text: str | None = None
        stop_reason = "iteration_cap"
        rounds = 0

        while rounds < self._config.iteration_cap:
            rounds += 1
            specs: list[ToolSpec] = [
                s for s in self._registry.specs() if s.name not in disabled
            ]
            try:
                response: LvlmResponse = self._gateway.generate(
                    system_prompt=system_prompt,
                    history=self._provider_history(session.history),
                    tools=specs,
                    model_id=session.model_id,
                )
            except LvlmError as exc:
                logger.warning("provider failure mid-loop: %s", exc)
                final_text = f"I could not reach the language model right now ({exc})."
                stop_reason = "provider_error"
                break

            if response.final_text is not None:
                final_text = response.final_text
                stop_reason = "final"
                break

            assistant_turn = ChatTurn(role="assistant", tool_calls=response.tool_calls)
            session.history.append(assistant_turn)
            self._emit(
                {
                    "event": "turn_appended",
                    "session_id": session.session_id,
                    "role": "assistant",
                    "tool_calls": [c.name for c in response.tool_calls],
                }
            )

            round_results: list[ToolResult] = []
            for call in response.tool_calls:
                self._emit(
                    {
                        "event": "tool_dispatched",
                        "session_id": session.session_id,
                        "call_id": call.id,
                        "tool": call.name,
                    }
                )
                if call.name in disabled:
                    result = ToolResult(
                        call=call,
                        ok=False,
                        error_kind="tool_disabled",
                        error_detail=(
                            f"{call.name} failed earlier in this run and was withdrawn"
                        ),
                        parameter_fault=True,
                    )
                else:
                    result = self._registry.dispatch(call, context)
                round_results.append(result)
                trace.append(result)
                session.history.append(
                    ChatTurn(
                        role="tool",
                        parts=(ChatPart(text=result.message_text()),),
                        tool_call_id=call.id,
                    )
                )
                self._emit(
                    {
                        "event": "tool_completed",
                        "session_id": session.session_id,
                        "call_id": call.id,
                        "tool": call.name,
                        "ok": result.ok,
                        "error_kind": result.error_kind,
                    }
                )
            for result in round_results:
                # a failure not caused by bad parameters withdraws the tool
                # for the remainder of this run
                if not result.ok and not result.parameter_fault:
                    disabled.add(result.call.name)

        if final_text is None:
            final_text = ITERATION_CAP_MESSAGE

        segments, tags = parse_render_tags(final_text)
        kept_segments: list[Segment] = []
        kept_tags: list[RenderTag] = []
        for segment in segments:
            if isinstance(segment, TagSegment):
                if self._resolves(segment.tag):
                    kept_segments.append(segment)
                    kept_tags.append(segment.tag)
                else:
                    logger.warning(
                        "stripping dangling render tag %s", segment.tag.serialize()
                    )
                    self._emit(
                        {
                            "event": "dangling_tag_stripped",
                            "session_id": session.session_id,
                            "murag_id": segment.tag.murag_id,
                        }
                    )
            else:
                kept_segments.append(segment)
        markdown_text = "".join(
            seg.text if isinstance(seg, TextSegment) else seg.tag.serialize()
            for seg in kept_segments
        )

        session.history.append(
            ChatTurn(role="assistant", parts=(ChatPart(text=markdown_text),))
        )
        self._emit(
            {
                "event": "loop_finished",
                "session_id": session.session_id,
                "rounds": rounds,
                "stop_reason": stop_reason,
                "tools_executed": len(trace),
            }
        )
        return AgentReply(
            markdown_text=markdown_text,
            segments=tuple(kept_segments),
            render_tags=tuple(kept_tags),
            trace=tuple(trace),
            stop_reason=stop_reason,
        )

    def _resolves(self, tag: RenderTag) -> bool:
        if not tag.murag_id:
            return False
        if tag.kind == RECORD_TAG:
            try:
                self._store.get_record(tag.murag_id)
                return True
            except Exception:
                return False
        try:
            self._store.get_collection(tag.murag_id)
            return True
        except Exception:
            return False
