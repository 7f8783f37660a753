"""Turn-level simulation of chunked listen/think interleaving on a virtual clock.

Drives a generation backend through one user turn in one of three modes:

* ``shanks`` interleaves budgeted unspoken thinking between incoming speech
  chunks and may cut the turn short when the model decides to interrupt;
* ``call-after-listen`` hands the model the whole utterance at once and lets
  it resolve tool calls in a post-turn loop before answering;
* ``combined`` runs the interleaved protocol while the user speaks, then
  switches to the post-turn loop with the successful tool exchanges carried
  over into a rebuilt context.

Timing is purely virtual and deterministic: chunk ``i`` arrives at
``i * t_chunk``, the ``x``-th token of a generation stream is emitted at
``anchor + x / n_tps``, and tool exchanges are free (responses are already
prepared, so no API latency is charged). Tool-response tokens spliced into
thinking are exempt from both the token budget and the clock.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Iterable, Sequence, Union

from .backend import (
    Finish,
    GenerationBackend,
    GenerationRequest,
    TransportError,
)
from .errors import ValidationError
from .markers import DEFAULT_MARKERS, MarkerVocabulary, tokenize
from .timeline import (
    ChunkingConfig,
    SpeechChunk,
    WordTiming,
    segment_transcript,
    thinking_budget,
    transcript_duration,
)
from .tools import (
    MatchOutcome,
    ToolCall,
    ToolEnvironment,
    match_call,
    render_call_span,
)

logger = logging.getLogger(__name__)

MODE_SHANKS = "shanks"
MODE_CALL_AFTER_LISTEN = "call-after-listen"
MODE_COMBINED = "combined"

STATUS_COMPLETED = "completed"
STATUS_CONTEXT_OVERFLOW = "context_overflow"
STATUS_TRANSPORT_ERROR = "transport_error"
STATUS_ABORTED = "aborted"

DEFAULT_ITERATION_CAP = 16


class IterationCapExceededError(RuntimeError):
    """The post-turn generate/resolve loop did not converge within the cap."""


@dataclass(frozen=True)
class ThinkingChunk:
    """One unspoken reasoning block, markers included, splices included.

    ``injected_tool_tokens`` counts the tool-response tokens spliced into
    ``tokens``; everything else was emitted by the model (or is the runtime's
    open/close marker, which is charged to the clock but not the budget).
    """

    index: int
    tokens: tuple[str, ...]
    truncated: bool
    contains_interrupt: bool
    injected_tool_tokens: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def self_token_count(self) -> int:
        return len(self.tokens) - self.injected_tool_tokens


@dataclass(frozen=True)
class ResponseChunk:
    """The spoken final response and the virtual time its first token emerged."""

    tokens: tuple[str, ...]
    emit_time: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass(frozen=True)
class ChunkDelivered:
    chunk: SpeechChunk
    time: float


@dataclass(frozen=True)
class ThinkingGenerated:
    chunk: ThinkingChunk
    time: float
    end_time: float


@dataclass(frozen=True)
class ToolExchange:
    call: ToolCall
    outcome: MatchOutcome
    time: float


@dataclass(frozen=True)
class ResponseEmitted:
    chunk: ResponseChunk


TraceEvent = Union[ChunkDelivered, ThinkingGenerated, ToolExchange, ResponseEmitted]


@dataclass(frozen=True)
class TurnTrace:
    """Complete ordered event log of one simulated turn."""

    scenario_id: str
    mode: str
    config: ChunkingConfig
    events: tuple[TraceEvent, ...]
    status: str
    interrupted_at: int | None = None
    t_interrupt: float | None = None
    undelivered_overlap: SpeechChunk | None = None
    post_turn_tokens: int = 0
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))

    def delivered_chunks(self) -> list[SpeechChunk]:
        return [ev.chunk for ev in self.events if isinstance(ev, ChunkDelivered)]

    def thinking_chunks(self) -> list[ThinkingChunk]:
        return [ev.chunk for ev in self.events if isinstance(ev, ThinkingGenerated)]

    def tool_exchanges(self) -> list[ToolExchange]:
        return [ev for ev in self.events if isinstance(ev, ToolExchange)]

    def response(self) -> ResponseChunk | None:
        for ev in self.events:
            if isinstance(ev, ResponseEmitted):
                return ev.chunk
        return None

    def user_prefix_tokens(self) -> list[str]:
        """Transcript the user actually spoke before the turn resolved.

        Delivered chunk words plus, for interrupted turns, the chunk the user
        was speaking while the interrupting thought was generated.
        """
        out: list[str] = []
        for chunk in self.delivered_chunks():
            out.extend(chunk.texts)
        if self.undelivered_overlap is not None:
            out.extend(self.undelivered_overlap.texts)
        return out


def build_context(
    events: Iterable[TraceEvent],
    *,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
    preamble: Sequence[str] = (),
) -> list[str]:
    """Token context induced by a trace prefix.

    Delivered chunks contribute their words followed by the end-of-partial or
    end-of-audio marker; thinking blocks contribute their tokens verbatim
    (splices included). Tool exchanges and the response add nothing: splices
    already live inside thinking tokens, and nothing is generated after the
    response.
    """
    out = list(preamble)
    for ev in events:
        if isinstance(ev, ChunkDelivered):
            out.extend(ev.chunk.texts)
            out.append(markers.eoa if ev.chunk.is_final else markers.eopa)
        elif isinstance(ev, ThinkingGenerated):
            out.extend(ev.chunk.tokens)
    return out


class _ContextOverflow(Exception):
    """Internal signal: the next generation's context would exceed the limit."""


class _TurnRunner:
    def __init__(
        self,
        scenario_id: str,
        words: Sequence[WordTiming],
        backend: GenerationBackend,
        env: ToolEnvironment,
        config: ChunkingConfig,
        markers: MarkerVocabulary,
        preamble: Sequence[str],
        iteration_cap: int,
    ):
        self.scenario_id = scenario_id
        self.words = list(words)
        self.backend = backend
        self.env = env
        self.config = config
        self.markers = markers
        self.preamble = list(preamble)
        self.iteration_cap = iteration_cap
        self.events: list[TraceEvent] = []
        self._dt = 1.0 / config.n_tps if config.n_tps > 0 else 0.0

    # -- clock & context helpers --------------------------------------------

    def _check_context(self, ctx: Sequence[str]) -> None:
        if len(ctx) > self.config.max_context:
            raise _ContextOverflow

    def _headroom(self, ctx: Sequence[str]) -> int:
        return max(0, self.config.max_context - len(ctx))

    def _events_context(self) -> list[str]:
        return build_context(self.events, markers=self.markers, preamble=self.preamble)

    # -- generation ----------------------------------------------------------

    def _think_block(
        self,
        index: int,
        anchor: float,
        offset: int,
        budget: int | None,
        eoa_time: float,
    ) -> tuple[ThinkingChunk, int]:
        """Generate one thinking block, resolving tool-call spans inline.

        Token ``x`` of the block (1-based, seed marker included, splices
        excluded) is emitted at ``anchor + (offset + x) / n_tps``. Returns the
        block and the stream offset after it.
        """
        m = self.markers
        base = self._events_context()
        tokens: list[str] = [m.think_open]
        self_count = 1
        generated = 0
        injected = 0
        open_idx: int | None = None
        contains_interrupt = False
        closed = False
        truncated = False

        while not closed:
            if budget is not None and generated >= budget:
                truncated = True
                break
            ctx = base + tokens
            self._check_context(ctx)
            cap = budget - generated if budget is not None else self._headroom(ctx)
            result = self.backend.generate(
                GenerationRequest(
                    context=tuple(ctx),
                    max_tokens=cap,
                    stop_markers=frozenset({m.think_close, m.tool_close}),
                )
            )
            for tok in result.tokens:
                tokens.append(tok)
                self_count += 1
                generated += 1
                if tok == m.interrupt:
                    contains_interrupt = True
                if tok == m.think_close:
                    closed = True
                    break
                if tok == m.tool_open:
                    open_idx = len(tokens) - 1
                elif tok == m.tool_close and open_idx is not None:
                    added = self._resolve_span(
                        tokens, (open_idx, len(tokens) - 1), anchor, offset + self_count, eoa_time
                    )
                    if added is not None:
                        injected += added
                    open_idx = None
            if closed:
                break
            if budget is not None and generated >= budget:
                truncated = True
                break
            if result.finish is Finish.STOPPED and result.tokens and result.tokens[-1] == m.tool_close:
                continue
            break  # end of sequence, or nothing more to say

        if not tokens or tokens[-1] != m.think_close:
            tokens.append(m.think_close)
            self_count += 1

        chunk = ThinkingChunk(
            index=index,
            tokens=tuple(tokens),
            truncated=truncated,
            contains_interrupt=contains_interrupt,
            injected_tool_tokens=injected,
        )
        self.events.append(
            ThinkingGenerated(
                chunk=chunk,
                time=anchor + offset * self._dt,
                end_time=anchor + (offset + self_count) * self._dt,
            )
        )
        return chunk, offset + self_count

    def _resolve_span(
        self,
        tokens: list[str],
        span: tuple[int, int],
        anchor: float,
        stream_pos: int,
        eoa_time: float,
    ) -> int | None:
        """Match the just-closed call span, splice its response, record the exchange.

        Returns the number of injected tokens, or None when the span is
        malformed and no exchange took place.
        """
        from .tools import scan_tool_calls

        scan = scan_tool_calls(tokens[span[0] : span[1] + 1], self.markers)
        if not scan.calls:
            logger.debug("skipping malformed call span at %s: %s", span, scan.diagnostics)
            return None
        inner = scan.calls[0]
        call = ToolCall(name=inner.name, arguments=inner.arguments, raw_span=span)
        now = anchor + stream_pos * self._dt
        outcome = match_call(call, self.env, now=now, eoa_time=eoa_time)
        payload = tokenize(outcome.response_payload)
        tokens.extend(payload)
        self.events.append(ToolExchange(call=call, outcome=outcome, time=now))
        return len(payload)

    def _response_block(self, anchor: float, offset: int) -> ResponseChunk:
        ctx = self._events_context()
        self._check_context(ctx)
        result = self.backend.generate(
            GenerationRequest(context=tuple(ctx), max_tokens=self._headroom(ctx))
        )
        chunk = ResponseChunk(
            tokens=tuple(result.tokens),
            emit_time=anchor + (offset + 1) * self._dt,
        )
        self.events.append(ResponseEmitted(chunk=chunk))
        return chunk

    # -- post-turn generate/resolve loop --------------------------------------

    def _post_turn_loop(
        self, base_ctx: list[str], anchor: float, first_index: int
    ) -> tuple[ResponseChunk, int]:
        """Generate until a generation free of tool-call markers: that is the
        response. Call-bearing generations are stored as marker-wrapped
        thinking blocks whose markers count as emitted tokens. Returns the
        response and the number of self-generated tokens produced before it.
        """
        m = self.markers
        offset = 0
        post_turn = 0
        iterations = 0
        while True:
            iterations += 1
            if iterations > self.iteration_cap:
                raise IterationCapExceededError(
                    f"post-turn loop exceeded {self.iteration_cap} iterations"
                )
            self._check_context(base_ctx)
            result = self.backend.generate(
                GenerationRequest(
                    context=tuple(base_ctx),
                    max_tokens=self._headroom(base_ctx),
                    stop_markers=frozenset({m.tool_close}),
                )
            )
            if not any(tok in (m.tool_open, m.tool_close) for tok in result.tokens):
                response = ResponseChunk(
                    tokens=tuple(result.tokens),
                    emit_time=anchor + (offset + 1) * self._dt,
                )
                self.events.append(ResponseEmitted(chunk=response))
                return response, post_turn

            tokens: list[str] = []
            injected = 0
            open_idx: int | None = None
            for tok in result.tokens:
                tokens.append(tok)
                if tok == m.tool_open:
                    open_idx = len(tokens) - 1
                elif tok == m.tool_close and open_idx is not None:
                    # +1: the wrapping open marker occupies the first stream slot
                    added = self._resolve_span(
                        tokens,
                        (open_idx, len(tokens) - 1),
                        anchor,
                        offset + 1 + (len(tokens) - injected),
                        eoa_time=anchor,
                    )
                    if added is not None:
                        injected += added
                    open_idx = None

            block_tokens = [m.think_open] + tokens + [m.think_close]
            self_count = len(block_tokens) - injected
            chunk = ThinkingChunk(
                index=first_index + iterations - 1,
                tokens=tuple(block_tokens),
                truncated=False,
                contains_interrupt=m.interrupt in result.tokens,
                injected_tool_tokens=injected,
            )
            self.events.append(
                ThinkingGenerated(
                    chunk=chunk,
                    time=anchor + offset * self._dt,
                    end_time=anchor + (offset + self_count) * self._dt,
                )
            )
            base_ctx = base_ctx + list(block_tokens)
            offset += self_count
            post_turn += self_count

    # -- modes ----------------------------------------------------------------

    def run_shanks(self) -> TurnTrace:
        chunks = segment_transcript(self.words, self.config)
        if not chunks:
            raise ValidationError("scenario transcript is empty")
        n = len(chunks)
        t = self.config.t_chunk
        eoa_time = n * t
        budget = thinking_budget(self.config)

        interrupted_at: int | None = None
        t_interrupt: float | None = None
        undelivered: SpeechChunk | None = None
        post_turn = 0
        status = STATUS_COMPLETED
        error: str | None = None
        try:
            for i, chunk in enumerate(chunks, 1):
                deliver_at = i * t
                self.events.append(ChunkDelivered(chunk=chunk, time=deliver_at))
                block_budget = budget if i < n else self.config.final_budget
                thought, offset = self._think_block(
                    index=i, anchor=deliver_at, offset=0, budget=block_budget, eoa_time=eoa_time
                )
                if thought.contains_interrupt and i < n:
                    response = self._response_block(anchor=deliver_at, offset=offset)
                    interrupted_at = i
                    t_interrupt = response.emit_time
                    undelivered = chunks[i]  # the chunk spoken while R_i was generated
                    break
                if i == n:
                    post_turn = thought.self_token_count
                    self._response_block(anchor=deliver_at, offset=offset)
        except _ContextOverflow:
            status = STATUS_CONTEXT_OVERFLOW
            post_turn = 0
        except TransportError as exc:
            status = STATUS_TRANSPORT_ERROR
            error = str(exc)
            post_turn = 0

        return TurnTrace(
            scenario_id=self.scenario_id,
            mode=MODE_SHANKS,
            config=self.config,
            events=tuple(self.events),
            status=status,
            interrupted_at=interrupted_at,
            t_interrupt=t_interrupt,
            undelivered_overlap=undelivered,
            post_turn_tokens=post_turn,
            error=error,
        )

    def run_call_after_listen(self) -> TurnTrace:
        chunks = segment_transcript(self.words, self.config)
        if not chunks:
            raise ValidationError("scenario transcript is empty")
        duration = transcript_duration(self.words)
        full = SpeechChunk(
            index=len(chunks),
            span_start=0.0,
            span_end=duration,
            words=tuple(self.words),
            is_final=True,
        )
        self.events.append(ChunkDelivered(chunk=full, time=duration))

        status = STATUS_COMPLETED
        error: str | None = None
        post_turn = 0
        try:
            _, post_turn = self._post_turn_loop(
                base_ctx=self._events_context(), anchor=duration, first_index=1
            )
        except _ContextOverflow:
            status = STATUS_CONTEXT_OVERFLOW
            post_turn = 0
        except TransportError as exc:
            status = STATUS_TRANSPORT_ERROR
            error = str(exc)
            post_turn = 0

        return TurnTrace(
            scenario_id=self.scenario_id,
            mode=MODE_CALL_AFTER_LISTEN,
            config=self.config,
            events=tuple(self.events),
            status=status,
            post_turn_tokens=post_turn,
            error=error,
        )

    def run_combined(self) -> TurnTrace:
        chunks = segment_transcript(self.words, self.config)
        if not chunks:
            raise ValidationError("scenario transcript is empty")
        n = len(chunks)
        t = self.config.t_chunk
        eoa_time = n * t
        budget = thinking_budget(self.config)
        duration = transcript_duration(self.words)

        interrupted_at: int | None = None
        t_interrupt: float | None = None
        undelivered: SpeechChunk | None = None
        post_turn = 0
        status = STATUS_COMPLETED
        error: str | None = None
        try:
            for i, chunk in enumerate(chunks[:-1], 1):
                deliver_at = i * t
                self.events.append(ChunkDelivered(chunk=chunk, time=deliver_at))
                thought, offset = self._think_block(
                    index=i, anchor=deliver_at, offset=0, budget=budget, eoa_time=eoa_time
                )
                if thought.contains_interrupt:
                    response = self._response_block(anchor=deliver_at, offset=offset)
                    interrupted_at = i
                    t_interrupt = response.emit_time
                    undelivered = chunks[i]
                    break
            else:
                carry = self._carryover_tokens()
                full = SpeechChunk(
                    index=n,
                    span_start=0.0,
                    span_end=duration,
                    words=tuple(self.words),
                    is_final=True,
                )
                self.events.append(ChunkDelivered(chunk=full, time=eoa_time))
                base_ctx = (
                    list(self.preamble)
                    + list(full.texts)
                    + [self.markers.eoa]
                    + carry
                )
                _, post_turn = self._post_turn_loop(
                    base_ctx=base_ctx, anchor=eoa_time, first_index=n
                )
        except _ContextOverflow:
            status = STATUS_CONTEXT_OVERFLOW
            post_turn = 0
        except TransportError as exc:
            status = STATUS_TRANSPORT_ERROR
            error = str(exc)
            post_turn = 0

        return TurnTrace(
            scenario_id=self.scenario_id,
            mode=MODE_COMBINED,
            config=self.config,
            events=tuple(self.events),
            status=status,
            interrupted_at=interrupted_at,
            t_interrupt=t_interrupt,
            undelivered_overlap=undelivered,
            post_turn_tokens=post_turn,
            error=error,
        )

    def _carryover_tokens(self) -> list[str]:
        """Successful pre-turn-end exchanges rendered as post-turn-style blocks.

        Failed calls are dropped; each consumed id keeps only its first
        (consuming) exchange, re-serialized canonically.
        """
        m = self.markers
        seen: set[int] = set()
        out: list[str] = []
        for ev in self.events:
            if not isinstance(ev, ToolExchange) or ev.outcome.is_error:
                continue
            assert ev.outcome.matched is not None
            if ev.outcome.matched in seen:
                continue
            seen.add(ev.outcome.matched)
            out.append(m.think_open)
            out.extend(render_call_span(ev.call.name, ev.call.arguments, m))
            out.extend(tokenize(ev.outcome.response_payload))
            out.append(m.think_close)
        return out


def _runner(
    scenario: Any,
    backend: GenerationBackend,
    tool_env: ToolEnvironment | None,
    config: ChunkingConfig,
    markers: MarkerVocabulary,
    iteration_cap: int,
) -> _TurnRunner:
    env = tool_env
    if env is None:
        env = ToolEnvironment(
            specs=tuple(getattr(scenario, "tools", ()) or ()),
            ground_truth=tuple(getattr(scenario, "ground_truth_calls", ()) or ()),
        )
    preamble_text = getattr(scenario, "system_preamble", None)
    return _TurnRunner(
        scenario_id=scenario.id,
        words=scenario.words,
        backend=backend,
        env=env,
        config=config,
        markers=markers,
        preamble=tokenize(preamble_text) if preamble_text else (),
        iteration_cap=iteration_cap,
    )


def run_shanks(
    scenario: Any,
    backend: GenerationBackend,
    tool_env: ToolEnvironment | None = None,
    config: ChunkingConfig = ChunkingConfig(),
    *,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> TurnTrace:
    """Simulate one turn of the interleaved think-while-listening protocol."""
    return _runner(scenario, backend, tool_env, config, markers, DEFAULT_ITERATION_CAP).run_shanks()


def run_call_after_listen(
    scenario: Any,
    backend: GenerationBackend,
    tool_env: ToolEnvironment | None = None,
    config: ChunkingConfig = ChunkingConfig(),
    *,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> TurnTrace:
    """Simulate the baseline that only acts once the whole utterance arrived."""
    return _runner(
        scenario, backend, tool_env, config, markers, iteration_cap
    ).run_call_after_listen()


def run_combined(
    scenario: Any,
    backend: GenerationBackend,
    tool_env: ToolEnvironment | None = None,
    config: ChunkingConfig = ChunkingConfig(),
    *,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> TurnTrace:
    """Simulate the interleaved protocol with a post-turn resolve loop."""
    return _runner(scenario, backend, tool_env, config, markers, iteration_cap).run_combined()


# -- trace serialization ------------------------------------------------------


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _word_obj(w: WordTiming) -> list[Any]:
    return [w.text, w.start, w.end]


def _chunk_obj(c: SpeechChunk) -> dict[str, Any]:
    return {
        "index": c.index,
        "is_final": c.is_final,
        "span_end": c.span_end,
        "span_start": c.span_start,
        "words": [_word_obj(w) for w in c.words],
    }


def _chunk_from(obj: dict[str, Any]) -> SpeechChunk:
    return SpeechChunk(
        index=obj["index"],
        span_start=obj["span_start"],
        span_end=obj["span_end"],
        words=tuple(WordTiming(w[0], w[1], w[2]) for w in obj["words"]),
        is_final=obj["is_final"],
    )


def _config_obj(c: ChunkingConfig) -> dict[str, Any]:
    return {
        "final_budget": c.final_budget,
        "max_context": c.max_context,
        "n_tps": c.n_tps,
        "t_chunk": c.t_chunk,
    }


def _config_from(obj: dict[str, Any]) -> ChunkingConfig:
    return ChunkingConfig(
        t_chunk=obj["t_chunk"],
        n_tps=obj["n_tps"],
        max_context=obj["max_context"],
        final_budget=obj["final_budget"],
    )


def _event_obj(ev: TraceEvent) -> dict[str, Any]:
    if isinstance(ev, ChunkDelivered):
        return {"kind": "chunk", "time": ev.time, "chunk": _chunk_obj(ev.chunk)}
    if isinstance(ev, ThinkingGenerated):
        return {
            "kind": "thinking",
            "time": ev.time,
            "end_time": ev.end_time,
            "chunk": {
                "contains_interrupt": ev.chunk.contains_interrupt,
                "index": ev.chunk.index,
                "injected_tool_tokens": ev.chunk.injected_tool_tokens,
                "tokens": list(ev.chunk.tokens),
                "truncated": ev.chunk.truncated,
            },
        }
    if isinstance(ev, ToolExchange):
        return {
            "kind": "tool",
            "time": ev.time,
            "call": {
                "arguments": dict(ev.call.arguments),
                "name": ev.call.name,
                "raw_span": list(ev.call.raw_span),
            },
            "outcome": {
                "is_error": ev.outcome.is_error,
                "matched": ev.outcome.matched,
                "phase": ev.outcome.phase,
                "response_payload": ev.outcome.response_payload,
            },
        }
    if isinstance(ev, ResponseEmitted):
        return {
            "kind": "response",
            "chunk": {"emit_time": ev.chunk.emit_time, "tokens": list(ev.chunk.tokens)},
        }
    raise ValidationError(f"unknown event type {type(ev).__name__}")


def _event_from(obj: dict[str, Any]) -> TraceEvent:
    kind = obj.get("kind")
    if kind == "chunk":
        return ChunkDelivered(chunk=_chunk_from(obj["chunk"]), time=obj["time"])
    if kind == "thinking":
        c = obj["chunk"]
        return ThinkingGenerated(
            chunk=ThinkingChunk(
                index=c["index"],
                tokens=tuple(c["tokens"]),
                truncated=c["truncated"],
                contains_interrupt=c["contains_interrupt"],
                injected_tool_tokens=c["injected_tool_tokens"],
            ),
            time=obj["time"],
            end_time=obj["end_time"],
        )
    if kind == "tool":
        call = obj["call"]
        outcome = obj["outcome"]
        return ToolExchange(
            call=ToolCall(
                name=call["name"],
                arguments=call["arguments"],
                raw_span=tuple(call["raw_span"]),
            ),
            outcome=MatchOutcome(
                matched=outcome["matched"],
                response_payload=outcome["response_payload"],
                is_error=outcome["is_error"],
                phase=outcome["phase"],
            ),
            time=obj["time"],
        )
    if kind == "response":
        c = obj["chunk"]
        return ResponseEmitted(chunk=ResponseChunk(tokens=tuple(c["tokens"]), emit_time=c["emit_time"]))
    raise ValidationError(f"unknown trace event kind {kind!r}")


def trace_to_lines(trace: TurnTrace) -> list[str]:
    """Line-delimited JSON: header, one event per line, then a summary record."""
    lines = [
        _dump(
            {
                "type": "trace",
                "version": 1,
                "mode": trace.mode,
                "scenario_id": trace.scenario_id,
                "config": _config_obj(trace.config),
            }
        )
    ]
    lines.extend(_dump(_event_obj(ev)) for ev in trace.events)
    lines.append(
        _dump(
            {
                "kind": "summary",
                "status": trace.status,
                "interrupted_at": trace.interrupted_at,
                "t_interrupt": trace.t_interrupt,
                "undelivered_overlap": (
                    None
                    if trace.undelivered_overlap is None
                    else _chunk_obj(trace.undelivered_overlap)
                ),
                "post_turn_tokens": trace.post_turn_tokens,
                "error": trace.error,
            }
        )
    )
    return lines


def trace_from_lines(lines: Sequence[str], *, path: str | None = None) -> TurnTrace:
    if not lines:
        raise ValidationError("empty trace file", path=path, line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bad header: {exc.msg}", path=path, line=1)
    if header.get("type") != "trace":
        raise ValidationError(f"expected trace header, got {header.get('type')!r}", path=path, line=1)

    events: list[TraceEvent] = []
    summary: dict[str, Any] | None = None
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad record: {exc.msg}", path=path, line=lineno)
        if obj.get("kind") == "summary":
            summary = obj
            continue
        try:
            events.append(_event_from(obj))
        except (KeyError, ValidationError) as exc:
            raise ValidationError(f"bad event: {exc}", path=path, line=lineno)
    if summary is None:
        raise ValidationError("trace file has no summary record", path=path, line=len(lines))

    return TurnTrace(
        scenario_id=header["scenario_id"],
        mode=header["mode"],
        config=_config_from(header["config"]),
        events=tuple(events),
        status=summary["status"],
        interrupted_at=summary["interrupted_at"],
        t_interrupt=summary["t_interrupt"],
        undelivered_overlap=(
            None
            if summary["undelivered_overlap"] is None
            else _chunk_from(summary["undelivered_overlap"])
        ),
        post_turn_tokens=summary["post_turn_tokens"],
        error=summary["error"],
    )
