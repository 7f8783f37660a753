"""Tool-call parsing, ground-truth matching, and earliest-callable-time rules.

A tool call travels inside thinking text as a delimited JSON object::

    [TOOL_CALL] {"name": "Search_Flights", "arguments": {"origin": "HGH"}} [/TOOL_CALL]

The JSON may span several whitespace-separated tokens; the parser joins the
interior of a span with single spaces before decoding. Calls are matched
against a scenario's ground-truth set structurally (argument key order,
surrounding whitespace, and numeric spelling are normalized away); a match
consumes the ground-truth entry and returns its recorded response, anything
else returns a fixed generic error string.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping, Sequence

from .errors import AnnotationError, ValidationError
from .markers import DEFAULT_MARKERS, MarkerVocabulary, tokenize
from .timeline import ChunkingConfig, WordTiming

if TYPE_CHECKING:
    from .orchestrator import ThinkingChunk

GENERIC_TOOL_ERROR = "Error: the tool call could not be completed."
NO_CALL_TEMPLATE = "No additional tool calls can be made at this point."

EARLY = "early"
LATE = "late"


@dataclass(frozen=True)
class ToolParameter:
    type: str
    required: bool = True
    description: str = ""


@dataclass(frozen=True)
class ToolSpec:
    """Declared name, description, and parameter schema of one callable tool."""

    name: str
    description: str = ""
    parameters: tuple[tuple[str, ToolParameter], ...] = ()

    def __post_init__(self) -> None:
        if isinstance(self.parameters, Mapping):
            object.__setattr__(self, "parameters", tuple(sorted(self.parameters.items())))
        else:
            object.__setattr__(self, "parameters", tuple(self.parameters))
        names = [n for n, _ in self.parameters]
        if len(set(names)) != len(names):
            raise ValidationError(f"tool {self.name!r} has duplicate parameter names")

    def parameter(self, name: str) -> ToolParameter | None:
        for pname, param in self.parameters:
            if pname == name:
                return param
        return None


@dataclass(frozen=True)
class GroundTruthCall:
    """One expected call with its canned response and dependency edges."""

    id: int
    name: str
    arguments: Mapping[str, Any]
    response: str
    depends_on: frozenset[int] = frozenset()
    earliest_time: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "arguments", dict(self.arguments))
        object.__setattr__(self, "depends_on", frozenset(self.depends_on))


@dataclass(frozen=True)
class ToolCall:
    """A call the model emitted, with the token span it occupied."""

    name: str
    arguments: Mapping[str, Any]
    raw_span: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "arguments", dict(self.arguments))
        object.__setattr__(self, "raw_span", tuple(self.raw_span))


@dataclass(frozen=True)
class MatchOutcome:
    matched: int | None
    response_payload: str
    is_error: bool
    phase: str  # EARLY or LATE


# A matcher maps (model call, unconsumed candidates) to a candidate id or None.
Matcher = Callable[[ToolCall, Sequence[GroundTruthCall]], "int | None"]


@dataclass
class ToolEnvironment:
    """Per-session mutable view over a scenario's immutable ground truth."""

    specs: tuple[ToolSpec, ...] = ()
    ground_truth: tuple[GroundTruthCall, ...] = ()
    consumed: set[int] = field(default_factory=set)
    matcher: Matcher | None = None

    def __post_init__(self) -> None:
        self.specs = tuple(self.specs)
        self.ground_truth = tuple(sorted(self.ground_truth, key=lambda g: g.id))
        ids = [g.id for g in self.ground_truth]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate ground-truth call ids: {ids}")

    def spec_for(self, name: str) -> ToolSpec | None:
        for spec in self.specs:
            if spec.name == name:
                return spec
        return None

    def call_by_id(self, call_id: int) -> GroundTruthCall:
        for gt in self.ground_truth:
            if gt.id == call_id:
                return gt
        raise ValidationError(f"unknown ground-truth call id {call_id}")

    def reset(self) -> None:
        self.consumed.clear()


@dataclass(frozen=True)
class ToolCallScan:
    calls: tuple[ToolCall, ...]
    diagnostics: tuple[str, ...]


def scan_tool_calls(
    tokens: Sequence[str], markers: MarkerVocabulary = DEFAULT_MARKERS
) -> ToolCallScan:
    """Extract every well-formed call span; malformed spans become diagnostics."""
    calls: list[ToolCall] = []
    diagnostics: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        if tokens[i] != markers.tool_open:
            i += 1
            continue
        close = None
        reopen = None
        for j in range(i + 1, n):
            if tokens[j] == markers.tool_open:
                reopen = j
                break
            if tokens[j] == markers.tool_close:
                close = j
                break
        if close is None:
            if reopen is not None:
                diagnostics.append(f"span opened at token {i} reopened before closing")
                i = reopen
            else:
                diagnostics.append(f"span opened at token {i} never closed")
                i = n
            continue
        body = " ".join(tokens[i + 1 : close])
        call = _decode_call(body, (i, close), diagnostics)
        if call is not None:
            calls.append(call)
        i = close + 1
    return ToolCallScan(tuple(calls), tuple(diagnostics))


def _decode_call(body: str, span: tuple[int, int], diagnostics: list[str]) -> ToolCall | None:
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        diagnostics.append(f"span at tokens {span}: invalid JSON ({exc.msg})")
        return None
    if (
        not isinstance(obj, dict)
        or not isinstance(obj.get("name"), str)
        or not isinstance(obj.get("arguments"), dict)
    ):
        diagnostics.append(f"span at tokens {span}: object must carry string name and arguments map")
        return None
    return ToolCall(name=obj["name"], arguments=obj["arguments"], raw_span=span)


def parse_tool_calls(
    tokens: Sequence[str], markers: MarkerVocabulary = DEFAULT_MARKERS
) -> list[ToolCall]:
    """Well-formed tool calls in the token stream, in order of appearance."""
    return list(scan_tool_calls(tokens, markers).calls)


def render_call_span(
    name: str, arguments: Mapping[str, Any], markers: MarkerVocabulary = DEFAULT_MARKERS
) -> list[str]:
    """Canonical token rendering of a call, inverse-compatible with the parser."""
    body = json.dumps({"name": name, "arguments": dict(arguments)}, sort_keys=True,
                      separators=(",", ":"))
    return [markers.tool_open, body, markers.tool_close]


def _canonical_value(value: Any, type_tag: str | None = None) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip()
        if type_tag in ("number", "integer", "float", "int"):
            try:
                return float(text)
            except ValueError:
                return text
        return text
    if isinstance(value, list):
        return tuple(_canonical_value(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((k, _canonical_value(v)) for k, v in value.items()))
    return value


def canonical_arguments(arguments: Mapping[str, Any], spec: ToolSpec | None = None) -> dict[str, Any]:
    """Argument map normalized for structural comparison."""
    out: dict[str, Any] = {}
    for key, value in arguments.items():
        param = spec.parameter(key) if spec is not None else None
        out[key] = _canonical_value(value, param.type if param is not None else None)
    return out


def structural_match(
    call: ToolCall, candidates: Sequence[GroundTruthCall], spec: ToolSpec | None = None
) -> int | None:
    """Default matcher: equal name and canonically equal arguments; lowest id wins."""
    want = canonical_arguments(call.arguments, spec)
    for gt in sorted(candidates, key=lambda g: g.id):
        if gt.name == call.name and canonical_arguments(gt.arguments, spec) == want:
            return gt.id
    return None


def match_call(
    call: ToolCall, env: ToolEnvironment, now: float, eoa_time: float
) -> MatchOutcome:
    """Resolve a model call against the environment's ground truth.

    The first unconsumed match is consumed and its recorded response returned.
    An exact repeat of an already-consumed call replays the cached response
    without consuming anything. No match yields the generic error payload.
    ``phase`` records whether the exchange happened before the turn-end
    delivery time.
    """
    phase = EARLY if now < eoa_time else LATE
    spec = env.spec_for(call.name)

    unconsumed = [gt for gt in env.ground_truth if gt.id not in env.consumed]
    if env.matcher is not None:
        matched_id = env.matcher(call, unconsumed)
    else:
        matched_id = structural_match(call, unconsumed, spec)
    if matched_id is not None:
        env.consumed.add(matched_id)
        return MatchOutcome(
            matched=matched_id,
            response_payload=env.call_by_id(matched_id).response,
            is_error=False,
            phase=phase,
        )

    replay = structural_match(
        call, [gt for gt in env.ground_truth if gt.id in env.consumed], spec
    )
    if replay is not None:
        return MatchOutcome(
            matched=replay,
            response_payload=env.call_by_id(replay).response,
            is_error=False,
            phase=phase,
        )

    return MatchOutcome(matched=None, response_payload=GENERIC_TOOL_ERROR, is_error=True, phase=phase)


def inject_tool_response(
    thinking: "ThinkingChunk",
    call: ToolCall,
    outcome: MatchOutcome,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> "ThinkingChunk":
    """Splice the outcome's payload immediately after the call's token span.

    Splits the block's self-generated text around the injected tokens without
    touching any marker; ``injected_tool_tokens`` grows by the payload length.
    An empty payload leaves the tokens unchanged.

    Raises:
        ValidationError: the span is out of bounds or not marker-delimited.
    """
    lo, hi = call.raw_span
    if not (0 <= lo <= hi < len(thinking.tokens)):
        raise ValidationError(f"call span ({lo}, {hi}) outside thinking block of "
                              f"{len(thinking.tokens)} tokens")
    if thinking.tokens[lo] != markers.tool_open or thinking.tokens[hi] != markers.tool_close:
        raise ValidationError(f"call span ({lo}, {hi}) is not delimited by call markers")
    payload = tokenize(outcome.response_payload)
    tokens = list(thinking.tokens[: hi + 1]) + payload + list(thinking.tokens[hi + 1 :])
    return replace(
        thinking,
        tokens=tuple(tokens),
        injected_tool_tokens=thinking.injected_tool_tokens + len(payload),
    )


def earliest_call_time(
    gt: GroundTruthCall,
    words: Sequence[WordTiming],
    value_spans: Mapping[str, tuple[int, int]],
    env: ToolEnvironment,
) -> float:
    """Earliest moment the utterance has supplied everything the call needs.

    That is the max of (a) the end timestamp of the last word supporting each
    literal argument and (b) every dependency's own earliest time. A call with
    no arguments and no dependencies is callable at 0.0.

    Raises:
        AnnotationError: a literal argument of a dependency-free call has no
            value span, or a span points outside the transcript.
        ValidationError: a dependency's earliest time is not yet assigned.
    """
    latest = 0.0
    for arg, (lo, hi) in value_spans.items():
        if not (0 <= lo <= hi < len(words)):
            raise AnnotationError(
                f"value span for argument {arg!r} of call {gt.id} is out of range: ({lo}, {hi})"
            )
        latest = max(latest, words[hi].end)
    if not gt.depends_on:
        missing = set(gt.arguments) - set(value_spans)
        if missing:
            raise AnnotationError(
                f"call {gt.id} has literal arguments without value spans: {sorted(missing)}"
            )
    for dep_id in sorted(gt.depends_on):
        dep = env.call_by_id(dep_id)
        if dep.earliest_time is None:
            raise ValidationError(
                f"dependency {dep_id} of call {gt.id} has no earliest time assigned"
            )
        latest = max(latest, dep.earliest_time)
    return latest


def compute_earliest_times(
    env: ToolEnvironment,
    words: Sequence[WordTiming],
    value_spans_by_id: Mapping[int, Mapping[str, tuple[int, int]]],
) -> dict[int, float]:
    """Assign earliest times to every ground-truth call in dependency order.

    Returns a fresh id -> time mapping; the environment is not mutated.

    Raises:
        ValidationError: the dependency graph has a cycle or a dangling edge.
    """
    by_id = {gt.id: gt for gt in env.ground_truth}
    for gt in env.ground_truth:
        for dep in gt.depends_on:
            if dep not in by_id:
                raise ValidationError(f"call {gt.id} depends on unknown call {dep}")

    times: dict[int, float] = {}
    visiting: set[int] = set()

    def visit(call_id: int) -> float:
        if call_id in times:
            return times[call_id]
        if call_id in visiting:
            raise ValidationError(f"dependency cycle involving call {call_id}")
        visiting.add(call_id)
        gt = by_id[call_id]
        for dep in sorted(gt.depends_on):
            visit(dep)
        scratch = ToolEnvironment(
            specs=env.specs,
            ground_truth=tuple(
                GroundTruthCall(g.id, g.name, g.arguments, g.response, g.depends_on,
                                times.get(g.id, g.earliest_time))
                for g in env.ground_truth
            ),
        )
        spans = value_spans_by_id.get(call_id, {})
        times[call_id] = earliest_call_time(scratch.call_by_id(call_id), words, spans, scratch)
        visiting.discard(call_id)
        return times[call_id]

    for call_id in sorted(by_id):
        visit(call_id)
    return times


def assign_to_chunks(
    calls: Sequence[GroundTruthCall], config: ChunkingConfig
) -> dict[int, list[int]]:
    """Map each call (by earliest time) to the thinking block where it fits.

    A call callable at time ``e`` lands in chunk ``ceil(e / t_chunk)`` (at
    least 1): the speech up to that chunk's boundary supplies its arguments.
    The result maps chunk index to call ids; callers insert the no-op template
    message for chunks that do not appear. Ids are listed in dependency order.

    Raises:
        ValidationError: a call lacks an earliest time.
    """
    for gt in calls:
        if gt.earliest_time is None:
            raise ValidationError(f"call {gt.id} has no earliest_time; assign times first")

    ordered = _dependency_order(calls)
    assignment: dict[int, list[int]] = {}
    for gt in ordered:
        chunk = max(1, math.ceil(gt.earliest_time / config.t_chunk))  # type: ignore[operator]
        assignment.setdefault(chunk, []).append(gt.id)
    return dict(sorted(assignment.items()))


def _dependency_order(calls: Sequence[GroundTruthCall]) -> list[GroundTruthCall]:
    by_id = {gt.id: gt for gt in calls}
    done: dict[int, None] = {}
    visiting: set[int] = set()
    out: list[GroundTruthCall] = []

    def visit(call_id: int) -> None:
        if call_id in done:
            return
        if call_id in visiting:
            raise ValidationError(f"dependency cycle involving call {call_id}")
        visiting.add(call_id)
        for dep in sorted(by_id[call_id].depends_on):
            if dep in by_id:
                visit(dep)
        visiting.discard(call_id)
        done[call_id] = None
        out.append(by_id[call_id])

    for gt in sorted(calls, key=lambda g: (g.earliest_time, g.id)):  # type: ignore[arg-type]
        visit(gt.id)
    return out
