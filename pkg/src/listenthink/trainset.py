"""Training-sequence assembly, validation, and corpus serialization.

A training sequence is an ordered list of blocks, each tagged with the token
kind and a loss-mask bit. Model emissions (thinking text with its markers,
the final response) carry ``mask=True``; everything the model merely reads
(user speech, the end-of-partial/end-of-audio delimiters, spliced tool
responses) carries ``mask=False``.

Three shapes exist: the plain interleaving, the interrupted turn (cut short
after the thinking block that carries the interrupt marker), and the
tool-call shape in which a spliced tool response splits its thinking block
in two.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .errors import ValidationError
from .markers import DEFAULT_MARKERS, MarkerVocabulary
from .timeline import SpeechChunk


class BlockKind(enum.Enum):
    SPEECH = "speech"
    THINKING = "thinking"
    TOOL_RESPONSE = "tool_response"
    FINAL_RESPONSE = "final_response"
    MARKER = "marker"


class SequenceShape(enum.Enum):
    PLAIN = "plain"
    INTERRUPT = "interrupt"
    TOOLCALL = "toolcall"


@dataclass(frozen=True)
class TrainBlock:
    kind: BlockKind
    tokens: tuple[str, ...]
    loss_mask: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass(frozen=True)
class TrainSequence:
    shape: SequenceShape
    blocks: tuple[TrainBlock, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))


@dataclass(frozen=True)
class PayloadPlacement:
    """A tool-response payload to splice into a thinking block.

    ``position`` indexes into the thinking body (marker-free token list); the
    payload is inserted there, splitting the block.
    """

    chunk_index: int
    position: int
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))


def expected_mask(block: TrainBlock, markers: MarkerVocabulary = DEFAULT_MARKERS) -> bool:
    """The loss-mask bit a block of this kind and content must carry."""
    if block.kind in (BlockKind.THINKING, BlockKind.FINAL_RESPONSE):
        return True
    if block.kind == BlockKind.MARKER:
        model_emitted = {markers.think_open, markers.think_close, markers.interrupt}
        return all(tok in model_emitted for tok in block.tokens) and bool(block.tokens)
    return False


def _strip_outer_markers(body: Sequence[str], markers: MarkerVocabulary) -> list[str]:
    out = list(body)
    if out and out[0] == markers.think_open:
        out = out[1:]
    if out and out[-1] == markers.think_close:
        out = out[:-1]
    return out


def _speech_blocks(chunk: SpeechChunk, markers: MarkerVocabulary, final: bool) -> list[TrainBlock]:
    delim = markers.eoa if final else markers.eopa
    return [
        TrainBlock(BlockKind.SPEECH, chunk.texts, False),
        TrainBlock(BlockKind.MARKER, (delim,), False),
    ]


def _thinking_block(body: Sequence[str], markers: MarkerVocabulary) -> TrainBlock:
    tokens = [markers.think_open] + _strip_outer_markers(body, markers) + [markers.think_close]
    return TrainBlock(BlockKind.THINKING, tuple(tokens), True)


def assemble_plain(
    chunks: Sequence[SpeechChunk],
    thinkings: Sequence[Sequence[str]],
    response: Sequence[str],
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> TrainSequence:
    """Interleave speech and thinking for a full turn, response at the end."""
    if len(chunks) != len(thinkings) or not chunks:
        raise ValidationError(
            f"need one thinking body per chunk, got {len(chunks)} chunks "
            f"and {len(thinkings)} thinkings"
        )
    blocks: list[TrainBlock] = []
    last = len(chunks)
    for i, (chunk, body) in enumerate(zip(chunks, thinkings), 1):
        blocks.extend(_speech_blocks(chunk, markers, final=i == last))
        blocks.append(_thinking_block(body, markers))
    blocks.append(TrainBlock(BlockKind.FINAL_RESPONSE, tuple(response), True))
    return TrainSequence(SequenceShape.PLAIN, tuple(blocks))


def assemble_interrupt(
    chunks: Sequence[SpeechChunk],
    thinkings: Sequence[Sequence[str]],
    response: Sequence[str],
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> TrainSequence:
    """Turn cut short at chunk k: the k-th thinking carries the interrupt marker.

    The k-th speech chunk keeps the end-of-partial delimiter because the user
    had not finished speaking when the turn was cut.
    """
    if len(chunks) != len(thinkings) or not chunks:
        raise ValidationError(
            f"need one thinking body per chunk, got {len(chunks)} chunks "
            f"and {len(thinkings)} thinkings"
        )
    for i, body in enumerate(thinkings, 1):
        has_marker = markers.interrupt in body
        if i < len(thinkings) and has_marker:
            raise ValidationError(f"interrupt marker appears in thinking {i}, before the last block")
        if i == len(thinkings) and not has_marker:
            raise ValidationError("last thinking block must contain the interrupt marker")
    blocks: list[TrainBlock] = []
    for chunk, body in zip(chunks, thinkings):
        blocks.extend(_speech_blocks(chunk, markers, final=False))
        blocks.append(_thinking_block(body, markers))
    blocks.append(TrainBlock(BlockKind.FINAL_RESPONSE, tuple(response), True))
    return TrainSequence(SequenceShape.INTERRUPT, tuple(blocks))


def assemble_toolcall(
    chunks: Sequence[SpeechChunk],
    thinkings: Sequence[Sequence[str]],
    placements: Sequence[PayloadPlacement],
    response: Sequence[str],
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> TrainSequence:
    """Plain shape in which tool-response payloads split their thinking blocks.

    Each placement inserts an unmasked tool-response block at its position in
    the thinking body, splitting the surrounding (masked) thinking into
    fragments. Callers put the no-op template message into chunks without
    calls; this function does not inject it.
    """
    if len(chunks) != len(thinkings) or not chunks:
        raise ValidationError(
            f"need one thinking body per chunk, got {len(chunks)} chunks "
            f"and {len(thinkings)} thinkings"
        )
    by_chunk: dict[int, list[PayloadPlacement]] = {}
    for p in placements:
        if not 1 <= p.chunk_index <= len(chunks):
            raise ValidationError(f"placement references chunk {p.chunk_index} of {len(chunks)}")
        by_chunk.setdefault(p.chunk_index, []).append(p)

    blocks: list[TrainBlock] = []
    last = len(chunks)
    for i, (chunk, body) in enumerate(zip(chunks, thinkings), 1):
        blocks.extend(_speech_blocks(chunk, markers, final=i == last))
        stripped = _strip_outer_markers(body, markers)
        here = sorted(by_chunk.get(i, []), key=lambda p: p.position)
        if not here:
            blocks.append(_thinking_block(stripped, markers))
            continue
        cursor = 0
        fragments: list[TrainBlock] = []
        for j, p in enumerate(here):
            if not cursor <= p.position <= len(stripped):
                raise ValidationError(
                    f"placement position {p.position} out of range in thinking {i} "
                    f"(length {len(stripped)})"
                )
            head = list(stripped[cursor : p.position])
            if j == 0:
                head = [markers.think_open] + head
            fragments.append(TrainBlock(BlockKind.THINKING, tuple(head), True))
            fragments.append(TrainBlock(BlockKind.TOOL_RESPONSE, p.tokens, False))
            cursor = p.position
        tail = list(stripped[cursor:]) + [markers.think_close]
        fragments.append(TrainBlock(BlockKind.THINKING, tuple(tail), True))
        blocks.extend(fragments)
    blocks.append(TrainBlock(BlockKind.FINAL_RESPONSE, tuple(response), True))
    return TrainSequence(SequenceShape.TOOLCALL, tuple(blocks))


def validate_sequence(
    seq: TrainSequence, markers: MarkerVocabulary = DEFAULT_MARKERS
) -> list[str]:
    """Structural diagnostics for one sequence; empty means valid."""
    problems: list[str] = []
    for idx, block in enumerate(seq.blocks):
        want = expected_mask(block, markers)
        if block.loss_mask != want:
            problems.append(
                f"block {idx} ({block.kind.value}) has loss_mask={block.loss_mask}, expected {want}"
            )
    if not seq.blocks or seq.blocks[-1].kind != BlockKind.FINAL_RESPONSE:
        problems.append("sequence must end with exactly one final-response block")
    if sum(1 for b in seq.blocks if b.kind == BlockKind.FINAL_RESPONSE) != 1:
        problems.append("sequence must contain exactly one final-response block")

    thinking_groups = _thinking_groups(seq)
    for start, group in thinking_groups:
        first, last = group[0], group[-1]
        if not first.tokens or first.tokens[0] != markers.think_open:
            problems.append(f"thinking group at block {start} does not open with {markers.think_open}")
        if not last.tokens or last.tokens[-1] != markers.think_close:
            problems.append(f"thinking group at block {start} does not close with {markers.think_close}")
    if seq.shape == SequenceShape.INTERRUPT:
        if any(b.kind == BlockKind.MARKER and markers.eoa in b.tokens for b in seq.blocks):
            problems.append("interrupted sequence must not contain the end-of-audio marker")
        bodies = [g for _, g in thinking_groups]
        if bodies:
            if not any(markers.interrupt in b.tokens for b in bodies[-1]):
                problems.append("last thinking block must contain the interrupt marker")
            for i, group in enumerate(bodies[:-1], 1):
                if any(markers.interrupt in b.tokens for b in group):
                    problems.append(f"interrupt marker appears in thinking group {i}, before the last")
    elif seq.shape == SequenceShape.PLAIN:
        if any(b.kind == BlockKind.TOOL_RESPONSE for b in seq.blocks):
            problems.append("plain sequence must not contain tool-response blocks")
    return problems


def _thinking_groups(seq: TrainSequence) -> list[tuple[int, list[TrainBlock]]]:
    """Maximal runs of thinking/tool-response blocks (one run per thinking slot)."""
    groups: list[tuple[int, list[TrainBlock]]] = []
    current: list[TrainBlock] = []
    start = -1
    for idx, block in enumerate(seq.blocks):
        if block.kind in (BlockKind.THINKING, BlockKind.TOOL_RESPONSE):
            if not current:
                start = idx
            current.append(block)
        elif current:
            groups.append((start, current))
            current = []
    if current:
        groups.append((start, current))
    return groups


# -- corpus serialization -----------------------------------------------------


def sequence_to_obj(seq: TrainSequence) -> dict[str, Any]:
    return {
        "shape": seq.shape.value,
        "blocks": [
            {"kind": b.kind.value, "mask": b.loss_mask, "tokens": list(b.tokens)}
            for b in seq.blocks
        ],
    }


def sequence_from_obj(obj: dict[str, Any]) -> TrainSequence:
    try:
        shape = SequenceShape(obj["shape"])
        blocks = tuple(
            TrainBlock(BlockKind(b["kind"]), tuple(b["tokens"]), b["mask"])
            for b in obj["blocks"]
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"malformed training sequence: {exc}")
    return TrainSequence(shape, blocks)


def corpus_to_lines(sequences: Iterable[TrainSequence]) -> list[str]:
    lines = [json.dumps({"type": "train-corpus", "version": 1}, sort_keys=True, separators=(",", ":"))]
    for seq in sequences:
        lines.append(json.dumps(sequence_to_obj(seq), sort_keys=True, separators=(",", ":")))
    return lines


def corpus_from_lines(lines: Sequence[str], *, path: str | None = None) -> list[TrainSequence]:
    if not lines:
        raise ValidationError("empty corpus file", path=path, line=1)
    header = json.loads(lines[0])
    if header.get("type") != "train-corpus":
        raise ValidationError(f"expected train-corpus header, got {header.get('type')!r}", path=path, line=1)
    out = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            out.append(sequence_from_obj(json.loads(raw)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise ValidationError(f"bad sequence: {exc}", path=path, line=lineno)
    return out
