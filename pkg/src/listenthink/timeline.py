"""Transcript chunking and thinking-budget arithmetic.

Pure functions over timestamped word transcripts: fixed-duration segmentation
into speech chunks and the per-chunk token budget derived from the chunk
duration and the model's generation rate. A word belongs to the chunk whose
time window contains the word's *end* timestamp (a word is only available once
fully uttered); a word ending exactly on a boundary ``i * t_chunk`` belongs to
chunk ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ValidationError


@dataclass(frozen=True)
class WordTiming:
    """One word of the user transcript with its start/end time in seconds."""

    text: str
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.text or any(ch.isspace() for ch in self.text):
            raise ValidationError(f"word text must be a single non-empty token, got {self.text!r}")
        if self.start < 0:
            raise ValidationError(f"word {self.text!r} starts before 0 ({self.start})")
        if self.end <= self.start:
            raise ValidationError(
                f"word {self.text!r} must end after it starts ({self.start} .. {self.end})"
            )


@dataclass(frozen=True)
class ChunkingConfig:
    """Segmentation and generation-rate settings for one simulated session.

    Attributes:
        t_chunk: Chunk duration in seconds.
        n_tps: Model generation rate in tokens per second. The per-chunk
            thinking budget is ``floor(t_chunk * n_tps)`` tokens.
        max_context: Hard context-length limit; a turn is terminated when the
            next generation's context would exceed it.
        final_budget: Token budget for the thinking block after the turn has
            ended. ``None`` means unbounded (the mid-turn budget exists to fit
            thinking into the next chunk's window, which no longer applies).
    """

    t_chunk: float = 4.0
    n_tps: float = 80.0
    max_context: int = 32768
    final_budget: int | None = None

    def __post_init__(self) -> None:
        if self.t_chunk <= 0:
            raise ValidationError(f"t_chunk must be positive, got {self.t_chunk}")
        if self.n_tps < 0:
            raise ValidationError(f"n_tps must be >= 0, got {self.n_tps}")
        if self.max_context <= 0:
            raise ValidationError(f"max_context must be positive, got {self.max_context}")
        if self.final_budget is not None and self.final_budget < 0:
            raise ValidationError(f"final_budget must be >= 0, got {self.final_budget}")


@dataclass(frozen=True)
class SpeechChunk:
    """One fixed-duration slice of the user's transcript.

    ``index`` is 1-based. All chunks span exactly ``t_chunk`` seconds except
    the final one, which ends at the last word's end time. Every contained
    word ends inside ``(span_start, span_end]``.
    """

    index: int
    span_start: float
    span_end: float
    words: tuple[WordTiming, ...]
    is_final: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        if self.index < 1:
            raise ValidationError(f"chunk index must be >= 1, got {self.index}")
        if self.span_end <= self.span_start:
            raise ValidationError(
                f"chunk {self.index} span must be non-empty "
                f"({self.span_start} .. {self.span_end})"
            )

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(w.text for w in self.words)


def validate_words(words: Sequence[WordTiming]) -> None:
    """Check that words are sorted by start and non-overlapping."""
    for prev, cur in zip(words, words[1:]):
        if cur.start < prev.end:
            raise ValidationError(
                f"words {prev.text!r} and {cur.text!r} overlap "
                f"({prev.start}..{prev.end} then {cur.start}..{cur.end})"
            )


def transcript_duration(words: Sequence[WordTiming]) -> float:
    """End time of the last word, or 0.0 for an empty transcript."""
    return words[-1].end if words else 0.0


def segment_transcript(
    words: Iterable[WordTiming], config: ChunkingConfig
) -> list[SpeechChunk]:
    """Partition a transcript into consecutive fixed-duration speech chunks.

    Chunk ``i`` holds exactly the words whose end timestamp falls in
    ``((i-1) * t_chunk, i * t_chunk]``. The chunk count is
    ``ceil(duration / t_chunk)``; intermediate chunks may be empty of words.
    The final chunk is marked and its span ends at the transcript duration.

    Raises:
        ValidationError: if the words are unsorted or overlapping.
    """
    word_list = list(words)
    if not word_list:
        return []
    validate_words(word_list)

    duration = transcript_duration(word_list)
    n_chunks = max(1, math.ceil(duration / config.t_chunk))

    buckets: list[list[WordTiming]] = [[] for _ in range(n_chunks)]
    for word in word_list:
        idx = max(1, math.ceil(word.end / config.t_chunk))
        buckets[idx - 1].append(word)

    chunks = []
    for i in range(1, n_chunks + 1):
        is_final = i == n_chunks
        chunks.append(
            SpeechChunk(
                index=i,
                span_start=(i - 1) * config.t_chunk,
                span_end=duration if is_final else i * config.t_chunk,
                words=tuple(buckets[i - 1]),
                is_final=is_final,
            )
        )
    return chunks


def thinking_budget(config: ChunkingConfig) -> int:
    """Token budget for one mid-turn thinking block: floor(t_chunk * n_tps)."""
    return int(math.floor(config.t_chunk * config.n_tps))
