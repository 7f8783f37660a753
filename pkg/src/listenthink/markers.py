"""Marker-token vocabulary and the whitespace tokenizer shared across the engine.

Tokens are opaque strings. The default tokenization splits on whitespace and
treats every bracketed control marker as a single token, so any text that
keeps markers whitespace-delimited round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ValidationError


@dataclass(frozen=True)
class MarkerVocabulary:
    """The control tokens the protocol injects into or reads out of token streams."""

    eopa: str = "[EOPA]"
    eoa: str = "[EOA]"
    think_open: str = "<think>"
    think_close: str = "</think>"
    interrupt: str = "[INTERRUPT]"
    no_interrupt: str = "[NO_INTERRUPT]"
    tool_open: str = "[TOOL_CALL]"
    tool_close: str = "[/TOOL_CALL]"

    def __post_init__(self) -> None:
        values = [getattr(self, f.name) for f in fields(self)]
        if len(set(values)) != len(values):
            raise ValidationError("marker tokens must be pairwise distinct")
        for value in values:
            if not value or any(ch.isspace() for ch in value):
                raise ValidationError(f"marker {value!r} must be a single non-empty token")


DEFAULT_MARKERS = MarkerVocabulary()


def tokenize(text: str) -> list[str]:
    """Split text into tokens on whitespace."""
    return text.split()


def detokenize(tokens: list[str] | tuple[str, ...]) -> str:
    """Inverse of :func:`tokenize` up to whitespace normalization."""
    return " ".join(tokens)
