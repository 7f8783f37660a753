"""Generation backends.

Defines the request/result contract every backend implements, a deterministic
scripted backend keyed by generation-call ordinal (for tests and simulation),
and an HTTP client speaking a minimal JSON protocol to real model servers.

Wire protocol of the remote backend: ``POST <url>`` with body
``{"context": [str, ...], "max_tokens": int, "stop": [str, ...]}``; the server
responds ``{"tokens": [str, ...], "finish": "stopped"|"budget"|"eos"}``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests

from .errors import ValidationError

logger = logging.getLogger(__name__)


class Finish(enum.Enum):
    """Why a generation ended."""

    STOPPED = "stopped"
    BUDGET = "budget"
    EOS = "eos"


class BackendError(RuntimeError):
    """Base class for generation-backend failures."""


class TransportError(BackendError):
    """The backend could not be reached or returned an unusable response."""

    def __init__(self, message: str, *, retriable: bool):
        super().__init__(message)
        self.retriable = retriable


class ContextOverflowError(BackendError):
    """The request context exceeds the session's context-length limit."""


@dataclass(frozen=True)
class GenerationRequest:
    context: tuple[str, ...]
    max_tokens: int
    stop_markers: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "stop_markers", frozenset(self.stop_markers))
        if self.max_tokens < 0:
            raise ValidationError(f"max_tokens must be >= 0, got {self.max_tokens}")


@dataclass(frozen=True)
class GenerationResult:
    tokens: tuple[str, ...]
    finish: Finish

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))


class GenerationBackend(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


@dataclass(frozen=True)
class ScriptEntry:
    """Tokens to emit for the n-th generation call of a session (1-based)."""

    step: int
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.step < 1:
            raise ValidationError(f"script step must be >= 1, got {self.step}")


def validate_script(entries: Sequence[ScriptEntry]) -> None:
    """Steps must be unique and contiguous from 1."""
    steps = [e.step for e in entries]
    if steps != list(range(1, len(steps) + 1)):
        raise ValidationError(f"script steps must be contiguous from 1, got {steps}")


def scripted_lookup(entries: Sequence[ScriptEntry], step: int) -> list[str]:
    """Tokens for a generation-call ordinal; a missing step yields an empty list."""
    if step < 1:
        raise ValidationError(f"step must be >= 1, got {step}")
    for entry in entries:
        if entry.step == step:
            return list(entry.tokens)
    return []


def _apply_limits(tokens: list[str], request: GenerationRequest) -> GenerationResult:
    """Truncate raw tokens at the first stop marker or the token budget."""
    if request.max_tokens == 0:
        return GenerationResult(tokens=(), finish=Finish.BUDGET)
    out: list[str] = []
    for tok in tokens:
        out.append(tok)
        if tok in request.stop_markers:
            return GenerationResult(tokens=tuple(out), finish=Finish.STOPPED)
        if len(out) == request.max_tokens:
            return GenerationResult(tokens=tuple(out), finish=Finish.BUDGET)
    return GenerationResult(tokens=tuple(out), finish=Finish.EOS)


class ScriptedBackend:
    """Deterministic backend replaying a fixed script.

    Output depends only on (script, generation-call ordinal); the context is
    ignored but recorded on ``requests`` so callers can audit what the session
    would have shown a real model. One instance serves one session; create a
    fresh instance per run.
    """

    def __init__(self, script: Sequence[ScriptEntry]):
        validate_script(script)
        self._script = list(script)
        self._step = 0
        self.requests: list[GenerationRequest] = []

    @property
    def steps_consumed(self) -> int:
        return self._step

    def generate(self, request: GenerationRequest) -> GenerationResult:
        self._step += 1
        self.requests.append(request)
        return _apply_limits(scripted_lookup(self._script, self._step), request)


_FINISH_BY_WIRE = {f.value: f for f in Finish}


class RemoteBackend:
    """HTTP client for a model server implementing the module's wire protocol.

    Instances are stateless per call and safe to share across sessions.
    """

    def __init__(self, url: str, timeout: float = 30.0, session: requests.Session | None = None):
        self.url = url
        self.timeout = timeout
        self._session = session or requests.Session()

    def generate(self, request: GenerationRequest) -> GenerationResult:
        body = {
            "context": list(request.context),
            "max_tokens": request.max_tokens,
            "stop": sorted(request.stop_markers),
        }
        try:
            resp = self._session.post(self.url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"backend unreachable at {self.url}: {exc}", retriable=True)
        if resp.status_code >= 500:
            raise TransportError(f"backend error {resp.status_code} from {self.url}", retriable=True)
        if resp.status_code != 200:
            raise TransportError(
                f"backend rejected request with {resp.status_code} from {self.url}",
                retriable=False,
            )
        try:
            payload = resp.json()
            tokens = [str(t) for t in payload["tokens"]]
            finish = _FINISH_BY_WIRE[payload["finish"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"malformed backend response from {self.url}: {exc}", retriable=False)
        if len(tokens) > request.max_tokens:
            logger.warning("backend returned %d tokens over max_tokens=%d; truncating",
                           len(tokens), request.max_tokens)
            tokens = tokens[: request.max_tokens]
            finish = Finish.BUDGET
        return GenerationResult(tokens=tuple(tokens), finish=finish)
