"""Evaluation metrics over completed turn traces.

Interruption metrics (per label subset): how often the model cut in, how many
of those cut-ins a judge accepted, and how far behind the user's first error
the cut-in landed. Tool metrics: how many ground-truth calls were matched
before vs. after the turn ended, per-turn success, response-quality scores
from a judge, and the post-turn token count as a latency proxy.

Judges are pluggable callables; the defaults are deterministic rules so the
pipeline runs hermetically. Remote adapters speaking a small JSON protocol
are provided for plugging in external judges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import requests

from .backend import TransportError
from .errors import ValidationError
from .markers import DEFAULT_MARKERS
from .orchestrator import ToolExchange, TurnTrace, trace_to_lines
from .tools import EARLY

LATENCY_BUCKET_SECONDS = 2.0

# judge(user_prefix_tokens, response_tokens) -> interruption was valid
InterruptJudge = Callable[[Sequence[str], Sequence[str]], bool]
# judge(scenario, response_tokens) -> (correctness, completeness), each in [0, 2]
QualityJudge = Callable[[Any, Sequence[str]], "tuple[float, float]"]

SUBSET_CORRECT = "correct"
SUBSET_WRONG = "wrong"


@dataclass(frozen=True)
class InterruptLabel:
    """Ground-truth label for one interruption scenario.

    ``t_error`` is the time the first mistake is uttered; it is required for
    the wrong subset. A sentinel of -1 in input files means "no error" and
    maps to the correct subset.
    """

    scenario_id: str
    subset: str
    t_error: float | None = None

    def __post_init__(self) -> None:
        if self.subset not in (SUBSET_CORRECT, SUBSET_WRONG):
            raise ValidationError(f"unknown label subset {self.subset!r}")
        if self.subset == SUBSET_WRONG and (self.t_error is None or self.t_error < 0):
            raise ValidationError(
                f"label for {self.scenario_id!r} is in the wrong subset but has no valid t_error"
            )

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "InterruptLabel":
        t_error = obj.get("t_error")
        subset = obj["subset"]
        if t_error == -1:
            subset, t_error = SUBSET_CORRECT, None
        return cls(scenario_id=obj["scenario_id"], subset=subset, t_error=t_error)

    def to_obj(self) -> dict[str, Any]:
        return {"scenario_id": self.scenario_id, "subset": self.subset, "t_error": self.t_error}


@dataclass(frozen=True)
class InterruptSubsetStats:
    total: int
    interrupted: int
    interrupt_ratio: float | None
    valid_interruptions: int
    valid_interrupt_ratio: float | None
    mean_latency: float | None
    latency_histogram: tuple[tuple[float, int], ...] | None

    def to_obj(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "interrupted": self.interrupted,
            "interrupt_ratio": self.interrupt_ratio,
            "valid_interruptions": self.valid_interruptions,
            "valid_interrupt_ratio": self.valid_interrupt_ratio,
            "mean_latency": self.mean_latency,
            "latency_histogram": (
                None if self.latency_histogram is None
                else [[lo, n] for lo, n in self.latency_histogram]
            ),
        }

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "InterruptSubsetStats":
        hist = obj["latency_histogram"]
        return cls(
            total=obj["total"],
            interrupted=obj["interrupted"],
            interrupt_ratio=obj["interrupt_ratio"],
            valid_interruptions=obj["valid_interruptions"],
            valid_interrupt_ratio=obj["valid_interrupt_ratio"],
            mean_latency=obj["mean_latency"],
            latency_histogram=None if hist is None else tuple((lo, n) for lo, n in hist),
        )


@dataclass(frozen=True)
class InterruptReport:
    correct: InterruptSubsetStats
    wrong: InterruptSubsetStats

    def to_obj(self) -> dict[str, Any]:
        return {"correct": self.correct.to_obj(), "wrong": self.wrong.to_obj()}

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "InterruptReport":
        return cls(
            correct=InterruptSubsetStats.from_obj(obj["correct"]),
            wrong=InterruptSubsetStats.from_obj(obj["wrong"]),
        )


@dataclass(frozen=True)
class ToolReport:
    early_hits: int
    late_hits: int
    total_gt: int
    early_accuracy: float | None
    late_accuracy: float | None
    total_accuracy: float | None
    success_rate: float | None
    mean_post_turn_tokens: float | None
    correctness: float | None
    completeness: float | None
    n_traces: int

    def to_obj(self) -> dict[str, Any]:
        return {
            "early_hits": self.early_hits,
            "late_hits": self.late_hits,
            "total_gt": self.total_gt,
            "early_accuracy": self.early_accuracy,
            "late_accuracy": self.late_accuracy,
            "total_accuracy": self.total_accuracy,
            "success_rate": self.success_rate,
            "mean_post_turn_tokens": self.mean_post_turn_tokens,
            "correctness": self.correctness,
            "completeness": self.completeness,
            "n_traces": self.n_traces,
        }

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "ToolReport":
        return cls(**{k: obj[k] for k in (
            "early_hits", "late_hits", "total_gt", "early_accuracy", "late_accuracy",
            "total_accuracy", "success_rate", "mean_post_turn_tokens",
            "correctness", "completeness", "n_traces",
        )})


# -- default judges -----------------------------------------------------------


def _normalize(token: str) -> str:
    return "".join(ch for ch in token.lower() if ch.isalnum())


def default_interrupt_judge(user_prefix: Sequence[str], response: Sequence[str]) -> bool:
    """An interruption that never references the user's content cannot be
    correcting it: valid iff the response shares a normalized content token
    with what the user said so far."""
    said = {_normalize(t) for t in user_prefix} - {""}
    return any(_normalize(t) in said for t in response)


class DefaultQualityJudge:
    """Scores a response by whether each ground-truth payload's designated
    key value appears verbatim in it: 2 if all do, 1 if some, 0 if none.
    The same rubric serves as both correctness and completeness."""

    def __init__(self, key: str = "answer"):
        self.key = key

    def _snippet(self, payload: str) -> str:
        try:
            obj = json.loads(payload)
        except json.JSONDecodeError:
            return payload.strip()
        if isinstance(obj, dict) and self.key in obj:
            return str(obj[self.key])
        return payload.strip()

    def __call__(self, scenario: Any, response: Sequence[str]) -> tuple[float, float]:
        calls = getattr(scenario, "ground_truth_calls", ()) or ()
        text = " ".join(response)
        if not calls:
            return 2.0, 2.0
        found = sum(1 for gt in calls if self._snippet(gt.response) in text)
        score = 2.0 if found == len(calls) else (1.0 if found else 0.0)
        return score, score


# -- remote judge adapters ----------------------------------------------------


class RemoteInterruptJudge:
    """POSTs {"kind": "interrupt_validity", "user_prefix": [...], "response": [...]}
    and expects {"valid": bool}."""

    def __init__(self, url: str, timeout: float = 30.0, session: requests.Session | None = None):
        self.url = url
        self.timeout = timeout
        self._session = session or requests.Session()

    def __call__(self, user_prefix: Sequence[str], response: Sequence[str]) -> bool:
        body = {"kind": "interrupt_validity", "user_prefix": list(user_prefix),
                "response": list(response)}
        try:
            resp = self._session.post(self.url, json=body, timeout=self.timeout)
            resp.raise_for_status()
            return bool(resp.json()["valid"])
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise TransportError(f"judge call failed: {exc}", retriable=True)


class RemoteQualityJudge:
    """POSTs {"kind": "quality", "scenario_id": ..., "response": [...]} and
    expects {"correctness": float, "completeness": float}."""

    def __init__(self, url: str, timeout: float = 30.0, session: requests.Session | None = None):
        self.url = url
        self.timeout = timeout
        self._session = session or requests.Session()

    def __call__(self, scenario: Any, response: Sequence[str]) -> tuple[float, float]:
        body = {"kind": "quality", "scenario_id": scenario.id, "response": list(response)}
        try:
            resp = self._session.post(self.url, json=body, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
            return float(payload["correctness"]), float(payload["completeness"])
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise TransportError(f"judge call failed: {exc}", retriable=True)


# -- interruption metrics -----------------------------------------------------


def interruption_latency(trace: TurnTrace, label: InterruptLabel) -> float | None:
    """Seconds between the user's first error and the first response token.

    Negative values are admitted (the model may cut in before the labelled
    error timestamp). None when the trace never interrupted or the label has
    no error time; such pairs are excluded from means.
    """
    if trace.t_interrupt is None or label.t_error is None:
        return None
    return trace.t_interrupt - label.t_error


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _histogram(values: Sequence[float], width: float) -> tuple[tuple[float, int], ...]:
    counts: dict[float, int] = {}
    for v in values:
        lo = math.floor(v / width) * width
        counts[lo] = counts.get(lo, 0) + 1
    return tuple(sorted(counts.items()))


def _canonical_trace_order(
    pairs: Iterable[tuple[TurnTrace, Any]]
) -> list[tuple[TurnTrace, Any]]:
    # Reports must not depend on input order; sort on a total key.
    return sorted(pairs, key=lambda p: (p[0].scenario_id, "\n".join(trace_to_lines(p[0]))))


def _subset_stats(
    pairs: Sequence[tuple[TurnTrace, InterruptLabel]],
    judge: InterruptJudge,
    with_latency: bool,
) -> InterruptSubsetStats:
    total = len(pairs)
    interrupted = [(t, l) for t, l in pairs if t.interrupted_at is not None]
    valid = 0
    for trace, _ in interrupted:
        response = trace.response()
        response_tokens = response.tokens if response is not None else ()
        if judge(trace.user_prefix_tokens(), response_tokens):
            valid += 1
    latencies = []
    if with_latency:
        for trace, label in interrupted:
            lat = interruption_latency(trace, label)
            if lat is not None:
                latencies.append(lat)
    return InterruptSubsetStats(
        total=total,
        interrupted=len(interrupted),
        interrupt_ratio=len(interrupted) / total if total else None,
        valid_interruptions=valid,
        valid_interrupt_ratio=valid / len(interrupted) if interrupted else None,
        mean_latency=_mean(latencies) if with_latency else None,
        latency_histogram=_histogram(latencies, LATENCY_BUCKET_SECONDS) if latencies else None,
    )


def interrupt_report(
    pairs: Iterable[tuple[TurnTrace, InterruptLabel]],
    judge: InterruptJudge | None = None,
) -> InterruptReport:
    """Aggregate interruption metrics over labelled traces.

    Raises:
        ValidationError: duplicate scenario ids, or a trace/label mismatch.
    """
    judge = judge or default_interrupt_judge
    ordered = _canonical_trace_order(pairs)
    seen: set[str] = set()
    for trace, label in ordered:
        if trace.scenario_id != label.scenario_id:
            raise ValidationError(
                f"trace {trace.scenario_id!r} paired with label {label.scenario_id!r}"
            )
        if trace.scenario_id in seen:
            raise ValidationError(f"duplicate scenario id {trace.scenario_id!r}")
        seen.add(trace.scenario_id)
    return InterruptReport(
        correct=_subset_stats(
            [(t, l) for t, l in ordered if l.subset == SUBSET_CORRECT], judge, with_latency=False
        ),
        wrong=_subset_stats(
            [(t, l) for t, l in ordered if l.subset == SUBSET_WRONG], judge, with_latency=True
        ),
    )


# -- tool metrics --------------------------------------------------------------


def consumed_exchanges(trace: TurnTrace) -> dict[int, ToolExchange]:
    """First successful exchange per ground-truth id (the consuming one)."""
    out: dict[int, ToolExchange] = {}
    for ex in trace.tool_exchanges():
        if ex.outcome.is_error or ex.outcome.matched is None:
            continue
        out.setdefault(ex.outcome.matched, ex)
    return out


def tool_report(
    traces: Iterable[TurnTrace],
    scenarios: Mapping[str, Any],
    quality_judge: QualityJudge | None = None,
) -> ToolReport:
    """Aggregate tool-call metrics over traces of tool scenarios.

    Accuracy denominators count every ground-truth call of every scored
    trace's scenario; a trace is successful when it consumed all of them.
    ``total_accuracy`` is computed as the sum of the early and late
    accuracies so the additive identity holds exactly in floating point.

    Raises:
        ValidationError: a trace references an unknown scenario id.
    """
    judge = quality_judge or DefaultQualityJudge()
    ordered = [t for t, _ in _canonical_trace_order((t, None) for t in traces)]

    early_hits = 0
    late_hits = 0
    total_gt = 0
    successes = 0
    post_turn: list[float] = []
    correctness: list[float] = []
    completeness: list[float] = []
    for trace in ordered:
        if trace.scenario_id not in scenarios:
            raise ValidationError(f"trace references unknown scenario {trace.scenario_id!r}")
        scenario = scenarios[trace.scenario_id]
        gt_calls = getattr(scenario, "ground_truth_calls", ()) or ()
        consumed = consumed_exchanges(trace)
        early = sum(1 for ex in consumed.values() if ex.outcome.phase == EARLY)
        early_hits += early
        late_hits += len(consumed) - early
        total_gt += len(gt_calls)
        if len(consumed) == len(gt_calls):
            successes += 1
        post_turn.append(float(trace.post_turn_tokens))
        response = trace.response()
        cor, com = judge(scenario, response.tokens if response else ())
        correctness.append(cor)
        completeness.append(com)

    early_acc = early_hits / total_gt if total_gt else None
    late_acc = late_hits / total_gt if total_gt else None
    return ToolReport(
        early_hits=early_hits,
        late_hits=late_hits,
        total_gt=total_gt,
        early_accuracy=early_acc,
        late_accuracy=late_acc,
        total_accuracy=(early_acc + late_acc) if total_gt else None,
        success_rate=successes / len(ordered) if ordered else None,
        mean_post_turn_tokens=_mean(post_turn),
        correctness=_mean(correctness),
        completeness=_mean(completeness),
        n_traces=len(ordered),
    )


# -- plain-text tables ---------------------------------------------------------


def interrupt_table(report: InterruptReport, method: str = "simulated") -> str:
    header = (
        f"{'Method':<20} {'Interrupt%':>10} {'Valid%':>8}   "
        f"{'Interrupt%':>10} {'Valid%':>8} {'Latency(s)':>10}\n"
        f"{'':<20} {'-- correct subset --':>19}   {'---- wrong subset ----':>30}"
    )

    def pct(x: float | None) -> str:
        return f"{100 * x:.1f}" if x is not None else "-"

    def sec(x: float | None) -> str:
        return f"{x:.2f}" if x is not None else "-"

    row = (
        f"{method:<20} {pct(report.correct.interrupt_ratio):>10} "
        f"{pct(report.correct.valid_interrupt_ratio):>8}   "
        f"{pct(report.wrong.interrupt_ratio):>10} "
        f"{pct(report.wrong.valid_interrupt_ratio):>8} "
        f"{sec(report.wrong.mean_latency):>10}"
    )
    return header + "\n" + row


def tool_table(report: ToolReport, method: str = "simulated") -> str:
    def pct(x: float | None) -> str:
        return f"{100 * x:.1f}" if x is not None else "-"

    def num(x: float | None) -> str:
        return f"{x:.2f}" if x is not None else "-"

    header = (
        f"{'Method':<20} {'Early%':>7} {'Late%':>7} {'Total%':>7} "
        f"{'Success%':>9} {'Correct':>8} {'Complete':>9} {'Latency(tok)':>13}"
    )
    row = (
        f"{method:<20} {pct(report.early_accuracy):>7} {pct(report.late_accuracy):>7} "
        f"{pct(report.total_accuracy):>7} {pct(report.success_rate):>9} "
        f"{num(report.correctness):>8} {num(report.completeness):>9} "
        f"{num(report.mean_post_turn_tokens):>13}"
    )
    return header + "\n" + row
