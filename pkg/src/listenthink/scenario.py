"""Scenario, script, trace, corpus, and report files, plus a seeded synthetic
scenario generator.

Every line-delimited file starts with a one-line typed header record; records
are compact JSON with sorted keys, so identical objects serialize to identical
bytes. The synthetic generator plants its own answer key: the scripts it
emits are consistent with the scenario (scripted calls copy ground-truth
arguments, the scripted response quotes the matched payloads), so the metrics
a simulation run should produce are computable in closed form up front.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .backend import ScriptEntry, validate_script
from .errors import ValidationError
from .markers import DEFAULT_MARKERS, tokenize
from .metrics import InterruptLabel, InterruptReport, ToolReport, SUBSET_CORRECT, SUBSET_WRONG
from .orchestrator import TurnTrace, trace_from_lines, trace_to_lines
from .timeline import ChunkingConfig, WordTiming, segment_transcript, thinking_budget
from .tools import (
    NO_CALL_TEMPLATE,
    GroundTruthCall,
    ToolEnvironment,
    ToolParameter,
    ToolSpec,
    assign_to_chunks,
    compute_earliest_times,
    render_call_span,
)
from .trainset import TrainSequence, corpus_from_lines, corpus_to_lines

TASK_INTERRUPT = "interrupt"
TASK_TOOLCALL = "toolcall"

_ID_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-")


@dataclass(frozen=True)
class Scenario:
    """One test instance: a timestamped utterance plus task-specific truth."""

    id: str
    task: str
    words: tuple[WordTiming, ...]
    tools: tuple[ToolSpec, ...] | None = None
    ground_truth_calls: tuple[GroundTruthCall, ...] | None = None
    label: InterruptLabel | None = None
    system_preamble: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        if self.tools is not None:
            object.__setattr__(self, "tools", tuple(self.tools))
        if self.ground_truth_calls is not None:
            object.__setattr__(self, "ground_truth_calls", tuple(self.ground_truth_calls))
        self._validate()

    def _validate(self) -> None:
        if not self.id or not set(self.id) <= _ID_CHARS:
            raise ValidationError(f"scenario id {self.id!r} must be a non-empty filesystem-safe token")
        if self.task not in (TASK_INTERRUPT, TASK_TOOLCALL):
            raise ValidationError(f"unknown task {self.task!r} in scenario {self.id!r}")
        if not self.words:
            raise ValidationError(f"scenario {self.id!r} has no words")
        for prev, cur in zip(self.words, self.words[1:]):
            if cur.start < prev.end:
                raise ValidationError(
                    f"scenario {self.id!r}: words {prev.text!r} and {cur.text!r} overlap"
                )
        if self.task == TASK_INTERRUPT:
            if self.label is None:
                raise ValidationError(f"interrupt scenario {self.id!r} needs a label")
            if self.label.scenario_id != self.id:
                raise ValidationError(
                    f"label names scenario {self.label.scenario_id!r}, expected {self.id!r}"
                )
            if self.tools is not None or self.ground_truth_calls is not None:
                raise ValidationError(f"interrupt scenario {self.id!r} must not carry tool fields")
        else:
            if self.ground_truth_calls is None:
                raise ValidationError(f"tool scenario {self.id!r} needs ground_truth_calls")
            if self.tools is None:
                raise ValidationError(f"tool scenario {self.id!r} needs tool specs")
            if self.label is not None:
                raise ValidationError(f"tool scenario {self.id!r} must not carry a label")
            self._validate_calls()

    def _validate_calls(self) -> None:
        assert self.ground_truth_calls is not None
        by_id: dict[int, GroundTruthCall] = {}
        for gt in self.ground_truth_calls:
            if gt.id in by_id:
                raise ValidationError(f"scenario {self.id!r}: duplicate ground-truth id {gt.id}")
            by_id[gt.id] = gt
        for gt in self.ground_truth_calls:
            for dep in gt.depends_on:
                if dep not in by_id:
                    raise ValidationError(
                        f"scenario {self.id!r}: call {gt.id} depends on unknown call {dep}"
                    )
                parent = by_id[dep]
                if (
                    gt.earliest_time is not None
                    and parent.earliest_time is not None
                    and gt.earliest_time < parent.earliest_time
                ):
                    raise ValidationError(
                        f"scenario {self.id!r}: call {gt.id} is callable before its dependency {dep}"
                    )
        _check_acyclic(by_id, self.id)

    def tool_environment(self) -> ToolEnvironment:
        return ToolEnvironment(
            specs=self.tools or (),
            ground_truth=self.ground_truth_calls or (),
        )


def _check_acyclic(by_id: Mapping[int, GroundTruthCall], scenario_id: str) -> None:
    done: set[int] = set()
    visiting: set[int] = set()

    def visit(call_id: int) -> None:
        if call_id in done:
            return
        if call_id in visiting:
            raise ValidationError(f"scenario {scenario_id!r}: dependency cycle at call {call_id}")
        visiting.add(call_id)
        for dep in by_id[call_id].depends_on:
            visit(dep)
        visiting.discard(call_id)
        done.add(call_id)

    for call_id in by_id:
        visit(call_id)


# -- object <-> JSON ------------------------------------------------------------


def _spec_to_obj(spec: ToolSpec) -> dict[str, Any]:
    return {
        "name": spec.name,
        "description": spec.description,
        "parameters": {
            name: {"type": p.type, "required": p.required, "description": p.description}
            for name, p in spec.parameters
        },
    }


def _spec_from_obj(obj: Mapping[str, Any]) -> ToolSpec:
    return ToolSpec(
        name=obj["name"],
        description=obj.get("description", ""),
        parameters={
            name: ToolParameter(
                type=p["type"],
                required=p.get("required", True),
                description=p.get("description", ""),
            )
            for name, p in obj.get("parameters", {}).items()
        },
    )


def _call_to_obj(gt: GroundTruthCall) -> dict[str, Any]:
    return {
        "id": gt.id,
        "name": gt.name,
        "arguments": dict(gt.arguments),
        "response": gt.response,
        "depends_on": sorted(gt.depends_on),
        "earliest_time": gt.earliest_time,
    }


def _call_from_obj(obj: Mapping[str, Any]) -> GroundTruthCall:
    return GroundTruthCall(
        id=obj["id"],
        name=obj["name"],
        arguments=obj["arguments"],
        response=obj["response"],
        depends_on=frozenset(obj.get("depends_on", ())),
        earliest_time=obj.get("earliest_time"),
    )


def scenario_to_obj(sc: Scenario) -> dict[str, Any]:
    return {
        "id": sc.id,
        "task": sc.task,
        "words": [[w.text, w.start, w.end] for w in sc.words],
        "tools": None if sc.tools is None else [_spec_to_obj(s) for s in sc.tools],
        "ground_truth_calls": (
            None if sc.ground_truth_calls is None
            else [_call_to_obj(c) for c in sc.ground_truth_calls]
        ),
        "label": None if sc.label is None else sc.label.to_obj(),
        "system_preamble": sc.system_preamble,
    }


def scenario_from_obj(obj: Mapping[str, Any], *, path: str | None = None) -> Scenario:
    try:
        return Scenario(
            id=obj["id"],
            task=obj["task"],
            words=tuple(WordTiming(w[0], w[1], w[2]) for w in obj["words"]),
            tools=(
                None if obj.get("tools") is None
                else tuple(_spec_from_obj(s) for s in obj["tools"])
            ),
            ground_truth_calls=(
                None if obj.get("ground_truth_calls") is None
                else tuple(_call_from_obj(c) for c in obj["ground_truth_calls"])
            ),
            label=None if obj.get("label") is None else InterruptLabel.from_obj(obj["label"]),
            system_preamble=obj.get("system_preamble"),
        )
    except KeyError as exc:
        raise ValidationError(f"scenario record is missing field {exc}", path=path, line=2)
    except ValidationError as exc:
        raise ValidationError(exc.message, path=path, line=2)


# -- file IO ---------------------------------------------------------------------


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read file: {exc}", path=str(path))


def _check_header(lines: Sequence[str], expected: str, path: str) -> None:
    if not lines:
        raise ValidationError("empty file", path=path, line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bad header: {exc.msg}", path=path, line=1)
    if header.get("type") != expected:
        raise ValidationError(
            f"expected {expected!r} header, got {header.get('type')!r}", path=path, line=1
        )


def save_scenario(path: str | Path, sc: Scenario) -> None:
    lines = [_dump({"type": "scenario", "version": 1}), _dump(scenario_to_obj(sc))]
    write_text_atomic(path, "\n".join(lines) + "\n")


def load_scenario(path: str | Path) -> Scenario:
    lines = _read_lines(path)
    _check_header(lines, "scenario", str(path))
    records = [l for l in lines[1:] if l.strip()]
    if len(records) != 1:
        raise ValidationError(
            f"scenario file must hold exactly one record, found {len(records)}",
            path=str(path), line=2,
        )
    try:
        obj = json.loads(records[0])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bad scenario record: {exc.msg}", path=str(path), line=2)
    return scenario_from_obj(obj, path=str(path))


def save_script(path: str | Path, entries: Sequence[ScriptEntry]) -> None:
    validate_script(entries)
    lines = [_dump({"type": "script", "version": 1})]
    lines.extend(_dump({"step": e.step, "tokens": list(e.tokens)}) for e in entries)
    write_text_atomic(path, "\n".join(lines) + "\n")


def load_script(path: str | Path) -> list[ScriptEntry]:
    lines = _read_lines(path)
    _check_header(lines, "script", str(path))
    entries = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            entries.append(ScriptEntry(step=obj["step"], tokens=tuple(obj["tokens"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"bad script entry: {exc}", path=str(path), line=lineno)
    try:
        validate_script(entries)
    except ValidationError as exc:
        raise ValidationError(exc.message, path=str(path))
    return entries


def save_trace(path: str | Path, trace: TurnTrace) -> None:
    write_text_atomic(path, "\n".join(trace_to_lines(trace)) + "\n")


def load_trace(path: str | Path) -> TurnTrace:
    return trace_from_lines(_read_lines(path), path=str(path))


def save_corpus(path: str | Path, sequences: Iterable[TrainSequence]) -> None:
    write_text_atomic(path, "\n".join(corpus_to_lines(sequences)) + "\n")


def load_corpus(path: str | Path) -> list[TrainSequence]:
    return corpus_from_lines(_read_lines(path), path=str(path))


@dataclass(frozen=True)
class ReportDocument:
    """The score command's output: either section may be absent."""

    interrupt: InterruptReport | None = None
    tool: ToolReport | None = None

    def to_obj(self) -> dict[str, Any]:
        return {
            "type": "report",
            "version": 1,
            "interrupt": None if self.interrupt is None else self.interrupt.to_obj(),
            "tool": None if self.tool is None else self.tool.to_obj(),
        }

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "ReportDocument":
        if obj.get("type") != "report":
            raise ValidationError(f"expected report document, got {obj.get('type')!r}")
        return cls(
            interrupt=(
                None if obj.get("interrupt") is None
                else InterruptReport.from_obj(obj["interrupt"])
            ),
            tool=None if obj.get("tool") is None else ToolReport.from_obj(obj["tool"]),
        )


def save_report(path: str | Path, report: ReportDocument) -> None:
    write_text_atomic(path, json.dumps(report.to_obj(), sort_keys=True, indent=2) + "\n")


def load_report(path: str | Path) -> ReportDocument:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read report: {exc}", path=str(path))
    return ReportDocument.from_obj(obj)


# -- synthetic scenarios ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticParams:
    """Knobs for the seeded generator. Durations default to the corpus means
    the tasks were measured at (49.25 s for interruption material, 18.71 s for
    tool-call material)."""

    task: str = TASK_INTERRUPT
    n_words: int = 48
    duration: float | None = None
    n_calls: int = 3
    n_missed_calls: int = 0
    n_bad_calls: int = 0
    wrong: bool | None = None
    interrupt_chunk: int | None = None
    valid_response: bool = True
    config: ChunkingConfig = field(default_factory=ChunkingConfig)

    def __post_init__(self) -> None:
        if self.task not in (TASK_INTERRUPT, TASK_TOOLCALL):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.n_words < 2:
            raise ValidationError("n_words must be >= 2")
        if self.duration is not None and self.duration <= 0:
            raise ValidationError("duration must be positive")
        if self.task == TASK_TOOLCALL and self.n_calls < 1:
            raise ValidationError("n_calls must be >= 1")
        if self.n_missed_calls + self.n_bad_calls > self.n_calls:
            raise ValidationError("cannot miss/garble more calls than exist")


@dataclass(frozen=True)
class SyntheticBundle:
    """A scenario, the script that drives it, and the planted expectations."""

    scenario: Scenario
    script: tuple[ScriptEntry, ...]
    expected: dict[str, Any]


_DEFAULT_DURATION = {TASK_INTERRUPT: 49.25, TASK_TOOLCALL: 18.71}


def _synthetic_words(rng: random.Random, n_words: int, duration: float) -> list[WordTiming]:
    while True:
        cuts = sorted(rng.uniform(0.0, duration) for _ in range(n_words - 1))
        bounds = [0.0] + cuts + [duration]
        if all(b < a for b, a in zip(bounds, bounds[1:])):
            break
    return [
        WordTiming(text=f"u{rng.randrange(10_000):04d}", start=bounds[i], end=bounds[i + 1])
        for i in range(n_words)
    ]


def _filler(rng: random.Random, lo: int, hi: int) -> list[str]:
    return [f"n{rng.randrange(100):02d}" for _ in range(rng.randint(lo, hi))]


def generate_synthetic(seed: int, params: SyntheticParams = SyntheticParams()) -> SyntheticBundle:
    """Deterministically build a scenario plus a consistent driving script.

    The same (seed, params) always yields byte-identical output. The returned
    ``expected`` record holds the closed-form outcome of simulating the bundle
    in the interleaved mode with the bundled script.
    """
    rng = random.Random(seed)
    duration = params.duration if params.duration is not None else _DEFAULT_DURATION[params.task]
    words = _synthetic_words(rng, params.n_words, duration)
    chunks = segment_transcript(words, params.config)
    if params.task == TASK_INTERRUPT:
        return _generate_interrupt(seed, params, rng, words, len(chunks))
    return _generate_toolcall(seed, params, rng, words, len(chunks))


def _generate_interrupt(
    seed: int,
    params: SyntheticParams,
    rng: random.Random,
    words: list[WordTiming],
    n_chunks: int,
) -> SyntheticBundle:
    t = params.config.t_chunk
    wrong = params.wrong if params.wrong is not None else rng.random() < 0.5
    if n_chunks < 2:
        wrong = False  # a single-chunk turn ends before any mid-turn thinking

    script: list[ScriptEntry] = []
    expected: dict[str, Any] = {"task": TASK_INTERRUPT, "wrong": wrong}
    scenario_id = f"syn-int-{seed}"
    if wrong:
        k = params.interrupt_chunk if params.interrupt_chunk is not None else rng.randint(1, n_chunks - 1)
        if not 1 <= k <= n_chunks - 1:
            raise ValidationError(f"interrupt_chunk {k} outside 1..{n_chunks - 1}")
        audible = [w for w in words if w.end <= k * t] or [words[0]]
        error_word = rng.choice(audible)
        label = InterruptLabel(scenario_id=scenario_id, subset=SUBSET_WRONG, t_error=error_word.end)
        for i in range(1, k):
            script.append(ScriptEntry(i, tuple(_filler(rng, 2, 6) + ["</think>"])))
        body = _filler(rng, 2, 6) + ["[INTERRUPT]", "</think>"]
        script.append(ScriptEntry(k, tuple(body)))
        if params.valid_response:
            response = ["the", "step", "mentioning", error_word.text, "is", "wrong"]
        else:
            response = [f"zz{rng.randrange(100):02d}" for _ in range(5)]
        script.append(ScriptEntry(k + 1, tuple(response)))
        dt = 1.0 / params.config.n_tps if params.config.n_tps > 0 else 0.0
        expected.update(
            {
                "interrupted_at": k,
                "t_error": error_word.end,
                # first response token follows the seed marker plus the block body
                "t_interrupt": k * t + (len(body) + 2) * dt,
                "valid_response": params.valid_response,
                "response_tokens": list(response),
            }
        )
    else:
        label = InterruptLabel(scenario_id=scenario_id, subset=SUBSET_CORRECT, t_error=None)
        for i in range(1, n_chunks + 1):
            script.append(ScriptEntry(i, tuple(_filler(rng, 2, 6) + ["</think>"])))
        response = ["your", "solution", "checks", "out"]
        script.append(ScriptEntry(n_chunks + 1, tuple(response)))
        expected.update({"interrupted_at": None, "response_tokens": list(response)})

    scenario = Scenario(
        id=scenario_id,
        task=TASK_INTERRUPT,
        words=tuple(words),
        label=label,
    )
    expected["n_chunks"] = n_chunks
    return SyntheticBundle(scenario=scenario, script=tuple(script), expected=expected)


def _generate_toolcall(
    seed: int,
    params: SyntheticParams,
    rng: random.Random,
    words: list[WordTiming],
    n_chunks: int,
) -> SyntheticBundle:
    config = params.config
    n_calls = params.n_calls

    # Plant calls anchored to transcript words, with forward-only dependencies.
    anchors = sorted(rng.sample(range(len(words)), k=min(n_calls, len(words))))
    while len(anchors) < n_calls:
        anchors.append(anchors[-1])
    spans_by_id: dict[int, dict[str, tuple[int, int]]] = {}
    calls: list[GroundTruthCall] = []
    for call_id, anchor in enumerate(anchors, start=1):
        deps: frozenset[int] = frozenset()
        if call_id > 1 and rng.random() < 0.4:
            deps = frozenset({rng.randint(1, call_id - 1)})
        args = {"query": f"q{call_id:03d}", "limit": rng.randint(1, 9)}
        spans_by_id[call_id] = {
            "query": (max(0, anchor - 2), anchor),
            "limit": (max(0, anchor - 1), anchor),
        }
        calls.append(
            GroundTruthCall(
                id=call_id,
                name=f"Lookup_{call_id:02d}",
                arguments=args,
                response=json.dumps({"answer": f"ans{call_id:03d}"}, sort_keys=True),
                depends_on=deps,
            )
        )

    env = ToolEnvironment(ground_truth=tuple(calls))
    times = compute_earliest_times(env, words, spans_by_id)
    calls = [
        GroundTruthCall(c.id, c.name, c.arguments, c.response, c.depends_on, times[c.id])
        for c in calls
    ]
    plan = assign_to_chunks(calls, config)

    planned_order = [cid for chunk in sorted(plan) for cid in plan[chunk]]
    missed = set(planned_order[len(planned_order) - params.n_missed_calls :]) if params.n_missed_calls else set()
    remaining = [cid for cid in planned_order if cid not in missed]
    bad = set(remaining[len(remaining) - params.n_bad_calls :]) if params.n_bad_calls else set()

    by_id = {c.id: c for c in calls}
    budget = thinking_budget(config)
    script: list[ScriptEntry] = []
    step = 0
    made_early: list[int] = []
    made_late: list[int] = []
    bad_calls_made = 0
    post_turn = 0
    for chunk_idx in range(1, n_chunks + 1):
        chunk_generated = 0
        for call_id in plan.get(chunk_idx, []):
            if call_id in missed:
                continue
            gt = by_id[call_id]
            if call_id in bad:
                span = render_call_span(gt.name, {"bogus": True})
                bad_calls_made += 1
            else:
                span = render_call_span(gt.name, gt.arguments)
                (made_early if chunk_idx < n_chunks else made_late).append(call_id)
            step += 1
            tokens = _filler(rng, 1, 3) + span
            chunk_generated += len(tokens)
            script.append(ScriptEntry(step, tuple(tokens)))
        step += 1
        if plan.get(chunk_idx):
            closing = _filler(rng, 1, 3) + ["</think>"]
        else:
            closing = tokenize(NO_CALL_TEMPLATE) + ["</think>"]
        chunk_generated += len(closing)
        script.append(ScriptEntry(step, tuple(closing)))
        # mid-turn blocks must fit the budget AND finish strictly inside the
        # chunk window, or the early/late bookkeeping below would be wrong
        if chunk_idx < n_chunks and chunk_generated + 1 >= config.t_chunk * config.n_tps:
            raise ValidationError(
                f"synthetic chunk {chunk_idx} plans {chunk_generated} tokens, too many "
                f"for budget {budget}"
            )
        if chunk_idx == n_chunks:
            post_turn = 1 + chunk_generated  # seed marker + generated tokens

    matched = sorted(made_early + made_late)
    response = ["answer:"] + [f"ans{cid:03d}" for cid in matched] + _filler(rng, 1, 2)
    step += 1
    script.append(ScriptEntry(step, tuple(response)))

    scenario_id = f"syn-tool-{seed}"
    specs = tuple(
        ToolSpec(
            name=c.name,
            description=f"lookup service {c.id}",
            parameters={
                "query": ToolParameter(type="string"),
                "limit": ToolParameter(type="integer"),
            },
        )
        for c in calls
    )
    scenario = Scenario(
        id=scenario_id,
        task=TASK_TOOLCALL,
        words=tuple(words),
        tools=specs,
        ground_truth_calls=tuple(calls),
        system_preamble="You may call the listed lookup services.",
    )
    score = 2.0 if len(matched) == n_calls else (1.0 if matched else 0.0)
    expected = {
        "task": TASK_TOOLCALL,
        "n_chunks": n_chunks,
        "n_calls": n_calls,
        "plan": {str(k): v for k, v in plan.items()},
        "early_ids": sorted(made_early),
        "late_ids": sorted(made_late),
        "missed_ids": sorted(missed),
        "bad_calls": bad_calls_made,
        "success": len(matched) == n_calls,
        "post_turn_tokens": post_turn,
        "quality_score": score,
        "response_tokens": list(response),
    }
    return SyntheticBundle(scenario=scenario, script=tuple(script), expected=expected)
