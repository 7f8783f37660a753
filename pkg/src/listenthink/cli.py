"""Command-line entry point wiring scenarios, backends, simulation, assembly,
and scoring into reproducible runs.

Subcommands::

    simulate       run scenarios against a backend, one trace file each
    generate       emit seeded synthetic scenario/script suites
    score          compute metric reports from traces + scenarios
    report         render a report file as plain-text tables
    assemble-train build a training corpus from tuple records
    validate       check any of the package's file kinds

Exit codes: 0 success, 1 validation failure, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .backend import RemoteBackend, ScriptedBackend, TransportError
from .errors import ValidationError
from .metrics import (
    RemoteInterruptJudge,
    RemoteQualityJudge,
    interrupt_report,
    interrupt_table,
    tool_report,
    tool_table,
)
from .orchestrator import (
    DEFAULT_ITERATION_CAP,
    MODE_CALL_AFTER_LISTEN,
    MODE_COMBINED,
    MODE_SHANKS,
    IterationCapExceededError,
    STATUS_ABORTED,
    STATUS_COMPLETED,
    TurnTrace,
    run_call_after_listen,
    run_combined,
    run_shanks,
)
from .scenario import (
    ReportDocument,
    Scenario,
    SyntheticParams,
    TASK_INTERRUPT,
    TASK_TOOLCALL,
    generate_synthetic,
    load_corpus,
    load_report,
    load_scenario,
    load_script,
    load_trace,
    save_corpus,
    save_report,
    save_scenario,
    save_script,
    save_trace,
)
from .timeline import ChunkingConfig, WordTiming, segment_transcript
from .trainset import (
    PayloadPlacement,
    assemble_interrupt,
    assemble_plain,
    assemble_toolcall,
    validate_sequence,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

ENV_REMOTE_URL = "LISTENTHINK_REMOTE_URL"
ENV_REMOTE_TIMEOUT = "LISTENTHINK_REMOTE_TIMEOUT"
ENV_JUDGE_URL = "LISTENTHINK_JUDGE_URL"
ENV_JUDGE_TIMEOUT = "LISTENTHINK_JUDGE_TIMEOUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="listenthink", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run scenarios, one trace file per scenario")
    sim.add_argument("scenarios", nargs="+", help="scenario files")
    sim.add_argument("--mode", choices=[MODE_SHANKS, MODE_CALL_AFTER_LISTEN, MODE_COMBINED],
                     default=None)
    sim.add_argument("--scripted", default=None,
                     help="script file, or directory holding <scenario-id>.script.jsonl")
    sim.add_argument("--remote", default=None, help="remote backend URL")
    sim.add_argument("--output-dir", default=None)
    sim.add_argument("--t-chunk", type=float, default=None)
    sim.add_argument("--n-tps", type=float, default=None)
    sim.add_argument("--max-context", type=int, default=None)
    sim.add_argument("--final-budget", type=int, default=None)
    sim.add_argument("--iteration-cap", type=int, default=None)
    sim.add_argument("--config", default=None, help="JSON file supplying any of the above")

    gen = sub.add_parser("generate", help="emit seeded synthetic scenario/script suites")
    gen.add_argument("--task", choices=[TASK_INTERRUPT, TASK_TOOLCALL], default=TASK_INTERRUPT)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output-dir", required=True)
    gen.add_argument("--n-words", type=int, default=48)
    gen.add_argument("--duration", type=float, default=None)
    gen.add_argument("--n-calls", type=int, default=3)
    gen.add_argument("--miss-calls", type=int, default=0)
    gen.add_argument("--bad-calls", type=int, default=0)

    score = sub.add_parser("score", help="compute metric reports from traces")
    score.add_argument("traces", nargs="+", help="trace files or directories of *.trace.jsonl")
    score.add_argument("--scenarios", required=True,
                       help="scenario file or directory of *.scenario.jsonl")
    score.add_argument("--output", required=True, help="report JSON path")
    score.add_argument("--judge-url", default=None, help="remote judge endpoint")
    score.add_argument("--table", action="store_true", help="also print plain-text tables")

    rep = sub.add_parser("report", help="render a report file as plain-text tables")
    rep.add_argument("report", help="report JSON path")

    asm = sub.add_parser("assemble-train", help="build a training corpus from tuple records")
    asm.add_argument("tuples", nargs="+", help="tuple files (train-tuples records)")
    asm.add_argument("--output", required=True)
    asm.add_argument("--t-chunk", type=float, default=4.0)

    val = sub.add_parser("validate", help="check scenario/script/trace/corpus/report files")
    val.add_argument("paths", nargs="+")
    return parser


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config: {exc}", path=path)
    if not isinstance(obj, dict):
        raise ValidationError("config file must hold a JSON object", path=path)
    return obj


def _setting(cli_value: Any, config: dict[str, Any], key: str, default: Any) -> Any:
    if cli_value is not None:
        return cli_value
    if key in config and config[key] is not None:
        return config[key]
    return default


def _script_path_for(scripted: str, scenario_id: str) -> Path:
    p = Path(scripted)
    if p.is_dir():
        return p / f"{scenario_id}.script.jsonl"
    return p


def _cmd_simulate(args: argparse.Namespace) -> int:
    config_file = _load_config_file(args.config)
    mode = _setting(args.mode, config_file, "mode", MODE_SHANKS)
    scripted = _setting(args.scripted, config_file, "scripted", None)
    remote = _setting(args.remote, config_file, "remote", os.environ.get(ENV_REMOTE_URL))
    output_dir = Path(_setting(args.output_dir, config_file, "output_dir", "."))
    iteration_cap = _setting(args.iteration_cap, config_file, "iteration_cap", DEFAULT_ITERATION_CAP)
    chunking = ChunkingConfig(
        t_chunk=_setting(args.t_chunk, config_file, "t_chunk", 4.0),
        n_tps=_setting(args.n_tps, config_file, "n_tps", 80.0),
        max_context=_setting(args.max_context, config_file, "max_context", 32768),
        final_budget=_setting(args.final_budget, config_file, "final_budget", None),
    )
    if (scripted is None) == (remote is None):
        raise ValidationError("select exactly one backend: --scripted or --remote")
    output_dir.mkdir(parents=True, exist_ok=True)

    timeout = float(os.environ.get(ENV_REMOTE_TIMEOUT, "30"))
    remote_backend = RemoteBackend(remote, timeout=timeout) if remote else None

    runner = {
        MODE_SHANKS: run_shanks,
        MODE_CALL_AFTER_LISTEN: run_call_after_listen,
        MODE_COMBINED: run_combined,
    }[mode]

    worst = EXIT_OK
    for scenario_path in args.scenarios:
        try:
            scenario = load_scenario(scenario_path)
            if remote_backend is not None:
                backend = remote_backend
            else:
                backend = ScriptedBackend(load_script(_script_path_for(scripted, scenario.id)))
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            worst = max(worst, EXIT_VALIDATION)
            continue
        kwargs = {} if mode == MODE_SHANKS else {"iteration_cap": iteration_cap}
        try:
            trace = runner(scenario, backend, None, chunking, **kwargs)
        except (IterationCapExceededError, TransportError) as exc:
            trace = TurnTrace(
                scenario_id=scenario.id,
                mode=mode,
                config=chunking,
                events=(),
                status=STATUS_ABORTED,
                error=str(exc),
            )
        out_path = output_dir / f"{scenario.id}.trace.jsonl"
        save_trace(out_path, trace)
        print(f"{scenario.id}: {trace.status} -> {out_path}")
        if trace.status != STATUS_COMPLETED:
            worst = max(worst, EXIT_RUNTIME)
    return worst


def _cmd_generate(args: argparse.Namespace) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        params = SyntheticParams(
            task=args.task,
            n_words=args.n_words,
            duration=args.duration,
            n_calls=args.n_calls,
            n_missed_calls=args.miss_calls,
            n_bad_calls=args.bad_calls,
        )
        bundle = generate_synthetic(args.seed + i, params)
        sid = bundle.scenario.id
        save_scenario(out / f"{sid}.scenario.jsonl", bundle.scenario)
        save_script(out / f"{sid}.script.jsonl", list(bundle.script))
        (out / f"{sid}.expected.json").write_text(
            json.dumps(bundle.expected, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        print(f"generated {sid}")
    return EXIT_OK


def _collect_files(paths: Sequence[str], suffix: str) -> list[Path]:
    out: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(sorted(p.glob(f"*{suffix}")))
        else:
            out.append(p)
    return out


def _load_scenarios_map(path: str) -> dict[str, Scenario]:
    scenarios: dict[str, Scenario] = {}
    for p in _collect_files([path], ".scenario.jsonl"):
        sc = load_scenario(p)
        scenarios[sc.id] = sc
    return scenarios


def _cmd_score(args: argparse.Namespace) -> int:
    scenarios = _load_scenarios_map(args.scenarios)
    traces = [load_trace(p) for p in _collect_files(args.traces, ".trace.jsonl")]

    judge_url = args.judge_url or os.environ.get(ENV_JUDGE_URL)
    judge_timeout = float(os.environ.get(ENV_JUDGE_TIMEOUT, "30"))
    validity_judge = RemoteInterruptJudge(judge_url, judge_timeout) if judge_url else None
    quality_judge = RemoteQualityJudge(judge_url, judge_timeout) if judge_url else None

    interrupt_pairs = []
    tool_traces = []
    for trace in traces:
        scenario = scenarios.get(trace.scenario_id)
        if scenario is None:
            raise ValidationError(f"no scenario loaded for trace {trace.scenario_id!r}")
        if scenario.task == TASK_INTERRUPT:
            interrupt_pairs.append((trace, scenario.label))
        else:
            tool_traces.append(trace)

    doc = ReportDocument(
        interrupt=interrupt_report(interrupt_pairs, validity_judge) if interrupt_pairs else None,
        tool=tool_report(tool_traces, scenarios, quality_judge) if tool_traces else None,
    )
    save_report(args.output, doc)
    print(f"report -> {args.output}")
    if args.table:
        _print_tables(doc)
    return EXIT_OK


def _print_tables(doc: ReportDocument) -> None:
    if doc.interrupt is not None:
        print()
        print(interrupt_table(doc.interrupt))
    if doc.tool is not None:
        print()
        print(tool_table(doc.tool))


def _cmd_report(args: argparse.Namespace) -> int:
    doc = load_report(args.report)
    _print_tables(doc)
    return EXIT_OK


def _assemble_tuple(obj: dict[str, Any], config: ChunkingConfig, path: str, lineno: int):
    try:
        shape = obj["shape"]
        words = [WordTiming(w[0], w[1], w[2]) for w in obj["words"]]
        thinkings = obj["thinkings"]
        response = obj["response"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ValidationError(f"malformed tuple record: {exc}", path=path, line=lineno)
    chunks = segment_transcript(words, config)
    if shape == "plain":
        return assemble_plain(chunks, thinkings, response)
    if shape == "interrupt":
        return assemble_interrupt(chunks, thinkings, response)
    if shape == "toolcall":
        placements = [
            PayloadPlacement(chunk_index=p["chunk"], position=p["position"], tokens=tuple(p["tokens"]))
            for p in obj.get("placements", [])
        ]
        return assemble_toolcall(chunks, thinkings, placements, response)
    raise ValidationError(f"unknown tuple shape {shape!r}", path=path, line=lineno)


def _cmd_assemble_train(args: argparse.Namespace) -> int:
    config = ChunkingConfig(t_chunk=args.t_chunk)
    sequences = []
    for raw_path in args.tuples:
        lines = Path(raw_path).read_text(encoding="utf-8").splitlines()
        if not lines or json.loads(lines[0]).get("type") != "train-tuples":
            raise ValidationError("expected a train-tuples header", path=raw_path, line=1)
        for lineno, raw in enumerate(lines[1:], start=2):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"bad tuple: {exc.msg}", path=raw_path, line=lineno)
            seq = _assemble_tuple(obj, config, raw_path, lineno)
            problems = validate_sequence(seq)
            if problems:
                raise ValidationError("; ".join(problems), path=raw_path, line=lineno)
            sequences.append(seq)
    save_corpus(args.output, sequences)
    print(f"{len(sequences)} sequences -> {args.output}")
    return EXIT_OK


_VALIDATORS = {
    ".scenario.jsonl": load_scenario,
    ".script.jsonl": load_script,
    ".trace.jsonl": load_trace,
    "report.json": load_report,
}


def _validate_one(path: Path) -> list[str]:
    name = path.name
    if name.endswith(".train.jsonl"):
        problems: list[str] = []
        for i, seq in enumerate(load_corpus(path), start=2):
            for msg in validate_sequence(seq):
                problems.append(f"{path}:{i}: {msg}")
        return problems
    for suffix, loader in _VALIDATORS.items():
        if name.endswith(suffix):
            loader(path)
            return []
    raise ValidationError(f"unrecognized file kind: {path}")


def _cmd_validate(args: argparse.Namespace) -> int:
    worst = EXIT_OK
    for raw in args.paths:
        path = Path(raw)
        try:
            problems = _validate_one(path)
        except ValidationError as exc:
            print(f"INVALID {path}: {exc}")
            worst = EXIT_VALIDATION
            continue
        if problems:
            for msg in problems:
                print(f"INVALID {msg}")
            worst = EXIT_VALIDATION
        else:
            print(f"OK {path}")
    return worst


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("LISTENTHINK_LOG", "WARNING"))
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "generate": _cmd_generate,
        "score": _cmd_score,
        "report": _cmd_report,
        "assemble-train": _cmd_assemble_train,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TransportError, IterationCapExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
