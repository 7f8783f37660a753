"""Deterministic orchestration engine and discrete-event simulator for
think-while-listening spoken dialogue: chunked transcript delivery, budgeted
interleaved thinking, interruption and tool-call semantics on a virtual
clock, training-sequence assembly with loss masks, and metric reports."""

from .backend import (
    Finish,
    GenerationRequest,
    GenerationResult,
    RemoteBackend,
    ScriptEntry,
    ScriptedBackend,
    TransportError,
    scripted_lookup,
)
from .errors import AnnotationError, ValidationError
from .markers import DEFAULT_MARKERS, MarkerVocabulary, tokenize
from .metrics import (
    InterruptLabel,
    InterruptReport,
    ToolReport,
    interrupt_report,
    interruption_latency,
    tool_report,
)
from .orchestrator import (
    ChunkDelivered,
    ResponseChunk,
    ResponseEmitted,
    ThinkingChunk,
    ThinkingGenerated,
    ToolExchange,
    TurnTrace,
    build_context,
    run_call_after_listen,
    run_combined,
    run_shanks,
)
from .scenario import (
    Scenario,
    SyntheticBundle,
    SyntheticParams,
    generate_synthetic,
    load_scenario,
    save_scenario,
)
from .timeline import (
    ChunkingConfig,
    SpeechChunk,
    WordTiming,
    segment_transcript,
    thinking_budget,
)
from .tools import (
    GroundTruthCall,
    MatchOutcome,
    ToolCall,
    ToolEnvironment,
    ToolSpec,
    assign_to_chunks,
    earliest_call_time,
    inject_tool_response,
    match_call,
    parse_tool_calls,
)
from .trainset import (
    TrainBlock,
    TrainSequence,
    assemble_interrupt,
    assemble_plain,
    assemble_toolcall,
    validate_sequence,
)

__version__ = "0.1.0"
