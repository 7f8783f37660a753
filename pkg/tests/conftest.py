from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from listenthink.backend import ScriptEntry
from listenthink.metrics import InterruptLabel
from listenthink.scenario import Scenario, TASK_INTERRUPT, TASK_TOOLCALL
from listenthink.timeline import ChunkingConfig, WordTiming
from listenthink.tools import GroundTruthCall, ToolParameter, ToolSpec, render_call_span


def words_from_ends(ends, prefix="w"):
    """Contiguous words starting at 0.0 with the given end timestamps."""
    words = []
    start = 0.0
    for i, end in enumerate(ends):
        words.append(WordTiming(text=f"{prefix}{i}", start=start, end=end))
        start = end
    return words


def interrupt_scenario(scenario_id, ends, subset="wrong", t_error=None):
    if subset == "wrong" and t_error is None:
        t_error = ends[0]
    label = InterruptLabel(scenario_id=scenario_id, subset=subset,
                           t_error=t_error if subset == "wrong" else None)
    return Scenario(
        id=scenario_id,
        task=TASK_INTERRUPT,
        words=tuple(words_from_ends(ends)),
        label=label,
    )


def build_tool_case(
    scenario_id: str,
    call_chunks: list[int],
    n_chunks: int = 3,
    t_chunk: float = 4.0,
    miss: set[int] | None = None,
    bad: set[int] | None = None,
):
    """Tool scenario with full placement control plus a matching script.

    Call ``j`` (1-based) is callable inside chunk ``call_chunks[j-1]``; the
    script makes every call in its chunk's thinking block except ids in
    ``miss`` (skipped) and ``bad`` (made with garbled arguments). Returns
    (scenario, script entries, config).
    """
    miss = miss or set()
    bad = bad or set()
    config = ChunkingConfig(t_chunk=t_chunk)
    # two words per chunk; the transcript ends exactly at the last boundary
    ends = []
    for c in range(n_chunks):
        ends.extend([c * t_chunk + t_chunk / 2, (c + 1) * t_chunk])
    words = words_from_ends(ends)

    calls = []
    for j, chunk in enumerate(call_chunks, start=1):
        assert 1 <= chunk <= n_chunks
        calls.append(
            GroundTruthCall(
                id=j,
                name=f"Svc_{j}",
                arguments={"q": f"q{j}", "limit": j},
                response=json.dumps({"answer": f"ans{j:03d}"}, sort_keys=True),
                earliest_time=(chunk - 1) * t_chunk + 1.0,
            )
        )
    specs = tuple(
        ToolSpec(
            name=c.name,
            parameters={"q": ToolParameter(type="string"), "limit": ToolParameter(type="integer")},
        )
        for c in calls
    )
    scenario = Scenario(
        id=scenario_id,
        task=TASK_TOOLCALL,
        words=tuple(words),
        tools=specs,
        ground_truth_calls=tuple(calls),
    )

    script = []
    step = 0
    for chunk in range(1, n_chunks + 1):
        for c in calls:
            if call_chunks[c.id - 1] != chunk or c.id in miss:
                continue
            step += 1
            if c.id in bad:
                script.append(ScriptEntry(step, tuple(render_call_span(c.name, {"bogus": True}))))
            else:
                script.append(ScriptEntry(step, tuple(render_call_span(c.name, c.arguments))))
        step += 1
        script.append(ScriptEntry(step, ("considering", "</think>")))
    made = [c.id for c in calls if c.id not in miss and c.id not in bad]
    step += 1
    script.append(ScriptEntry(step, tuple(["answer:"] + [f"ans{j:03d}" for j in sorted(made)])))
    return scenario, script, config


class _JsonHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.seen.append((self.path, body))
        status, payload = self.server.behavior(self.path, body)
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _JsonHandler)
    server.seen = []
    server.behavior = lambda path, body: (200, {"tokens": [], "finish": "eos"})
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}/"
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=5)
