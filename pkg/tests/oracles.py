"""Independent brute-force recounts of both metric reports.

These deliberately re-read serialized trace text and reimplement every
definition with plain loops, so they share no code path with the metrics
module beyond the report field layout they are compared against.
"""

from __future__ import annotations

import json
import math


def _parse(blob: str):
    lines = [l for l in blob.splitlines() if l.strip()]
    header = json.loads(lines[0])
    events = []
    summary = None
    for raw in lines[1:]:
        obj = json.loads(raw)
        if obj.get("kind") == "summary":
            summary = obj
        else:
            events.append(obj)
    return header, events, summary, "\n".join(lines)


def _sorted_parsed(blobs):
    parsed = [_parse(b) for b in blobs]
    return sorted(parsed, key=lambda p: (p[0]["scenario_id"], p[3]))


def _user_prefix(events, summary):
    out = []
    for ev in events:
        if ev.get("kind") == "chunk":
            out.extend(w[0] for w in ev["chunk"]["words"])
    overlap = summary.get("undelivered_overlap")
    if overlap is not None:
        out.extend(w[0] for w in overlap["words"])
    return out


def _response_tokens(events):
    for ev in events:
        if ev.get("kind") == "response":
            return list(ev["chunk"]["tokens"])
    return []


def recount_interrupt(blobs, labels_by_id, judge):
    """Rebuild the interruption report dict from raw trace text."""
    per_subset = {"correct": [], "wrong": []}
    for header, events, summary, key in _sorted_parsed(blobs):
        label = labels_by_id[header["scenario_id"]]
        per_subset[label["subset"]].append((events, summary, label))

    out = {}
    for subset, rows in per_subset.items():
        total = len(rows)
        interrupted = [r for r in rows if r[1]["interrupted_at"] is not None]
        valid = 0
        for events, summary, _ in interrupted:
            if judge(_user_prefix(events, summary), _response_tokens(events)):
                valid += 1
        latencies = []
        if subset == "wrong":
            for events, summary, label in interrupted:
                if summary["t_interrupt"] is not None and label["t_error"] is not None:
                    latencies.append(summary["t_interrupt"] - label["t_error"])
        hist = {}
        for lat in latencies:
            lo = math.floor(lat / 2.0) * 2.0
            hist[lo] = hist.get(lo, 0) + 1
        out[subset] = {
            "total": total,
            "interrupted": len(interrupted),
            "interrupt_ratio": len(interrupted) / total if total else None,
            "valid_interruptions": valid,
            "valid_interrupt_ratio": valid / len(interrupted) if interrupted else None,
            "mean_latency": sum(latencies) / len(latencies) if latencies else None,
            "latency_histogram": (
                [[lo, n] for lo, n in sorted(hist.items())] if latencies else None
            ),
        }
    return out


def _default_quality(scenario_obj, response_tokens):
    calls = scenario_obj.get("ground_truth_calls") or []
    if not calls:
        return 2.0
    text = " ".join(response_tokens)
    found = 0
    for call in calls:
        payload = call["response"]
        try:
            obj = json.loads(payload)
            snippet = str(obj["answer"]) if isinstance(obj, dict) and "answer" in obj else payload.strip()
        except json.JSONDecodeError:
            snippet = payload.strip()
        if snippet in text:
            found += 1
    return 2.0 if found == len(calls) else (1.0 if found else 0.0)


def recount_tool(blobs, scenario_objs_by_id):
    """Rebuild the tool report dict from raw trace text and raw scenarios."""
    rows = _sorted_parsed(blobs)
    early = late = total_gt = successes = 0
    post_turn = []
    quality = []
    for header, events, summary, _ in rows:
        scenario = scenario_objs_by_id[header["scenario_id"]]
        gt = scenario.get("ground_truth_calls") or []
        first_by_id = {}
        for ev in events:
            if ev.get("kind") != "tool":
                continue
            outcome = ev["outcome"]
            if outcome["is_error"] or outcome["matched"] is None:
                continue
            if outcome["matched"] not in first_by_id:
                first_by_id[outcome["matched"]] = outcome["phase"]
        early += sum(1 for phase in first_by_id.values() if phase == "early")
        late += sum(1 for phase in first_by_id.values() if phase == "late")
        total_gt += len(gt)
        if len(first_by_id) == len(gt):
            successes += 1
        post_turn.append(float(summary["post_turn_tokens"]))
        score = _default_quality(scenario, _response_tokens(events))
        quality.append(score)

    n = len(rows)
    early_acc = early / total_gt if total_gt else None
    late_acc = late / total_gt if total_gt else None
    return {
        "early_hits": early,
        "late_hits": late,
        "total_gt": total_gt,
        "early_accuracy": early_acc,
        "late_accuracy": late_acc,
        "total_accuracy": (early_acc + late_acc) if total_gt else None,
        "success_rate": successes / n if n else None,
        "mean_post_turn_tokens": sum(post_turn) / n if n else None,
        "correctness": sum(quality) / n if n else None,
        "completeness": sum(quality) / n if n else None,
        "n_traces": n,
    }
