from __future__ import annotations

import json

import pytest

from dytopo.embedding import HashingEmbedder
from dytopo.engine import run_loop
from dytopo.errors import CorruptTrace, EmptyTrace, RoundGap, UnknownRound, VersionMismatch
from dytopo.model import (
    GlobalState,
    HaltDecision,
    RelevanceMatrix,
    RoundContext,
    TopologySnapshot,
)
from dytopo.routing import RoutedBatch
from dytopo.trace import (
    CoordinationTrace,
    RoundRecord,
    compute_metrics,
    dumps_trace,
    export_round_graph,
    export_trace,
    import_trace,
    record_round,
    trace_from_dict,
    trace_to_dict,
)
from tests.conftest import make_output
from tests.test_engine import build_scripted_run


def run_small_trace(rounds=2, n_workers=2, halt_at=None) -> CoordinationTrace:
    setup, policies = build_scripted_run(n_workers=n_workers, rounds=rounds, halt_at=halt_at)
    return run_loop(setup, policies, HashingEmbedder()).trace


def make_record(round_index: int, edges=frozenset(), scores=None, n=2, was_acyclic=True):
    scores = scores or tuple(tuple(0.0 for _ in range(n)) for _ in range(n))
    adjacency = tuple(
        tuple(1 if (p, c) in edges else 0 for c in range(n)) for p in range(n)
    )
    goal = "task" if round_index == 0 else f"goal {round_index}"
    return RoundRecord(
        context=RoundContext(round=round_index, goal_text=goal, original_task="task"),
        worker_outputs=tuple(make_output(i, round_index) for i in range(n)),
        snapshot=TopologySnapshot(
            round=round_index,
            relevance=RelevanceMatrix(scores=scores),
            adjacency=adjacency,
            edges=frozenset(edges),
            aggregation_order=tuple(range(n)),
            was_acyclic=was_acyclic,
        ),
        batch=RoutedBatch(round=round_index, deliveries=()),
        global_state=GlobalState(
            round=round_index,
            goal_text=goal,
            public_digest=tuple((i, "") for i in range(n)),
        ),
        manager_output=None,
        halt=HaltDecision(halt=False, next_goal="continue"),
    )


class TestRecordRound:
    def test_append_to_empty(self):
        trace = CoordinationTrace(metadata={})
        trace = record_round(trace, make_record(0))
        assert len(trace.rounds) == 1

    def test_gap_rejected(self):
        trace = CoordinationTrace(metadata={})
        trace = record_round(trace, make_record(0))
        with pytest.raises(RoundGap):
            record_round(trace, make_record(2))

    def test_sequential_appends_preserve_order(self):
        trace = CoordinationTrace(metadata={})
        for index in range(4):
            trace = record_round(trace, make_record(index))
        assert [record.context.round for record in trace.rounds] == [0, 1, 2, 3]


class TestExportImport:
    def test_round_trip_structural_identity(self, tmp_path):
        trace = run_small_trace(rounds=3)
        path = export_trace(trace, tmp_path / "trace.json")
        loaded = import_trace(path)
        assert loaded == trace

    def test_round_trip_via_dict(self):
        trace = run_small_trace(rounds=2, halt_at=1)
        assert trace_from_dict(trace_to_dict(trace)) == trace

    def test_version_mismatch(self, tmp_path):
        trace = run_small_trace(rounds=1)
        data = trace_to_dict(trace)
        data["format"] = "dytopo-trace/99"
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(VersionMismatch):
            import_trace(path)

    def test_truncated_file_is_corrupt(self, tmp_path):
        trace = run_small_trace(rounds=1)
        text = dumps_trace(trace)
        path = tmp_path / "truncated.json"
        path.write_text(text[: len(text) // 2], encoding="utf-8")
        with pytest.raises(CorruptTrace):
            import_trace(path)

    def test_missing_format_field_is_corrupt(self, tmp_path):
        path = tmp_path / "noformat.json"
        path.write_text('{"metadata": {}}', encoding="utf-8")
        with pytest.raises(CorruptTrace):
            import_trace(path)

    def test_serialization_is_canonical(self):
        trace = run_small_trace(rounds=2)
        assert dumps_trace(trace) == dumps_trace(trace)


class TestExportRoundGraph:
    def _trace_with_records(self, records, names=("Researcher", "Developer")):
        metadata = {
            "profiles": [
                {"agent_id": i, "name": name, "role_description": "r", "kind": "scripted"}
                for i, name in enumerate(names)
            ]
        }
        trace = CoordinationTrace(metadata=metadata)
        for record in records:
            trace = record_round(trace, record)
        return trace

    def test_empty_round_lists_isolated_labeled_nodes(self):
        trace = self._trace_with_records([make_record(0)])
        text = export_round_graph(trace, 0, style="dot")
        assert "digraph round_0" in text
        assert 'a0 [label="Researcher\\npos 0"];' in text
        assert 'a1 [label="Developer\\npos 1"];' in text
        assert "->" not in text.replace("rankdir", "")

    def test_single_edge_labeled_with_two_decimals(self):
        scores = ((0.0, 0.0), (0.77, 0.0))  # r[consumer=1][provider=0] = 0.77
        record = make_record(0, edges={(0, 1)}, scores=scores)
        trace = self._trace_with_records([record])
        text = export_round_graph(trace, 0, style="dot")
        assert text.count("->") == 1
        assert 'a0 -> a1 [label="0.77"];' in text

    def test_unknown_round(self):
        trace = self._trace_with_records([make_record(0)])
        with pytest.raises(UnknownRound):
            export_round_graph(trace, 5)

    def test_mermaid_style(self):
        scores = ((0.0, 0.0), (0.5, 0.0))
        record = make_record(0, edges={(0, 1)}, scores=scores)
        trace = self._trace_with_records([record])
        text = export_round_graph(trace, 0, style="mermaid")
        assert text.startswith("flowchart LR")
        assert "a0 -->|0.50| a1" in text

    def test_invalid_style_rejected(self):
        trace = self._trace_with_records([make_record(0)])
        with pytest.raises(ValueError):
            export_round_graph(trace, 0, style="png")

    def test_deterministic_output(self):
        trace = run_small_trace(rounds=2)
        assert export_round_graph(trace, 1) == export_round_graph(trace, 1)


class TestComputeMetrics:
    def test_sparsity_formula(self):
        records = [
            make_record(0, edges={(0, 1), (0, 2), (1, 3)}, n=4),
            make_record(1, edges={(2, 0)}, n=4),
        ]
        trace = CoordinationTrace(metadata={})
        for record in records:
            trace = record_round(trace, record)
        metrics = compute_metrics(trace)
        assert metrics.per_round_edge_count == (3, 1)
        assert metrics.per_round_sparsity == (3 / 12, 1 / 12)
        assert metrics.rounds_executed == 2
        assert metrics.n_workers == 4

    def test_cycle_rate(self):
        records = [
            make_record(0, was_acyclic=True),
            make_record(1, was_acyclic=False),
        ]
        trace = CoordinationTrace(metadata={})
        for record in records:
            trace = record_round(trace, record)
        assert compute_metrics(trace).cycle_rate == 0.5

    def test_empty_trace_rejected(self):
        with pytest.raises(EmptyTrace):
            compute_metrics(CoordinationTrace(metadata={}))

    def test_counters_flow_through(self):
        trace = run_small_trace(rounds=1)
        metrics = compute_metrics(trace)
        assert metrics.counters == trace.counters
