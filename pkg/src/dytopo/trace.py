"""The coordination trace: a replayable record of everything a run decided.

Traces are written as versioned, canonical JSON (sorted keys, fixed
indentation, UTF-8) so that identical runs produce byte-identical files.
Relevance matrices are stored in full: topology analysis should never
require re-embedding descriptors, and with the recorded scores the whole
graph sequence can be recomputed and checked offline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from dytopo.errors import CorruptTrace, EmptyTrace, RoundGap, UnknownRound, VersionMismatch
from dytopo.model import (
    Channel,
    Descriptor,
    DescriptorKind,
    GlobalState,
    HaltDecision,
    Message,
    RelevanceMatrix,
    RoundContext,
    RoundOutput,
    TopologySnapshot,
)
from dytopo.routing import Delivery, RoutedBatch

TRACE_FORMAT = "dytopo-trace/1"
GRAPH_STYLES = ("dot", "mermaid")


@dataclass(frozen=True)
class RoundRecord:
    """Everything one round produced, in phase order."""

    context: RoundContext
    worker_outputs: tuple[RoundOutput, ...]
    snapshot: TopologySnapshot
    batch: RoutedBatch
    global_state: GlobalState
    manager_output: RoundOutput | None
    halt: HaltDecision


@dataclass(frozen=True)
class CoordinationTrace:
    metadata: dict
    rounds: tuple[RoundRecord, ...] = ()
    counters: dict = field(default_factory=dict)
    result: dict = field(default_factory=dict)

    def __post_init__(self):
        for index, record in enumerate(self.rounds):
            if record.context.round != index:
                raise RoundGap(f"record {index} carries round {record.context.round}")


@dataclass(frozen=True)
class RunMetrics:
    rounds_executed: int
    n_workers: int
    per_round_edge_count: tuple[int, ...]
    per_round_sparsity: tuple[float, ...]
    cycle_rate: float
    counters: dict

    def to_dict(self) -> dict:
        return {
            "rounds_executed": self.rounds_executed,
            "n_workers": self.n_workers,
            "per_round_edge_count": list(self.per_round_edge_count),
            "per_round_sparsity": list(self.per_round_sparsity),
            "cycle_rate": self.cycle_rate,
            "counters": self.counters,
        }


def record_round(trace: CoordinationTrace, record: RoundRecord) -> CoordinationTrace:
    """Append-only: the new record's round index must equal the trace length."""
    if record.context.round != len(trace.rounds):
        raise RoundGap(
            f"expected round {len(trace.rounds)}, got {record.context.round}"
        )
    return CoordinationTrace(
        metadata=trace.metadata,
        rounds=trace.rounds + (record,),
        counters=trace.counters,
        result=trace.result,
    )


# -- serialization -------------------------------------------------------------

def _message_to_dict(message: Message) -> dict:
    return {
        "author_id": message.author_id,
        "round": message.round,
        "channel": message.channel.value,
        "content": message.content,
    }


def _message_from_dict(data: dict) -> Message:
    return Message(
        author_id=data["author_id"],
        round=data["round"],
        channel=Channel(data["channel"]),
        content=data["content"],
    )


def _output_to_dict(output: RoundOutput) -> dict:
    return {
        "author_id": output.author_id,
        "round": output.round,
        "public_message": _message_to_dict(output.public_message),
        "private_message": _message_to_dict(output.private_message),
        "query_descriptor": output.query_descriptor.text,
        "key_descriptor": output.key_descriptor.text,
        "private_directed": (
            None
            if output.private_directed is None
            else [[role, text] for role, text in output.private_directed]
        ),
        "answer": output.answer,
        "is_complete": output.is_complete,
        "next_goal": output.next_goal,
    }


def _output_from_dict(data: dict) -> RoundOutput:
    return RoundOutput(
        author_id=data["author_id"],
        round=data["round"],
        public_message=_message_from_dict(data["public_message"]),
        private_message=_message_from_dict(data["private_message"]),
        query_descriptor=Descriptor(text=data["query_descriptor"], kind=DescriptorKind.QUERY),
        key_descriptor=Descriptor(text=data["key_descriptor"], kind=DescriptorKind.KEY),
        private_directed=(
            None
            if data["private_directed"] is None
            else tuple((role, text) for role, text in data["private_directed"])
        ),
        answer=data["answer"],
        is_complete=data["is_complete"],
        next_goal=data["next_goal"],
    )


def _snapshot_to_dict(snapshot: TopologySnapshot) -> dict:
    return {
        "round": snapshot.round,
        "relevance": [list(row) for row in snapshot.relevance.scores],
        "adjacency": [list(row) for row in snapshot.adjacency],
        "edges": [
            {
                "provider": provider,
                "consumer": consumer,
                "score": snapshot.edge_score(provider=provider, consumer=consumer),
            }
            for provider, consumer in sorted(snapshot.edges)
        ],
        "aggregation_order": list(snapshot.aggregation_order)
        if snapshot.aggregation_order is not None
        else None,
        "was_acyclic": snapshot.was_acyclic,
    }


def _snapshot_from_dict(data: dict) -> TopologySnapshot:
    return TopologySnapshot(
        round=data["round"],
        relevance=RelevanceMatrix(scores=tuple(tuple(row) for row in data["relevance"])),
        adjacency=tuple(tuple(row) for row in data["adjacency"]),
        edges=frozenset((edge["provider"], edge["consumer"]) for edge in data["edges"]),
        aggregation_order=(
            tuple(data["aggregation_order"]) if data["aggregation_order"] is not None else None
        ),
        was_acyclic=data["was_acyclic"],
    )


def _record_to_dict(record: RoundRecord) -> dict:
    return {
        "context": {
            "round": record.context.round,
            "goal_text": record.context.goal_text,
            "original_task": record.context.original_task,
        },
        "worker_outputs": [_output_to_dict(output) for output in record.worker_outputs],
        "snapshot": _snapshot_to_dict(record.snapshot),
        "batch": {
            "round": record.batch.round,
            "deliveries": [
                {
                    "provider": delivery.provider_id,
                    "consumer": delivery.consumer_id,
                    "relevance": delivery.relevance,
                    "content": delivery.content,
                }
                for delivery in record.batch.deliveries
            ],
        },
        "global_state": {
            "round": record.global_state.round,
            "goal_text": record.global_state.goal_text,
            "public_digest": [
                [agent_id, content] for agent_id, content in record.global_state.public_digest
            ],
        },
        "manager_output": (
            _output_to_dict(record.manager_output) if record.manager_output is not None else None
        ),
        "halt": {
            "halt": record.halt.halt,
            "next_goal": record.halt.next_goal,
            "final_answer": record.halt.final_answer,
        },
    }


def _record_from_dict(data: dict) -> RoundRecord:
    context = data["context"]
    halt = data["halt"]
    return RoundRecord(
        context=RoundContext(
            round=context["round"],
            goal_text=context["goal_text"],
            original_task=context["original_task"],
        ),
        worker_outputs=tuple(_output_from_dict(output) for output in data["worker_outputs"]),
        snapshot=_snapshot_from_dict(data["snapshot"]),
        batch=RoutedBatch(
            round=data["batch"]["round"],
            deliveries=tuple(
                Delivery(
                    provider_id=delivery["provider"],
                    consumer_id=delivery["consumer"],
                    relevance=delivery["relevance"],
                    content=delivery["content"],
                )
                for delivery in data["batch"]["deliveries"]
            ),
        ),
        global_state=GlobalState(
            round=data["global_state"]["round"],
            goal_text=data["global_state"]["goal_text"],
            public_digest=tuple(
                (agent_id, content) for agent_id, content in data["global_state"]["public_digest"]
            ),
        ),
        manager_output=(
            _output_from_dict(data["manager_output"])
            if data["manager_output"] is not None
            else None
        ),
        halt=HaltDecision(
            halt=halt["halt"], next_goal=halt["next_goal"], final_answer=halt["final_answer"]
        ),
    )


def trace_to_dict(trace: CoordinationTrace) -> dict:
    return {
        "format": TRACE_FORMAT,
        "metadata": trace.metadata,
        "rounds": [_record_to_dict(record) for record in trace.rounds],
        "counters": trace.counters,
        "result": trace.result,
    }


def trace_from_dict(data: dict) -> CoordinationTrace:
    if not isinstance(data, dict) or "format" not in data:
        raise CorruptTrace("missing format field")
    if data["format"] != TRACE_FORMAT:
        raise VersionMismatch(f"unsupported trace format {data['format']!r}")
    try:
        return CoordinationTrace(
            metadata=data["metadata"],
            rounds=tuple(_record_from_dict(record) for record in data["rounds"]),
            counters=data.get("counters", {}),
            result=data.get("result", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptTrace(f"trace body malformed: {exc}") from exc


def dumps_trace(trace: CoordinationTrace) -> str:
    return json.dumps(trace_to_dict(trace), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def export_trace(trace: CoordinationTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_trace(trace), encoding="utf-8")
    return path


def import_trace(path: str | Path) -> CoordinationTrace:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptTrace(f"not valid JSON: {exc}") from exc
    return trace_from_dict(data)


# -- graph export --------------------------------------------------------------

def _agent_names(trace: CoordinationTrace) -> dict[int, str]:
    profiles = trace.metadata.get("profiles", [])
    return {profile["agent_id"]: profile["name"] for profile in profiles}


def export_round_graph(trace: CoordinationTrace, round_index: int, style: str = "dot") -> str:
    """Render one round's graph as DOT or Mermaid text.

    Nodes are labeled with agent names plus their aggregation-order
    position; edges carry the relevance score at two decimals.
    """
    if not 0 <= round_index < len(trace.rounds):
        raise UnknownRound(f"trace has {len(trace.rounds)} rounds, asked for {round_index}")
    if style not in GRAPH_STYLES:
        raise ValueError(f"style must be one of {GRAPH_STYLES}")
    record = trace.rounds[round_index]
    snapshot = record.snapshot
    names = _agent_names(trace)
    order = snapshot.aggregation_order or tuple(range(snapshot.size))
    position = {agent: index for index, agent in enumerate(order)}
    edges = sorted(snapshot.edges)

    if style == "dot":
        lines = [f"digraph round_{round_index} {{", "  rankdir=LR;"]
        for agent in range(snapshot.size):
            label = f"{names.get(agent, f'agent {agent}')}\\npos {position[agent]}"
            lines.append(f'  a{agent} [label="{label}"];')
        for provider, consumer in edges:
            score = snapshot.edge_score(provider=provider, consumer=consumer)
            lines.append(f'  a{provider} -> a{consumer} [label="{score:.2f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    lines = ["flowchart LR"]
    for agent in range(snapshot.size):
        name = names.get(agent, f"agent {agent}")
        lines.append(f'  a{agent}["{name} (pos {position[agent]})"]')
    for provider, consumer in edges:
        score = snapshot.edge_score(provider=provider, consumer=consumer)
        lines.append(f"  a{provider} -->|{score:.2f}| a{consumer}")
    return "\n".join(lines) + "\n"


# -- metrics -------------------------------------------------------------------

def compute_metrics(trace: CoordinationTrace) -> RunMetrics:
    """Derive run metrics purely from the trace; no live state needed."""
    if not trace.rounds:
        raise EmptyTrace("cannot compute metrics for an empty trace")
    n = trace.rounds[0].snapshot.size
    edge_counts = tuple(len(record.snapshot.edges) for record in trace.rounds)
    possible = n * (n - 1)
    sparsity = tuple(
        (count / possible) if possible else 0.0 for count in edge_counts
    )
    cyclic_rounds = sum(1 for record in trace.rounds if record.snapshot.was_acyclic is False)
    return RunMetrics(
        rounds_executed=len(trace.rounds),
        n_workers=n,
        per_round_edge_count=edge_counts,
        per_round_sparsity=sparsity,
        cycle_rate=cyclic_rounds / len(trace.rounds),
        counters=trace.counters,
    )
