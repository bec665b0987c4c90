"""Synchronization barrier: routing, memory update, context rendering.

All agents finish a round before anything moves. Private messages then
travel only along the round's activated edges, and every recipient's memory
gains its own public message followed by the routed messages in decreasing
relevance order. An agent's next-round context therefore contains another
agent's private content iff the corresponding edge was active.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from dytopo.errors import MissingOutput
from dytopo.model import (
    AgentProfile,
    MemoryBuffer,
    MemoryEntry,
    MemorySource,
    RoundContext,
    RoundOutput,
    TopologySnapshot,
)


@dataclass(frozen=True)
class Delivery:
    provider_id: int
    consumer_id: int
    relevance: float
    content: str


@dataclass(frozen=True)
class RoutedBatch:
    """One round's deliveries; pairs match the snapshot's edge set exactly."""

    round: int
    deliveries: tuple[Delivery, ...]


def route_private_messages(
    outputs: Sequence[RoundOutput],
    snapshot: TopologySnapshot,
    profiles: Sequence[AgentProfile],
) -> RoutedBatch:
    """Materialize one delivery per active edge, nothing else.

    The topology decides recipients, not the author: when a provider's
    structured private content names the recipient's role, the delivery
    carries just that entry; otherwise it carries the whole private message.
    """
    by_id = {output.author_id: output for output in outputs}
    names = {profile.agent_id: profile.name for profile in profiles}
    for agent_id in range(snapshot.size):
        if agent_id not in by_id:
            raise MissingOutput(agent_id)
    deliveries = []
    for provider, consumer in sorted(snapshot.edges):
        source = by_id[provider]
        directed = source.directed_entry(names[consumer])
        content = directed if directed is not None else source.private_message.content
        deliveries.append(
            Delivery(
                provider_id=provider,
                consumer_id=consumer,
                relevance=snapshot.edge_score(provider=provider, consumer=consumer),
                content=content,
            )
        )
    return RoutedBatch(round=snapshot.round, deliveries=tuple(deliveries))


def apply_memory_update(
    memories: Mapping[int, MemoryBuffer],
    outputs: Sequence[RoundOutput],
    batch: RoutedBatch,
) -> dict[int, MemoryBuffer]:
    """Append one round of history to every agent's buffer.

    Each agent gains its own public message first, then incoming deliveries
    ordered by relevance descending (ties to the smaller provider id).
    Existing entries are never touched; agents without in-edges gain only
    the public entry.
    """
    rounds = {output.round for output in outputs}
    if rounds != {batch.round}:
        raise ValueError(f"outputs are for rounds {sorted(rounds)}, batch for {batch.round}")
    incoming: dict[int, list[Delivery]] = {agent_id: [] for agent_id in memories}
    for delivery in batch.deliveries:
        incoming[delivery.consumer_id].append(delivery)
    updated: dict[int, MemoryBuffer] = {}
    for output in outputs:
        agent_id = output.author_id
        entries = [
            MemoryEntry(
                round=batch.round,
                source=MemorySource.OWN_PUBLIC,
                author_id=agent_id,
                content=output.public_message.content,
            )
        ]
        ordered = sorted(incoming[agent_id], key=lambda d: (-d.relevance, d.provider_id))
        entries.extend(
            MemoryEntry(
                round=batch.round,
                source=MemorySource.ROUTED_PRIVATE,
                author_id=delivery.provider_id,
                content=delivery.content,
                relevance=delivery.relevance,
            )
            for delivery in ordered
        )
        updated[agent_id] = memories[agent_id].extended(tuple(entries))
    return updated


def render_agent_context(
    profile: AgentProfile,
    round_context: RoundContext,
    memory: MemoryBuffer,
    roster: Sequence[AgentProfile],
) -> str:
    """Deterministic prompt assembly: role block, goal block, then memory.

    Every memory entry is labeled with its round, source kind, and author
    name; relevance scores are engine-internal and never rendered. Identical
    inputs yield byte-identical text.
    """
    names = {p.agent_id: p.name for p in roster}
    lines = [
        "# Role",
        f"You are {profile.name}. {profile.role_description}",
        "",
        f"# Round {round_context.round} Goal",
        round_context.goal_text,
    ]
    if memory.entries:
        lines.append("")
        lines.append("# Memory")
        for entry in memory.entries:
            author = names.get(entry.author_id, f"agent {entry.author_id}")
            lines.append(f"[round {entry.round} | {entry.source.value} | {author}]")
            lines.append(entry.content)
    return "\n".join(lines) + "\n"
