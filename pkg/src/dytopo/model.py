"""Core domain types for the routing engine.

Everything here is an immutable value object, validated at construction.
Mutation happens only by building successor values, so instances are safe
to share across threads.

Index conventions (the single most likely source of bugs):

* ``RelevanceMatrix.scores[i][j]`` is the score ``r[i, j]``: how well
  provider ``j``'s key matches consumer ``i``'s query (row = consumer).
* ``TopologySnapshot.adjacency[j][i]`` is 1 when the edge ``j -> i`` is
  active (row = provider, column = consumer).

All public accessors take ``provider``/``consumer`` keyword names instead of
bare row/column indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from dytopo.errors import DuplicateAgentId, InvalidConfig, NonContiguousIds


class AgentKind(str, Enum):
    LLM_BACKED = "llm_backed"
    SCRIPTED = "scripted"


class DescriptorKind(str, Enum):
    QUERY = "query"
    KEY = "key"


class Channel(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class MemorySource(str, Enum):
    OWN_PUBLIC = "own_public"
    ROUTED_PRIVATE = "routed_private"


class TopologyMode(str, Enum):
    DYNAMIC = "dynamic"
    RANDOM = "random"
    STATIC_FULL = "static_full"
    SINGLE_TURN = "single_turn"


@dataclass(frozen=True)
class AgentProfile:
    """Identity and role binding for one agent.

    Worker ids must form the contiguous range ``0..N-1`` within a run; the
    manager, which sits outside the worker graph, is conventionally given
    id ``N``.
    """

    agent_id: int
    name: str
    role_description: str
    kind: AgentKind = AgentKind.SCRIPTED

    def __post_init__(self):
        if self.agent_id < 0:
            raise ValueError("agent_id must be non-negative")
        if not self.name.strip():
            raise ValueError("agent name must be non-empty")
        if not self.role_description.strip():
            raise ValueError("role_description must be non-empty")


@dataclass(frozen=True)
class Descriptor:
    """A short natural-language need (query) or offer (key)."""

    text: str
    kind: DescriptorKind

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("descriptor text must be non-empty")


@dataclass(frozen=True)
class Message:
    """One channelled message. Private content may legitimately be empty."""

    author_id: int
    round: int
    channel: Channel
    content: str

    def __post_init__(self):
        if self.author_id < 0:
            raise ValueError("author_id must be non-negative")
        if self.round < 0:
            raise ValueError("round must be non-negative")


@dataclass(frozen=True)
class RoundOutput:
    """One agent's complete output for one round.

    ``private_directed`` preserves the structured role->instruction mapping
    when the agent addressed specific roles; routing still follows the
    induced topology, but a delivery to a named role carries only that
    role's entry. ``answer``/``is_complete``/``next_goal`` are set only by
    answer-bearing and manager agents respectively; the runtime enforces
    that because only it knows who the manager is.
    """

    author_id: int
    round: int
    public_message: Message
    private_message: Message
    query_descriptor: Descriptor
    key_descriptor: Descriptor
    private_directed: tuple[tuple[str, str], ...] | None = None
    answer: str | None = None
    is_complete: bool | None = None
    next_goal: str | None = None

    def __post_init__(self):
        if self.public_message.channel is not Channel.PUBLIC:
            raise ValueError("public_message must use the public channel")
        if self.private_message.channel is not Channel.PRIVATE:
            raise ValueError("private_message must use the private channel")
        if self.query_descriptor.kind is not DescriptorKind.QUERY:
            raise ValueError("query_descriptor must have kind=query")
        if self.key_descriptor.kind is not DescriptorKind.KEY:
            raise ValueError("key_descriptor must have kind=key")
        for msg in (self.public_message, self.private_message):
            if msg.author_id != self.author_id or msg.round != self.round:
                raise ValueError("message author/round must match the output")

    def directed_entry(self, role_name: str) -> str | None:
        """Instruction addressed to ``role_name``, if the author named it."""
        if self.private_directed is None:
            return None
        for target, instruction in self.private_directed:
            if target == role_name:
                return instruction
        return None


@dataclass(frozen=True)
class MemoryEntry:
    round: int
    source: MemorySource
    author_id: int
    content: str
    relevance: float | None = None

    def __post_init__(self):
        if self.relevance is not None and not -1.0 - 1e-9 <= self.relevance <= 1.0 + 1e-9:
            raise ValueError("relevance must lie in [-1, 1]")


def _check_memory_order(entries: tuple[MemoryEntry, ...]):
    for prev, cur in zip(entries, entries[1:]):
        if cur.round < prev.round:
            raise ValueError("memory entries must be ordered by round ascending")
        if cur.round != prev.round:
            continue
        if prev.source is MemorySource.ROUTED_PRIVATE and cur.source is MemorySource.OWN_PUBLIC:
            raise ValueError("own_public must precede routed_private within a round")
        if prev.source is MemorySource.ROUTED_PRIVATE and cur.source is MemorySource.ROUTED_PRIVATE:
            pr = prev.relevance if prev.relevance is not None else 0.0
            cr = cur.relevance if cur.relevance is not None else 0.0
            if cr > pr or (cr == pr and cur.author_id < prev.author_id):
                raise ValueError(
                    "routed entries must be ordered by relevance desc, ties by author_id asc"
                )


@dataclass(frozen=True)
class MemoryBuffer:
    """An agent's append-only history: own public messages plus routed
    private messages, in barrier order."""

    entries: tuple[MemoryEntry, ...] = ()

    def __post_init__(self):
        _check_memory_order(self.entries)

    def extended(self, new_entries: tuple[MemoryEntry, ...]) -> "MemoryBuffer":
        return MemoryBuffer(self.entries + new_entries)


@dataclass(frozen=True)
class RoundContext:
    """The manager-issued goal conditioning one round.

    At round 0 the goal is the original task statement verbatim.
    """

    round: int
    goal_text: str
    original_task: str

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be non-negative")
        if self.round == 0 and self.goal_text != self.original_task:
            raise ValueError("round-0 goal must equal the original task verbatim")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        if not self.values:
            raise ValueError("embedding must have at least one dimension")
        if self.normalized:
            norm = math.sqrt(sum(v * v for v in self.values))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"normalized vector has norm {norm}")

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class RelevanceMatrix:
    """N x N descriptor-match scores; ``scores[i][j]`` pairs consumer ``i``'s
    query with provider ``j``'s key."""

    scores: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        n = len(self.scores)
        for row in self.scores:
            if len(row) != n:
                raise ValueError("relevance matrix must be square")
            for value in row:
                if not -1.0 - 1e-9 <= value <= 1.0 + 1e-9:
                    raise ValueError(f"relevance score {value} outside [-1, 1]")

    @property
    def size(self) -> int:
        return len(self.scores)

    def score(self, *, consumer: int, provider: int) -> float:
        return self.scores[consumer][provider]


@dataclass(frozen=True)
class TopologySnapshot:
    """The induced communication graph for one round.

    ``adjacency[j][i]`` = 1 means the directed edge provider ``j`` ->
    consumer ``i`` is active. ``aggregation_order`` and ``was_acyclic``
    stay ``None`` until the ordering pass has run. Builders guarantee each
    consumer's in-degree never exceeds the configured cap.
    """

    round: int
    relevance: RelevanceMatrix
    adjacency: tuple[tuple[int, ...], ...]
    edges: frozenset[tuple[int, int]]
    aggregation_order: tuple[int, ...] | None = None
    was_acyclic: bool | None = None

    def __post_init__(self):
        n = len(self.adjacency)
        if self.relevance.size != n:
            raise ValueError("adjacency and relevance sizes differ")
        derived = set()
        for provider, row in enumerate(self.adjacency):
            if len(row) != n:
                raise ValueError("adjacency must be square")
            for consumer, bit in enumerate(row):
                if bit not in (0, 1):
                    raise ValueError("adjacency entries must be 0 or 1")
                if bit:
                    if provider == consumer:
                        raise ValueError("self-loops are forbidden")
                    derived.add((provider, consumer))
        if derived != set(self.edges):
            raise ValueError("edge set inconsistent with adjacency")
        if self.aggregation_order is not None:
            if sorted(self.aggregation_order) != list(range(n)):
                raise ValueError("aggregation_order must be a permutation of 0..N-1")

    @property
    def size(self) -> int:
        return len(self.adjacency)

    def has_edge(self, *, provider: int, consumer: int) -> bool:
        return bool(self.adjacency[provider][consumer])

    def edge_score(self, *, provider: int, consumer: int) -> float:
        return self.relevance.score(consumer=consumer, provider=provider)

    def with_order(self, order: tuple[int, ...], was_acyclic: bool) -> "TopologySnapshot":
        return TopologySnapshot(
            round=self.round,
            relevance=self.relevance,
            adjacency=self.adjacency,
            edges=self.edges,
            aggregation_order=order,
            was_acyclic=was_acyclic,
        )


@dataclass(frozen=True)
class RoutingConfig:
    """Knobs governing topology induction and the round loop."""

    tau_edge: float = 0.3
    k_in_max: int = 3
    t_max: int = 10
    halting_enabled: bool = True
    topology_mode: TopologyMode = TopologyMode.DYNAMIC
    random_seed: int = 0

    def __post_init__(self):
        if not -1.0 <= self.tau_edge <= 1.0:
            raise InvalidConfig("tau_edge", "must lie in [-1, 1]")
        if self.k_in_max < 1:
            raise InvalidConfig("k_in_max", "must be >= 1")
        if self.t_max < 1:
            raise InvalidConfig("t_max", "must be >= 1")
        if self.random_seed < 0:
            raise InvalidConfig("random_seed", "must be non-negative")
        if not isinstance(self.topology_mode, TopologyMode):
            raise InvalidConfig("topology_mode", "unknown mode")


@dataclass(frozen=True)
class GlobalState:
    """Order-preserving digest of one round's public messages."""

    round: int
    goal_text: str
    public_digest: tuple[tuple[int, str], ...]

    def __post_init__(self):
        authors = [agent_id for agent_id, _ in self.public_digest]
        if len(set(authors)) != len(authors):
            raise ValueError("public_digest must hold one entry per agent")


@dataclass(frozen=True)
class HaltDecision:
    halt: bool
    next_goal: str = ""
    final_answer: str | None = None

    def __post_init__(self):
        if not self.halt and not self.next_goal.strip():
            raise ValueError("a continue decision must carry a non-empty next goal")


@dataclass(frozen=True)
class ValidatedSetup:
    profiles: tuple[AgentProfile, ...]
    config: RoutingConfig


def validate_run_setup(profiles, config: RoutingConfig) -> ValidatedSetup:
    """Check roster-level invariants that single values cannot see.

    Worker ids must be distinct and contiguous from 0; names must be unique.
    Config field invariants are enforced by ``RoutingConfig`` itself, so a
    constructed config is already valid.
    """
    profiles = tuple(profiles)
    seen_ids = set()
    for profile in profiles:
        if profile.agent_id in seen_ids:
            raise DuplicateAgentId(f"agent_id {profile.agent_id} appears twice")
        seen_ids.add(profile.agent_id)
    if seen_ids != set(range(len(profiles))):
        raise NonContiguousIds(f"agent ids {sorted(seen_ids)} are not 0..{len(profiles) - 1}")
    names = [p.name for p in profiles]
    if len(set(names)) != len(names):
        raise InvalidConfig("profiles.name", "agent names must be unique")
    return ValidatedSetup(profiles=profiles, config=config)
