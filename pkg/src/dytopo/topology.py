"""Per-round graph construction and deterministic aggregation ordering.

Edges run provider -> consumer and are activated by strict threshold on the
relevance score, so a score exactly equal to the threshold does NOT create
an edge. After thresholding, each consumer keeps at most ``k_in_max``
providers (highest score first, ties to the smaller provider id), making
the cap a budget rather than a selector.

Every tie anywhere in this module breaks toward the ascending agent id,
which keeps snapshots bit-identical across runs and platforms.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass

from dytopo.errors import CycleDetected, UnknownAgent
from dytopo.model import RelevanceMatrix, RoutingConfig, TopologyMode, TopologySnapshot


@dataclass(frozen=True)
class EdgeCandidate:
    provider_id: int
    consumer_id: int
    score: float

    def __post_init__(self):
        if self.provider_id == self.consumer_id:
            raise ValueError("self-loops are forbidden")


def _snapshot_from_edges(
    relevance: RelevanceMatrix, edges: set[tuple[int, int]], round_index: int
) -> TopologySnapshot:
    n = relevance.size
    adjacency = tuple(
        tuple(1 if (provider, consumer) in edges else 0 for consumer in range(n))
        for provider in range(n)
    )
    return TopologySnapshot(
        round=round_index,
        relevance=relevance,
        adjacency=adjacency,
        edges=frozenset(edges),
    )


def _cap_in_degree(candidates: list[EdgeCandidate], k_in_max: int) -> set[tuple[int, int]]:
    by_consumer: dict[int, list[EdgeCandidate]] = {}
    for candidate in candidates:
        by_consumer.setdefault(candidate.consumer_id, []).append(candidate)
    kept: set[tuple[int, int]] = set()
    for consumer, incoming in by_consumer.items():
        incoming.sort(key=lambda c: (-c.score, c.provider_id))
        for candidate in incoming[:k_in_max]:
            kept.add((candidate.provider_id, consumer))
    return kept


def build_adjacency(
    relevance: RelevanceMatrix, tau_edge: float, k_in_max: int, round_index: int = 0
) -> TopologySnapshot:
    """Threshold the relevance matrix into a sparse digraph.

    Edge (j -> i) survives iff ``score(consumer=i, provider=j) > tau_edge``
    strictly and i != j, then the per-consumer cap prunes any overflow.
    The returned snapshot has no aggregation order yet.
    """
    n = relevance.size
    candidates = [
        EdgeCandidate(provider_id=j, consumer_id=i, score=relevance.score(consumer=i, provider=j))
        for i in range(n)
        for j in range(n)
        if i != j and relevance.score(consumer=i, provider=j) > tau_edge
    ]
    return _snapshot_from_edges(relevance, _cap_in_degree(candidates, k_in_max), round_index)


def in_neighbors(snapshot: TopologySnapshot, consumer_id: int) -> frozenset[int]:
    """Providers with an active edge into ``consumer_id``."""
    if not 0 <= consumer_id < snapshot.size:
        raise UnknownAgent(f"consumer {consumer_id} outside 0..{snapshot.size - 1}")
    return frozenset(
        provider
        for provider in range(snapshot.size)
        if snapshot.adjacency[provider][consumer_id]
    )


def _has_cycle(snapshot: TopologySnapshot) -> bool:
    # Plain three-color DFS; a back edge to an in-progress node is a cycle.
    n = snapshot.size
    state = [0] * n  # 0 unvisited, 1 on stack, 2 done
    for start in range(n):
        if state[start]:
            continue
        stack = [(start, 0)]
        state[start] = 1
        while stack:
            node, next_consumer = stack[-1]
            advanced = False
            for consumer in range(next_consumer, n):
                if not snapshot.adjacency[node][consumer]:
                    continue
                stack[-1] = (node, consumer + 1)
                if state[consumer] == 1:
                    return True
                if state[consumer] == 0:
                    state[consumer] = 1
                    stack.append((consumer, 0))
                advanced = True
                break
            if not advanced:
                state[node] = 2
                stack.pop()
    return False


def topological_order(snapshot: TopologySnapshot) -> tuple[int, ...]:
    """Kahn's algorithm with a smallest-id tie-break.

    Guarantees pos(provider) < pos(consumer) for every edge; raises
    ``CycleDetected`` when no such order exists, in which case callers fall
    back to the greedy heuristic.
    """
    if _has_cycle(snapshot):
        raise CycleDetected("graph contains a directed cycle")
    n = snapshot.size
    in_degree = [0] * n
    for provider, consumer in snapshot.edges:
        in_degree[consumer] += 1
    ready = [node for node in range(n) if in_degree[node] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for consumer in range(n):
            if snapshot.adjacency[node][consumer]:
                in_degree[consumer] -= 1
                if in_degree[consumer] == 0:
                    heapq.heappush(ready, consumer)
    return tuple(order)


def greedy_cycle_breaking_order(snapshot: TopologySnapshot) -> tuple[int, ...]:
    """Linearize a possibly-cyclic graph by repeated min restricted in-degree.

    The restricted in-degree of an unplaced node counts only incoming edges
    from other still-unplaced nodes; picking the minimum (ties to the
    smaller id) places the node with the fewest unmet dependencies next.
    Always yields a full permutation, and reproduces a valid topological
    order whenever the graph happens to be acyclic.
    """
    n = snapshot.size
    unplaced = set(range(n))
    order: list[int] = []
    while unplaced:
        best = min(
            unplaced,
            key=lambda i: (
                sum(1 for j in unplaced if snapshot.adjacency[j][i]),
                i,
            ),
        )
        order.append(best)
        unplaced.remove(best)
    return tuple(order)


def _random_edges(
    relevance: RelevanceMatrix, config: RoutingConfig, round_index: int
) -> set[tuple[int, int]]:
    # Cardinality-matched control: same number of edges the dynamic rule
    # would have produced this round, placed uniformly at random. Greedy
    # selection from a seeded shuffle always reaches the target because the
    # per-consumer cap partitions the candidate pairs.
    base = build_adjacency(relevance, config.tau_edge, config.k_in_max, round_index)
    target = len(base.edges)
    n = relevance.size
    pairs = [(j, i) for j in range(n) for i in range(n) if i != j]
    rng = random.Random(config.random_seed * 1_000_003 + round_index)
    rng.shuffle(pairs)
    chosen: set[tuple[int, int]] = set()
    in_degree = [0] * n
    for provider, consumer in pairs:
        if len(chosen) == target:
            break
        if in_degree[consumer] < config.k_in_max:
            chosen.add((provider, consumer))
            in_degree[consumer] += 1
    return chosen


def induce_topology(
    relevance: RelevanceMatrix, config: RoutingConfig, round_index: int = 0
) -> TopologySnapshot:
    """Build the round's graph for the configured mode and order it.

    ``dynamic`` thresholds the relevance matrix; ``random`` draws a seeded
    edge set of the same cardinality (the sparsity-matched baseline);
    ``static_full`` keeps every pair, capped per consumer by score;
    ``single_turn`` disables communication entirely.
    """
    mode = config.topology_mode
    if mode is TopologyMode.DYNAMIC:
        snapshot = build_adjacency(relevance, config.tau_edge, config.k_in_max, round_index)
    elif mode is TopologyMode.SINGLE_TURN:
        snapshot = _snapshot_from_edges(relevance, set(), round_index)
    elif mode is TopologyMode.STATIC_FULL:
        n = relevance.size
        candidates = [
            EdgeCandidate(
                provider_id=j, consumer_id=i, score=relevance.score(consumer=i, provider=j)
            )
            for i in range(n)
            for j in range(n)
            if i != j
        ]
        snapshot = _snapshot_from_edges(
            relevance, _cap_in_degree(candidates, config.k_in_max), round_index
        )
    elif mode is TopologyMode.RANDOM:
        snapshot = _snapshot_from_edges(
            relevance, _random_edges(relevance, config, round_index), round_index
        )
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unsupported topology mode {mode}")

    try:
        return snapshot.with_order(topological_order(snapshot), was_acyclic=True)
    except CycleDetected:
        return snapshot.with_order(greedy_cycle_breaking_order(snapshot), was_acyclic=False)
