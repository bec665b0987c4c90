"""The round loop: inference, topology induction, ordering, routing, control.

One round runs five phases in a fixed order. All workers produce their
outputs first (concurrently if desired — nothing in phase 1 depends on
another agent's same-round message), then descriptors are embedded and the
graph induced, an aggregation order computed, private messages routed and
memories updated, and finally the manager reads the ordered public digest
and either halts or issues the next round's goal. The loop stops at the
round budget no matter what the manager says.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Mapping, Sequence

from dytopo.agents import AgentPolicy, run_agent_round
from dytopo.embedding import CachingEmbedder, Embedder, embed_descriptors, relevance_matrix
from dytopo.errors import PolicyFailure
from dytopo.model import (
    AgentProfile,
    GlobalState,
    HaltDecision,
    MemoryBuffer,
    RoundContext,
    RoundOutput,
    RoutingConfig,
    validate_run_setup,
)
from dytopo.prompts import ANSWER_BEARING_ROLE, Domain
from dytopo.routing import apply_memory_update, render_agent_context, route_private_messages
from dytopo.llm import UsageLedger
from dytopo.topology import induce_topology
from dytopo.trace import CoordinationTrace, RoundRecord, record_round


class RunAborted(PolicyFailure):
    """A policy failed mid-run; the partial trace is preserved."""

    def __init__(self, cause: Exception, trace: CoordinationTrace):
        self.cause = cause
        self.trace = trace
        super().__init__(str(cause))


@dataclass(frozen=True)
class RunSetup:
    """Validated inputs for one run; the manager sits outside the worker
    graph and takes the id right after the workers."""

    workers: tuple[AgentProfile, ...]
    manager: AgentProfile
    config: RoutingConfig
    task: str
    domain: Domain = Domain.CODE_GENERATION
    include_history: bool = True
    embedder_info: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_run_setup(self.workers, self.config)
        if self.manager.agent_id != len(self.workers):
            raise ValueError("manager agent_id must follow the worker range")
        if not self.task.strip():
            raise ValueError("task must be non-empty")


@dataclass(frozen=True)
class RunPolicies:
    workers: Mapping[int, AgentPolicy]
    manager: AgentPolicy


@dataclass(frozen=True)
class RunResult:
    """What a finished run reports; with halting disabled this is always
    exactly the configured number of rounds and ``halted_by_manager`` is
    False."""

    rounds_executed: int
    halted_by_manager: bool
    final_answer: str | None
    trace: CoordinationTrace


def aggregate_global_state(
    round_context: RoundContext,
    outputs: Sequence[RoundOutput],
    order: Sequence[int],
) -> GlobalState:
    """Order-preserving digest: every worker's public content, sequenced by
    the round's aggregation order."""
    by_id = {output.author_id: output for output in outputs}
    digest = tuple((agent_id, by_id[agent_id].public_message.content) for agent_id in order)
    return GlobalState(
        round=round_context.round, goal_text=round_context.goal_text, public_digest=digest
    )


def render_manager_context(
    states: Sequence[GlobalState], roster: Sequence[AgentProfile]
) -> str:
    """Deterministic manager view: goal plus ordered reports per round.

    With history enabled the caller passes every round so far; the current
    round comes last.
    """
    names = {profile.agent_id: profile.name for profile in roster}
    lines: list[str] = []
    for state in states:
        if lines:
            lines.append("")
        lines.append(f"# Round {state.round} Goal")
        lines.append(state.goal_text)
        lines.append("")
        lines.append(f"# Round {state.round} Reports")
        for pos, (agent_id, content) in enumerate(state.public_digest):
            lines.append(f"[pos {pos} | {names.get(agent_id, f'agent {agent_id}')}]")
            lines.append(content)
    return "\n".join(lines) + "\n"


def decide_halt(
    manager_output: RoundOutput | None,
    current_goal: str,
    extract_answer: Callable[[], str | None],
) -> HaltDecision:
    """Map the manager's parsed response onto the engine's halting contract.

    A missing or unusable response never aborts the run: the goal carries
    over and the round budget stays the safety net.
    """
    if manager_output is None or manager_output.is_complete is None:
        return HaltDecision(halt=False, next_goal=current_goal)
    if manager_output.is_complete:
        return HaltDecision(halt=True, next_goal="", final_answer=extract_answer())
    next_goal = (manager_output.next_goal or "").strip()
    return HaltDecision(halt=False, next_goal=next_goal if next_goal else current_goal)


def extract_final_answer(
    rounds: Sequence[Sequence[RoundOutput]],
    workers: Sequence[AgentProfile],
    domain: Domain,
) -> str | None:
    """Latest non-empty answer field wins; otherwise the latest public
    content of the domain's designated producer role."""
    for outputs in reversed(rounds):
        for output in outputs:
            if output.answer and output.answer.strip():
                return output.answer
    producer = ANSWER_BEARING_ROLE.get(domain)
    producer_ids = [w.agent_id for w in workers if w.name == producer]
    if producer_ids:
        producer_id = producer_ids[0]
        for outputs in reversed(rounds):
            for output in outputs:
                if output.author_id == producer_id and output.public_message.content.strip():
                    return output.public_message.content
    return None


def _run_phase_one(
    setup: RunSetup,
    policies: RunPolicies,
    contexts: Mapping[int, str],
    round_index: int,
) -> list[RoundOutput]:
    def invoke(profile: AgentProfile) -> RoundOutput:
        return run_agent_round(
            profile, contexts[profile.agent_id], policies.workers[profile.agent_id], round_index
        )

    with ThreadPoolExecutor(max_workers=max(1, len(setup.workers))) as pool:
        outputs = list(pool.map(invoke, setup.workers))
    return sorted(outputs, key=lambda output: output.author_id)


def run_loop(
    setup: RunSetup,
    policies: RunPolicies,
    embedder: Embedder,
    *,
    ledger: UsageLedger | None = None,
    overrides: dict | None = None,
) -> RunResult:
    """Execute rounds until the manager halts or the budget is exhausted.

    Every phase of every round is recorded into the trace as it happens, so
    a failure still leaves a usable partial record (re-raised as
    ``RunAborted`` carrying it).
    """
    embedder = CachingEmbedder(embedder)
    config = setup.config
    started = time.monotonic()
    created_at = datetime.now(timezone.utc).isoformat()
    metadata = {
        "domain": setup.domain.value,
        "task": setup.task,
        "config": {
            "tau_edge": config.tau_edge,
            "k_in_max": config.k_in_max,
            "t_max": config.t_max,
            "halting_enabled": config.halting_enabled,
            "topology_mode": config.topology_mode.value,
            "random_seed": config.random_seed,
        },
        "include_history": setup.include_history,
        "embedder": dict(setup.embedder_info),
        "overrides": dict(overrides or {}),
        "profiles": [
            {
                "agent_id": profile.agent_id,
                "name": profile.name,
                "role_description": profile.role_description,
                "kind": profile.kind.value,
            }
            for profile in (*setup.workers, setup.manager)
        ],
        "manager_id": setup.manager.agent_id,
        "status": "running",
        "timestamps": {"created_at": created_at, "finished_at": None, "duration_ms": None},
    }
    trace = CoordinationTrace(metadata=metadata)

    memories = {profile.agent_id: MemoryBuffer() for profile in setup.workers}
    context = RoundContext(round=0, goal_text=setup.task, original_task=setup.task)
    digest_history: list[GlobalState] = []
    outputs_history: list[list[RoundOutput]] = []
    halted = False

    def finish(status: str) -> dict:
        return {
            **metadata,
            "status": status,
            "timestamps": {
                "created_at": created_at,
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "duration_ms": int((time.monotonic() - started) * 1000),
            },
        }

    try:
        for round_index in range(config.t_max):
            # Phase 1: single-pass inference over contexts frozen at t-1.
            contexts = {
                profile.agent_id: render_agent_context(
                    profile, context, memories[profile.agent_id], setup.workers
                )
                for profile in setup.workers
            }
            outputs = _run_phase_one(setup, policies, contexts, round_index)
            outputs_history.append(outputs)

            # Phase 2: topology induction from this round's descriptors.
            queries, keys = embed_descriptors(outputs, embedder)
            relevance = relevance_matrix(queries, keys)
            snapshot = induce_topology(relevance, config, round_index)

            # Phase 3 happened inside induce_topology; phase 4: barrier.
            batch = route_private_messages(outputs, snapshot, setup.workers)
            memories = apply_memory_update(memories, outputs, batch)

            # Phase 5: manager control over the ordered public digest.
            global_state = aggregate_global_state(context, outputs, snapshot.aggregation_order)
            digest_history.append(global_state)
            visible = digest_history if setup.include_history else [global_state]
            manager_context = render_manager_context(visible, (*setup.workers, setup.manager))
            manager_output = run_agent_round(
                setup.manager,
                manager_context,
                policies.manager,
                round_index,
                expect_manager_fields=True,
            )

            decision = decide_halt(
                manager_output,
                context.goal_text,
                lambda: extract_final_answer(outputs_history, setup.workers, setup.domain),
            )
            if not config.halting_enabled and decision.halt:
                # Forced-round mode: the manager's completion claim is ignored.
                decision = HaltDecision(
                    halt=False,
                    next_goal=(manager_output.next_goal or "").strip() or context.goal_text,
                )

            trace = record_round(
                trace,
                RoundRecord(
                    context=context,
                    worker_outputs=tuple(outputs),
                    snapshot=snapshot,
                    batch=batch,
                    global_state=global_state,
                    manager_output=manager_output,
                    halt=decision,
                ),
            )

            if decision.halt:
                halted = True
                break
            context = RoundContext(
                round=round_index + 1,
                goal_text=decision.next_goal,
                original_task=setup.task,
            )
    except PolicyFailure as exc:
        failed = CoordinationTrace(
            metadata=finish(f"failed: {type(exc).__name__}"),
            rounds=trace.rounds,
            counters=ledger.snapshot() if ledger else {},
            result={"rounds_executed": len(trace.rounds), "halted_by_manager": False},
        )
        raise RunAborted(exc, failed) from exc

    final_answer = extract_final_answer(outputs_history, setup.workers, setup.domain)
    rounds_executed = len(trace.rounds)
    result = {
        "rounds_executed": rounds_executed,
        "halted_by_manager": halted,
        "final_answer": final_answer,
    }
    trace = CoordinationTrace(
        metadata=finish("completed"),
        rounds=trace.rounds,
        counters=ledger.snapshot() if ledger else {},
        result=result,
    )
    return RunResult(
        rounds_executed=rounds_executed,
        halted_by_manager=halted,
        final_answer=final_answer,
        trace=trace,
    )
