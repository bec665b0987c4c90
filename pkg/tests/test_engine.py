from __future__ import annotations

import pytest

from dytopo.agents import ScriptedPolicy
from dytopo.embedding import HashingEmbedder
from dytopo.engine import (
    RunAborted,
    RunPolicies,
    RunSetup,
    aggregate_global_state,
    decide_halt,
    extract_final_answer,
    render_manager_context,
    run_loop,
)
from dytopo.model import AgentProfile, RoundContext, RoutingConfig
from dytopo.prompts import Domain
from tests.conftest import make_output, make_profiles


def worker_record(agent_id: int, round_index: int, **extra) -> dict:
    record = {
        "public_content": f"public a{agent_id} r{round_index}",
        "private_content": {},
        "q_vector": f"need input {agent_id} {round_index}",
        "k_vector": f"offer output {agent_id} {round_index}",
    }
    record.update(extra)
    return record


def manager_record(round_index: int, complete: bool = False, goal: str = "keep refining") -> dict:
    return {
        "public_content": f"status r{round_index}",
        "private_content": {},
        "q_vector": "I need status updates",
        "k_vector": "I coordinate the team",
        "is_complete": complete,
        "next_goal": "" if complete else goal,
    }


def build_scripted_run(
    n_workers: int = 2,
    rounds: int = 3,
    halt_at: int | None = None,
    config: RoutingConfig | None = None,
    worker_overrides: dict | None = None,
):
    """Everything needed for a small scripted run; policies are returned so
    tests can inspect seen contexts and invocation counts."""
    workers = make_profiles(n_workers)
    manager = AgentProfile(
        agent_id=n_workers, name="Manager", role_description="orchestrates"
    )
    worker_policies = {}
    for profile in workers:
        script = {}
        for r in range(rounds):
            record = worker_record(profile.agent_id, r)
            if worker_overrides and (profile.agent_id, r) in worker_overrides:
                record.update(worker_overrides[(profile.agent_id, r)])
            script[r] = record
        worker_policies[profile.agent_id] = ScriptedPolicy(script, name=profile.name)
    manager_policy = ScriptedPolicy(
        {
            r: manager_record(r, complete=(halt_at is not None and r == halt_at))
            for r in range(rounds)
        },
        name="Manager",
    )
    setup = RunSetup(
        workers=workers,
        manager=manager,
        config=config or RoutingConfig(t_max=rounds),
        task="solve the task",
    )
    return setup, RunPolicies(workers=worker_policies, manager=manager_policy)


class TestAggregateGlobalState:
    def test_digest_follows_aggregation_order(self):
        outputs = [make_output(i, 0, public=f"pub{i}") for i in range(3)]
        context = RoundContext(round=0, goal_text="g", original_task="g")
        state = aggregate_global_state(context, outputs, (2, 0, 1))
        assert [agent_id for agent_id, _ in state.public_digest] == [2, 0, 1]
        assert [content for _, content in state.public_digest] == ["pub2", "pub0", "pub1"]

    def test_single_agent_digest(self):
        outputs = [make_output(0, 0, public="only")]
        context = RoundContext(round=0, goal_text="g", original_task="g")
        state = aggregate_global_state(context, outputs, (0,))
        assert state.public_digest == ((0, "only"),)

    def test_render_is_deterministic(self):
        outputs = [make_output(i, 0, public=f"pub{i}") for i in range(2)]
        context = RoundContext(round=0, goal_text="g", original_task="g")
        state = aggregate_global_state(context, outputs, (0, 1))
        profiles = make_profiles(2)
        assert render_manager_context([state], profiles) == render_manager_context(
            [state], profiles
        )


class TestDecideHalt:
    def test_complete_manager_halts(self):
        output = make_output(9, 0, is_complete=True, next_goal="")
        decision = decide_halt(output, "current", lambda: "the answer")
        assert decision.halt and decision.final_answer == "the answer"

    def test_continue_with_explicit_goal(self):
        output = make_output(9, 0, is_complete=False, next_goal="verify edge cases")
        decision = decide_halt(output, "current", lambda: None)
        assert not decision.halt
        assert decision.next_goal == "verify edge cases"

    def test_parse_failure_carries_goal_over(self):
        decision = decide_halt(None, "current goal", lambda: None)
        assert not decision.halt
        assert decision.next_goal == "current goal"

    def test_empty_next_goal_carries_over(self):
        output = make_output(9, 0, is_complete=False, next_goal="  ")
        decision = decide_halt(output, "current goal", lambda: None)
        assert decision.next_goal == "current goal"


class TestExtractFinalAnswer:
    def test_latest_answer_field_wins(self):
        rounds = [
            [make_output(0, 0, answer="early"), make_output(1, 0)],
            [make_output(0, 1), make_output(1, 1, answer="late")],
        ]
        workers = make_profiles(2, ["Solver", "Verifier"])
        assert extract_final_answer(rounds, workers, Domain.MATH_REASONING) == "late"

    def test_falls_back_to_producer_public_content(self):
        rounds = [
            [make_output(0, 0, public="draft"), make_output(1, 0, public="notes")],
            [make_output(0, 1, public="final code"), make_output(1, 1, public="ok")],
        ]
        workers = make_profiles(2, ["Developer", "Tester"])
        assert extract_final_answer(rounds, workers, Domain.CODE_GENERATION) == "final code"

    def test_no_answer_available(self):
        rounds = [[make_output(0, 0, public="")]]
        workers = make_profiles(1, ["Tester"])
        assert extract_final_answer(rounds, workers, Domain.CODE_GENERATION) is None


class TestRunLoop:
    def test_manager_halt_stops_early(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=5, halt_at=1)
        result = run_loop(setup, policies, HashingEmbedder())
        assert result.rounds_executed == 2
        assert result.halted_by_manager
        assert len(result.trace.rounds) == 2

    def test_halting_disabled_forces_t_max(self):
        config = RoutingConfig(t_max=3, halting_enabled=False)
        setup, policies = build_scripted_run(n_workers=2, rounds=3, halt_at=0, config=config)
        result = run_loop(setup, policies, HashingEmbedder())
        assert result.rounds_executed == 3
        assert not result.halted_by_manager

    def test_round_budget_without_halt(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=3)
        result = run_loop(setup, policies, HashingEmbedder())
        assert result.rounds_executed == 3
        assert not result.halted_by_manager

    def test_single_pass_invocation_counts(self):
        setup, policies = build_scripted_run(n_workers=3, rounds=2)
        run_loop(setup, policies, HashingEmbedder())
        for policy in policies.workers.values():
            assert policy.invocations == 2
        assert policies.manager.invocations == 2

    def test_goal_propagates_into_next_round_context(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=3)
        run_loop(setup, policies, HashingEmbedder())
        for policy in policies.workers.values():
            assert "keep refining" in policy.contexts[1]
            assert "keep refining" in policy.contexts[2]
        # round 0 context carries the original task as the goal
        for policy in policies.workers.values():
            assert "solve the task" in policy.contexts[0]

    def test_trace_rounds_are_sequential_with_phase_artifacts(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=3)
        result = run_loop(setup, policies, HashingEmbedder())
        for index, record in enumerate(result.trace.rounds):
            assert record.context.round == index
            assert record.snapshot.round == index
            assert record.batch.round == index
            assert record.global_state.round == index
            assert record.snapshot.aggregation_order is not None
            assert len(record.worker_outputs) == 2

    def test_manager_sees_aggregated_reports(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=2)
        run_loop(setup, policies, HashingEmbedder())
        manager_context = policies.manager.contexts[1]
        # with history on, both rounds' reports are visible at round 1
        assert "# Round 0 Reports" in manager_context
        assert "# Round 1 Reports" in manager_context
        assert "public a0 r0" in manager_context

    def test_include_history_off_shows_only_current_round(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=2)
        setup = RunSetup(
            workers=setup.workers,
            manager=setup.manager,
            config=setup.config,
            task=setup.task,
            include_history=False,
        )
        run_loop(setup, policies, HashingEmbedder())
        manager_context = policies.manager.contexts[1]
        assert "# Round 0 Reports" not in manager_context
        assert "# Round 1 Reports" in manager_context

    def test_policy_failure_preserves_partial_trace(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=1)
        # worker 1's script has no round 1+: force a second round
        setup = RunSetup(
            workers=setup.workers,
            manager=setup.manager,
            config=RoutingConfig(t_max=4),
            task=setup.task,
        )
        with pytest.raises(RunAborted) as excinfo:
            run_loop(setup, policies, HashingEmbedder())
        trace = excinfo.value.trace
        assert len(trace.rounds) == 1
        assert trace.metadata["status"].startswith("failed:")

    def test_barrier_no_same_round_leakage(self):
        # sentinel private messages must never appear in the same round's context
        overrides = {
            (agent_id, r): {"private_content": {"anyone": f"SENTINEL-{agent_id}-{r}"}}
            for agent_id in range(2)
            for r in range(3)
        }
        setup, policies = build_scripted_run(
            n_workers=2, rounds=3, worker_overrides=overrides
        )
        run_loop(setup, policies, HashingEmbedder())
        for policy in policies.workers.values():
            for round_index, context in policy.contexts.items():
                for agent_id in range(2):
                    assert f"SENTINEL-{agent_id}-{round_index}" not in context

    def test_fixed_round_mode_still_updates_goals(self):
        config = RoutingConfig(t_max=2, halting_enabled=False)
        setup, policies = build_scripted_run(n_workers=2, rounds=2, halt_at=0, config=config)
        result = run_loop(setup, policies, HashingEmbedder())
        # manager said complete at round 0; engine ignored it but round 1 ran
        assert result.rounds_executed == 2
        assert result.trace.rounds[0].halt.halt is False

    def test_counters_default_to_empty_for_scripted_runs(self):
        setup, policies = build_scripted_run(n_workers=2, rounds=1, halt_at=0)
        result = run_loop(setup, policies, HashingEmbedder())
        assert result.trace.counters == {}
