"""FastAPI service wrapping the engine.

Runs execute synchronously inside the request (they are seconds-long for
scripted rosters and bounded by the round budget otherwise) and completed
traces are kept in an in-memory store for later retrieval: the trace file,
per-round graph renderings, and metrics are all served from the recorded
run, never recomputed from live state.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Query

from dytopo.errors import SpecError, UnknownRound
from dytopo.harness import (
    EXIT_OK,
    cmd_compare_baselines,
    cmd_sweep_rounds,
    cmd_sweep_tau,
    execute_run,
)
from dytopo.service.schemas import (
    BaselineRequest,
    GraphResponse,
    RoundSweepRequest,
    RowsResponse,
    RunRequest,
    RunResponse,
    RunSummary,
    TauSweepRequest,
)
from dytopo.trace import CoordinationTrace, compute_metrics, export_round_graph, trace_to_dict


@dataclass
class StoredRun:
    run_id: str
    status: str
    trace: CoordinationTrace | None
    rounds_executed: int = 0
    halted_by_manager: bool = False
    final_answer: str | None = None
    error: str | None = None


@dataclass
class RunStore:
    runs: dict[str, StoredRun] = field(default_factory=dict)

    def add(self, run: StoredRun):
        self.runs[run.run_id] = run

    def get(self, run_id: str) -> StoredRun:
        if run_id not in self.runs:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return self.runs[run_id]


def create_app() -> FastAPI:
    app = FastAPI(title="dytopo", version="0.1.0")
    store = RunStore()
    app.state.store = store

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "service": "dytopo"}

    @app.post("/runs", response_model=RunResponse)
    def create_run(request: RunRequest) -> RunResponse:
        try:
            outcome = execute_run(request.spec, overrides=request.overrides)
        except SpecError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        run_id = uuid.uuid4().hex[:12]
        if outcome.exit_code == EXIT_OK and outcome.result is not None:
            stored = StoredRun(
                run_id=run_id,
                status="completed",
                trace=outcome.trace,
                rounds_executed=outcome.result.rounds_executed,
                halted_by_manager=outcome.result.halted_by_manager,
                final_answer=outcome.result.final_answer,
            )
        else:
            stored = StoredRun(
                run_id=run_id,
                status="failed",
                trace=outcome.trace,
                rounds_executed=len(outcome.trace.rounds) if outcome.trace else 0,
                error=outcome.error,
            )
        store.add(stored)
        metrics = None
        if stored.trace is not None and stored.trace.rounds:
            metrics = compute_metrics(stored.trace).to_dict()
        return RunResponse(
            run_id=stored.run_id,
            status=stored.status,
            rounds_executed=stored.rounds_executed,
            halted_by_manager=stored.halted_by_manager,
            final_answer=stored.final_answer,
            error=stored.error,
            metrics=metrics,
        )

    @app.get("/runs/{run_id}", response_model=RunSummary)
    def get_run(run_id: str) -> RunSummary:
        stored = store.get(run_id)
        return RunSummary(
            run_id=stored.run_id,
            status=stored.status,
            rounds_executed=stored.rounds_executed,
            halted_by_manager=stored.halted_by_manager,
            final_answer=stored.final_answer,
            error=stored.error,
        )

    @app.get("/runs/{run_id}/trace")
    def get_trace(run_id: str) -> dict:
        stored = store.get(run_id)
        if stored.trace is None:
            raise HTTPException(status_code=404, detail="run has no trace")
        return trace_to_dict(stored.trace)

    @app.get("/runs/{run_id}/metrics")
    def get_metrics(run_id: str) -> dict:
        stored = store.get(run_id)
        if stored.trace is None or not stored.trace.rounds:
            raise HTTPException(status_code=404, detail="run has no recorded rounds")
        return compute_metrics(stored.trace).to_dict()

    @app.get("/runs/{run_id}/graph/{round_index}", response_model=GraphResponse)
    def get_graph(
        run_id: str, round_index: int, style: str = Query(default="dot")
    ) -> GraphResponse:
        stored = store.get(run_id)
        if stored.trace is None:
            raise HTTPException(status_code=404, detail="run has no trace")
        try:
            graph = export_round_graph(stored.trace, round_index, style=style)
        except UnknownRound as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return GraphResponse(run_id=run_id, round=round_index, style=style, graph=graph)

    @app.post("/sweeps/tau", response_model=RowsResponse)
    def sweep_tau(request: TauSweepRequest) -> RowsResponse:
        try:
            return RowsResponse(rows=cmd_sweep_tau(request.spec, request.taus))
        except SpecError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/sweeps/rounds", response_model=RowsResponse)
    def sweep_rounds(request: RoundSweepRequest) -> RowsResponse:
        try:
            return RowsResponse(rows=cmd_sweep_rounds(request.spec, request.t_values))
        except SpecError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/baselines/compare", response_model=RowsResponse)
    def compare_baselines(request: BaselineRequest) -> RowsResponse:
        try:
            return RowsResponse(rows=cmd_compare_baselines(request.spec))
        except SpecError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    return app


app = create_app()
