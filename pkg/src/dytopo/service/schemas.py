"""Request/response models for the HTTP service.

``RunSpec`` itself is a pydantic model, so a spec file body and a POST body
are validated by exactly the same code.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from dytopo.runspec import RunSpec


class RunRequest(BaseModel):
    spec: RunSpec
    overrides: dict | None = None


class RunSummary(BaseModel):
    run_id: str
    status: str
    rounds_executed: int
    halted_by_manager: bool
    final_answer: str | None = None
    error: str | None = None


class RunResponse(RunSummary):
    metrics: dict | None = None


class TauSweepRequest(BaseModel):
    spec: RunSpec
    taus: list[float] = Field(default_factory=lambda: [round(0.1 * k, 1) for k in range(1, 10)])


class RoundSweepRequest(BaseModel):
    spec: RunSpec
    t_values: list[int]


class BaselineRequest(BaseModel):
    spec: RunSpec


class RowsResponse(BaseModel):
    rows: list[dict]


class GraphResponse(BaseModel):
    run_id: str
    round: int
    style: str
    graph: str
