"""Batch commands: single runs, threshold sweeps, round sweeps, baselines.

These functions do the real work behind both the CLI and the HTTP service.
Each command is reproducible: the same spec, seed, deterministic embedder,
and scripted agents yield byte-identical artifacts. Benchmark grading is
deliberately out of scope; commands emit final answers and their hashes
and leave scoring to external tooling.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from dytopo.engine import RunAborted, RunResult, run_loop
from dytopo.errors import SpecError
from dytopo.runspec import RunSpec, apply_overrides, build_run, load_run_spec
from dytopo.trace import CoordinationTrace, compute_metrics, export_round_graph, export_trace

EXIT_OK = 0
EXIT_SPEC_ERROR = 2
EXIT_POLICY_FAILURE = 3

BASELINE_MODES = ("dynamic", "random", "static_full", "single_turn")


@dataclass
class RunOutcome:
    exit_code: int
    trace: CoordinationTrace | None = None
    result: RunResult | None = None
    error: str | None = None
    artifacts: dict = field(default_factory=dict)


def _resolve_spec(
    spec: RunSpec | str | Path, base_dir: Path | None
) -> tuple[RunSpec, Path | None]:
    if isinstance(spec, (str, Path)):
        path = Path(spec)
        return load_run_spec(path), path.parent
    return spec, base_dir


def answer_hash(answer: str | None) -> str:
    if not answer:
        return ""
    return hashlib.sha256(answer.encode("utf-8")).hexdigest()[:16]


def total_tokens(trace: CoordinationTrace) -> int:
    total = trace.counters.get("total", {})
    return int(total.get("prompt_tokens", 0)) + int(total.get("completion_tokens", 0))


def execute_run(
    spec: RunSpec,
    *,
    overrides: dict | None = None,
    base_dir: Path | None = None,
    transport: httpx.BaseTransport | None = None,
) -> RunOutcome:
    """Run a spec end to end; a policy failure still yields a partial trace."""
    effective = apply_overrides(spec, overrides)
    built = build_run(effective, base_dir=base_dir, transport=transport)
    try:
        result = run_loop(
            built.setup,
            built.policies,
            built.embedder,
            ledger=built.ledger,
            overrides=overrides,
        )
        return RunOutcome(exit_code=EXIT_OK, trace=result.trace, result=result)
    except RunAborted as exc:
        return RunOutcome(
            exit_code=EXIT_POLICY_FAILURE,
            trace=exc.trace,
            error=f"PolicyFailure: {exc.cause}",
        )
    finally:
        built.close()


def _write_run_artifacts(outcome: RunOutcome, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}
    if outcome.trace is not None:
        trace_path = out_dir / "trace.json"
        export_trace(outcome.trace, trace_path)
        artifacts["trace"] = str(trace_path)
        if outcome.trace.rounds:
            metrics = compute_metrics(outcome.trace)
            metrics_path = out_dir / "metrics.json"
            metrics_path.write_text(
                json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )
            artifacts["metrics"] = str(metrics_path)
            graph_dir = out_dir / "graphs"
            graph_dir.mkdir(exist_ok=True)
            for round_index in range(len(outcome.trace.rounds)):
                graph_path = graph_dir / f"round_{round_index}.dot"
                graph_path.write_text(
                    export_round_graph(outcome.trace, round_index, style="dot"),
                    encoding="utf-8",
                )
            artifacts["graphs"] = str(graph_dir)
    if outcome.result is not None:
        answer_path = out_dir / "answer.txt"
        answer_path.write_text((outcome.result.final_answer or "") + "\n", encoding="utf-8")
        artifacts["answer"] = str(answer_path)
    return artifacts


def cmd_run(
    spec: RunSpec | str | Path,
    *,
    overrides: dict | None = None,
    out_dir: str | Path | None = None,
    base_dir: Path | None = None,
    transport: httpx.BaseTransport | None = None,
) -> RunOutcome:
    """Execute one run and write trace, metrics, graphs, and the answer."""
    try:
        spec, base_dir = _resolve_spec(spec, base_dir)
        outcome = execute_run(
            spec, overrides=overrides, base_dir=base_dir, transport=transport
        )
    except SpecError as exc:
        return RunOutcome(exit_code=EXIT_SPEC_ERROR, error=str(exc))
    target = Path(out_dir) if out_dir else (Path(spec.output_dir) if spec.output_dir else None)
    if target is not None:
        outcome.artifacts = _write_run_artifacts(outcome, target)
    return outcome


def write_rows_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = list(rows[0].keys()) if rows else []
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return path


def _sweep_row_base(status: str) -> dict:
    return {"status": status}


def cmd_sweep_tau(
    spec: RunSpec | str | Path,
    taus: list[float],
    *,
    base_dir: Path | None = None,
    transport: httpx.BaseTransport | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """One run per threshold, shared seed; failed rows are marked and the
    sweep continues."""
    spec, base_dir = _resolve_spec(spec, base_dir)
    rows = []
    for tau in taus:
        row = {"tau": tau, **_sweep_row_base("ok")}
        try:
            outcome = execute_run(
                spec, overrides={"tau": tau}, base_dir=base_dir, transport=transport
            )
            if outcome.exit_code != EXIT_OK or outcome.trace is None:
                row["status"] = outcome.error or "failed"
                rows.append(row)
                continue
            metrics = compute_metrics(outcome.trace)
            counts = metrics.per_round_edge_count
            row.update(
                {
                    "mean_edge_count": sum(counts) / len(counts),
                    "mean_sparsity": sum(metrics.per_round_sparsity) / len(counts),
                    "rounds_executed": metrics.rounds_executed,
                    "answer_hash": answer_hash(
                        outcome.result.final_answer if outcome.result else None
                    ),
                }
            )
        except SpecError as exc:
            row["status"] = f"spec error: {exc}"
        rows.append(row)
    if out_dir is not None:
        write_rows_csv(rows, Path(out_dir) / "sweep_tau.csv")
    return rows


def cmd_sweep_rounds(
    spec: RunSpec | str | Path,
    t_values: list[int],
    *,
    base_dir: Path | None = None,
    transport: httpx.BaseTransport | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Fixed-round runs (halting disabled) at each requested depth."""
    spec, base_dir = _resolve_spec(spec, base_dir)
    rows = []
    for t_value in t_values:
        row = {"t_max": t_value, **_sweep_row_base("ok")}
        try:
            fixed = spec.model_copy(
                update={
                    "routing": spec.routing.model_copy(
                        update={"halting_enabled": False, "t_max": int(t_value)}
                    )
                }
            )
            outcome = execute_run(fixed, base_dir=base_dir, transport=transport)
            if outcome.exit_code != EXIT_OK or outcome.trace is None:
                row["status"] = outcome.error or "failed"
                rows.append(row)
                continue
            total = outcome.trace.counters.get("total", {})
            row.update(
                {
                    "rounds_executed": len(outcome.trace.rounds),
                    "total_tokens": total_tokens(outcome.trace),
                    "wall_time_ms": int(total.get("wall_time_ms", 0)),
                }
            )
        except SpecError as exc:
            row["status"] = f"spec error: {exc}"
        rows.append(row)
    if out_dir is not None:
        write_rows_csv(rows, Path(out_dir) / "sweep_rounds.csv")
    return rows


def cmd_compare_baselines(
    spec: RunSpec | str | Path,
    *,
    base_dir: Path | None = None,
    transport: httpx.BaseTransport | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Run the same scenario under every topology mode with a shared seed.

    The random baseline matches the dynamic edge count round for round,
    isolating the value of semantic placement from sheer connectivity.
    """
    spec, base_dir = _resolve_spec(spec, base_dir)
    rows = []
    for mode in BASELINE_MODES:
        row = {"mode": mode, **_sweep_row_base("ok")}
        try:
            outcome = execute_run(
                spec, overrides={"mode": mode}, base_dir=base_dir, transport=transport
            )
            if outcome.exit_code != EXIT_OK or outcome.trace is None:
                row["status"] = outcome.error or "failed"
                rows.append(row)
                continue
            metrics = compute_metrics(outcome.trace)
            counts = metrics.per_round_edge_count
            row.update(
                {
                    "edge_counts": " ".join(str(count) for count in counts),
                    "mean_edge_count": sum(counts) / len(counts),
                    "rounds_executed": metrics.rounds_executed,
                    "total_tokens": total_tokens(outcome.trace),
                    "answer_hash": answer_hash(
                        outcome.result.final_answer if outcome.result else None
                    ),
                }
            )
        except SpecError as exc:
            row["status"] = f"spec error: {exc}"
        rows.append(row)
    if out_dir is not None:
        write_rows_csv(rows, Path(out_dir) / "baselines.csv")
    return rows
