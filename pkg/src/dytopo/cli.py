"""Command-line entry point.

A thin client over the same operations the HTTP service exposes: by default
commands execute in-process, and with ``--server`` they are sent to a
running service instead, with artifacts written locally either way. Errors
go to stderr as one machine-readable JSON line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx
import yaml

from dytopo.errors import DytopoError, SpecError
from dytopo.harness import (
    EXIT_OK,
    EXIT_POLICY_FAILURE,
    EXIT_SPEC_ERROR,
    cmd_compare_baselines,
    cmd_run,
    cmd_sweep_rounds,
    cmd_sweep_tau,
    write_rows_csv,
)
from dytopo.runspec import RunSpec, load_run_spec
from dytopo.trace import export_round_graph, import_trace, trace_from_dict, dumps_trace


def _fail(code: str, message: str) -> None:
    print(json.dumps({"code": code, "message": message}), file=sys.stderr)


def _parse_floats(raw: str) -> list[float]:
    return [float(part) for part in raw.split(",") if part.strip()]


def _parse_ints(raw: str) -> list[int]:
    return [int(part) for part in raw.split(",") if part.strip()]


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    if getattr(args, "tau", None) is not None:
        overrides["tau"] = args.tau
    if getattr(args, "t_max", None) is not None:
        overrides["t_max"] = args.t_max
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return overrides


def _inline_scenario(spec: RunSpec, base_dir: Path) -> RunSpec:
    """Server mode ships the scenario inline: the file lives client side."""
    if isinstance(spec.scenario, str):
        path = Path(spec.scenario)
        if not path.is_absolute():
            path = base_dir / path
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        return spec.model_copy(update={"scenario": data})
    return spec


def _spec_payload(spec_path: Path) -> dict:
    spec = load_run_spec(spec_path)
    spec = _inline_scenario(spec, spec_path.parent)
    return spec.model_dump(mode="json")


def _server_run(args: argparse.Namespace) -> int:
    payload = {"spec": _spec_payload(Path(args.spec)), "overrides": _collect_overrides(args) or None}
    with httpx.Client(base_url=args.server, timeout=600.0) as client:
        response = client.post("/runs", json=payload)
        if response.status_code == 422:
            _fail("SpecError", response.text)
            return EXIT_SPEC_ERROR
        response.raise_for_status()
        body = response.json()
        out = Path(args.out) if args.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            trace_data = client.get(f"/runs/{body['run_id']}/trace").json()
            trace = trace_from_dict(trace_data)
            (out / "trace.json").write_text(dumps_trace(trace), encoding="utf-8")
            (out / "answer.txt").write_text((body.get("final_answer") or "") + "\n", encoding="utf-8")
            if body.get("metrics"):
                (out / "metrics.json").write_text(
                    json.dumps(body["metrics"], sort_keys=True, indent=2) + "\n", encoding="utf-8"
                )
            graph_dir = out / "graphs"
            graph_dir.mkdir(exist_ok=True)
            for round_index in range(len(trace.rounds)):
                (graph_dir / f"round_{round_index}.dot").write_text(
                    export_round_graph(trace, round_index, style="dot"), encoding="utf-8"
                )
    if body["status"] != "completed":
        _fail("PolicyFailure", body.get("error") or "run failed")
        return EXIT_POLICY_FAILURE
    print(json.dumps(body, indent=2))
    return EXIT_OK


def _local_run(args: argparse.Namespace) -> int:
    outcome = cmd_run(args.spec, overrides=_collect_overrides(args) or None, out_dir=args.out)
    if outcome.exit_code == EXIT_SPEC_ERROR:
        _fail("SpecError", outcome.error or "invalid spec")
        return EXIT_SPEC_ERROR
    if outcome.exit_code == EXIT_POLICY_FAILURE:
        _fail("PolicyFailure", outcome.error or "policy failed")
        return EXIT_POLICY_FAILURE
    summary = {
        "status": "completed",
        "rounds_executed": outcome.result.rounds_executed,
        "halted_by_manager": outcome.result.halted_by_manager,
        "final_answer": outcome.result.final_answer,
        "artifacts": outcome.artifacts,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _run_command(args: argparse.Namespace) -> int:
    if args.server:
        return _server_run(args)
    return _local_run(args)


def _rows_command(args: argparse.Namespace, kind: str) -> int:
    try:
        if args.server:
            payload: dict = {"spec": _spec_payload(Path(args.spec))}
            if kind == "tau":
                payload["taus"] = _parse_floats(args.taus)
                path = "/sweeps/tau"
            elif kind == "rounds":
                payload["t_values"] = _parse_ints(args.rounds)
                path = "/sweeps/rounds"
            else:
                path = "/baselines/compare"
            with httpx.Client(base_url=args.server, timeout=600.0) as client:
                response = client.post(path, json=payload)
                if response.status_code == 422:
                    _fail("SpecError", response.text)
                    return EXIT_SPEC_ERROR
                response.raise_for_status()
                rows = response.json()["rows"]
        else:
            if kind == "tau":
                rows = cmd_sweep_tau(args.spec, _parse_floats(args.taus), out_dir=args.out)
            elif kind == "rounds":
                rows = cmd_sweep_rounds(args.spec, _parse_ints(args.rounds), out_dir=args.out)
            else:
                rows = cmd_compare_baselines(args.spec, out_dir=args.out)
        if args.server and args.out:
            name = {"tau": "sweep_tau.csv", "rounds": "sweep_rounds.csv", "base": "baselines.csv"}[
                kind
            ]
            write_rows_csv(rows, Path(args.out) / name)
    except SpecError as exc:
        _fail("SpecError", str(exc))
        return EXIT_SPEC_ERROR
    print(json.dumps(rows, indent=2))
    return EXIT_OK


def _export_graph_command(args: argparse.Namespace) -> int:
    try:
        trace = import_trace(args.trace)
        text = export_round_graph(trace, args.round, style=args.style)
    except DytopoError as exc:
        _fail(type(exc).__name__, str(exc))
        return EXIT_SPEC_ERROR
    print(text, end="")
    return EXIT_OK


def _serve_command(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("dytopo.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dytopo")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, with_overrides: bool = False):
        p.add_argument("--spec", required=True, help="run spec file (YAML or JSON)")
        p.add_argument("--out", default=None, help="artifact output directory")
        p.add_argument("--server", default=None, help="service base URL (thin-client mode)")
        if with_overrides:
            p.add_argument("--tau", type=float, default=None, help="edge threshold override")
            p.add_argument("--t-max", dest="t_max", type=int, default=None)
            p.add_argument(
                "--mode",
                choices=["dynamic", "random", "static_full", "single_turn"],
                default=None,
            )
            p.add_argument("--seed", type=int, default=None)

    run_parser = sub.add_parser("run", help="execute one run")
    add_common(run_parser, with_overrides=True)
    run_parser.set_defaults(handler=_run_command)

    tau_parser = sub.add_parser("sweep-tau", help="one run per threshold value")
    add_common(tau_parser)
    tau_parser.add_argument(
        "--taus", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", help="comma-separated grid"
    )
    tau_parser.set_defaults(handler=lambda args: _rows_command(args, "tau"))

    rounds_parser = sub.add_parser("sweep-rounds", help="fixed-round runs at each depth")
    add_common(rounds_parser)
    rounds_parser.add_argument("--rounds", required=True, help="comma-separated round counts")
    rounds_parser.set_defaults(handler=lambda args: _rows_command(args, "rounds"))

    baseline_parser = sub.add_parser("compare-baselines", help="all topology modes, shared seed")
    add_common(baseline_parser)
    baseline_parser.set_defaults(handler=lambda args: _rows_command(args, "base"))

    graph_parser = sub.add_parser("export-graph", help="render one round from a trace file")
    graph_parser.add_argument("--trace", required=True)
    graph_parser.add_argument("--round", type=int, required=True)
    graph_parser.add_argument("--style", choices=["dot", "mermaid"], default="dot")
    graph_parser.set_defaults(handler=_export_graph_command)

    serve_parser = sub.add_parser("serve", help="start the HTTP service")
    serve_parser.add_argument("--host", default="127.0.0.1")
    serve_parser.add_argument("--port", type=int, default=8400)
    serve_parser.set_defaults(handler=_serve_command)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
