from __future__ import annotations

import copy
import json
from pathlib import Path

import pytest

from dytopo.model import (
    AgentProfile,
    Channel,
    Descriptor,
    DescriptorKind,
    Message,
    RoundOutput,
)

DATA_DIR = Path(__file__).parent / "data"


def make_profiles(n: int, names: list[str] | None = None) -> tuple[AgentProfile, ...]:
    names = names or [f"Agent{i}" for i in range(n)]
    return tuple(
        AgentProfile(agent_id=i, name=names[i], role_description=f"role {i}") for i in range(n)
    )


def make_output(
    author_id: int,
    round_index: int,
    public: str = "",
    private: str = "",
    query: str = "need something",
    key: str = "offer something",
    directed: dict[str, str] | None = None,
    answer: str | None = None,
    is_complete: bool | None = None,
    next_goal: str | None = None,
) -> RoundOutput:
    return RoundOutput(
        author_id=author_id,
        round=round_index,
        public_message=Message(
            author_id=author_id, round=round_index, channel=Channel.PUBLIC, content=public
        ),
        private_message=Message(
            author_id=author_id, round=round_index, channel=Channel.PRIVATE, content=private
        ),
        query_descriptor=Descriptor(text=query, kind=DescriptorKind.QUERY),
        key_descriptor=Descriptor(text=key, kind=DescriptorKind.KEY),
        private_directed=tuple(directed.items()) if directed is not None else None,
        answer=answer,
        is_complete=is_complete,
        next_goal=next_goal,
    )


def strip_time_fields(trace_data: dict) -> dict:
    """Drop the time-derived metadata before byte comparisons."""
    stripped = copy.deepcopy(trace_data)
    stripped.get("metadata", {}).pop("timestamps", None)
    return stripped


def canonical_bytes(trace_data: dict) -> bytes:
    return json.dumps(
        strip_time_fields(trace_data), sort_keys=True, indent=2, ensure_ascii=False
    ).encode("utf-8")


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


ACCEPTANCE_LABELS = {
    "test_criterion_01": "criterion 1: topology oracle equivalence (1000 random matrices)",
    "test_criterion_02": "criterion 2: ordering correctness on all 4096 digraphs (N=4)",
    "test_criterion_03": "criterion 3: greedy validity (4096 digraphs + 500 random DAGs)",
    "test_criterion_04": "criterion 4: routing isolation with sentinel messages",
    "test_criterion_05": "criterion 5: sparsity monotonicity across the tau grid",
    "test_criterion_06": "criterion 6: golden end-to-end determinism",
    "test_criterion_07": "criterion 7: halting contract (early stop + forced rounds)",
    "test_criterion_08": "criterion 8: in-degree bound never exceeded",
    "test_criterion_09": "criterion 9: token conservation with mock transport",
    "test_criterion_10": "criterion 10: replay sufficiency from the golden trace",
    "test_criterion_11": "criterion 11: baseline cardinality control",
}


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    for prefix, label in ACCEPTANCE_LABELS.items():
        if name.startswith(prefix):
            status = "PASS" if report.passed else "FAIL"
            print(f"\n[{status}] {label}", flush=True)
            return
