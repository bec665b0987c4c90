"""dytopo: round-by-round multi-agent orchestration with semantic routing.

Each round every agent states what it needs (query) and what it offers
(key) in plain language; the engine embeds the descriptors, thresholds the
pairwise similarities into a sparse directed graph, routes private messages
along the activated edges behind a synchronization barrier, and lets a
manager meta-agent steer goals and stop the loop.
"""

from dytopo.embedding import HashingEmbedder, cosine_similarity, relevance_matrix
from dytopo.engine import RunPolicies, RunResult, RunSetup, run_loop
from dytopo.model import (
    AgentProfile,
    RoutingConfig,
    TopologyMode,
    validate_run_setup,
)
from dytopo.topology import build_adjacency, induce_topology
from dytopo.trace import export_trace, import_trace

__version__ = "0.1.0"

__all__ = [
    "AgentProfile",
    "HashingEmbedder",
    "RoutingConfig",
    "RunPolicies",
    "RunResult",
    "RunSetup",
    "TopologyMode",
    "build_adjacency",
    "cosine_similarity",
    "export_trace",
    "import_trace",
    "induce_topology",
    "relevance_matrix",
    "run_loop",
    "validate_run_setup",
    "__version__",
]
