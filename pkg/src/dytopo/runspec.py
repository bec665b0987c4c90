"""Run specification: the structured document every entry point consumes.

The same pydantic models validate YAML/JSON spec files loaded by the CLI
and request bodies posted to the service, so there is exactly one source
of truth for what a run looks like. Scripted rosters resolve against a
scenario document (inline or a sibling file) holding one literal record per
agent per round.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import httpx
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dytopo.agents import AgentPolicy, ScriptedPolicy
from dytopo.embedding import HashingEmbedder
from dytopo.engine import RunPolicies, RunSetup
from dytopo.errors import SpecError
from dytopo.llm import ChatClient, EndpointConfig, LlmPolicy, RemoteEmbedder, UsageLedger
from dytopo.model import AgentKind, AgentProfile, RoutingConfig, TopologyMode
from dytopo.prompts import Domain, build_role_prompts, default_role_description

OVERRIDE_KEYS = ("tau", "t_max", "mode", "seed")


class EndpointModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    base_url: str
    model: str
    api_key: str | None = None
    request_timeout: float = 60.0
    max_retries: int = 3
    retry_backoff_ms: int = 250

    def to_config(self) -> EndpointConfig:
        return EndpointConfig(
            base_url=self.base_url,
            model_name=self.model,
            api_key=self.api_key,
            request_timeout=self.request_timeout,
            max_retries=self.max_retries,
            retry_backoff_ms=self.retry_backoff_ms,
        )


class AgentModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    role: str | None = None
    kind: Literal["scripted", "llm_backed"] = "scripted"
    manager: bool = False
    endpoint: str | None = None


class RoutingModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tau_edge: float = 0.3
    k_in_max: int = 3
    t_max: int = 10
    halting_enabled: bool = True
    topology_mode: Literal["dynamic", "random", "static_full", "single_turn"] = "dynamic"
    seed: int = 0


class EmbedderModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["deterministic", "remote"] = "deterministic"
    dimension: int = 64
    seed: int = 0
    endpoint: str | None = None


class GenerationModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    temperature: float = 0.3
    max_tokens: int = 4000
    structured_output: bool = True


class RunSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domain: Literal["code_generation", "math_reasoning"] = "code_generation"
    task: str
    agents: list[AgentModel]
    routing: RoutingModel = Field(default_factory=RoutingModel)
    embedder: EmbedderModel = Field(default_factory=EmbedderModel)
    generation: GenerationModel = Field(default_factory=GenerationModel)
    endpoints: dict[str, EndpointModel] = Field(default_factory=dict)
    scenario: str | dict | None = None
    include_history: bool = True
    output_dir: str | None = None


def load_run_spec(path: str | Path) -> RunSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    return parse_run_spec(data)


def parse_run_spec(data: object) -> RunSpec:
    if not isinstance(data, dict):
        raise SpecError("run spec must be a mapping")
    try:
        return RunSpec.model_validate(data)
    except ValidationError as exc:
        raise SpecError(f"run spec invalid: {exc}") from exc


def apply_overrides(spec: RunSpec, overrides: dict | None) -> RunSpec:
    """CLI/service overrides win over the spec file and are recorded in the
    trace metadata by the engine."""
    if not overrides:
        return spec
    unknown = set(overrides) - set(OVERRIDE_KEYS)
    if unknown:
        raise SpecError(f"unknown overrides: {sorted(unknown)}")
    routing = spec.routing.model_copy()
    if overrides.get("tau") is not None:
        routing.tau_edge = float(overrides["tau"])
    if overrides.get("t_max") is not None:
        routing.t_max = int(overrides["t_max"])
    if overrides.get("mode") is not None:
        routing.topology_mode = overrides["mode"]
    if overrides.get("seed") is not None:
        routing.seed = int(overrides["seed"])
    return spec.model_copy(update={"routing": routing})


def _load_scenario(spec: RunSpec, base_dir: Path | None) -> dict:
    if spec.scenario is None:
        raise SpecError("scripted agents need a scenario document")
    if isinstance(spec.scenario, dict):
        data = spec.scenario
    else:
        path = Path(spec.scenario)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise SpecError(f"cannot read scenario {path}: {exc}") from exc
    scripts = data.get("scripts") if isinstance(data, dict) else None
    if not isinstance(scripts, dict):
        raise SpecError("scenario document must contain a 'scripts' mapping")
    return scripts


@dataclass
class BuiltRun:
    """Everything needed to execute one run, resolved from a spec."""

    spec: RunSpec
    setup: RunSetup
    policies: RunPolicies
    embedder: object
    ledger: UsageLedger
    client: ChatClient | None

    def close(self):
        if self.client is not None:
            self.client.close()


def build_run(
    spec: RunSpec,
    *,
    base_dir: Path | None = None,
    transport: httpx.BaseTransport | None = None,
) -> BuiltRun:
    """Resolve a validated spec into profiles, policies, and an embedder.

    Purely offline when every agent is scripted and the embedder is
    deterministic; an HTTP client is created only when something needs it.
    """
    managers = [agent for agent in spec.agents if agent.manager]
    workers = [agent for agent in spec.agents if not agent.manager]
    if len(managers) != 1:
        raise SpecError(f"exactly one manager required, found {len(managers)}")
    if not workers:
        raise SpecError("at least one worker required")
    if not spec.task.strip():
        raise SpecError("task must be non-empty")

    domain = Domain(spec.domain)
    profiles = []
    for agent_id, agent in enumerate(workers):
        role = agent.role or default_role_description(domain, agent.name)
        if role is None:
            raise SpecError(f"agent {agent.name!r} needs a role description")
        profiles.append(
            AgentProfile(
                agent_id=agent_id,
                name=agent.name,
                role_description=role,
                kind=AgentKind(agent.kind),
            )
        )
    manager_model = managers[0]
    manager_role = (
        manager_model.role
        or default_role_description(domain, manager_model.name)
        or "Workflow orchestration. Decide when the task is complete."
    )
    manager_profile = AgentProfile(
        agent_id=len(profiles),
        name=manager_model.name,
        role_description=manager_role,
        kind=AgentKind(manager_model.kind),
    )

    routing = spec.routing
    try:
        config = RoutingConfig(
            tau_edge=routing.tau_edge,
            k_in_max=routing.k_in_max,
            t_max=routing.t_max,
            halting_enabled=routing.halting_enabled,
            topology_mode=TopologyMode(routing.topology_mode),
            random_seed=routing.seed,
        )
    except Exception as exc:
        raise SpecError(f"routing config invalid: {exc}") from exc

    needs_scenario = any(agent.kind == "scripted" for agent in spec.agents)
    scripts = _load_scenario(spec, base_dir) if needs_scenario else {}

    needs_client = spec.embedder.type == "remote" or any(
        agent.kind == "llm_backed" for agent in spec.agents
    )
    client = ChatClient(transport=transport) if needs_client else None
    ledger = UsageLedger()
    prompt_set = build_role_prompts(domain, profiles, manager_name=manager_profile.name)

    def endpoint_for(agent: AgentModel) -> EndpointConfig:
        ref = agent.endpoint or "default"
        if ref not in spec.endpoints:
            raise SpecError(f"agent {agent.name!r} references unknown endpoint {ref!r}")
        return spec.endpoints[ref].to_config()

    def policy_for(agent: AgentModel, profile: AgentProfile, system_prompt: str) -> AgentPolicy:
        if agent.kind == "scripted":
            if profile.name not in scripts:
                raise SpecError(f"scenario has no script for agent {profile.name!r}")
            return ScriptedPolicy(scripts[profile.name], name=profile.name)
        return LlmPolicy(
            client,
            endpoint_for(agent),
            system_prompt,
            ledger=ledger,
            usage_label=profile.name,
            temperature=spec.generation.temperature,
            max_tokens=spec.generation.max_tokens,
            structured_output=spec.generation.structured_output,
        )

    worker_policies = {
        profile.agent_id: policy_for(agent, profile, prompt_set.for_worker(profile.agent_id))
        for agent, profile in zip(workers, profiles)
    }
    manager_policy = policy_for(manager_model, manager_profile, prompt_set.manager_template)

    if spec.embedder.type == "deterministic":
        embedder = HashingEmbedder(dim=spec.embedder.dimension, seed=spec.embedder.seed)
        embedder_info = {
            "type": "deterministic",
            "dimension": spec.embedder.dimension,
            "seed": spec.embedder.seed,
        }
    else:
        ref = spec.embedder.endpoint or "default"
        if ref not in spec.endpoints:
            raise SpecError(f"embedder references unknown endpoint {ref!r}")
        endpoint = spec.endpoints[ref].to_config()
        embedder = RemoteEmbedder(client, endpoint)
        embedder_info = {"type": "remote", "model": endpoint.model_name}

    setup = RunSetup(
        workers=tuple(profiles),
        manager=manager_profile,
        config=config,
        task=spec.task,
        domain=domain,
        include_history=spec.include_history,
        embedder_info=embedder_info,
    )
    return BuiltRun(
        spec=spec,
        setup=setup,
        policies=RunPolicies(workers=worker_policies, manager=manager_policy),
        embedder=embedder,
        ledger=ledger,
        client=client,
    )
