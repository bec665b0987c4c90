"""System prompt templates for the two built-in task domains.

Workers and manager are forced into a strict JSON response so the engine
can extract routing descriptors reliably. Note the field-name split that
parsing has to tolerate: worker and math templates use ``q_vector`` /
``k_vector`` while the code-domain manager uses ``q_desc`` / ``k_desc``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from dytopo.errors import UnknownDomain
from dytopo.model import AgentProfile

FORMAT_MARKER = "STRICT RESPONSE FORMAT - MANDATORY"


class Domain(str, Enum):
    CODE_GENERATION = "code_generation"
    MATH_REASONING = "math_reasoning"


CODE_ROLE_DESCRIPTIONS = {
    "Developer": "Implement complete, runnable code. If using classes, provide independent functions as entry points.",
    "Researcher": "Identify standard algorithms and time complexity. Output conclusions without derivation.",
    "Tester": "Provide critical test cases and expected results. Describe testing logic rather than full execution logs.",
    "Designer": "Design API interfaces and class structures. Only show method signatures and type hints.",
}

MATH_ROLE_DESCRIPTIONS = {
    "ProblemParser": "Decompose the problem statement. Output must include analysis, known conditions, target, and a step-by-step plan.",
    "Solver": "Execute mathematical derivation. Provide detailed steps, symbolic reasoning, and the final answer.",
    "Verifier": "Logic and calculation check. Verify the rationality of each step; identify logical loopholes or calculation errors.",
    "Manager": "Workflow orchestration. Halt only when a solution exists AND verification passes.",
}

# Role whose output carries the final deliverable, per domain.
ANSWER_BEARING_ROLE = {
    Domain.CODE_GENERATION: "Developer",
    Domain.MATH_REASONING: "Solver",
}

_WORKER_TEMPLATE = """You are {name}.
Role Description: {role_description}
STRICT RESPONSE FORMAT - MANDATORY
You MUST output ONLY a valid JSON object with these exact fields:
{{
  "public_content": "String. Your contribution to the task.",
  "private_content": {{"TargetRole": "Instruction"}},
  "q_vector": "String. REQUIRED. What you need next (Query).",
  "k_vector": "String. REQUIRED. What you provide (Key)."
}}"""

_CODE_MANAGER_TEMPLATE = """You are {name}, the Workflow Orchestrator. Decide if the task is COMPLETE.
STRICT RESPONSE FORMAT - MANDATORY
You MUST output ONLY a valid JSON object with these exact fields:
{{
  "public_content": "String. Status summary and next directives.",
  "private_content": {{}},
  "q_desc": "String. REQUIRED. What you need next (query descriptor).",
  "k_desc": "String. REQUIRED. What you provide (key descriptor).",
  "is_complete": Boolean,
  "next_goal": "String"
}}
CRITICAL RULES:
1. Primary focus: Workflow Orchestrator. Decide if the task is COMPLETE.
2. Strict constraint: Only set is_complete=True if Code exists AND Tests pass.
3. If you see Python code, analyze it from your role's perspective."""

_PROBLEM_PARSER_TEMPLATE = """You are {name}, the Math Problem Analyst. Analyze the problem statement, identify known conditions, define the solving target, and break down the solving steps.
STRICT RESPONSE FORMAT - MANDATORY
You MUST output ONLY a valid JSON object with these exact fields:
{{
  "public_content": "String. Analysis, conditions, target, and plan.",
  "private_content": {{"Role": "Instruction"}},
  "q_vector": "String. REQUIRED. What you need next.",
  "k_vector": "String. REQUIRED. What you provide."
}}
CRITICAL RULES:
1. Primary focus: Analyze problem, identify conditions, define target, break down steps.
2. Constraint: MAX 1000 words. Output MUST include clear analysis and plan.
3. Analyze mathematical expressions from your role's perspective."""

_SOLVER_TEMPLATE = """You are {name}, the Mathematical Solver. Execute specific mathematical calculations, symbolic reasoning, or theorem calls. Can use SymPy for symbolic computations.
STRICT RESPONSE FORMAT - MANDATORY
You MUST output ONLY a valid JSON object with these exact fields:
{{
  "public_content": "String. Detailed solutions with derivations.",
  "private_content": {{"Role": "Instruction"}},
  "answer": "String. The final answer.",
  "q_vector": "String. REQUIRED.",
  "k_vector": "String. REQUIRED."
}}
CRITICAL RULES:
1. Primary focus: Calculations, symbolic reasoning, theorem calls.
2. Constraint: MAX 2000 words. Detailed step-by-step solutions required."""

_VERIFIER_TEMPLATE = """You are {name}, the Logic Verifier. Check the rationality of each derivation step, identify logical loopholes or calculation errors.
STRICT RESPONSE FORMAT - MANDATORY
You MUST output ONLY a valid JSON object with these exact fields:
{{
  "public_content": "String. Verification results and conclusion.",
  "private_content": {{"Role": "Instruction"}},
  "q_vector": "String. REQUIRED.",
  "k_vector": "String. REQUIRED."
}}
CRITICAL RULES:
1. Primary focus: Check rationality, find loopholes/errors.
2. Constraint: MAX 1000 words. Output verification for each step."""

_MATH_MANAGER_TEMPLATE = """You are {name}, the Workflow Orchestrator. Decide if the task is COMPLETE.
STRICT RESPONSE FORMAT - MANDATORY
You MUST output ONLY a valid JSON object with these exact fields:
{{
  "public_content": "String. Status summary.",
  "private_content": {{"Role": "Instruction"}},
  "q_vector": "String.", "k_vector": "String.",
  "is_complete": Boolean, "next_goal": "String"
}}
CRITICAL RULES:
1. Strict constraint: Only set is_complete=True if Solution exists AND Verification passes."""

_MATH_WORKER_TEMPLATES = {
    "ProblemParser": _PROBLEM_PARSER_TEMPLATE,
    "Solver": _SOLVER_TEMPLATE,
    "Verifier": _VERIFIER_TEMPLATE,
}


@dataclass(frozen=True)
class RolePromptSet:
    """Instantiated system prompts: one per worker plus the manager's."""

    domain: Domain
    worker_templates: tuple[tuple[int, str], ...]  # (agent_id, prompt)
    manager_template: str

    def __post_init__(self):
        for _, template in self.worker_templates:
            if FORMAT_MARKER not in template:
                raise ValueError("worker template lost the mandatory format marker")
        if FORMAT_MARKER not in self.manager_template:
            raise ValueError("manager template lost the mandatory format marker")

    def for_worker(self, agent_id: int) -> str:
        for candidate_id, template in self.worker_templates:
            if candidate_id == agent_id:
                return template
        raise KeyError(agent_id)


def build_role_prompts(
    domain: Domain | str,
    profiles: Sequence[AgentProfile],
    manager_name: str = "Manager",
) -> RolePromptSet:
    """Instantiate the domain's templates with each agent's name and role.

    Math roles with a dedicated template (ProblemParser, Solver, Verifier)
    get it; any other worker gets the generic worker template.
    """
    try:
        domain = Domain(domain)
    except ValueError:
        raise UnknownDomain(f"unsupported domain {domain!r}") from None

    workers = []
    for profile in profiles:
        template = None
        if domain is Domain.MATH_REASONING:
            template = _MATH_WORKER_TEMPLATES.get(profile.name)
        if template is not None:
            workers.append((profile.agent_id, template.format(name=profile.name)))
        else:
            workers.append(
                (
                    profile.agent_id,
                    _WORKER_TEMPLATE.format(
                        name=profile.name, role_description=profile.role_description
                    ),
                )
            )
    manager_template = (
        _CODE_MANAGER_TEMPLATE if domain is Domain.CODE_GENERATION else _MATH_MANAGER_TEMPLATE
    )
    return RolePromptSet(
        domain=domain,
        worker_templates=tuple(workers),
        manager_template=manager_template.format(name=manager_name),
    )


def default_role_description(domain: Domain | str, role_name: str) -> str | None:
    """Built-in description for well-known role names, if any."""
    try:
        domain = Domain(domain)
    except ValueError:
        raise UnknownDomain(f"unsupported domain {domain!r}") from None
    table = (
        CODE_ROLE_DESCRIPTIONS if domain is Domain.CODE_GENERATION else MATH_ROLE_DESCRIPTIONS
    )
    return table.get(role_name)
