"""Per-round agent execution: invoke a policy once, parse, retry, fall back.

A policy is anything implementing ``step(context, round) -> raw text``; the
engine calls it exactly once per round, plus a bounded number of parse
retries when the response is not the required structured object. The
fallback path keeps the run total: it synthesizes descriptors from the
agent's own public words and treats private content as empty, never
fabricating routing signal beyond what the agent said.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Protocol

from dytopo.errors import (
    MissingField,
    NoStructuredObject,
    ParseError,
    PolicyFailure,
    ScriptExhausted,
    TypeMismatch,
    UnparseableOutput,
)
from dytopo.model import AgentProfile, Channel, Descriptor, DescriptorKind, Message, RoundOutput

PARSE_RETRY_BUDGET = 2
CORRECTIVE_SUFFIX = "\n\nOutput ONLY the required structured object."
_FALLBACK_SNIPPET = 200


class AgentPolicy(Protocol):
    def step(self, context: str, round_index: int) -> str: ...


class ScriptedPolicy:
    """Deterministic stand-in for an LLM: a literal record per round.

    The record is serialized to JSON and fed through the normal parse path,
    so scripted runs exercise exactly the same machinery as live ones. The
    contexts each round received are kept for inspection, which is how the
    barrier tests check that no same-round content ever leaks in.
    """

    def __init__(self, script: Mapping[int, Mapping[str, object]], name: str = "scripted"):
        self._script = {int(k): dict(v) for k, v in script.items()}
        self._name = name
        self.contexts: dict[int, str] = {}
        self.invocations = 0

    def step(self, context: str, round_index: int) -> str:
        self.invocations += 1
        # Retried calls carry the corrective suffix; keep the first context.
        self.contexts.setdefault(round_index, context)
        if round_index not in self._script:
            raise ScriptExhausted(self._name, round_index)
        return json.dumps(self._script[round_index])


@dataclass(frozen=True)
class ParsedResponse:
    public_content: str
    private_directed: tuple[tuple[str, str], ...] | None
    private_text: str
    query_text: str
    key_text: str
    answer: str | None = None
    is_complete: bool | None = None
    next_goal: str | None = None


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    position = raw.find("{")
    while position != -1:
        try:
            candidate, _ = decoder.raw_decode(raw, position)
        except json.JSONDecodeError:
            position = raw.find("{", position + 1)
            continue
        if isinstance(candidate, dict):
            return candidate
        position = raw.find("{", position + 1)
    raise NoStructuredObject("no JSON object found in response")


def _required_text(obj: dict, *names: str) -> str:
    for name in names:
        if name in obj:
            value = obj[name]
            if not isinstance(value, str) or not value.strip():
                raise TypeMismatch(name, "non-empty string")
            return value
    raise MissingField(names[0])


def _private_fields(value: object) -> tuple[tuple[tuple[str, str], ...] | None, str]:
    """Normalize private content into (directed mapping, rendered text)."""
    if value is None:
        return (), ""
    if isinstance(value, str):
        return None, value
    if isinstance(value, dict):
        items = []
        for role, instruction in value.items():
            if not isinstance(role, str) or not isinstance(instruction, str):
                raise TypeMismatch("private_content", "mapping of role to string")
            items.append((role, instruction))
        rendered = "\n".join(f"{role}: {instruction}" for role, instruction in items)
        return tuple(items), rendered
    raise TypeMismatch("private_content", "mapping or string")


def parse_agent_response(raw: str, expect_manager_fields: bool = False) -> ParsedResponse:
    """Extract the first well-formed JSON object and map its fields.

    Code-fence wrappers and leading prose are tolerated. Both descriptor
    spellings are accepted (``q_vector``/``q_desc``, ``k_vector``/``k_desc``)
    since the templates themselves disagree. Manager-only fields are
    required, and read, only when ``expect_manager_fields`` is set.
    """
    obj = _first_json_object(raw)
    public = obj.get("public_content")
    if public is None:
        raise MissingField("public_content")
    if not isinstance(public, str):
        raise TypeMismatch("public_content", "string")
    directed, private_text = _private_fields(obj.get("private_content"))
    query = _required_text(obj, "q_vector", "q_desc")
    key = _required_text(obj, "k_vector", "k_desc")

    answer = obj.get("answer")
    if answer is not None and not isinstance(answer, str):
        raise TypeMismatch("answer", "string")

    is_complete = None
    next_goal = None
    if expect_manager_fields:
        if "is_complete" not in obj:
            raise MissingField("is_complete")
        if not isinstance(obj["is_complete"], bool):
            raise TypeMismatch("is_complete", "boolean")
        is_complete = obj["is_complete"]
        if "next_goal" not in obj:
            raise MissingField("next_goal")
        if not isinstance(obj["next_goal"], str):
            raise TypeMismatch("next_goal", "string")
        next_goal = obj["next_goal"]

    return ParsedResponse(
        public_content=public,
        private_directed=directed,
        private_text=private_text,
        query_text=query,
        key_text=key,
        answer=answer,
        is_complete=is_complete,
        next_goal=next_goal,
    )


def _fallback_response(raw: str, expect_manager_fields: bool) -> ParsedResponse:
    """Total last resort after all parse attempts failed.

    Uses whatever partial object exists; otherwise the raw text becomes the
    public message. Descriptors come from the agent's own public words so
    the round still routes on real content.
    """
    public = raw
    directed: tuple[tuple[str, str], ...] | None = ()
    private_text = ""
    query = key = None
    answer = None
    try:
        obj = _first_json_object(raw)
    except NoStructuredObject:
        obj = {}
    if isinstance(obj.get("public_content"), str):
        public = obj["public_content"]
    try:
        directed, private_text = _private_fields(obj.get("private_content"))
    except TypeMismatch:
        directed, private_text = (), ""
    for name in ("q_vector", "q_desc"):
        if isinstance(obj.get(name), str) and obj[name].strip():
            query = obj[name]
            break
    for name in ("k_vector", "k_desc"):
        if isinstance(obj.get(name), str) and obj[name].strip():
            key = obj[name]
            break
    if isinstance(obj.get("answer"), str):
        answer = obj["answer"]
    snippet = public[:_FALLBACK_SNIPPET]
    return ParsedResponse(
        public_content=public,
        private_directed=directed,
        private_text=private_text,
        query_text=query if query is not None else "I need: " + snippet,
        key_text=key if key is not None else "I provide: " + snippet,
        answer=answer,
        is_complete=False if expect_manager_fields else None,
        next_goal="" if expect_manager_fields else None,
    )


def _to_round_output(profile: AgentProfile, round_index: int, parsed: ParsedResponse) -> RoundOutput:
    return RoundOutput(
        author_id=profile.agent_id,
        round=round_index,
        public_message=Message(
            author_id=profile.agent_id,
            round=round_index,
            channel=Channel.PUBLIC,
            content=parsed.public_content,
        ),
        private_message=Message(
            author_id=profile.agent_id,
            round=round_index,
            channel=Channel.PRIVATE,
            content=parsed.private_text,
        ),
        query_descriptor=Descriptor(text=parsed.query_text, kind=DescriptorKind.QUERY),
        key_descriptor=Descriptor(text=parsed.key_text, kind=DescriptorKind.KEY),
        private_directed=parsed.private_directed,
        answer=parsed.answer,
        is_complete=parsed.is_complete,
        next_goal=parsed.next_goal,
    )


def run_agent_round(
    profile: AgentProfile,
    context: str,
    policy: AgentPolicy,
    round_index: int,
    *,
    expect_manager_fields: bool = False,
    parse_retries: int = PARSE_RETRY_BUDGET,
    fallback_enabled: bool = True,
) -> RoundOutput:
    """One agent, one round: invoke, parse, retry with a corrective nudge.

    Raises ``PolicyFailure`` when the backend itself fails and
    ``UnparseableOutput`` only when every parse attempt failed and the
    fallback is disabled.
    """
    try:
        raw = policy.step(context, round_index)
    except PolicyFailure:
        raise
    except Exception as exc:
        raise PolicyFailure(f"policy for {profile.name} failed: {exc}") from exc

    attempts = 0
    while True:
        try:
            parsed = parse_agent_response(raw, expect_manager_fields)
            break
        except ParseError as exc:
            if attempts >= parse_retries:
                if fallback_enabled:
                    parsed = _fallback_response(raw, expect_manager_fields)
                    break
                raise UnparseableOutput(
                    f"{profile.name} round {round_index}: {exc}"
                ) from exc
            attempts += 1
            try:
                raw = policy.step(context + CORRECTIVE_SUFFIX, round_index)
            except PolicyFailure:
                raise
            except Exception as retry_exc:
                raise PolicyFailure(
                    f"policy for {profile.name} failed on retry: {retry_exc}"
                ) from retry_exc
    return _to_round_output(profile, round_index, parsed)
