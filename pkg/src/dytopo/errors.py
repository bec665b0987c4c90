"""Exception types shared across the engine."""

from __future__ import annotations


class DytopoError(Exception):
    """Base class for all engine errors."""


# -- setup / domain validation ------------------------------------------------

class DuplicateAgentId(DytopoError):
    pass


class NonContiguousIds(DytopoError):
    pass


class InvalidConfig(DytopoError):
    def __init__(self, field: str, reason: str = ""):
        self.field = field
        super().__init__(f"invalid config field {field!r}" + (f": {reason}" if reason else ""))


class UnknownAgent(DytopoError):
    pass


# -- embedding ----------------------------------------------------------------

class DimensionMismatch(DytopoError):
    pass


class EmbedderFailure(DytopoError):
    def __init__(self, agent_id: int, cause: Exception):
        self.agent_id = agent_id
        self.cause = cause
        super().__init__(f"embedder failed for agent {agent_id}: {cause}")


# -- topology -----------------------------------------------------------------

class CycleDetected(DytopoError):
    pass


# -- routing ------------------------------------------------------------------

class MissingOutput(DytopoError):
    def __init__(self, agent_id: int):
        self.agent_id = agent_id
        super().__init__(f"no round output for agent {agent_id}")


# -- agent runtime ------------------------------------------------------------

class PolicyFailure(DytopoError):
    pass


class UnparseableOutput(DytopoError):
    pass


class ParseError(DytopoError):
    """Base for structured-response parse failures."""


class NoStructuredObject(ParseError):
    pass


class MissingField(ParseError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing field {name!r}")


class TypeMismatch(ParseError):
    def __init__(self, name: str, expected: str):
        self.name = name
        super().__init__(f"field {name!r} is not a {expected}")


class UnknownDomain(DytopoError):
    pass


class ScriptExhausted(PolicyFailure):
    def __init__(self, name: str, round_index: int):
        super().__init__(f"script for {name!r} has no entry for round {round_index}")


# -- manager ------------------------------------------------------------------

class ManagerParseFailure(DytopoError):
    pass


# -- llm client ---------------------------------------------------------------

class LlmClientError(DytopoError):
    pass


class TransientExhausted(LlmClientError):
    pass


class AuthFailure(LlmClientError):
    pass


class RequestRejected(LlmClientError):
    """Non-retryable 4xx other than auth or rate limiting."""


class MalformedProviderResponse(LlmClientError):
    pass


class DimensionInconsistent(LlmClientError):
    pass


# -- trace --------------------------------------------------------------------

class RoundGap(DytopoError):
    pass


class VersionMismatch(DytopoError):
    pass


class CorruptTrace(DytopoError):
    pass


class UnknownRound(DytopoError):
    pass


class EmptyTrace(DytopoError):
    pass


# -- run specs ----------------------------------------------------------------

class SpecError(DytopoError):
    """Run-spec file failed validation."""
