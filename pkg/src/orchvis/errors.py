"""Shared exception hierarchy.

Every error raised across module boundaries derives from OrchvisError and
carries a stable machine-readable ``code`` so the CLI and service layer can
map failures to structured error objects without string matching.
"""

from __future__ import annotations

from typing import Any


class OrchvisError(Exception):
    """Base class for all engine errors."""

    code = "error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_payload(self) -> dict:
        payload = {"code": self.code, "message": self.message}
        if self.details:
            payload["details"] = {k: v for k, v in sorted(self.details.items())}
        return payload


class UnparseableValue(OrchvisError):
    code = "unparseable-value"


class UnknownNode(OrchvisError):
    code = "unknown-node"


class InvariantViolation(OrchvisError):
    code = "invariant-violation"

    def __init__(self, message: str, issues=(), **details: Any):
        super().__init__(message, **details)
        self.issues = list(issues)


class DocumentSyntaxError(OrchvisError):
    code = "syntax-error"

    def __init__(self, message: str, position: int = 0, expected: str = "", **details: Any):
        super().__init__(message, position=position, expected=expected, **details)
        self.position = position
        self.expected = expected


class DocumentSchemaError(OrchvisError):
    code = "schema-error"

    def __init__(self, message: str, path: str = "", reason: str = "", **details: Any):
        super().__init__(message, path=path, reason=reason, **details)
        self.path = path
        self.reason = reason


class VersionUnsupported(OrchvisError):
    code = "version-unsupported"


class RootMismatch(OrchvisError):
    code = "root-mismatch"


class TypeMismatch(OrchvisError):
    code = "type-mismatch"


class ExtractionEmpty(OrchvisError):
    code = "extraction-empty"


class DuplicateAgent(OrchvisError):
    code = "duplicate-agent"


class AgentCallFailed(OrchvisError):
    code = "agent-call-failed"


class NoFixtureMatch(OrchvisError):
    code = "no-fixture-match"


class UnknownOntologyToolMapping(OrchvisError):
    code = "unknown-ontology-tool-mapping"


class NoEligibleAgent(OrchvisError):
    code = "no-eligible-agent"


class InvalidCommand(OrchvisError):
    code = "invalid-command"


class UnknownGoal(OrchvisError):
    code = "unknown-goal"


class NoRepairFound(OrchvisError):
    code = "no-repair-found"


class StaleCandidate(OrchvisError):
    code = "stale-candidate"


class InapplicableMove(OrchvisError):
    code = "inapplicable-move"


class ProviderUnavailable(OrchvisError):
    code = "provider-unavailable"


class ExhaustedRepairs(OrchvisError):
    code = "exhausted-repairs"

    def __init__(self, message: str, last_error: str = "", transcript=(), **details: Any):
        super().__init__(message, last_error=last_error, **details)
        self.last_error = last_error
        self.transcript = list(transcript)


class UnknownBackendKind(OrchvisError):
    code = "unknown-backend-kind"


class UnknownScenario(OrchvisError):
    code = "unknown-scenario"


class MissingConfig(OrchvisError):
    code = "missing-config"


class LogCorruption(OrchvisError):
    code = "gapless-violation"
