"""Constraint verification: satisfaction scoring and difference reports.

A goal's evidence is checked against its constraints. Hard constraints gate
the binary achieved flag; soft constraints feed the weighted score

    score = satisfied_hard/total_hard + lambda * satisfied_soft/total_soft

with an empty constraint class counting as fully satisfied (fraction 1), so
the score lives in [0, 1 + lambda]. The extractor turns unstructured text
evidence into typed records via a deterministic pattern table, with an
optional external-endpoint backend sharing the same contract.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import TYPE_CHECKING

from .errors import ExtractionEmpty, MissingConfig, UnknownBackendKind
from .goal_model import GoalNode, Severity
from .values import TypedValue, ValueKind, apply_op, normalize_value

if TYPE_CHECKING:
    from .agent_registry import EvidenceRecord


@dataclass(frozen=True)
class VerifierConfig:
    lambda_: float = 0.5
    risk_margin: float = 0.1

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 < self.risk_margin < 1:
            raise ValueError("risk_margin must be in (0, 1)")

    def to_obj(self) -> dict:
        return {"lambda": self.lambda_, "risk_margin": self.risk_margin}

    @staticmethod
    def from_obj(obj: dict) -> "VerifierConfig":
        return VerifierConfig(
            lambda_=float(obj.get("lambda", 0.5)),
            risk_margin=float(obj.get("risk_margin", 0.1)),
        )


@dataclass(frozen=True)
class ConstraintDiff:
    constraint_id: str
    subject: str
    expected_op: str
    expected_value: dict
    observed: dict | None  # None when the evidence field is absent

    def to_obj(self) -> dict:
        return {
            "constraint_id": self.constraint_id,
            "expected": {"op": self.expected_op, "value": self.expected_value},
            "observed": self.observed,
            "subject": self.subject,
        }


@dataclass(frozen=True)
class VerificationReport:
    goal_id: str
    achieved: bool
    score: float
    satisfied: tuple[str, ...]
    violated: tuple[str, ...]
    diffs: tuple[ConstraintDiff, ...]

    def to_obj(self) -> dict:
        return {
            "achieved": self.achieved,
            "diffs": [d.to_obj() for d in self.diffs],
            "goal_id": self.goal_id,
            "satisfied": list(self.satisfied),
            "score": self.score,
            "violated": list(self.violated),
        }


def evaluate(
    goal: GoalNode, evidence: "EvidenceRecord", config: VerifierConfig
) -> VerificationReport:
    """Check every constraint of goal against evidence.fields.

    A missing subject path counts as a violation (observed absent), never an
    error; kind-incompatible comparisons raise TypeMismatch.
    """
    satisfied: list[str] = []
    violated: list[str] = []
    diffs: list[ConstraintDiff] = []
    hard_total = hard_ok = soft_total = soft_ok = 0

    for c in sorted(goal.constraints, key=lambda c: c.id):
        if c.severity is Severity.HARD:
            hard_total += 1
        else:
            soft_total += 1
        observed = evidence.fields.get(c.subject)
        ok = observed is not None and apply_op(observed, c.op, c.value)
        if ok:
            satisfied.append(c.id)
            if c.severity is Severity.HARD:
                hard_ok += 1
            else:
                soft_ok += 1
        else:
            violated.append(c.id)
            diffs.append(ConstraintDiff(
                constraint_id=c.id,
                subject=c.subject,
                expected_op=c.op.value,
                expected_value=c.value.to_obj(),
                observed=None if observed is None else observed.to_obj(),
            ))

    hard_fraction = hard_ok / hard_total if hard_total else 1.0
    soft_fraction = soft_ok / soft_total if soft_total else 1.0
    return VerificationReport(
        goal_id=goal.id,
        achieved=hard_total == hard_ok,
        score=hard_fraction + config.lambda_ * soft_fraction,
        satisfied=tuple(satisfied),
        violated=tuple(violated),
        diffs=tuple(diffs),
    )


class ExtractorKind(str, Enum):
    RULES = "rules"
    EXTERNAL_ENDPOINT = "external-endpoint"


@dataclass(frozen=True)
class ExtractionRule:
    ontology_type: str
    pattern: str
    path: str
    kind: str  # a ValueKind name, or "time" for clock-anchored times of day
    unit: str | None = None

    def compiled(self) -> re.Pattern:
        return re.compile(self.pattern)


@dataclass(frozen=True)
class ExtractorBackend:
    kind: ExtractorKind
    rules: tuple[ExtractionRule, ...] = ()
    endpoint: str | None = None
    model: str | None = None
    api_key: str | None = None


def make_extractor(descriptor: dict) -> ExtractorBackend:
    kind = descriptor.get("kind")
    if kind == ExtractorKind.RULES.value:
        rules_obj = descriptor.get("rules")
        if rules_obj is None:
            raise MissingConfig("rules extractor needs a 'rules' table")
        return ExtractorBackend(kind=ExtractorKind.RULES, rules=tuple(
            ExtractionRule(
                ontology_type=r["ontology_type"],
                pattern=r["pattern"],
                path=r["path"],
                kind=r["kind"],
                unit=r.get("unit"),
            )
            for r in rules_obj
        ))
    if kind == ExtractorKind.EXTERNAL_ENDPOINT.value:
        missing = [k for k in ("endpoint", "model") if not descriptor.get(k)]
        if missing:
            raise MissingConfig(
                f"external extractor needs {missing[0]}", variable=missing[0]
            )
        return ExtractorBackend(
            kind=ExtractorKind.EXTERNAL_ENDPOINT,
            endpoint=descriptor["endpoint"],
            model=descriptor["model"],
            api_key=descriptor.get("api_key"),
        )
    raise UnknownBackendKind(f"no extractor backend of kind {kind!r}")


def load_rules(path: str) -> ExtractorBackend:
    with open(path, encoding="utf-8") as fh:
        return make_extractor({"kind": "rules", "rules": json.load(fh)})


def _rule_value(rule: ExtractionRule, captured: str, clock: datetime) -> TypedValue:
    if rule.kind == "time":
        # time of day anchored to the session clock's date
        hour, minute = captured.split(":")
        anchored = clock.replace(
            hour=int(hour), minute=int(minute), second=0, microsecond=0
        )
        return TypedValue(ValueKind.TIMESTAMP, anchored, "utc")
    raw = TypedValue(ValueKind(rule.kind), captured, rule.unit)
    return normalize_value(raw, clock)


def extract(raw, ontology_type: str, backend: ExtractorBackend, clock: datetime,
            goal_id: str = "", agent_id: str = "extractor"):
    """Turn unstructured evidence into a typed EvidenceRecord.

    Accepts plain text, an image placeholder ({"caption": text} blob), or an
    already structured EvidenceRecord (returned unchanged).
    """
    from .agent_registry import EvidenceRecord

    if isinstance(raw, EvidenceRecord):
        return raw
    if isinstance(raw, dict):
        text = str(raw.get("caption", ""))
    else:
        text = str(raw)

    if backend.kind is ExtractorKind.EXTERNAL_ENDPOINT:
        fields = _extract_external(text, ontology_type, backend, clock)
    else:
        fields = {}
        for rule in backend.rules:
            if rule.ontology_type != ontology_type:
                continue
            m = rule.compiled().search(text)
            if m:
                fields[rule.path] = _rule_value(rule, m.group(1), clock)
    if not fields:
        raise ExtractionEmpty(
            f"no field of {ontology_type!r} could be extracted",
            ontology_type=ontology_type,
        )
    return EvidenceRecord(
        id=f"extracted-{goal_id or ontology_type}",
        agent_id=agent_id,
        goal_id=goal_id,
        ontology_type=ontology_type,
        fields=fields,
    )


def _extract_external(text: str, ontology_type: str, backend: ExtractorBackend,
                      clock: datetime) -> dict[str, TypedValue]:
    """Endpoint adapter: same chat-completion wire shape as the goal parser."""
    import httpx

    headers = {"content-type": "application/json"}
    if backend.api_key:
        headers["authorization"] = f"Bearer {backend.api_key}"
    prompt = (
        f"Extract the fields of ontology type {ontology_type} from the text "
        f"below as a JSON object mapping field path to "
        f'{{"kind", "unit", "value"}}.\n\n{text}'
    )
    response = httpx.post(
        backend.endpoint,
        headers=headers,
        json={
            "model": backend.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        },
        timeout=30.0,
    )
    response.raise_for_status()
    content = response.json()["choices"][0]["message"]["content"]
    fields: dict[str, TypedValue] = {}
    for path, obj in json.loads(content).items():
        raw = TypedValue(ValueKind(obj["kind"]), obj.get("value"), obj.get("unit"))
        fields[path] = normalize_value(raw, clock)
    return fields
