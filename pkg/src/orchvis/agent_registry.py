"""Sub-agent capability records and deterministic simulated agents.

Agents are described by skill matrices (tools, accepted and produced ontology
types, historical success rate, call cost). A simulated invocation scans a
fixture table for the goal's ontology type and returns the row that satisfies
every hard constraint while maximizing satisfied soft constraints, tie-broken
by lowest price then lexicographic row id. Remaining qualifying rows become
the record's options (capped at 5) so the repair engine has alternatives to
offer. Fault schedules inject the reproducible failure modes the conflict
machinery is tested against.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal
from enum import Enum

from .errors import AgentCallFailed, DuplicateAgent, NoFixtureMatch, UnknownNode
from .goal_model import GoalNode, Ontology
from .values import TypedValue, ValueKind, decode_payload, encode_payload

OPTION_CAP = 5

START_FIELDS = ("depart_time", "start_time")
END_FIELDS = ("arrive_time", "end_time")
PRICE_FIELD = "price.amount"


@dataclass(frozen=True)
class SkillMatrix:
    agent_id: str
    tools: frozenset[str]
    input_types: frozenset[str]
    output_types: frozenset[str]
    success_rate: float
    cost_per_call: TypedValue
    serial: bool = False

    def __post_init__(self):
        if not self.tools:
            raise ValueError(f"agent {self.agent_id!r} declares no tools")
        if not 0 <= self.success_rate <= 1:
            raise ValueError(f"success_rate {self.success_rate} outside [0, 1]")

    def to_obj(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "cost_per_call": self.cost_per_call.to_obj(),
            "input_types": sorted(self.input_types),
            "output_types": sorted(self.output_types),
            "serial": self.serial,
            "success_rate": self.success_rate,
            "tools": sorted(self.tools),
        }

    @staticmethod
    def from_obj(obj: dict) -> "SkillMatrix":
        cost = obj["cost_per_call"]
        return SkillMatrix(
            agent_id=obj["agent_id"],
            tools=frozenset(obj["tools"]),
            input_types=frozenset(obj["input_types"]),
            output_types=frozenset(obj.get("output_types", [])),
            success_rate=float(obj["success_rate"]),
            cost_per_call=TypedValue(
                ValueKind(cost["kind"]),
                decode_payload(ValueKind(cost["kind"]), cost["value"]),
                cost.get("unit"),
            ),
            serial=bool(obj.get("serial", False)),
        )


@dataclass(frozen=True)
class EvidenceRecord:
    id: str
    agent_id: str
    goal_id: str
    ontology_type: str
    fields: dict[str, TypedValue]
    exclusive_attention: bool = False
    options: tuple[dict[str, TypedValue], ...] = ()

    def to_obj(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "exclusive_attention": self.exclusive_attention,
            "fields": {p: v.to_obj() for p, v in sorted(self.fields.items())},
            "goal_id": self.goal_id,
            "id": self.id,
            "ontology_type": self.ontology_type,
            "options": [
                {p: v.to_obj() for p, v in sorted(opt.items())}
                for opt in self.options
            ],
        }

    @staticmethod
    def from_obj(obj: dict) -> "EvidenceRecord":
        def fields_from(m: dict) -> dict[str, TypedValue]:
            out = {}
            for path, v in m.items():
                kind = ValueKind(v["kind"])
                out[path] = TypedValue(
                    kind, decode_payload(kind, v["value"]), v.get("unit")
                )
            return out

        return EvidenceRecord(
            id=obj["id"],
            agent_id=obj["agent_id"],
            goal_id=obj["goal_id"],
            ontology_type=obj["ontology_type"],
            fields=fields_from(obj["fields"]),
            exclusive_attention=bool(obj.get("exclusive_attention", False)),
            options=tuple(fields_from(opt) for opt in obj.get("options", [])),
        )

    def interval(self) -> tuple[datetime, datetime] | None:
        """The [start, end] attention interval, when both ends are present."""
        return fields_interval(self.fields)


def fields_interval(fields: dict[str, TypedValue]) -> tuple[datetime, datetime] | None:
    start = next(
        (fields[f].value for f in START_FIELDS
         if f in fields and isinstance(fields[f].value, datetime)),
        None,
    )
    end = next(
        (fields[f].value for f in END_FIELDS
         if f in fields and isinstance(fields[f].value, datetime)),
        None,
    )
    if start is None or end is None:
        return None
    return start, end


def intervals_overlap(a: tuple[datetime, datetime],
                      b: tuple[datetime, datetime]) -> bool:
    """Positive-duration overlap; merely touching endpoints does not count."""
    return max(a[0], b[0]) < min(a[1], b[1])


class FaultEffect(str, Enum):
    EMIT_CONFLICTING_TIME = "emit_conflicting_time"
    OMIT_FIELD = "omit_field"
    FAIL_CALL = "fail_call"
    DELAY = "delay"


@dataclass(frozen=True)
class FaultEntry:
    agent_id: str
    trigger: int | str  # call ordinal (1-based) or goal id
    effect: FaultEffect
    field: str | None = None  # for omit_field

    def __post_init__(self):
        if isinstance(self.trigger, bool) or (
            isinstance(self.trigger, int) and self.trigger < 1
        ):
            raise ValueError("ordinal triggers must be positive integers")

    def matches(self, agent_id: str, ordinal: int, goal_id: str) -> bool:
        if self.agent_id != agent_id:
            return False
        if isinstance(self.trigger, int):
            return self.trigger == ordinal
        return self.trigger == goal_id

    def to_obj(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "effect": self.effect.value,
            "field": self.field,
            "trigger": self.trigger,
        }

    @staticmethod
    def from_obj(obj: dict) -> "FaultEntry":
        return FaultEntry(
            agent_id=obj["agent_id"],
            trigger=obj["trigger"],
            effect=FaultEffect(obj["effect"]),
            field=obj.get("field"),
        )


@dataclass(frozen=True)
class FaultSchedule:
    entries: tuple[FaultEntry, ...] = ()

    def matching(self, agent_id: str, ordinal: int, goal_id: str) -> list[FaultEntry]:
        return [e for e in self.entries if e.matches(agent_id, ordinal, goal_id)]

    def delays(self, agent_id: str, ordinal: int, goal_id: str) -> bool:
        return any(
            e.effect is FaultEffect.DELAY
            for e in self.matching(agent_id, ordinal, goal_id)
        )

    def to_obj(self) -> list:
        return [e.to_obj() for e in self.entries]

    @staticmethod
    def from_obj(obj: list) -> "FaultSchedule":
        return FaultSchedule(entries=tuple(FaultEntry.from_obj(e) for e in obj))


@dataclass(frozen=True)
class FixtureRow:
    id: str
    fields: dict[str, TypedValue]


@dataclass(frozen=True)
class FixtureTable:
    ontology_type: str
    columns: dict[str, dict]  # path -> {"kind": ..., "unit": ...}
    rows: tuple[FixtureRow, ...]

    def to_obj(self) -> dict:
        return {
            "columns": {p: dict(sorted(c.items())) for p, c in sorted(self.columns.items())},
            "ontology_type": self.ontology_type,
            "rows": [
                {
                    "id": r.id,
                    "values": {
                        p: encode_payload(v) for p, v in sorted(r.fields.items())
                    },
                }
                for r in self.rows
            ],
        }

    @staticmethod
    def from_obj(obj: dict) -> "FixtureTable":
        columns = obj["columns"]
        rows = []
        for row in obj["rows"]:
            fields: dict[str, TypedValue] = {}
            for path, payload in row["values"].items():
                col = columns[path]
                kind = ValueKind(col["kind"])
                fields[path] = TypedValue(
                    kind, decode_payload(kind, payload), col.get("unit")
                )
            rows.append(FixtureRow(id=row["id"], fields=fields))
        return FixtureTable(
            ontology_type=obj["ontology_type"],
            columns={p: dict(c) for p, c in columns.items()},
            rows=tuple(rows),
        )


class Registry:
    """Mutable agent directory; invocation ordinals are tracked per agent."""

    def __init__(self):
        self._agents: dict[str, SkillMatrix] = {}
        self._calls: dict[str, int] = {}

    def register(self, matrix: SkillMatrix) -> "Registry":
        if matrix.agent_id in self._agents:
            raise DuplicateAgent(
                f"agent {matrix.agent_id!r} is already registered",
                agent_id=matrix.agent_id,
            )
        self._agents[matrix.agent_id] = matrix
        self._calls[matrix.agent_id] = 0
        return self

    def get(self, agent_id: str) -> SkillMatrix:
        try:
            return self._agents[agent_id]
        except KeyError:
            raise UnknownNode(f"no agent {agent_id!r} registered") from None

    def agents(self) -> list[SkillMatrix]:
        return [self._agents[a] for a in sorted(self._agents)]

    def __len__(self) -> int:
        return len(self._agents)

    def reset_counts(self) -> None:
        self._calls = {a: 0 for a in self._agents}

    def call_count(self, agent_id: str) -> int:
        return self._calls.get(agent_id, 0)

    def prime(self, counts: dict[str, int]) -> None:
        """Overwrite call counters, e.g. when resuming from a replayed log."""
        self._calls = {a: int(c) for a, c in counts.items()}

    def invoke(
        self,
        agent_id: str,
        task,
        goal: GoalNode,
        fixtures: dict[str, FixtureTable],
        faults: FaultSchedule,
        *,
        evidence: tuple[EvidenceRecord, ...] = (),
        ontology: Ontology | None = None,
        seed: int = 0,
    ) -> EvidenceRecord:
        """Run one simulated agent call for a task.

        evidence carries the session's prior records so the
        emit_conflicting_time fault can aim at an existing attention interval.
        """
        self.get(agent_id)
        self._calls[agent_id] = self._calls.get(agent_id, 0) + 1
        return perform_invoke(
            agent_id, self._calls[agent_id], goal, fixtures, faults,
            evidence=evidence, ontology=ontology, seed=seed,
        )


def perform_invoke(
    agent_id: str,
    ordinal: int,
    goal: GoalNode,
    fixtures: dict[str, FixtureTable],
    faults: FaultSchedule,
    *,
    evidence: tuple[EvidenceRecord, ...] = (),
    ontology: Ontology | None = None,
    seed: int = 0,
) -> EvidenceRecord:
    """Pure invocation core: same inputs, identical record, every time."""
    active = [
        e for e in faults.matching(agent_id, ordinal, goal.id)
        if e.effect is not FaultEffect.DELAY
    ]
    if len(active) > 1:
        rng = random.Random(f"{seed}:{agent_id}:{ordinal}")
        active = [rng.choice(active)]
    fault = active[0] if active else None

    if fault is not None and fault.effect is FaultEffect.FAIL_CALL:
        raise AgentCallFailed(
            f"agent {agent_id!r} failed on call {ordinal}",
            agent_id=agent_id, goal_id=goal.id, ordinal=ordinal,
        )

    table = fixtures.get(goal.ontology_type)
    if table is None or not table.rows:
        raise NoFixtureMatch(
            f"no fixture rows for {goal.ontology_type!r}",
            ontology_type=goal.ontology_type, goal_id=goal.id,
        )
    ranked = rank_rows(goal, table)
    if not ranked:
        raise NoFixtureMatch(
            f"no fixture row satisfies the hard constraints of {goal.id!r}",
            ontology_type=goal.ontology_type, goal_id=goal.id,
        )

    chosen_index = 0
    if fault is not None and fault.effect is FaultEffect.EMIT_CONFLICTING_TIME:
        busy = [
            r.interval() for r in evidence
            if r.exclusive_attention and r.interval() is not None
        ]
        for i, row in enumerate(ranked):
            span = fields_interval(row.fields)
            if span and any(intervals_overlap(span, b) for b in busy):
                chosen_index = i
                break

    chosen = ranked[chosen_index]
    rest = [r for i, r in enumerate(ranked) if i != chosen_index][:OPTION_CAP]
    chosen_fields = dict(chosen.fields)
    if fault is not None and fault.effect is FaultEffect.OMIT_FIELD and fault.field:
        chosen_fields.pop(fault.field, None)

    return EvidenceRecord(
        id=f"ev-{goal.id}-{ordinal}",
        agent_id=agent_id,
        goal_id=goal.id,
        ontology_type=goal.ontology_type,
        fields=chosen_fields,
        exclusive_attention=(
            ontology.exclusive(goal.ontology_type) if ontology else False
        ),
        options=tuple(dict(r.fields) for r in rest),
    )


def rank_rows(goal: GoalNode, table: FixtureTable) -> list[FixtureRow]:
    """Hard-feasible rows, best first: most soft satisfied, cheapest, lowest id."""
    from .verifier import VerifierConfig, evaluate

    config = VerifierConfig()
    soft_ids = {c.id for c in goal.soft_constraints()}
    scored: list[tuple[tuple, FixtureRow]] = []
    for row in table.rows:
        probe = EvidenceRecord(
            id=row.id, agent_id="", goal_id=goal.id,
            ontology_type=goal.ontology_type, fields=row.fields,
        )
        report = evaluate(goal, probe, config)
        if not report.achieved:
            continue
        soft_hits = len(soft_ids.intersection(report.satisfied))
        price = row.fields.get(PRICE_FIELD)
        price_key = (
            (0, price.value) if price is not None and isinstance(price.value, Decimal)
            else (1, Decimal(0))
        )
        scored.append(((-soft_hits, price_key, row.id), row))
    scored.sort(key=lambda pair: pair[0])
    return [row for _, row in scored]


@dataclass(frozen=True)
class ScenarioBundle:
    name: str
    description: str
    document: dict  # goal document as parsed JSON
    agents: tuple[SkillMatrix, ...]
    tables: dict[str, FixtureTable]
    faults: FaultSchedule
    expected_conflicts: tuple[dict, ...] = ()

    def document_text(self) -> str:
        from .goal_dsl import canonical_json

        return canonical_json(self.document)

    def registry(self) -> Registry:
        registry = Registry()
        for matrix in self.agents:
            registry.register(matrix)
        return registry

    def to_obj(self) -> dict:
        return {
            "agents": [a.to_obj() for a in self.agents],
            "description": self.description,
            "document": self.document,
            "expected_conflicts": [dict(sorted(c.items())) for c in self.expected_conflicts],
            "faults": self.faults.to_obj(),
            "name": self.name,
            "tables": {t: tab.to_obj() for t, tab in sorted(self.tables.items())},
        }

    @staticmethod
    def from_obj(obj: dict) -> "ScenarioBundle":
        return ScenarioBundle(
            name=obj["name"],
            description=obj.get("description", ""),
            document=obj["document"],
            agents=tuple(SkillMatrix.from_obj(a) for a in obj["agents"]),
            tables={
                t: FixtureTable.from_obj(tab)
                for t, tab in obj.get("tables", {}).items()
            },
            faults=FaultSchedule.from_obj(obj.get("faults", [])),
            expected_conflicts=tuple(obj.get("expected_conflicts", [])),
        )


def load_scenario(path: str) -> ScenarioBundle:
    with open(path, encoding="utf-8") as fh:
        return ScenarioBundle.from_obj(json.load(fh))
