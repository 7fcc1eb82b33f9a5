"""Builders that lift raw oracle cases into engine objects, plus session drivers.

Kept separate from oracles.py on purpose: this module imports orchvis, the
oracle module never does.
"""

from __future__ import annotations

from datetime import datetime, timezone

from orchvis import catalog
from orchvis.agent_registry import EvidenceRecord, Registry, SkillMatrix
from orchvis.executor import Autonomy, open_session, run_session
from orchvis.goal_model import (
    Constraint,
    GoalGraph,
    GoalNode,
    Severity,
)
from orchvis.planner import TaskGraph, TaskSpec, task_id_for
from orchvis.values import (
    CmpOp,
    TypedInterval,
    TypedSet,
    TypedValue,
    ValueKind,
)

CLOCK = datetime(2025, 3, 10, 8, 0, tzinfo=timezone.utc)


def typed_scalar(raw) -> TypedValue:
    kind = ValueKind(raw[0])
    unit = raw[2] if raw[0] == "money" else ("utc" if raw[0] == "timestamp" else None)
    if raw[0] == "duration":
        unit = "minutes"
    return TypedValue(kind=kind, value=raw[1], unit=unit)


def typed_value(raw):
    if raw[0] == "interval":
        return TypedInterval(lo=typed_scalar(raw[1]), hi=typed_scalar(raw[2]))
    if raw[0] == "set":
        return TypedSet(items=tuple(typed_scalar(item) for item in raw[1]))
    return typed_scalar(raw)


def constraint_of(obj: dict) -> Constraint:
    value = typed_value(obj["value"])
    return Constraint(
        id=obj["id"],
        severity=Severity(obj["severity"]),
        subject=obj["subject"],
        op=CmpOp(obj["op"]),
        value=value,
    )


def evidence_of(goal_id: str, fields_raw: dict, *, exclusive: bool = False,
                ontology_type: str = "probe", options: tuple = ()) -> EvidenceRecord:
    return EvidenceRecord(
        id=f"ev-{goal_id}",
        agent_id="probe",
        goal_id=goal_id,
        ontology_type=ontology_type,
        fields={path: typed_scalar(raw) for path, raw in fields_raw.items()},
        exclusive_attention=exclusive,
        options=options,
    )


def goal_of(goal_id: str, constraints: list[dict], *,
            ontology_type: str = "probe") -> GoalNode:
    return GoalNode(
        id=goal_id,
        title=goal_id,
        ontology_type=ontology_type,
        constraints=tuple(constraint_of(c) for c in constraints),
    )


def leaf_graph(leaf_ids: list[str], *, root_constraints: tuple = (),
               root_id: str = "root") -> GoalGraph:
    nodes = {root_id: GoalNode(id=root_id, title="root", ontology_type="probe",
                               constraints=root_constraints)}
    for gid in leaf_ids:
        nodes[gid] = GoalNode(id=gid, title=gid, ontology_type="probe",
                              parent=root_id)
    return GoalGraph(root=root_id, nodes=nodes, clock=CLOCK)


def registry_of(agents: list[dict]) -> Registry:
    registry = Registry()
    for a in agents:
        registry.register(SkillMatrix(
            agent_id=a["agent_id"],
            tools=frozenset(a["tools"]),
            input_types=frozenset(a["input_types"]),
            output_types=frozenset(("evidence",)),
            success_rate=a["success_rate"],
            cost_per_call=TypedValue(ValueKind.MONEY, a["cost"], "USD"),
        ))
    return registry


def skeleton_of(tasks: list[dict]) -> TaskGraph:
    specs = {}
    for t in tasks:
        tid = task_id_for(t["goal_id"])
        specs[tid] = TaskSpec(
            id=tid,
            goal_id=t["goal_id"],
            ontology_type=t["ontology_type"],
            required_tools=frozenset(t["required_tools"]),
        )
    return TaskGraph(tasks=specs)


def run_bundle(name: str, autonomy: Autonomy = Autonomy.CONFLICT_GATED,
               seed: int = 0):
    """Open and drive one packaged scenario; returns (state, events)."""
    bundle = catalog.load_scenario(name)
    ontology = catalog.load_ontology()
    state, events = open_session(
        f"t-{name}-{autonomy.value}-{seed}",
        scenario=bundle, ontology=ontology, seed=seed, autonomy=autonomy,
    )
    events = list(events)
    state = run_session(state, sink=events.append)
    return state, events
