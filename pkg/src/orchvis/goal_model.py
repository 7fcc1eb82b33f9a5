"""Hierarchical goal graph: nodes, relations, constraints, and validation.

A goal graph is a tree of GoalNodes. Each node's relation describes how the
node combines with its siblings: sequential nodes chain after their previous
sequential sibling, parallel nodes are independent, and conditional nodes are
gated on their own condition predicate. All editing operations are value
semantic; they return new graph values and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum

from .errors import InvariantViolation, UnknownNode, UnparseableValue
from .values import (
    CmpOp,
    ConstraintValue,
    TypedInterval,
    TypedSet,
    TypedValue,
    ValueKind,
    normalize_constraint_value,
    normalize_value,
    op_value_compatible,
)

FORMAT_VERSION = 1


class Relation(str, Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"
    CONDITIONAL = "conditional"


class Status(str, Enum):
    PENDING = "pending"
    ACTIVE = "active"
    ACHIEVED = "achieved"
    FAILED = "failed"
    CONFLICTED = "conflicted"
    PAUSED = "paused"


class Severity(str, Enum):
    HARD = "hard"
    SOFT = "soft"


def unit_tag(value: ConstraintValue) -> str | None:
    """Canonical unit tag for a constraint bound (currency code, minutes, utc)."""
    if isinstance(value, TypedValue):
        return value.unit
    if isinstance(value, TypedInterval):
        return value.lo.unit
    return value.items[0].unit if value.items else None


@dataclass(frozen=True)
class Constraint:
    id: str
    severity: Severity
    subject: str
    op: CmpOp
    value: ConstraintValue
    units: str | None = None

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "op": self.op.value,
            "severity": self.severity.value,
            "subject": self.subject,
            "units": self.units,
            "value": self.value.to_obj(),
        }


@dataclass(frozen=True)
class Predicate:
    """Machine-checkable test over evidence fields.

    When goal is set, the predicate reads the named goal's evidence and the
    planner adds a dependency edge from that goal's task; otherwise it is
    evaluated against whatever session evidence carries the subject path.
    """

    subject: str
    op: CmpOp
    value: ConstraintValue
    goal: str | None = None

    def to_obj(self) -> dict:
        return {
            "goal": self.goal,
            "op": self.op.value,
            "subject": self.subject,
            "value": self.value.to_obj(),
        }


@dataclass(frozen=True)
class GoalNode:
    id: str
    title: str
    ontology_type: str
    relation: Relation = Relation.PARALLEL
    parent: str | None = None
    condition: Predicate | None = None
    attributes: dict[str, TypedValue] = field(default_factory=dict)
    constraints: tuple[Constraint, ...] = ()
    status: Status = Status.PENDING

    def hard_constraints(self) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.severity is Severity.HARD)

    def soft_constraints(self) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.severity is Severity.SOFT)


@dataclass(frozen=True)
class GoalGraph:
    root: str
    nodes: dict[str, GoalNode]
    clock: datetime
    version: int = FORMAT_VERSION

    def node(self, node_id: str) -> GoalNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no goal with id {node_id!r}") from None

    def children(self, node_id: str) -> list[GoalNode]:
        return sorted(
            (n for n in self.nodes.values() if n.parent == node_id),
            key=lambda n: n.id,
        )

    def is_leaf(self, node_id: str) -> bool:
        return not any(n.parent == node_id for n in self.nodes.values())

    def leaves(self) -> list[GoalNode]:
        return [n for n in self.preorder() if self.is_leaf(n.id)]

    def preorder(self) -> list[GoalNode]:
        """Depth-first node order, children visited in id order."""
        out: list[GoalNode] = []
        stack = [self.root]
        seen: set[str] = set()
        while stack:
            nid = stack.pop()
            if nid in seen or nid not in self.nodes:
                continue
            seen.add(nid)
            out.append(self.nodes[nid])
            stack.extend(child.id for child in reversed(self.children(nid)))
        return out

    def descendants(self, node_id: str) -> set[str]:
        """Ids of node_id's subtree, node_id included."""
        out = {node_id}
        frontier = [node_id]
        while frontier:
            nid = frontier.pop()
            for child in self.children(nid):
                if child.id not in out:
                    out.add(child.id)
                    frontier.append(child.id)
        return out

    def with_nodes(self, replacements: dict[str, GoalNode]) -> "GoalGraph":
        merged = dict(self.nodes)
        merged.update(replacements)
        return replace(self, nodes=merged)

    def without_nodes(self, node_ids: set[str]) -> "GoalGraph":
        kept = {nid: n for nid, n in self.nodes.items() if nid not in node_ids}
        return replace(self, nodes=kept)


@dataclass(frozen=True)
class AttributeSpec:
    kind: ValueKind
    required: bool = False
    # when set, a constraint with id "mirror:<attr>" is kept in sync with the
    # attribute value (subject/op/severity below, bound = attribute value)
    mirror_subject: str | None = None
    mirror_op: CmpOp | None = None
    mirror_severity: Severity | None = None

    @property
    def mirrored(self) -> bool:
        return self.mirror_subject is not None


@dataclass(frozen=True)
class TypeSpec:
    attributes: dict[str, AttributeSpec] = field(default_factory=dict)
    tools: tuple[str, ...] = ()
    exclusive_attention: bool = False
    parent: str | None = None


@dataclass(frozen=True)
class Ontology:
    types: dict[str, TypeSpec]

    def has_type(self, name: str) -> bool:
        return name in self.types

    def effective_attributes(self, name: str) -> dict[str, AttributeSpec]:
        """Attribute schema for a type, parent declarations overlaid by own."""
        chain: list[TypeSpec] = []
        cursor: str | None = name
        seen: set[str] = set()
        while cursor is not None and cursor in self.types and cursor not in seen:
            seen.add(cursor)
            chain.append(self.types[cursor])
            cursor = self.types[cursor].parent
        merged: dict[str, AttributeSpec] = {}
        for spec in reversed(chain):
            merged.update(spec.attributes)
        return merged

    def tools_for(self, name: str) -> tuple[str, ...]:
        spec = self.types.get(name)
        if spec is None:
            return ()
        if spec.tools or spec.parent is None:
            return spec.tools
        return self.tools_for(spec.parent)

    def exclusive(self, name: str) -> bool:
        spec = self.types.get(name)
        return bool(spec and spec.exclusive_attention)

    def to_obj(self) -> dict:
        types: dict[str, dict] = {}
        for tname in sorted(self.types):
            tspec = self.types[tname]
            attrs: dict[str, dict] = {}
            for aname in sorted(tspec.attributes):
                aspec = tspec.attributes[aname]
                entry: dict = {"kind": aspec.kind.value, "required": aspec.required}
                if aspec.mirrored:
                    entry["mirror"] = {
                        "op": aspec.mirror_op.value,
                        "severity": aspec.mirror_severity.value,
                        "subject": aspec.mirror_subject,
                    }
                attrs[aname] = entry
            types[tname] = {
                "attributes": attrs,
                "exclusive_attention": tspec.exclusive_attention,
                "parent": tspec.parent,
                "tools": list(tspec.tools),
            }
        return {"types": types}

    @staticmethod
    def from_obj(obj: dict) -> "Ontology":
        types: dict[str, TypeSpec] = {}
        for tname, tspec in obj.get("types", {}).items():
            attrs: dict[str, AttributeSpec] = {}
            for aname, aspec in tspec.get("attributes", {}).items():
                mirror = aspec.get("mirror")
                attrs[aname] = AttributeSpec(
                    kind=ValueKind(aspec["kind"]),
                    required=bool(aspec.get("required", False)),
                    mirror_subject=mirror["subject"] if mirror else None,
                    mirror_op=CmpOp(mirror["op"]) if mirror else None,
                    mirror_severity=Severity(mirror["severity"]) if mirror else None,
                )
            types[tname] = TypeSpec(
                attributes=attrs,
                tools=tuple(tspec.get("tools", [])),
                exclusive_attention=bool(tspec.get("exclusive_attention", False)),
                parent=tspec.get("parent"),
            )
        return Ontology(types=types)


@dataclass(frozen=True)
class ValidationIssue:
    node_id: str
    field: str
    reason: str

    def to_payload(self) -> dict:
        return {"field": self.field, "node_id": self.node_id, "reason": self.reason}


MIRROR_PREFIX = "mirror:"


def mirror_constraint(attr: str, spec: AttributeSpec, value: TypedValue) -> Constraint:
    """The machine predicate kept in sync with a mirrored attribute."""
    assert spec.mirror_subject and spec.mirror_op and spec.mirror_severity
    return Constraint(
        id=f"{MIRROR_PREFIX}{attr}",
        severity=spec.mirror_severity,
        subject=spec.mirror_subject,
        op=spec.mirror_op,
        value=value,
        units=value.unit,
    )


def validate_graph(
    graph: GoalGraph, ontology: Ontology | None = None
) -> list[ValidationIssue]:
    """Structural and ontology checks; one issue per independent defect.

    With ontology=None only structural invariants are checked (tree shape,
    relation/condition pairing, constraint well-formedness).
    """
    issues: list[ValidationIssue] = []

    if graph.version != FORMAT_VERSION:
        issues.append(ValidationIssue(graph.root, "version", "unsupported-version"))
    if graph.root not in graph.nodes:
        issues.append(ValidationIssue(graph.root, "root", "unknown-root"))

    dangling: set[str] = set()
    for node in graph.nodes.values():
        if node.id == graph.root:
            if node.parent is not None:
                issues.append(ValidationIssue(node.id, "parent", "root-has-parent"))
        elif node.parent is None:
            issues.append(ValidationIssue(node.id, "parent", "orphan-node"))
        elif node.parent not in graph.nodes:
            dangling.add(node.id)
            issues.append(ValidationIssue(node.id, "parent", "dangling-parent"))

    # one issue per distinct parent cycle, anchored at its smallest node id
    cycles: set[str] = set()
    for node in graph.nodes.values():
        trail: list[str] = []
        seen: set[str] = set()
        cursor: str | None = node.id
        while cursor is not None and cursor in graph.nodes:
            if cursor in seen:
                loop = trail[trail.index(cursor):]
                cycles.add(min(loop))
                break
            seen.add(cursor)
            trail.append(cursor)
            cursor = None if cursor == graph.root else graph.nodes[cursor].parent
    for anchor in sorted(cycles):
        issues.append(ValidationIssue(anchor, "parent", "parent-cycle"))

    for node in graph.nodes.values():
        if node.relation is Relation.CONDITIONAL and node.condition is None:
            issues.append(ValidationIssue(node.id, "condition", "missing-condition"))
        if node.relation is not Relation.CONDITIONAL and node.condition is not None:
            issues.append(ValidationIssue(node.id, "condition", "stray-condition"))
        if node.condition is not None and node.condition.goal is not None:
            if node.condition.goal not in graph.nodes:
                issues.append(
                    ValidationIssue(node.id, "condition", "dangling-condition-reference")
                )

        if ontology is not None:
            if not ontology.has_type(node.ontology_type):
                issues.append(
                    ValidationIssue(node.id, "ontology_type", "unknown-ontology-type")
                )
                continue
            schema = ontology.effective_attributes(node.ontology_type)
            for name, value in node.attributes.items():
                if name not in schema:
                    issues.append(ValidationIssue(node.id, name, "unknown-attribute"))
                elif value.kind is not schema[name].kind:
                    issues.append(ValidationIssue(node.id, name, "kind-mismatch"))
            for name, spec in schema.items():
                if spec.required and name not in node.attributes:
                    issues.append(ValidationIssue(node.id, name, "missing-attribute"))

        seen_cids: set[str] = set()
        for c in node.constraints:
            if c.id in seen_cids:
                issues.append(ValidationIssue(node.id, c.id, "duplicate-constraint"))
                continue
            seen_cids.add(c.id)
            if not c.subject:
                issues.append(ValidationIssue(node.id, c.id, "empty-subject"))
            if not op_value_compatible(c.op, c.value):
                issues.append(ValidationIssue(node.id, c.id, "op-value-mismatch"))

    return issues


_EDITABLE_FIELDS = {
    "title", "parent", "relation", "condition",
    "ontology_type", "attributes", "constraints", "status",
}


def edit_node(
    graph: GoalGraph, node_id: str, patch: dict, ontology: Ontology
) -> GoalGraph:
    """Apply a partial update to one node; rejects edits that break validation."""
    node = graph.node(node_id)
    if not patch:
        return graph
    unknown = sorted(set(patch) - _EDITABLE_FIELDS)
    if unknown:
        raise InvariantViolation(
            f"unknown node fields: {', '.join(unknown)}",
            issues=[ValidationIssue(node_id, f, "unknown-field") for f in unknown],
        )
    edited = replace(node, **patch)
    candidate = graph.with_nodes({node_id: edited})
    issues = validate_graph(candidate, ontology)
    if issues:
        raise InvariantViolation(
            f"edit to {node_id!r} violates graph invariants",
            issues=issues,
        )
    return candidate


def normalize_attributes(node: GoalNode, clock: datetime) -> GoalNode:
    """Fold raw attribute and constraint values into canonical form.

    Relative dates resolve against clock, money to decimal plus currency code,
    durations to minutes. Idempotent: normalizing a normalized node returns an
    equal node.
    """
    attrs: dict[str, TypedValue] = {}
    for name, value in node.attributes.items():
        try:
            attrs[name] = normalize_value(value, clock)
        except UnparseableValue as exc:
            raise UnparseableValue(
                f"attribute {name!r} of {node.id!r}: {exc.message}",
                attribute=name, node_id=node.id,
            ) from None
    constraints = []
    for c in node.constraints:
        try:
            value = normalize_constraint_value(c.value, clock)
        except UnparseableValue as exc:
            raise UnparseableValue(
                f"constraint {c.id!r} of {node.id!r}: {exc.message}",
                attribute=c.id, node_id=node.id,
            ) from None
        constraints.append(replace(c, value=value, units=unit_tag(value)))
    condition = node.condition
    if condition is not None:
        condition = replace(
            condition, value=normalize_constraint_value(condition.value, clock)
        )
    return replace(
        node, attributes=attrs, constraints=tuple(constraints), condition=condition
    )


def normalize_graph(graph: GoalGraph) -> GoalGraph:
    clock = graph.clock
    if clock.tzinfo is None:
        clock = clock.replace(tzinfo=timezone.utc)
    return replace(
        graph,
        clock=clock,
        nodes={nid: normalize_attributes(n, clock) for nid, n in graph.nodes.items()},
    )


def rollup_status(graph: GoalGraph) -> dict[str, Status]:
    """Derived status per goal: leaves as stored, internal nodes from children.

    Internal precedence: conflicted > failed > paused > active > pending, with
    achieved only when every child is achieved.
    """
    out: dict[str, Status] = {}

    def visit(node_id: str) -> Status:
        children = graph.children(node_id)
        if not children:
            out[node_id] = graph.nodes[node_id].status
            return out[node_id]
        child_statuses = [visit(c.id) for c in children]
        if all(s is Status.ACHIEVED for s in child_statuses):
            status = Status.ACHIEVED
        elif any(s is Status.CONFLICTED for s in child_statuses):
            status = Status.CONFLICTED
        elif any(s is Status.FAILED for s in child_statuses):
            status = Status.FAILED
        elif any(s is Status.PAUSED for s in child_statuses):
            status = Status.PAUSED
        elif any(s is Status.ACTIVE for s in child_statuses):
            status = Status.ACTIVE
        else:
            status = Status.PENDING
        out[node_id] = status
        return status

    if graph.root in graph.nodes:
        visit(graph.root)
    return out
