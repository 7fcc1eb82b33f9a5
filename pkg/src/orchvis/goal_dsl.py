"""Canonical textual format for goal graphs, plus the edit-reconciliation loop.

The format is a closed JSON grammar: every object admits exactly its declared
keys and nothing else, so the parser doubles as a validator for generated
documents. Serialization is canonical (sorted keys, two-space indent, LF, one
trailing newline, nodes in depth-first order by id), which makes structural
equality checkable as byte equality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime

from .errors import (
    DocumentSchemaError,
    DocumentSyntaxError,
    InvariantViolation,
    RootMismatch,
    UnparseableValue,
    VersionUnsupported,
)
from .goal_model import (
    FORMAT_VERSION,
    Constraint,
    GoalGraph,
    GoalNode,
    MIRROR_PREFIX,
    Ontology,
    Predicate,
    Relation,
    Severity,
    Status,
    mirror_constraint,
    unit_tag,
    validate_graph,
)
from .values import (
    CmpOp,
    ConstraintValue,
    TypedInterval,
    TypedSet,
    TypedValue,
    ValueKind,
    decode_payload,
    format_timestamp,
    normalize_constraint_value,
    normalize_value,
    parse_timestamp,
)

GRAMMAR_SPEC = """\
Goal documents are UTF-8 JSON with this exact shape (no extra keys anywhere):

document   = {"version": 1, "root": <id>, "clock": <RFC 3339 UTC string>,
              "nodes": [node, ...]}
node       = {"id": string, "title": string, "parent": string or null,
              "relation": "sequential" | "parallel" | "conditional",
              "ontology_type": string, "attributes": {name: scalar, ...},
              "constraints": [constraint, ...],
              "status": "pending" | "active" | "achieved" | "failed" |
                        "conflicted" | "paused"}
             plus, only when relation is "conditional":
             "condition": {"goal": string or null, "subject": string,
                           "op": op, "value": value}
constraint = {"id": string, "severity": "hard" | "soft", "subject": string,
              "op": op, "value": value, "units": string or null}
op         = "eq" | "ne" | "lt" | "le" | "gt" | "ge" | "in_set" |
             "contains" | "within_interval"
scalar     = {"kind": "number" | "money" | "timestamp" | "duration" |
              "text" | "flag", "unit": string or null, "value": payload}
value      = scalar
           | {"kind": "interval", "lo": scalar, "hi": scalar}
           | {"kind": "set", "items": [scalar, ...]}

Rules: parent links form a tree rooted at "root"; exactly the root has
parent null; "condition" is present iff relation is "conditional"; money
payloads are decimal strings with an ISO-4217 "unit"; timestamps are RFC
3339 UTC; durations are integer minutes. Nodes appear in depth-first order
from the root with children sorted by id; all object keys sorted; 2-space
indentation.
"""


@dataclass(frozen=True)
class ChangeEntry:
    node_id: str
    field: str
    before: object
    after: object

    def to_obj(self) -> dict:
        return {
            "after": self.after,
            "before": self.before,
            "field": self.field,
            "node_id": self.node_id,
        }


@dataclass(frozen=True)
class RejectedEdit:
    node_id: str
    reason: str

    def to_obj(self) -> dict:
        return {"node_id": self.node_id, "reason": self.reason}


@dataclass(frozen=True)
class RepairLoopReport:
    reconciled: GoalGraph
    changes_applied: list[ChangeEntry]
    rejected: list[RejectedEdit]


def _check_keys(obj: dict, required: set[str], optional: set[str], path: str) -> None:
    if not isinstance(obj, dict):
        raise DocumentSchemaError(
            f"expected object at {path}", path=path, reason="not-an-object"
        )
    keys = set(obj)
    missing = required - keys
    if missing:
        raise DocumentSchemaError(
            f"missing keys at {path}: {sorted(missing)}",
            path=path, reason=f"missing-key:{sorted(missing)[0]}",
        )
    extra = keys - required - optional
    if extra:
        raise DocumentSchemaError(
            f"unknown keys at {path}: {sorted(extra)}",
            path=path, reason=f"unknown-key:{sorted(extra)[0]}",
        )


def _string(obj: dict, key: str, path: str, nullable: bool = False) -> str | None:
    value = obj[key]
    if value is None and nullable:
        return None
    if not isinstance(value, str):
        raise DocumentSchemaError(
            f"{path}/{key} must be a string", path=f"{path}/{key}", reason="not-a-string"
        )
    return value


def _enum(cls, raw: object, path: str):
    try:
        return cls(raw)
    except (ValueError, TypeError):
        raise DocumentSchemaError(
            f"{path} has no variant {raw!r}", path=path, reason="bad-enum"
        ) from None


def _scalar_from_obj(obj: dict, path: str) -> TypedValue:
    _check_keys(obj, {"kind", "unit", "value"}, set(), path)
    kind = _enum(ValueKind, obj["kind"], f"{path}/kind")
    unit = _string(obj, "unit", path, nullable=True)
    payload = obj["value"]
    if isinstance(payload, (dict, list)):
        raise DocumentSchemaError(
            f"{path}/value must be a JSON scalar", path=f"{path}/value",
            reason="not-a-scalar",
        )
    return TypedValue(kind=kind, value=decode_payload(kind, payload), unit=unit)


def _value_from_obj(obj: dict, path: str) -> ConstraintValue:
    if not isinstance(obj, dict):
        raise DocumentSchemaError(
            f"expected value object at {path}", path=path, reason="not-an-object"
        )
    if obj.get("kind") == "interval":
        _check_keys(obj, {"kind", "lo", "hi"}, set(), path)
        return TypedInterval(
            lo=_scalar_from_obj(obj["lo"], f"{path}/lo"),
            hi=_scalar_from_obj(obj["hi"], f"{path}/hi"),
        )
    if obj.get("kind") == "set":
        _check_keys(obj, {"kind", "items"}, set(), path)
        items = obj["items"]
        if not isinstance(items, list):
            raise DocumentSchemaError(
                f"{path}/items must be an array", path=f"{path}/items",
                reason="not-an-array",
            )
        return TypedSet(
            items=tuple(
                _scalar_from_obj(it, f"{path}/items/{i}") for i, it in enumerate(items)
            )
        )
    return _scalar_from_obj(obj, path)


def _constraint_from_obj(obj: dict, path: str) -> Constraint:
    _check_keys(obj, {"id", "severity", "subject", "op", "value", "units"}, set(), path)
    return Constraint(
        id=_string(obj, "id", path),
        severity=_enum(Severity, obj["severity"], f"{path}/severity"),
        subject=_string(obj, "subject", path),
        op=_enum(CmpOp, obj["op"], f"{path}/op"),
        value=_value_from_obj(obj["value"], f"{path}/value"),
        units=_string(obj, "units", path, nullable=True),
    )


def _predicate_from_obj(obj: dict, path: str) -> Predicate:
    _check_keys(obj, {"goal", "subject", "op", "value"}, set(), path)
    return Predicate(
        goal=_string(obj, "goal", path, nullable=True),
        subject=_string(obj, "subject", path),
        op=_enum(CmpOp, obj["op"], f"{path}/op"),
        value=_value_from_obj(obj["value"], f"{path}/value"),
    )


_NODE_REQUIRED = {
    "id", "title", "parent", "relation", "ontology_type",
    "attributes", "constraints", "status",
}


def _node_from_obj(obj: dict, path: str) -> GoalNode:
    _check_keys(obj, _NODE_REQUIRED, {"condition"}, path)
    attributes_obj = obj["attributes"]
    if not isinstance(attributes_obj, dict):
        raise DocumentSchemaError(
            f"{path}/attributes must be an object", path=f"{path}/attributes",
            reason="not-an-object",
        )
    attributes = {
        name: _scalar_from_obj(v, f"{path}/attributes/{name}")
        for name, v in attributes_obj.items()
    }
    constraints_obj = obj["constraints"]
    if not isinstance(constraints_obj, list):
        raise DocumentSchemaError(
            f"{path}/constraints must be an array", path=f"{path}/constraints",
            reason="not-an-array",
        )
    constraints = tuple(
        _constraint_from_obj(c, f"{path}/constraints/{i}")
        for i, c in enumerate(constraints_obj)
    )
    condition = None
    if "condition" in obj:
        condition = _predicate_from_obj(obj["condition"], f"{path}/condition")
    return GoalNode(
        id=_string(obj, "id", path),
        title=_string(obj, "title", path),
        parent=_string(obj, "parent", path, nullable=True),
        relation=_enum(Relation, obj["relation"], f"{path}/relation"),
        ontology_type=_string(obj, "ontology_type", path),
        attributes=attributes,
        constraints=constraints,
        condition=condition,
        status=_enum(Status, obj["status"], f"{path}/status"),
    )


def parse(document: str, ontology: Ontology | None = None) -> GoalGraph:
    """Parse a goal document; the result always passes validate_graph.

    Unknown keys are rejected everywhere (closed grammar). Ontology checks run
    only when an ontology is supplied.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        top = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(
            f"invalid document syntax: {exc.msg} at offset {exc.pos}",
            position=exc.pos, expected=exc.msg,
        ) from None
    _check_keys(top, {"version", "root", "clock", "nodes"}, set(), "/")
    if top["version"] != FORMAT_VERSION:
        raise VersionUnsupported(
            f"document version {top['version']!r} is not supported",
            version=top["version"],
        )
    root = _string(top, "root", "/")
    clock_raw = _string(top, "clock", "/")
    try:
        clock = parse_timestamp(clock_raw)
    except UnparseableValue:
        raise DocumentSchemaError(
            "clock must be an RFC 3339 timestamp", path="/clock", reason="bad-timestamp"
        ) from None
    nodes_obj = top["nodes"]
    if not isinstance(nodes_obj, list):
        raise DocumentSchemaError(
            "/nodes must be an array", path="/nodes", reason="not-an-array"
        )
    nodes: dict[str, GoalNode] = {}
    for i, node_obj in enumerate(nodes_obj):
        node = _node_from_obj(node_obj, f"/nodes/{i}")
        if node.id in nodes:
            raise DocumentSchemaError(
                f"duplicate node id {node.id!r}", path=f"/nodes/{i}/id",
                reason="duplicate-node-id",
            )
        nodes[node.id] = node
    graph = GoalGraph(root=root, nodes=nodes, clock=clock)
    issues = validate_graph(graph, ontology)
    if issues:
        first = issues[0]
        reason = "dangling-root" if first.reason == "unknown-root" else first.reason
        raise DocumentSchemaError(
            f"document violates graph invariants: {reason} at node "
            f"{first.node_id!r} field {first.field!r}",
            path=f"/nodes/{first.node_id}/{first.field}", reason=reason,
        )
    return graph


def node_to_obj(node: GoalNode) -> dict:
    obj = {
        "attributes": {name: v.to_obj() for name, v in node.attributes.items()},
        "constraints": [c.to_obj() for c in node.constraints],
        "id": node.id,
        "ontology_type": node.ontology_type,
        "parent": node.parent,
        "relation": node.relation.value,
        "status": node.status.value,
        "title": node.title,
    }
    if node.condition is not None:
        obj["condition"] = node.condition.to_obj()
    return obj


def graph_to_obj(graph: GoalGraph) -> dict:
    return {
        "clock": format_timestamp(graph.clock),
        "nodes": [node_to_obj(n) for n in graph.preorder()],
        "root": graph.root,
        "version": graph.version,
    }


def serialize(graph: GoalGraph, ontology: Ontology | None = None) -> str:
    """Canonical document text; structurally equal graphs yield equal bytes."""
    issues = validate_graph(graph, ontology)
    if issues:
        raise InvariantViolation(
            "cannot serialize an invalid graph", issues=issues
        )
    return canonical_json(graph_to_obj(graph))


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


_SIMPLE_FIELDS = ("title", "parent", "ontology_type", "status")


def _field_snapshot(node: GoalNode, field_name: str):
    value = getattr(node, field_name)
    if field_name == "condition":
        return None if value is None else value.to_obj()
    if isinstance(value, (Relation, Status)):
        return value.value
    return value


def reconcile(
    internal: GoalGraph, user_edited: GoalGraph, ontology: Ontology | None = None
) -> RepairLoopReport:
    """Merge user edits into the internal graph, edit by edit.

    Valid edits win; edits that break validation are rejected with the issue's
    reason code. Constraints mirroring an attribute (ids prefixed "mirror:")
    are system managed: they are regenerated from the merged attributes, and
    direct user edits to them are rejected. The session clock and format
    version always come from the internal graph.
    """
    if internal.root != user_edited.root:
        raise RootMismatch(
            f"graphs disagree on root: {internal.root!r} vs {user_edited.root!r}"
        )
    working = internal
    changes: list[ChangeEntry] = []
    rejected: list[RejectedEdit] = []

    def try_graph(candidate: GoalGraph, node_id: str) -> bool:
        issues = validate_graph(candidate, ontology)
        if issues:
            rejected.append(RejectedEdit(node_id, issues[0].reason))
            return False
        return True

    common = sorted(set(internal.nodes) & set(user_edited.nodes))
    added = sorted(set(user_edited.nodes) - set(internal.nodes))
    removed = sorted(set(internal.nodes) - set(user_edited.nodes))

    # additions first so edits may reparent onto new nodes; a fixpoint loop
    # lets an added child land after its added parent regardless of id order
    pending = list(added)
    while pending:
        progressed = False
        still: list[str] = []
        for node_id in pending:
            node = user_edited.nodes[node_id]
            candidate = working.with_nodes({node_id: node})
            if not validate_graph(candidate, ontology):
                working = candidate
                changes.append(ChangeEntry(node_id, "node", None, node_to_obj(node)))
                progressed = True
            else:
                still.append(node_id)
        if not progressed:
            for node_id in still:
                candidate = working.with_nodes({node_id: user_edited.nodes[node_id]})
                try_graph(candidate, node_id)
            break
        pending = still

    for node_id in common:
        base = working.nodes[node_id]
        edited = user_edited.nodes[node_id]

        for field_name in _SIMPLE_FIELDS:
            before = _field_snapshot(base, field_name)
            after = _field_snapshot(edited, field_name)
            if before == after:
                continue
            patched = replace(
                working.nodes[node_id], **{field_name: getattr(edited, field_name)}
            )
            candidate = working.with_nodes({node_id: patched})
            if try_graph(candidate, node_id):
                working = candidate
                changes.append(ChangeEntry(node_id, field_name, before, after))

        # relation and condition only validate together, so merge as a unit
        rel_before = _field_snapshot(working.nodes[node_id], "relation")
        rel_after = _field_snapshot(edited, "relation")
        cond_before = _field_snapshot(working.nodes[node_id], "condition")
        cond_after = _field_snapshot(edited, "condition")
        if rel_before != rel_after or cond_before != cond_after:
            patched = replace(
                working.nodes[node_id],
                relation=edited.relation, condition=edited.condition,
            )
            candidate = working.with_nodes({node_id: patched})
            if try_graph(candidate, node_id):
                working = candidate
                if rel_before != rel_after:
                    changes.append(
                        ChangeEntry(node_id, "relation", rel_before, rel_after)
                    )
                if cond_before != cond_after:
                    changes.append(
                        ChangeEntry(node_id, "condition", cond_before, cond_after)
                    )

        working, attr_changes = _merge_attributes(
            working, node_id, edited, ontology, rejected
        )
        changes.extend(attr_changes)
        working, con_changes = _merge_constraints(
            working, node_id, edited, ontology, rejected, try_graph
        )
        changes.extend(con_changes)

    for node_id in removed:
        if node_id not in working.nodes:
            continue
        before = node_to_obj(working.nodes[node_id])
        candidate = working.without_nodes(working.descendants(node_id))
        if try_graph(candidate, node_id):
            working = candidate
            changes.append(ChangeEntry(node_id, "node", before, None))

    working, mirror_changes = regenerate_mirrors(working, ontology)
    changes.extend(mirror_changes)

    return RepairLoopReport(
        reconciled=working, changes_applied=changes, rejected=rejected
    )


def _merge_attributes(working, node_id, edited, ontology, rejected):
    changes: list[ChangeEntry] = []
    base = working.nodes[node_id]
    names = sorted(set(base.attributes) | set(edited.attributes))
    for name in names:
        before = base.attributes.get(name)
        after_raw = edited.attributes.get(name)
        if before == after_raw:
            continue
        after = after_raw
        if after is not None:
            try:
                after = normalize_value(after_raw, working.clock)
            except UnparseableValue:
                rejected.append(RejectedEdit(node_id, "unparseable-value"))
                continue
            if before == after:
                continue
        merged_attrs = dict(working.nodes[node_id].attributes)
        if after is None:
            merged_attrs.pop(name, None)
        else:
            merged_attrs[name] = after
        candidate = working.with_nodes(
            {node_id: replace(working.nodes[node_id], attributes=merged_attrs)}
        )
        issues = validate_graph(candidate, ontology)
        if issues:
            rejected.append(RejectedEdit(node_id, issues[0].reason))
            continue
        working = candidate
        changes.append(ChangeEntry(
            node_id, f"attributes.{name}",
            None if before is None else before.to_obj(),
            None if after is None else after.to_obj(),
        ))
    return working, changes


def _expected_mirror(working, node_id, cid, ontology):
    if ontology is None:
        return None
    node = working.nodes[node_id]
    attr = cid[len(MIRROR_PREFIX):]
    spec = ontology.effective_attributes(node.ontology_type).get(attr)
    if spec is None or not spec.mirrored or attr not in node.attributes:
        return None
    return mirror_constraint(attr, spec, node.attributes[attr])


def _merge_constraints(working, node_id, edited, ontology, rejected, try_graph):
    changes: list[ChangeEntry] = []
    base = working.nodes[node_id]
    base_by_id = {c.id: c for c in base.constraints}
    edited_by_id = {c.id: c for c in edited.constraints}
    for cid in sorted(set(base_by_id) | set(edited_by_id)):
        before = base_by_id.get(cid)
        after = edited_by_id.get(cid)
        if before == after:
            continue
        if after is not None:
            try:
                value = normalize_constraint_value(after.value, working.clock)
            except UnparseableValue:
                rejected.append(RejectedEdit(node_id, "unparseable-value"))
                continue
            after = replace(after, value=value, units=unit_tag(value))
            if before == after:
                continue
        if cid.startswith(MIRROR_PREFIX) and ontology is not None:
            # system managed: silently defer to regeneration when the edit
            # agrees with it, reject when it fights it
            if after != _expected_mirror(working, node_id, cid, ontology):
                rejected.append(RejectedEdit(node_id, "mirrored-constraint"))
            continue
        current = working.nodes[node_id]
        kept = [c for c in current.constraints if c.id != cid]
        if after is not None:
            kept.append(after)
        candidate = working.with_nodes(
            {node_id: replace(current, constraints=tuple(kept))}
        )
        if try_graph(candidate, node_id):
            working = candidate
            changes.append(ChangeEntry(
                node_id, f"constraints.{cid}",
                None if before is None else before.to_obj(),
                None if after is None else after.to_obj(),
            ))
    return working, changes


def regenerate_mirrors(working: GoalGraph, ontology: Ontology | None):
    """Re-derive mirror constraints from attributes so both stay in sync."""
    changes: list[ChangeEntry] = []
    if ontology is None:
        return working, changes
    for node_id in sorted(working.nodes):
        node = working.nodes[node_id]
        schema = ontology.effective_attributes(node.ontology_type)
        expected: dict[str, Constraint] = {}
        for attr, spec in schema.items():
            if spec.mirrored and attr in node.attributes:
                expected[f"{MIRROR_PREFIX}{attr}"] = mirror_constraint(
                    attr, spec, node.attributes[attr]
                )
        current = {c.id: c for c in node.constraints if c.id.startswith(MIRROR_PREFIX)}
        if current == expected:
            continue
        kept = [c for c in node.constraints if not c.id.startswith(MIRROR_PREFIX)]
        rebuilt = tuple(kept) + tuple(expected[k] for k in sorted(expected))
        working = working.with_nodes({node_id: replace(node, constraints=rebuilt)})
        for cid in sorted(set(current) | set(expected)):
            before = current.get(cid)
            after = expected.get(cid)
            if before != after:
                changes.append(ChangeEntry(
                    node_id, f"constraints.{cid}",
                    None if before is None else before.to_obj(),
                    None if after is None else after.to_obj(),
                ))
    return working, changes
