"""Goal graph structure: validation, editing, normalization, status rollup."""

from datetime import datetime, timezone
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from orchvis import catalog
from orchvis.errors import InvariantViolation, UnknownNode, UnparseableValue
from orchvis.goal_model import (
    AttributeSpec,
    Constraint,
    GoalGraph,
    GoalNode,
    Ontology,
    Predicate,
    Relation,
    Severity,
    Status,
    TypeSpec,
    edit_node,
    mirror_constraint,
    normalize_attributes,
    normalize_graph,
    rollup_status,
    validate_graph,
)
from orchvis.values import CmpOp, TypedValue, ValueKind

CLOCK = datetime(2025, 3, 10, 8, 0, tzinfo=timezone.utc)


def node(nid, parent=None, relation=Relation.PARALLEL, **kw):
    kw.setdefault("ontology_type", "probe")
    return GoalNode(id=nid, title=nid.upper(), parent=parent,
                    relation=relation, **kw)


def graph(*nodes, root="r"):
    return GoalGraph(root=root, nodes={n.id: n for n in nodes}, clock=CLOCK)


def leaf_statuses(statuses):
    """Fixed two-level tree: root r with children a, b, c."""
    nodes = [node("r")]
    for nid, status in statuses.items():
        nodes.append(node(nid, parent="r", status=status))
    return rollup_status(graph(*nodes))["r"]


def test_validate_clean_graph():
    g = graph(node("r"), node("a", "r"), node("b", "r"))
    assert validate_graph(g) == []


@pytest.mark.parametrize("mutate,reason", [
    (lambda n: {**n, "a": node("a", "missing")}, "dangling-parent"),
    (lambda n: {**n, "a": node("a", None)}, "orphan-node"),
    (lambda n: {**n, "r": node("r", "a")}, "root-has-parent"),
    (lambda n: {**n, "a": node("a", "r", Relation.CONDITIONAL)},
     "missing-condition"),
])
def test_validate_structural_defects(mutate, reason):
    base = {"r": node("r"), "a": node("a", "r")}
    g = GoalGraph(root="r", nodes=mutate(base), clock=CLOCK)
    assert reason in {i.reason for i in validate_graph(g)}


def test_validate_unknown_root_and_version():
    g = GoalGraph(root="zz", nodes={"a": node("a", None)}, clock=CLOCK)
    reasons = {i.reason for i in validate_graph(g)}
    assert "unknown-root" in reasons
    g2 = GoalGraph(root="r", nodes={"r": node("r")}, clock=CLOCK, version=9)
    assert "unsupported-version" in {i.reason for i in validate_graph(g2)}


def test_validate_parent_cycle_reported_once():
    # a -> b -> a, anchored at the smallest id in the loop
    g = graph(node("r"), node("a", "b"), node("b", "a"))
    issues = [i for i in validate_graph(g) if i.reason == "parent-cycle"]
    assert [i.node_id for i in issues] == ["a"]


def test_validate_condition_rules():
    cond = Predicate(subject="arrive_time", op=CmpOp.LE,
                     value=TypedValue(ValueKind.NUMBER, 1.0, None))
    stray = node("a", "r", condition=cond)
    assert "stray-condition" in {
        i.reason for i in validate_graph(graph(node("r"), stray))
    }
    dangling = node("b", "r", relation=Relation.CONDITIONAL,
                    condition=Predicate(subject="x", op=CmpOp.LE,
                                        value=TypedValue(ValueKind.NUMBER, 1.0, None),
                                        goal="ghost"))
    assert "dangling-condition-reference" in {
        i.reason for i in validate_graph(graph(node("r"), dangling))
    }


def test_validate_constraint_defects():
    dup = Constraint(id="c1", severity=Severity.HARD, subject="x",
                     op=CmpOp.LE, value=TypedValue(ValueKind.NUMBER, 1.0, None))
    mismatched = Constraint(id="c2", severity=Severity.HARD, subject="x",
                            op=CmpOp.WITHIN_INTERVAL,
                            value=TypedValue(ValueKind.NUMBER, 1.0, None))
    empty = Constraint(id="c3", severity=Severity.HARD, subject="",
                       op=CmpOp.LE, value=TypedValue(ValueKind.NUMBER, 1.0, None))
    g = graph(node("r", constraints=(dup, dup, mismatched, empty)))
    reasons = {i.reason for i in validate_graph(g)}
    assert {"duplicate-constraint", "op-value-mismatch", "empty-subject"} <= reasons


def test_validate_against_ontology():
    ontology = Ontology(types={
        "probe": TypeSpec(attributes={
            "destination": AttributeSpec(kind=ValueKind.TEXT, required=True),
            "budget": AttributeSpec(kind=ValueKind.MONEY),
        }),
    })
    ok = node("r", attributes={
        "destination": TypedValue(ValueKind.TEXT, "SFO", None),
    })
    assert validate_graph(graph(ok), ontology) == []

    wrong_kind = node("r", attributes={
        "destination": TypedValue(ValueKind.TEXT, "SFO", None),
        "budget": TypedValue(ValueKind.TEXT, "lots", None),
    })
    assert "kind-mismatch" in {
        i.reason for i in validate_graph(graph(wrong_kind), ontology)
    }
    missing = node("r")
    assert "missing-attribute" in {
        i.reason for i in validate_graph(graph(missing), ontology)
    }
    alien = node("r", attributes={
        "destination": TypedValue(ValueKind.TEXT, "SFO", None),
        "mood": TypedValue(ValueKind.TEXT, "good", None),
    })
    assert "unknown-attribute" in {
        i.reason for i in validate_graph(graph(alien), ontology)
    }
    untyped = GoalNode(id="r", title="R", ontology_type="mystery")
    assert "unknown-ontology-type" in {
        i.reason for i in validate_graph(graph(untyped), ontology)
    }


def test_ontology_inheritance_overlay():
    ontology = Ontology(types={
        "base": TypeSpec(
            attributes={"price": AttributeSpec(kind=ValueKind.MONEY)},
            tools=("book",),
        ),
        "leaf": TypeSpec(
            attributes={"price": AttributeSpec(kind=ValueKind.MONEY, required=True)},
            parent="base",
        ),
    })
    merged = ontology.effective_attributes("leaf")
    assert merged["price"].required  # child declaration wins
    assert ontology.tools_for("leaf") == ("book",)  # tools fall back to parent
    assert ontology.tools_for("base") == ("book",)


def test_mirror_constraint_shape():
    spec = AttributeSpec(kind=ValueKind.MONEY, mirror_subject="price.amount",
                         mirror_op=CmpOp.LE, mirror_severity=Severity.HARD)
    c = mirror_constraint("budget", spec,
                          TypedValue(ValueKind.MONEY, Decimal("400.00"), "USD"))
    assert c.id == "mirror:budget"
    assert c.subject == "price.amount"
    assert c.op is CmpOp.LE
    assert c.units == "USD"


def test_edit_node_applies_patch_and_shares_untouched_nodes():
    ontology = catalog.load_ontology()
    g = graph(node("r", ontology_type="travel.trip"),
              node("a", "r", ontology_type="travel.hotel"))
    edited = edit_node(g, "a", {"title": "Hotel near the venue"}, ontology)
    assert edited.nodes["a"].title == "Hotel near the venue"
    assert edited.nodes["r"] is g.nodes["r"]


def test_edit_node_rejects_invalid_patches():
    ontology = catalog.load_ontology()
    g = graph(node("r", ontology_type="travel.trip"),
              node("a", "r", ontology_type="travel.hotel"))
    with pytest.raises(InvariantViolation) as err:
        edit_node(g, "a", {"parent": "ghost"}, ontology)
    assert any(i.reason == "dangling-parent" for i in err.value.issues)
    with pytest.raises(InvariantViolation):
        edit_node(g, "a", {"color": "red"}, ontology)
    with pytest.raises(UnknownNode):
        edit_node(g, "ghost", {"title": "x"}, ontology)


def test_normalize_attributes_folds_and_is_idempotent():
    raw = node("a", "r", attributes={
        "budget": TypedValue(ValueKind.MONEY, "under $400", None),
        "when": TypedValue(ValueKind.TIMESTAMP, "friday 7pm", None),
    })
    once = normalize_attributes(raw, CLOCK)
    assert once.attributes["budget"].value == Decimal("400.00")
    assert once.attributes["when"].value == datetime(
        2025, 3, 14, 19, 0, tzinfo=timezone.utc)
    assert normalize_attributes(once, CLOCK) == once


def test_normalize_attributes_names_the_offender():
    raw = node("a", "r", attributes={
        "budget": TypedValue(ValueKind.MONEY, "cheap", None),
    })
    with pytest.raises(UnparseableValue) as err:
        normalize_attributes(raw, CLOCK)
    assert err.value.details["node_id"] == "a"
    assert err.value.details["attribute"] == "budget"


def test_normalize_graph_forces_utc_clock():
    g = GoalGraph(root="r", nodes={"r": node("r")},
                  clock=datetime(2025, 3, 10, 8, 0))
    assert normalize_graph(g).clock.tzinfo is timezone.utc


def test_rollup_all_achieved():
    assert leaf_statuses({"a": Status.ACHIEVED, "b": Status.ACHIEVED}) \
        is Status.ACHIEVED


@pytest.mark.parametrize("noisy,expected", [
    (Status.CONFLICTED, Status.CONFLICTED),
    (Status.FAILED, Status.FAILED),
    (Status.PAUSED, Status.PAUSED),
    (Status.ACTIVE, Status.ACTIVE),
    (Status.PENDING, Status.PENDING),
])
def test_rollup_precedence_over_achieved_sibling(noisy, expected):
    assert leaf_statuses({"a": Status.ACHIEVED, "b": noisy}) is expected


STATUS_ORDER = [Status.CONFLICTED, Status.FAILED, Status.PAUSED,
                Status.ACTIVE, Status.PENDING]


@given(st.lists(st.sampled_from(list(Status)), min_size=1, max_size=6))
def test_rollup_matches_precedence_rule(children):
    statuses = {f"g{i}": s for i, s in enumerate(children)}
    if all(s is Status.ACHIEVED for s in children):
        expected = Status.ACHIEVED
    else:
        expected = next(s for s in STATUS_ORDER if s in children)
    assert leaf_statuses(statuses) is expected


@given(st.lists(st.sampled_from(list(Status)), min_size=1, max_size=5),
       st.lists(st.sampled_from(list(Status)), min_size=1, max_size=5))
def test_rollup_is_bottom_up(left, right):
    # root -> (lhs, rhs); each branch folds its own children first
    nodes = [node("root"), node("lhs", "root"), node("rhs", "root")]
    nodes += [node(f"lhs{i}", "lhs", status=s) for i, s in enumerate(left)]
    nodes += [node(f"rhs{i}", "rhs", status=s) for i, s in enumerate(right)]
    g = GoalGraph(root="root", nodes={n.id: n for n in nodes}, clock=CLOCK)
    out = rollup_status(g)
    for branch, statuses in (("lhs", left), ("rhs", right)):
        if all(s is Status.ACHIEVED for s in statuses):
            assert out[branch] is Status.ACHIEVED
        else:
            assert out[branch] is next(s for s in STATUS_ORDER if s in statuses)
    folded = {out["lhs"], out["rhs"]}
    if folded == {Status.ACHIEVED}:
        assert out["root"] is Status.ACHIEVED
    else:
        assert out["root"] is next(s for s in STATUS_ORDER if s in folded)


def test_preorder_and_descendants():
    g = graph(node("r"), node("b", "r"), node("a", "r"), node("a1", "a"))
    assert [n.id for n in g.preorder()] == ["r", "a", "a1", "b"]
    assert g.descendants("a") == {"a", "a1"}
    assert [n.id for n in g.leaves()] == ["a1", "b"]
    assert g.is_leaf("a1") and not g.is_leaf("a")


def test_graph_value_semantics():
    g = graph(node("r"), node("a", "r"))
    g2 = g.with_nodes({"a": node("a", "r", status=Status.ACHIEVED)})
    assert g.nodes["a"].status is Status.PENDING  # original untouched
    assert g2.nodes["a"].status is Status.ACHIEVED
    g3 = g2.without_nodes({"a"})
    assert set(g3.nodes) == {"r"}
    with pytest.raises(UnknownNode):
        g3.node("a")
