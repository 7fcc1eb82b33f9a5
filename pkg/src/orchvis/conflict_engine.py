"""Inter-goal conflict detection, ranked repair candidates, apply deltas.

Three conflict kinds are detected:

    temporal_overlap      two exclusive-attention evidence records whose
                          attention intervals overlap with positive duration
    budget_exceeded       descendants' price sum exceeds an ancestor's hard
                          upper-bound money constraint on price.amount
    static_contradiction  plan-time: for a pair of exclusive-attention goals
                          without evidence yet, every hard-feasible fixture
                          row pairing overlaps, so no execution can succeed

Repairs come from a closed move set (choose_option, relax_soft,
reassign_agent, drop_goal). Candidates that do not eliminate their conflict
in a simulated application are discarded; survivors are ranked by predicted
progress, then risk, then cost delta, then candidate id.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from decimal import Decimal
from enum import Enum
from itertools import combinations

from .agent_registry import (
    EvidenceRecord,
    FixtureRow,
    PRICE_FIELD,
    fields_interval,
    intervals_overlap,
    perform_invoke,
    rank_rows,
)
from .errors import InapplicableMove, NoRepairFound, StaleCandidate
from .goal_model import (
    GoalGraph,
    GoalNode,
    Ontology,
    Severity,
    Status,
    rollup_status,
)
from .planner import TaskGraph, TaskState, replan_subgraph, task_id_for
from .values import CmpOp, TypedValue, ValueKind
from .verifier import VerifierConfig, evaluate

OPTION_CAP = 5

_UPPER_OPS = (CmpOp.LE, CmpOp.LT)
_LOWER_OPS = (CmpOp.GE, CmpOp.GT)
_NUMERIC_KINDS = (ValueKind.NUMBER, ValueKind.MONEY, ValueKind.DURATION)


class ConflictKind(str, Enum):
    TEMPORAL_OVERLAP = "temporal_overlap"
    BUDGET_EXCEEDED = "budget_exceeded"
    STATIC_CONTRADICTION = "static_contradiction"


@dataclass(frozen=True)
class ConflictRecord:
    id: str
    kind: ConflictKind
    involved_goal_ids: tuple[str, ...]
    narrative: str
    evidence_refs: tuple[str, ...]
    detected_at: int

    def to_obj(self) -> dict:
        return {
            "detected_at": self.detected_at,
            "evidence_refs": list(self.evidence_refs),
            "id": self.id,
            "involved_goal_ids": list(self.involved_goal_ids),
            "kind": self.kind.value,
            "narrative": self.narrative,
        }

    @staticmethod
    def from_obj(obj: dict) -> "ConflictRecord":
        return ConflictRecord(
            id=obj["id"],
            kind=ConflictKind(obj["kind"]),
            involved_goal_ids=tuple(obj["involved_goal_ids"]),
            narrative=obj["narrative"],
            evidence_refs=tuple(obj.get("evidence_refs", [])),
            detected_at=int(obj.get("detected_at", 0)),
        )


class MoveKind(str, Enum):
    CHOOSE_OPTION = "choose_option"
    RELAX_SOFT = "relax_soft"
    REASSIGN_AGENT = "reassign_agent"
    DROP_GOAL = "drop_goal"


@dataclass(frozen=True)
class RepairMove:
    kind: MoveKind
    goal_id: str | None = None
    option_index: int | None = None
    constraint_id: str | None = None
    task_id: str | None = None
    agent_id: str | None = None

    def to_obj(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "constraint_id": self.constraint_id,
            "goal_id": self.goal_id,
            "kind": self.kind.value,
            "option_index": self.option_index,
            "task_id": self.task_id,
        }

    @staticmethod
    def from_obj(obj: dict) -> "RepairMove":
        return RepairMove(
            kind=MoveKind(obj["kind"]),
            goal_id=obj.get("goal_id"),
            option_index=obj.get("option_index"),
            constraint_id=obj.get("constraint_id"),
            task_id=obj.get("task_id"),
            agent_id=obj.get("agent_id"),
        )


@dataclass(frozen=True)
class PredictedOutcome:
    progress: float
    risk: float
    cost_delta: TypedValue  # money

    def to_obj(self) -> dict:
        return {
            "cost_delta": self.cost_delta.to_obj(),
            "progress": self.progress,
            "risk": self.risk,
        }

    @staticmethod
    def from_obj(obj: dict) -> "PredictedOutcome":
        cd = obj["cost_delta"]
        return PredictedOutcome(
            progress=float(obj["progress"]),
            risk=float(obj["risk"]),
            cost_delta=TypedValue(
                ValueKind.MONEY, Decimal(cd["value"]), cd.get("unit")
            ),
        )


@dataclass(frozen=True)
class RepairCandidate:
    id: str
    conflict_id: str
    moves: tuple[RepairMove, ...]
    predicted: PredictedOutcome
    rationale: str

    def to_obj(self) -> dict:
        return {
            "conflict_id": self.conflict_id,
            "id": self.id,
            "moves": [m.to_obj() for m in self.moves],
            "predicted": self.predicted.to_obj(),
            "rationale": self.rationale,
        }

    @staticmethod
    def from_obj(obj: dict) -> "RepairCandidate":
        return RepairCandidate(
            id=obj["id"],
            conflict_id=obj["conflict_id"],
            moves=tuple(RepairMove.from_obj(m) for m in obj["moves"]),
            predicted=PredictedOutcome.from_obj(obj["predicted"]),
            rationale=obj["rationale"],
        )


@dataclass(frozen=True)
class Snapshot:
    """The slice of session state the analysis functions read."""

    graph: GoalGraph
    evidence: dict[str, EvidenceRecord]
    scenario: object = None
    task_graph: TaskGraph | None = None
    seq: int = 0

    @staticmethod
    def of(state) -> "Snapshot":
        return Snapshot(
            graph=state.graph,
            evidence=dict(state.evidence),
            scenario=state.scenario,
            task_graph=state.task_graph,
            seq=state.seq,
        )


def _fmt_span(span) -> str:
    from .values import format_timestamp

    return f"{format_timestamp(span[0])} to {format_timestamp(span[1])}"


def _title(graph: GoalGraph, goal_id: str) -> str:
    node = graph.nodes.get(goal_id)
    return node.title if node else goal_id


def detect(state, config: VerifierConfig) -> list[ConflictRecord]:
    """All conflicts present in the state, ordered by (kind, involved ids)."""
    graph: GoalGraph = state.graph
    evidence: dict[str, EvidenceRecord] = dict(state.evidence)
    records: list[ConflictRecord] = []

    exclusive = sorted(
        (gid, ev) for gid, ev in evidence.items()
        if ev.exclusive_attention and ev.interval() is not None
        and gid in graph.nodes
    )
    for (gid_a, ev_a), (gid_b, ev_b) in combinations(exclusive, 2):
        if intervals_overlap(ev_a.interval(), ev_b.interval()):
            pair = tuple(sorted((gid_a, gid_b)))
            records.append(ConflictRecord(
                id=f"cf-temporal_overlap-{pair[0]}-{pair[1]}",
                kind=ConflictKind.TEMPORAL_OVERLAP,
                involved_goal_ids=pair,
                narrative=(
                    f"{_title(graph, pair[0])} and {_title(graph, pair[1])} "
                    f"demand attention at the same time "
                    f"({_fmt_span(evidence[pair[0]].interval())} overlaps "
                    f"{_fmt_span(evidence[pair[1]].interval())})."
                ),
                evidence_refs=tuple(sorted((ev_a.id, ev_b.id))),
                detected_at=state.seq,
            ))

    for node in graph.preorder():
        if graph.is_leaf(node.id):
            continue
        for c in node.hard_constraints():
            if c.subject != PRICE_FIELD or c.op not in _UPPER_OPS:
                continue
            if not isinstance(c.value, TypedValue) or c.value.kind is not ValueKind.MONEY:
                continue
            bound = c.value.value
            total = Decimal(0)
            contributors: list[str] = []
            refs: list[str] = []
            for gid in sorted(graph.descendants(node.id) - {node.id}):
                ev = evidence.get(gid)
                price = ev.fields.get(PRICE_FIELD) if ev else None
                if price is not None and price.unit == c.value.unit:
                    total += price.value
                    contributors.append(gid)
                    refs.append(ev.id)
            exceeded = total > bound if c.op is CmpOp.LE else total >= bound
            if contributors and exceeded:
                records.append(ConflictRecord(
                    id=f"cf-budget_exceeded-{node.id}",
                    kind=ConflictKind.BUDGET_EXCEEDED,
                    involved_goal_ids=(node.id, *contributors),
                    narrative=(
                        f"Spending under {_title(graph, node.id)} totals "
                        f"{total} {c.value.unit}, over the {bound} "
                        f"{c.value.unit} limit."
                    ),
                    evidence_refs=tuple(refs),
                    detected_at=state.seq,
                ))

    records.extend(_detect_static(state))
    records.sort(key=lambda r: (r.kind.value, r.involved_goal_ids))
    return records


def _detect_static(state) -> list[ConflictRecord]:
    graph: GoalGraph = state.graph
    scenario = state.scenario
    if scenario is None:
        return []
    tables = scenario.tables
    ontology = getattr(scenario, "ontology", None)
    records: list[ConflictRecord] = []

    candidates: list[tuple[str, list[FixtureRow]]] = []
    for node in graph.leaves():
        if node.id in state.evidence:
            continue
        table = tables.get(node.ontology_type)
        if table is None:
            continue
        exclusive = (
            ontology.exclusive(node.ontology_type)
            if ontology is not None
            else _table_has_interval(table)
        )
        if not exclusive:
            continue
        rows = [r for r in rank_rows(node, table) if fields_interval(r.fields)]
        if rows:
            candidates.append((node.id, rows))

    for (gid_a, rows_a), (gid_b, rows_b) in combinations(sorted(candidates), 2):
        all_overlap = all(
            intervals_overlap(fields_interval(ra.fields), fields_interval(rb.fields))
            for ra in rows_a
            for rb in rows_b
        )
        if all_overlap:
            records.append(ConflictRecord(
                id=f"cf-static_contradiction-{gid_a}-{gid_b}",
                kind=ConflictKind.STATIC_CONTRADICTION,
                involved_goal_ids=(gid_a, gid_b),
                narrative=(
                    f"No way to schedule both {_title(graph, gid_a)} and "
                    f"{_title(graph, gid_b)}: every feasible pairing of "
                    f"candidates overlaps in time."
                ),
                evidence_refs=(),
                detected_at=state.seq,
            ))
    return records


def _table_has_interval(table) -> bool:
    cols = set(table.columns)
    return bool(cols.intersection(("depart_time", "start_time"))
                and cols.intersection(("arrive_time", "end_time")))


def _eligible_agents(task, registry):
    return [
        m for m in registry.agents()
        if task.required_tools <= m.tools and task.ontology_type in m.input_types
    ]


def propose_repairs(
    conflict: ConflictRecord,
    state,
    registry,
    config: VerifierConfig,
    ontology: Ontology | None = None,
) -> list[RepairCandidate]:
    """Ranked candidates from the closed move set; each one, when applied,
    makes the target conflict undetectable."""
    current = {c.id for c in detect(state, config)}
    if conflict.id not in current:
        raise StaleCandidate(
            f"conflict {conflict.id!r} is no longer present", conflict_id=conflict.id
        )

    moves_sets: list[tuple[RepairMove, ...]] = []
    for gid in conflict.involved_goal_ids:
        ev = state.evidence.get(gid)
        if ev is None:
            continue
        for idx in range(len(ev.options)):
            moves_sets.append((RepairMove(
                kind=MoveKind.CHOOSE_OPTION, goal_id=gid, option_index=idx
            ),))
    for gid in conflict.involved_goal_ids:
        node = state.graph.nodes.get(gid)
        if node is None:
            continue
        for c in node.soft_constraints():
            moves_sets.append((RepairMove(
                kind=MoveKind.RELAX_SOFT, goal_id=gid, constraint_id=c.id
            ),))
    if state.task_graph is not None:
        for gid in conflict.involved_goal_ids:
            task = state.task_graph.for_goal(gid)
            if task is None or task.agent_id is None or gid not in state.evidence:
                continue
            for matrix in _eligible_agents(task, registry):
                if matrix.agent_id == task.agent_id:
                    continue
                simulated = _simulate_reassign(state, gid, matrix.agent_id, registry,
                                               ontology)
                if simulated is None:
                    continue
                if simulated.fields == state.evidence[gid].fields:
                    continue  # same selection, nothing would change
                moves_sets.append((RepairMove(
                    kind=MoveKind.REASSIGN_AGENT, goal_id=gid,
                    task_id=task.id, agent_id=matrix.agent_id,
                ),))
    for gid in conflict.involved_goal_ids:
        node = state.graph.nodes.get(gid)
        if node is not None and not node.hard_constraints():
            moves_sets.append((RepairMove(kind=MoveKind.DROP_GOAL, goal_id=gid),))

    candidates: list[RepairCandidate] = []
    for n, moves in enumerate(moves_sets, start=1):
        try:
            preview = _preview(state, moves, registry, ontology)
        except InapplicableMove:
            continue
        still = {c.id for c in detect(preview, config)}
        if conflict.id in still:
            continue
        predicted = _predict_on(state, preview, config)
        candidates.append(RepairCandidate(
            id=f"rc-{conflict.id}-{n}",
            conflict_id=conflict.id,
            moves=moves,
            predicted=predicted,
            rationale=_rationale(state.graph, moves),
        ))

    if not candidates:
        raise NoRepairFound(
            f"no closed-move repair eliminates {conflict.id!r}; "
            f"the goals need manual editing",
            conflict_id=conflict.id,
        )
    candidates.sort(key=lambda c: (
        -c.predicted.progress, c.predicted.risk, c.predicted.cost_delta.value, c.id
    ))
    return candidates


def _rationale(graph: GoalGraph, moves: tuple[RepairMove, ...]) -> str:
    parts = []
    for m in moves:
        if m.kind is MoveKind.CHOOSE_OPTION:
            parts.append(
                f"Switch {_title(graph, m.goal_id)} to alternative "
                f"#{m.option_index + 1} the agent already found"
            )
        elif m.kind is MoveKind.RELAX_SOFT:
            parts.append(
                f"Relax the soft preference {m.constraint_id} on "
                f"{_title(graph, m.goal_id)}"
            )
        elif m.kind is MoveKind.REASSIGN_AGENT:
            parts.append(
                f"Reroute {_title(graph, m.goal_id)} to agent {m.agent_id} "
                f"and redo the call"
            )
        else:
            parts.append(f"Drop the optional goal {_title(graph, m.goal_id)}")
    return "; ".join(parts) + "."


def _simulate_reassign(state, goal_id, agent_id, registry, ontology):
    """What the replacement agent would return for this goal, or None."""
    if state.scenario is None:
        return None
    goal = state.graph.nodes.get(goal_id)
    if goal is None:
        return None
    others = tuple(
        ev for gid, ev in sorted(state.evidence.items()) if gid != goal_id
    )
    try:
        return perform_invoke(
            agent_id,
            registry.call_count(agent_id) + 1,
            goal,
            state.scenario.tables,
            state.scenario.faults,
            evidence=others,
            ontology=ontology,
            seed=getattr(state, "seed", 0),
        )
    except Exception:
        return None


def _preview(state, moves: tuple[RepairMove, ...], registry, ontology) -> Snapshot:
    """Clone-and-apply for re-checking and prediction; raises InapplicableMove."""
    graph: GoalGraph = state.graph
    evidence = dict(state.evidence)
    for m in moves:
        if m.kind is MoveKind.CHOOSE_OPTION:
            ev = evidence.get(m.goal_id)
            if ev is None or not 0 <= (m.option_index or 0) < len(ev.options):
                raise InapplicableMove(
                    f"goal {m.goal_id!r} has no option #{m.option_index}"
                )
            evidence[m.goal_id] = swap_option(ev, m.option_index)
        elif m.kind is MoveKind.RELAX_SOFT:
            node = graph.nodes.get(m.goal_id or "")
            target = next(
                (c for c in (node.constraints if node else ())
                 if c.id == m.constraint_id),
                None,
            )
            if target is None or target.severity is not Severity.SOFT:
                raise InapplicableMove(
                    f"no soft constraint {m.constraint_id!r} on {m.goal_id!r}"
                )
            graph = graph.with_nodes({node.id: replace(
                node,
                constraints=tuple(c for c in node.constraints if c.id != m.constraint_id),
            )})
        elif m.kind is MoveKind.REASSIGN_AGENT:
            simulated = _simulate_reassign(state, m.goal_id, m.agent_id, registry,
                                           ontology)
            if simulated is None:
                raise InapplicableMove(
                    f"cannot simulate agent {m.agent_id!r} on {m.goal_id!r}"
                )
            evidence[m.goal_id] = simulated
        elif m.kind is MoveKind.DROP_GOAL:
            node = graph.nodes.get(m.goal_id or "")
            if node is None:
                raise InapplicableMove(f"no goal {m.goal_id!r}")
            if node.hard_constraints():
                raise InapplicableMove(
                    f"goal {m.goal_id!r} has hard constraints and cannot be dropped"
                )
            dropped = graph.descendants(node.id)
            graph = graph.without_nodes(dropped)
            for gid in dropped:
                evidence.pop(gid, None)
    return Snapshot(graph=graph, evidence=evidence,
                    scenario=state.scenario, seq=state.seq)


def swap_option(ev: EvidenceRecord, index: int) -> EvidenceRecord:
    """Promote option #index to the record's fields; old fields join options."""
    chosen = ev.options[index]
    rest = tuple(o for i, o in enumerate(ev.options) if i != index)
    return replace(
        ev,
        fields=dict(chosen),
        options=(rest + (dict(ev.fields),))[:OPTION_CAP],
    )


def predict(
    candidate_moves: tuple[RepairMove, ...],
    state,
    config: VerifierConfig,
    registry=None,
    ontology: Ontology | None = None,
) -> PredictedOutcome:
    """Projected (progress, risk, cost_delta) after applying the moves."""
    preview = _preview(state, candidate_moves, registry, ontology)
    return _predict_on(state, preview, config)


def _predict_on(state, preview: Snapshot, config: VerifierConfig) -> PredictedOutcome:
    graph = preview.graph
    updates = {}
    for gid, ev in preview.evidence.items():
        node = graph.nodes.get(gid)
        if node is None:
            continue
        report = evaluate(node, ev, config)
        status = Status.ACHIEVED if report.achieved else node.status
        updates[gid] = replace(node, status=status)
    statuses = rollup_status(graph.with_nodes(updates))
    total = len(statuses)
    achieved = sum(1 for s in statuses.values() if s is Status.ACHIEVED)
    progress = achieved / total if total else 0.0

    at_risk = 0
    denom = 0
    for gid, ev in sorted(preview.evidence.items()):
        node = graph.nodes.get(gid)
        if node is None:
            continue
        for c in node.hard_constraints():
            if c.op not in _UPPER_OPS + _LOWER_OPS:
                continue
            if not isinstance(c.value, TypedValue) or c.value.kind not in _NUMERIC_KINDS:
                continue
            denom += 1
            observed = ev.fields.get(c.subject)
            if observed is None or observed.kind is not c.value.kind:
                at_risk += 1
                continue
            bound = c.value.value
            margin = abs(bound) * Decimal(str(config.risk_margin)) \
                if isinstance(bound, Decimal) else abs(bound) * config.risk_margin
            if c.op in _UPPER_OPS:
                risky = observed.value >= bound - margin
            else:
                risky = observed.value <= bound + margin
            at_risk += 1 if risky else 0
    risk = at_risk / denom if denom else 0.0

    delta = Decimal(0)
    unit = "USD"
    goal_ids = set(state.evidence) | set(preview.evidence)
    for gid in sorted(goal_ids):
        old = state.evidence.get(gid)
        new = preview.evidence.get(gid)
        paths = set(old.fields if old else ()) | set(new.fields if new else ())
        for path in sorted(paths):
            old_v = old.fields.get(path) if old else None
            new_v = new.fields.get(path) if new else None
            pick = new_v or old_v
            if pick is None or pick.kind is not ValueKind.MONEY:
                continue
            unit = pick.unit or unit
            before = old_v.value if old_v is not None else Decimal(0)
            after = new_v.value if new_v is not None else Decimal(0)
            delta += after - before
    return PredictedOutcome(
        progress=progress,
        risk=risk,
        cost_delta=TypedValue(ValueKind.MONEY, delta.quantize(Decimal("0.01")), unit),
    )


@dataclass(frozen=True)
class RepairApplication:
    """The pure state delta the executor turns into a PlanUpdated event."""

    graph: GoalGraph
    task_graph: TaskGraph
    evidence_updates: dict[str, EvidenceRecord | None]  # None clears the goal
    affected_goal_ids: tuple[str, ...]
    dropped_goal_ids: tuple[str, ...]
    resolved_conflict_id: str


def apply(
    candidate: RepairCandidate,
    state,
    registry,
    ontology: Ontology,
    config: VerifierConfig,
) -> RepairApplication:
    """Compute the applied form of an accepted candidate.

    Raises StaleCandidate when the conflict has already disappeared. The
    executor validates that the candidate came from the latest proposals.
    """
    current = {c.id for c in detect(state, config)}
    if candidate.conflict_id not in current:
        raise StaleCandidate(
            f"conflict {candidate.conflict_id!r} is no longer present",
            conflict_id=candidate.conflict_id, candidate_id=candidate.id,
        )

    graph: GoalGraph = state.graph
    evidence_updates: dict[str, EvidenceRecord | None] = {}
    affected: list[str] = []
    dropped: list[str] = []
    task_graph: TaskGraph = state.task_graph

    for m in candidate.moves:
        if m.kind is MoveKind.CHOOSE_OPTION:
            ev = state.evidence.get(m.goal_id)
            if ev is None or not 0 <= (m.option_index or 0) < len(ev.options):
                raise InapplicableMove(
                    f"goal {m.goal_id!r} has no option #{m.option_index}"
                )
            evidence_updates[m.goal_id] = swap_option(ev, m.option_index)
        elif m.kind is MoveKind.RELAX_SOFT:
            node = graph.nodes.get(m.goal_id or "")
            target = next(
                (c for c in (node.constraints if node else ())
                 if c.id == m.constraint_id),
                None,
            )
            if target is None or target.severity is not Severity.SOFT:
                raise InapplicableMove(
                    f"no soft constraint {m.constraint_id!r} on {m.goal_id!r}"
                )
            graph = graph.with_nodes({node.id: replace(
                node,
                constraints=tuple(c for c in node.constraints if c.id != m.constraint_id),
            )})
        elif m.kind is MoveKind.REASSIGN_AGENT:
            task = task_graph.task(m.task_id)
            pinned = replace(
                task, agent_id=m.agent_id, pinned=True, state=TaskState.BLOCKED
            )
            task_graph = task_graph.with_tasks({task.id: pinned})
            evidence_updates[m.goal_id] = None
            affected.append(m.goal_id)
        elif m.kind is MoveKind.DROP_GOAL:
            node = graph.nodes.get(m.goal_id or "")
            if node is None:
                raise InapplicableMove(f"no goal {m.goal_id!r}")
            if node.hard_constraints():
                raise InapplicableMove(
                    f"goal {m.goal_id!r} has hard constraints and cannot be dropped"
                )
            subtree = graph.descendants(node.id)
            graph = graph.without_nodes(subtree)
            for gid in sorted(subtree):
                evidence_updates[gid] = None
                dropped.append(gid)
            affected.extend(sorted(subtree))

    task_graph = replan_subgraph(task_graph, affected, graph, registry, ontology)
    return RepairApplication(
        graph=graph,
        task_graph=task_graph,
        evidence_updates=evidence_updates,
        affected_goal_ids=tuple(affected),
        dropped_goal_ids=tuple(dropped),
        resolved_conflict_id=candidate.conflict_id,
    )
