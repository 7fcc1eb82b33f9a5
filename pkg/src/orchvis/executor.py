"""Event-sourced execution engine.

Every mutation of a session enters `step` as a Command and leaves as Events;
`fold_event` is the only state-transition function, and `step` itself routes
each emitted event through it. Replaying a log therefore reproduces the live
state by construction, which the property suite still checks end to end.

The driver loop (`run_session`) is the only place agents are invoked: `step`
computes what should happen, the driver performs the calls and feeds results
back as task_finished commands, keeping the command stream serialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Iterable

from . import conflict_engine, planner
from .agent_registry import (
    EvidenceRecord,
    FaultSchedule,
    FixtureTable,
    Registry,
    ScenarioBundle,
)
from .conflict_engine import ConflictRecord, RepairCandidate
from .errors import (
    InvalidCommand,
    LogCorruption,
    NoRepairFound,
    OrchvisError,
    StaleCandidate,
    UnknownGoal,
)
from .goal_dsl import (
    canonical_json,
    graph_to_obj,
    node_to_obj,
    parse,
    regenerate_mirrors,
)
from .goal_model import (
    GoalGraph,
    GoalNode,
    Ontology,
    Status,
    edit_node,
    normalize_attributes,
    normalize_graph,
    rollup_status,
)
from .planner import TaskGraph, TaskState
from .values import apply_op, format_timestamp, parse_timestamp
from .verifier import VerifierConfig, evaluate

MAX_AUTO_ROUNDS = 8  # cap on cascading auto-repairs per command


class Autonomy(str, Enum):
    MANUAL = "manual"
    CONFLICT_GATED = "conflict_gated"
    AUTO = "auto"


class Phase(str, Enum):
    PLANNING = "planning"
    EXECUTING = "executing"
    COMPLETED = "completed"


class CommandKind(str, Enum):
    START = "start"
    TASK_FINISHED = "task_finished"
    PAUSE_BRANCH = "pause_branch"
    RESUME_BRANCH = "resume_branch"
    APPLY_PLAN_UPDATE = "apply_plan_update"
    SET_AUTONOMY = "set_autonomy"
    USER_EDIT = "user_edit"


class Origin(str, Enum):
    USER = "user"
    SYSTEM = "system"
    AGENT = "agent"


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    payload: dict = field(default_factory=dict)
    origin: Origin = Origin.USER


class EventKind(str, Enum):
    GOAL_UPDATED = "GoalUpdated"
    TASK_STARTED = "TaskStarted"
    TASK_COMPLETED = "TaskCompleted"
    TASK_FAILED = "TaskFailed"
    VERIFICATION_REPORT = "VerificationReport"
    CONFLICT_DETECTED = "ConflictDetected"
    REPAIR_PROPOSED = "RepairProposed"
    PLAN_UPDATED = "PlanUpdated"
    BRANCH_PAUSED = "BranchPaused"
    BRANCH_RESUMED = "BranchResumed"
    AUTONOMY_CHANGED = "AutonomyChanged"
    SESSION_COMPLETED = "SessionCompleted"


@dataclass(frozen=True)
class Event:
    seq: int
    timestamp: datetime
    kind: EventKind
    payload: dict

    def to_obj(self) -> dict:
        return {
            "kind": self.kind.value,
            "payload": self.payload,
            "seq": self.seq,
            "timestamp": format_timestamp(self.timestamp),
        }

    @staticmethod
    def from_obj(obj: dict) -> "Event":
        return Event(
            seq=int(obj["seq"]),
            timestamp=parse_timestamp(obj["timestamp"]),
            kind=EventKind(obj["kind"]),
            payload=obj.get("payload", {}),
        )

    def to_line(self) -> str:
        return json.dumps(
            self.to_obj(), sort_keys=True, separators=(",", ":"), ensure_ascii=False
        )


@dataclass(frozen=True)
class PauseEntry:
    goal_id: str
    task_ids: tuple[str, ...]
    conflict_id: str | None = None


@dataclass(frozen=True)
class SessionState:
    session_id: str = ""
    seed: int = 0
    config: VerifierConfig = field(default_factory=VerifierConfig)
    ontology: Ontology | None = None
    scenario: ScenarioBundle | None = None
    autonomy: Autonomy = Autonomy.CONFLICT_GATED
    phase: Phase = Phase.PLANNING
    graph: GoalGraph | None = None
    task_graph: TaskGraph | None = None
    match_report: dict | None = None
    evidence: dict[str, EvidenceRecord] = field(default_factory=dict)
    reports: dict[str, dict] = field(default_factory=dict)
    conflicts: dict[str, ConflictRecord] = field(default_factory=dict)
    proposals: dict[str, tuple[RepairCandidate, ...]] = field(default_factory=dict)
    pending: tuple[str, str] | None = None  # staged (conflict_id, candidate_id)
    paused: dict[str, PauseEntry] = field(default_factory=dict)
    skipped: frozenset = frozenset()  # task ids completed by a false guard
    calls: dict[str, int] = field(default_factory=dict)  # per-agent starts
    seq: int = 0
    root_achieved: bool = False

    def goal_statuses(self) -> dict[str, Status]:
        return _derive_statuses(self)

    def paused_task_ids(self) -> frozenset:
        out: set[str] = set()
        for entry in self.paused.values():
            out.update(entry.task_ids)
        return frozenset(out)


def _graph_of(document: dict) -> GoalGraph:
    return parse(canonical_json(document))


def _derive_statuses(state: SessionState) -> dict[str, Status]:
    """Per-goal status from task states, evidence, and active conflicts."""
    graph = state.graph
    if graph is None:
        return {}
    conflicted: set[str] = set()
    for conflict in state.conflicts.values():
        conflicted.update(conflict.involved_goal_ids)
    leaf_status: dict[str, GoalNode] = {}
    for node in graph.leaves():
        status = node.status
        task = state.task_graph.for_goal(node.id) if state.task_graph else None
        if task is not None:
            if task.state is TaskState.FAILED:
                status = Status.FAILED
            elif task.state is TaskState.PAUSED:
                status = Status.PAUSED
            elif task.state is TaskState.DONE:
                if task.id in state.skipped:
                    status = Status.ACHIEVED
                else:
                    record = state.evidence.get(node.id)
                    achieved = record is not None and evaluate(
                        node, record, state.config
                    ).achieved
                    status = Status.ACHIEVED if achieved else Status.ACTIVE
            elif task.state is TaskState.RUNNING:
                status = Status.ACTIVE
            else:
                status = Status.PENDING
        if node.id in conflicted:
            status = Status.CONFLICTED
        leaf_status[node.id] = replace(node, status=status)
    return rollup_status(graph.with_nodes(leaf_status))


def _statuses_obj(state: SessionState) -> dict:
    return {gid: status.value for gid, status in sorted(state.goal_statuses().items())}


# --- the single reducer -----------------------------------------------------


def fold_event(state: SessionState, event: Event) -> SessionState:
    if event.seq != state.seq + 1:
        raise LogCorruption(
            f"gapless-violation at seq {state.seq + 1}",
            expected=state.seq + 1, found=event.seq,
        )
    payload = event.payload
    kind = event.kind
    state = replace(state, seq=event.seq)

    if kind is EventKind.GOAL_UPDATED:
        state = _fold_goal_updated(state, payload)
    elif kind is EventKind.AUTONOMY_CHANGED:
        state = replace(state, autonomy=Autonomy(payload["level"]))
    elif kind is EventKind.PLAN_UPDATED:
        state = _fold_plan_updated(state, payload)
    elif kind is EventKind.TASK_STARTED:
        task = state.task_graph.task(payload["task_id"])
        agent = payload["agent_id"]
        calls = dict(state.calls)
        calls[agent] = calls.get(agent, 0) + 1
        state = replace(
            state,
            task_graph=state.task_graph.with_tasks(
                {task.id: replace(task, state=TaskState.RUNNING)}
            ),
            calls=calls,
        )
    elif kind is EventKind.TASK_COMPLETED:
        task = state.task_graph.task(payload["task_id"])
        evidence = dict(state.evidence)
        skipped = set(state.skipped)
        if payload.get("evidence") is not None:
            evidence[task.goal_id] = EvidenceRecord.from_obj(payload["evidence"])
        if payload.get("skipped"):
            skipped.add(task.id)
        state = replace(
            state,
            task_graph=state.task_graph.with_tasks(
                {task.id: replace(task, state=TaskState.DONE)}
            ),
            evidence=evidence,
            skipped=frozenset(skipped),
        )
    elif kind is EventKind.TASK_FAILED:
        task = state.task_graph.task(payload["task_id"])
        state = replace(
            state,
            task_graph=state.task_graph.with_tasks(
                {task.id: replace(task, state=TaskState.FAILED)}
            ),
        )
    elif kind is EventKind.VERIFICATION_REPORT:
        reports = dict(state.reports)
        reports[payload["report"]["goal_id"]] = payload["report"]
        state = replace(state, reports=reports)
    elif kind is EventKind.CONFLICT_DETECTED:
        record = ConflictRecord.from_obj(payload["conflict"])
        conflicts = dict(state.conflicts)
        conflicts[record.id] = record
        state = replace(state, conflicts=conflicts)
    elif kind is EventKind.REPAIR_PROPOSED:
        if payload.get("stage") == "selected":
            state = replace(
                state, pending=(payload["conflict_id"], payload["candidate_id"])
            )
        else:
            proposals = dict(state.proposals)
            proposals[payload["conflict_id"]] = tuple(
                RepairCandidate.from_obj(c) for c in payload["candidates"]
            )
            state = replace(state, proposals=proposals)
    elif kind is EventKind.BRANCH_PAUSED:
        entry = PauseEntry(
            goal_id=payload["goal_id"],
            task_ids=tuple(payload["task_ids"]),
            conflict_id=payload.get("conflict_id"),
        )
        paused = dict(state.paused)
        paused[entry.goal_id] = entry
        updates = {}
        for tid in entry.task_ids:
            task = state.task_graph.tasks.get(tid)
            if task is not None and task.state is TaskState.BLOCKED:
                updates[tid] = replace(task, state=TaskState.PAUSED)
        state = replace(
            state, paused=paused, task_graph=state.task_graph.with_tasks(updates)
        )
    elif kind is EventKind.BRANCH_RESUMED:
        paused = dict(state.paused)
        entry = paused.pop(payload["goal_id"], None)
        updates = {}
        if entry is not None:
            still_frozen = {
                tid for other in paused.values() for tid in other.task_ids
            }
            for tid in entry.task_ids:
                task = state.task_graph.tasks.get(tid)
                if (task is not None and task.state is TaskState.PAUSED
                        and tid not in still_frozen):
                    updates[tid] = replace(task, state=TaskState.BLOCKED)
        state = replace(
            state, paused=paused, task_graph=state.task_graph.with_tasks(updates)
        )
    elif kind is EventKind.SESSION_COMPLETED:
        state = replace(
            state, phase=Phase.COMPLETED,
            root_achieved=bool(payload["root_achieved"]),
        )
    else:
        raise InvalidCommand(f"unhandled event kind {kind!r}")

    return _settle(state)


def _fold_goal_updated(state: SessionState, payload: dict) -> SessionState:
    stage = payload.get("stage")
    if stage == "genesis":
        return replace(
            state,
            session_id=payload["session_id"],
            seed=int(payload.get("seed", 0)),
            config=VerifierConfig.from_obj(payload["config"]),
            ontology=(
                Ontology.from_obj(payload["ontology"])
                if payload.get("ontology") else None
            ),
            scenario=(
                ScenarioBundle.from_obj(payload["scenario"])
                if payload.get("scenario") else None
            ),
            autonomy=Autonomy(payload.get("autonomy", Autonomy.CONFLICT_GATED.value)),
            graph=_graph_of(payload["document"]),
            phase=Phase.PLANNING,
        )
    if stage == "edit":
        return replace(state, graph=_graph_of(payload["document"]))
    return state  # "condition" notes carry no state beyond the skip flag


def _fold_plan_updated(state: SessionState, payload: dict) -> SessionState:
    graph = state.graph
    if payload.get("document") is not None:
        graph = _graph_of(payload["document"])
    evidence = dict(state.evidence)
    reports = dict(state.reports)
    delta = payload.get("evidence", {})
    for gid, obj in sorted(delta.get("set", {}).items()):
        evidence[gid] = EvidenceRecord.from_obj(obj)
    for gid in delta.get("clear", []):
        evidence.pop(gid, None)
        reports.pop(gid, None)
    reports = {gid: r for gid, r in reports.items() if gid in graph.nodes}
    evidence = {gid: r for gid, r in evidence.items() if gid in graph.nodes}
    conflicts = dict(state.conflicts)
    proposals = dict(state.proposals)
    resolved = payload.get("resolved_conflict_id")
    if resolved is not None:
        conflicts.pop(resolved, None)
        proposals.pop(resolved, None)
    return replace(
        state,
        graph=graph,
        task_graph=TaskGraph.from_obj(payload["task_graph"]),
        match_report=(
            payload["match_report"]
            if payload.get("match_report") is not None
            else state.match_report
        ),
        evidence=evidence,
        reports=reports,
        conflicts=conflicts,
        proposals=proposals,
        pending=None,
        phase=Phase.EXECUTING,
    )


def _settle(state: SessionState) -> SessionState:
    """Drop conflicts (and their proposals) that are no longer detectable,
    then write derived statuses back into the goal nodes."""
    if state.graph is None:
        return state
    if state.conflicts:
        live = {c.id for c in conflict_engine.detect(state, state.config)}
        conflicts = {cid: c for cid, c in state.conflicts.items() if cid in live}
        if len(conflicts) != len(state.conflicts):
            proposals = {
                cid: cands for cid, cands in state.proposals.items()
                if cid in conflicts
            }
            pending = state.pending
            if pending is not None and pending[0] not in conflicts:
                pending = None
            state = replace(
                state, conflicts=conflicts, proposals=proposals, pending=pending
            )
    statuses = _derive_statuses(state)
    updates = {
        gid: replace(state.graph.nodes[gid], status=status)
        for gid, status in statuses.items()
        if state.graph.nodes[gid].status is not status
    }
    if updates:
        state = replace(state, graph=state.graph.with_nodes(updates))
    return state


def fold(events: Iterable[Event]) -> SessionState:
    state = SessionState()
    for event in events:
        state = fold_event(state, event)
    return state


# --- command processing -----------------------------------------------------


@dataclass
class _Emitter:
    state: SessionState
    events: list = field(default_factory=list)

    def emit(self, kind: EventKind, payload: dict) -> Event:
        seq = self.state.seq + 1
        clock = (
            self.state.graph.clock
            if self.state.graph is not None
            else parse_timestamp(payload["document"]["clock"])
        )
        event = Event(
            seq=seq,
            timestamp=clock + timedelta(seconds=seq),
            kind=kind,
            payload=payload,
        )
        self.state = fold_event(self.state, event)
        self.events.append(event)
        return event

    def registry(self) -> Registry:
        registry = (
            self.state.scenario.registry()
            if self.state.scenario is not None
            else Registry()
        )
        registry.prime(dict(self.state.calls))
        return registry


def open_session(
    session_id: str,
    document: dict | None = None,
    *,
    scenario: ScenarioBundle | None = None,
    ontology: Ontology | None = None,
    seed: int = 0,
    config: VerifierConfig | None = None,
    autonomy: Autonomy = Autonomy.CONFLICT_GATED,
) -> tuple[SessionState, list]:
    """Create a session in the planning phase; returns the genesis event."""
    if document is None:
        if scenario is None:
            raise InvalidCommand("a session needs a goal document or a scenario")
        document = scenario.document
    graph = normalize_graph(parse(canonical_json(document)))
    config = config or VerifierConfig()
    builder = _Emitter(state=SessionState())
    builder.emit(EventKind.GOAL_UPDATED, {
        "stage": "genesis",
        "session_id": session_id,
        "seed": seed,
        "autonomy": autonomy.value,
        "config": config.to_obj(),
        "ontology": ontology.to_obj() if ontology is not None else None,
        "scenario": scenario.to_obj() if scenario is not None else None,
        "document": graph_to_obj(graph),
    })
    return builder.state, builder.events


def step(state: SessionState, command: Command) -> tuple[SessionState, list]:
    """Pure transition: apply one command, return the new state and events."""
    builder = _Emitter(state=state)
    kind = command.kind
    if kind is CommandKind.START:
        _handle_start(builder)
    elif kind is CommandKind.TASK_FINISHED:
        _handle_task_finished(builder, command.payload)
    elif kind is CommandKind.PAUSE_BRANCH:
        _handle_pause(builder, command.payload)
    elif kind is CommandKind.RESUME_BRANCH:
        _handle_resume(builder, command.payload)
    elif kind is CommandKind.APPLY_PLAN_UPDATE:
        _handle_apply(builder, command.payload)
    elif kind is CommandKind.SET_AUTONOMY:
        _handle_autonomy(builder, command.payload)
    elif kind is CommandKind.USER_EDIT:
        _handle_edit(builder, command.payload)
    else:
        raise InvalidCommand(f"unknown command kind {kind!r}")
    return builder.state, builder.events


def _handle_start(b: _Emitter) -> None:
    state = b.state
    if state.phase is Phase.PLANNING:
        if state.graph is None:
            raise InvalidCommand("no goal document to plan from")
        if state.ontology is None:
            raise InvalidCommand("no ontology configured")
        registry = b.registry()
        skeleton = planner.compile(state.graph, state.ontology)
        assigned, match_report = planner.assign(skeleton, registry)
        b.emit(EventKind.PLAN_UPDATED, {
            "reason": "planned",
            "task_graph": assigned.to_obj(),
            "match_report": match_report.to_obj(),
            "document": None,
            "evidence": {},
            "resolved_conflict_id": None,
            "candidate_id": None,
        })
        _react(b)
        _advance(b)
        _finalize(b)
        return
    if state.phase is Phase.EXECUTING and state.pending is not None:
        conflict_id, candidate_id = state.pending
        candidate = _find_candidate(state, conflict_id, candidate_id)
        _apply_candidate(b, candidate)
        _react(b)
        _advance(b)
        _finalize(b)
        return
    raise InvalidCommand(
        "start applies to a planning session or a staged repair",
        phase=state.phase.value,
    )


def _handle_task_finished(b: _Emitter, payload: dict) -> None:
    state = b.state
    if state.phase is not Phase.EXECUTING or state.task_graph is None:
        raise InvalidCommand("no plan is executing", phase=state.phase.value)
    task = state.task_graph.task(payload["task_id"])
    if task.state is not TaskState.RUNNING:
        raise InvalidCommand(
            f"task {task.id!r} is not running", task_state=task.state.value
        )
    outcome = payload.get("outcome")
    if outcome == "completed":
        record_obj = payload["evidence"]
        b.emit(EventKind.TASK_COMPLETED, {
            "task_id": task.id,
            "goal_id": task.goal_id,
            "agent_id": task.agent_id,
            "skipped": False,
            "evidence": record_obj,
            "note": None,
        })
        _verify_goal(b, task.goal_id)
        _react(b)
    elif outcome == "failed":
        b.emit(EventKind.TASK_FAILED, {
            "task_id": task.id,
            "goal_id": task.goal_id,
            "agent_id": task.agent_id,
            "error": payload.get("error", {}),
        })
    else:
        raise InvalidCommand(f"unknown task outcome {outcome!r}")
    _advance(b)
    _finalize(b)


def _handle_pause(b: _Emitter, payload: dict) -> None:
    state = b.state
    goal_id = payload.get("goal_id", "")
    if state.graph is None or goal_id not in state.graph.nodes:
        raise UnknownGoal(f"no goal {goal_id!r}")
    if state.task_graph is None:
        raise InvalidCommand("nothing to pause before planning")
    _pause_goal(b, goal_id, conflict_id=None)
    _finalize(b)


def _handle_resume(b: _Emitter, payload: dict) -> None:
    state = b.state
    goal_id = payload.get("goal_id", "")
    entry = state.paused.get(goal_id)
    if entry is None:
        raise InvalidCommand(f"branch {goal_id!r} is not paused")
    b.emit(EventKind.BRANCH_RESUMED, {
        "goal_id": goal_id,
        "task_ids": list(entry.task_ids),
    })
    _advance(b)
    _finalize(b)


def _handle_apply(b: _Emitter, payload: dict) -> None:
    state = b.state
    if state.phase is not Phase.EXECUTING:
        raise InvalidCommand("no plan to update", phase=state.phase.value)
    candidate_id = payload["candidate_id"]
    candidate = _find_candidate(state, payload.get("conflict_id"), candidate_id)
    if state.autonomy is Autonomy.MANUAL and not payload.get("confirm"):
        b.emit(EventKind.REPAIR_PROPOSED, {
            "stage": "selected",
            "conflict_id": candidate.conflict_id,
            "candidate_id": candidate.id,
        })
        return
    _apply_candidate(b, candidate)
    _react(b)
    _advance(b)
    _finalize(b)


def _handle_autonomy(b: _Emitter, payload: dict) -> None:
    level_raw = payload.get("level", "")
    try:
        level = Autonomy(level_raw)
    except ValueError:
        raise InvalidCommand(f"unknown autonomy level {level_raw!r}") from None
    b.emit(EventKind.AUTONOMY_CHANGED, {"level": level.value})
    if level is Autonomy.AUTO and b.state.conflicts:
        for conflict_id in sorted(b.state.conflicts):
            if conflict_id not in b.state.conflicts:
                continue  # an earlier repair may settle several at once
            candidates = _propose(b, b.state.conflicts[conflict_id])
            b.emit(EventKind.REPAIR_PROPOSED, {
                "stage": "proposed",
                "conflict_id": conflict_id,
                "candidates": [c.to_obj() for c in candidates],
            })
            if candidates:
                _apply_candidate(b, candidates[0])
        _react(b)
        _advance(b)
    _finalize(b)


def _handle_edit(b: _Emitter, payload: dict) -> None:
    state = b.state
    if state.graph is None:
        raise InvalidCommand("no goal document yet")
    if state.phase is Phase.COMPLETED:
        raise InvalidCommand("session already completed")
    goal_id = payload.get("goal_id", "")
    if goal_id not in state.graph.nodes:
        raise UnknownGoal(f"no goal {goal_id!r}")
    patch_obj = dict(payload.get("patch", {}))
    graph, changes = _edited_graph(state, goal_id, patch_obj)
    b.emit(EventKind.GOAL_UPDATED, {
        "stage": "edit",
        "goal_id": goal_id,
        "changes": changes,
        "document": graph_to_obj(graph),
    })
    if goal_id in b.state.evidence:
        _verify_goal(b, goal_id)
        _react(b)
    _advance(b)
    _finalize(b)


def _edited_graph(
    state: SessionState, goal_id: str, patch_obj: dict
) -> tuple[GoalGraph, list]:
    from .goal_dsl import _node_from_obj

    node = state.graph.nodes[goal_id]
    before_obj = node_to_obj(node)
    merged = dict(before_obj)
    merged.update(patch_obj)
    if patch_obj.get("condition", "seen") is None:
        merged.pop("condition", None)
    candidate = normalize_attributes(  # raw text folds like document ingest
        _node_from_obj(merged, f"/nodes/{goal_id}"), state.graph.clock
    )
    patch = {f: getattr(candidate, f) for f in patch_obj if f != "id"}
    patch["status"] = Status.ACTIVE
    graph = edit_node(state.graph, goal_id, patch, state.ontology)
    if "attributes" in patch_obj:
        graph, _ = regenerate_mirrors(graph, state.ontology)
    after_obj = node_to_obj(graph.nodes[goal_id])
    changes = [  # regenerated mirrors count as changes too
        {"field": f, "before": before_obj.get(f), "after": after_obj.get(f)}
        for f in sorted(set(before_obj) | set(after_obj))
        if before_obj.get(f) != after_obj.get(f)
    ]
    return graph, changes


def _find_candidate(
    state: SessionState, conflict_id: str | None, candidate_id: str
) -> RepairCandidate:
    pools = (
        [(conflict_id, state.proposals.get(conflict_id, ()))]
        if conflict_id is not None
        else sorted(state.proposals.items())
    )
    for _, candidates in pools:
        for candidate in candidates:
            if candidate.id == candidate_id:
                return candidate
    raise StaleCandidate(
        f"candidate {candidate_id!r} is not among the current proposals",
        candidate_id=candidate_id,
    )


def _verify_goal(b: _Emitter, goal_id: str) -> None:
    state = b.state
    record = state.evidence.get(goal_id)
    if record is None or goal_id not in state.graph.nodes:
        return
    report = evaluate(state.graph.nodes[goal_id], record, state.config)
    b.emit(EventKind.VERIFICATION_REPORT, {"report": report.to_obj()})


def _propose(b: _Emitter, conflict: ConflictRecord) -> tuple:
    try:
        return tuple(conflict_engine.propose_repairs(
            conflict, b.state, b.registry(), b.state.config, b.state.ontology
        ))
    except (NoRepairFound, StaleCandidate):
        return ()


def _react(b: _Emitter) -> None:
    """Handle newly detectable conflicts according to the autonomy level.

    Bounded: an auto repair may surface a different conflict, but after
    MAX_AUTO_ROUNDS rounds anything still active is left for the user.
    """
    if b.state.graph is None:
        return
    for _ in range(MAX_AUTO_ROUNDS):
        fresh = [
            c for c in conflict_engine.detect(b.state, b.state.config)
            if c.id not in b.state.conflicts
        ]
        if not fresh:
            return
        for conflict in fresh:
            if conflict.id in b.state.conflicts:
                continue
            b.emit(EventKind.CONFLICT_DETECTED, {"conflict": conflict.to_obj()})
            if conflict.id not in b.state.conflicts:
                continue  # settled away immediately; nothing to react to
            auto = b.state.autonomy is Autonomy.AUTO
            if not auto:
                _pause_involved(b, conflict)
            candidates = _propose(b, conflict)
            b.emit(EventKind.REPAIR_PROPOSED, {
                "stage": "proposed",
                "conflict_id": conflict.id,
                "candidates": [c.to_obj() for c in candidates],
            })
            if auto and candidates:
                _apply_candidate(b, candidates[0])
            elif auto:
                _pause_involved(b, conflict)


def _pause_involved(b: _Emitter, conflict: ConflictRecord) -> None:
    for goal_id in conflict.involved_goal_ids:
        _pause_goal(b, goal_id, conflict_id=conflict.id)


def _pause_goal(b: _Emitter, goal_id: str, conflict_id: str | None) -> None:
    state = b.state
    if goal_id in state.paused or state.task_graph is None:
        return
    subtree = state.graph.descendants(goal_id)
    seeds = {
        task.id for task in state.task_graph.ordered() if task.goal_id in subtree
    }
    frozen = sorted(
        tid for tid in state.task_graph.downstream(seeds)
        if state.task_graph.tasks[tid].state is TaskState.BLOCKED
    )
    if not frozen:
        return
    b.emit(EventKind.BRANCH_PAUSED, {
        "goal_id": goal_id,
        "conflict_id": conflict_id,
        "task_ids": frozen,
        "goal_ids": sorted({state.task_graph.tasks[tid].goal_id for tid in frozen}),
    })


def _apply_candidate(b: _Emitter, candidate: RepairCandidate) -> None:
    state = b.state
    application = conflict_engine.apply(
        candidate, state, b.registry(), state.ontology, state.config
    )
    set_map = {
        gid: record.to_obj()
        for gid, record in sorted(application.evidence_updates.items())
        if record is not None
    }
    clear = sorted(
        gid for gid, record in application.evidence_updates.items() if record is None
    )
    b.emit(EventKind.PLAN_UPDATED, {
        "reason": "repair",
        "task_graph": application.task_graph.to_obj(),
        "match_report": None,
        "document": graph_to_obj(application.graph),
        "evidence": {"set": set_map, "clear": clear},
        "resolved_conflict_id": application.resolved_conflict_id,
        "candidate_id": candidate.id,
    })
    for entry in sorted(state.paused.values(), key=lambda e: e.goal_id):
        if (entry.conflict_id == application.resolved_conflict_id
                and entry.goal_id in b.state.paused):
            b.emit(EventKind.BRANCH_RESUMED, {
                "goal_id": entry.goal_id,
                "task_ids": list(entry.task_ids),
            })
    reverify = set(set_map)
    reverify.update(
        move.goal_id for move in candidate.moves
        if move.kind is conflict_engine.MoveKind.RELAX_SOFT and move.goal_id
    )
    for goal_id in sorted(reverify):
        _verify_goal(b, goal_id)


def _guards_hold(state: SessionState, task) -> bool:
    for guard in task.guards:
        target = guard.goal or task.goal_id
        record = state.evidence.get(target)
        observed = record.fields.get(guard.subject) if record else None
        if observed is None:
            return False
        try:
            if not apply_op(observed, guard.op, guard.value):
                return False
        except OrchvisError:
            return False
    return True


def _advance(b: _Emitter) -> None:
    """Start (or guard-skip) every task whose dependencies are all done."""
    if b.state.phase is not Phase.EXECUTING or b.state.task_graph is None:
        return
    progressed = True
    while progressed:
        progressed = False
        for task in b.state.task_graph.ordered():
            if task.state is not TaskState.BLOCKED:
                continue
            tasks = b.state.task_graph.tasks
            deps_done = all(
                tasks[dep].state is TaskState.DONE
                for dep in sorted(task.depends_on)
                if dep in tasks
            )
            if not deps_done:
                continue
            if _guards_hold(b.state, task):
                b.emit(EventKind.TASK_STARTED, {
                    "task_id": task.id,
                    "goal_id": task.goal_id,
                    "agent_id": task.agent_id,
                })
            else:
                b.emit(EventKind.TASK_COMPLETED, {
                    "task_id": task.id,
                    "goal_id": task.goal_id,
                    "agent_id": task.agent_id,
                    "skipped": True,
                    "evidence": None,
                    "note": "condition-unmet",
                })
                b.emit(EventKind.GOAL_UPDATED, {
                    "stage": "condition",
                    "goal_id": task.goal_id,
                    "note": "condition-unmet",
                })
            progressed = True


def _finalize(b: _Emitter) -> None:
    state = b.state
    if state.phase is not Phase.EXECUTING or state.task_graph is None:
        return
    tasks = state.task_graph.tasks
    if any(t.state is TaskState.RUNNING for t in tasks.values()):
        return
    for task in tasks.values():
        if task.state is not TaskState.BLOCKED:
            continue
        if all(
            tasks[dep].state is TaskState.DONE
            for dep in task.depends_on if dep in tasks
        ):
            return  # still startable; _advance will pick it up next command
    if state.conflicts or state.pending is not None or state.paused:
        return  # awaiting user input
    statuses = state.goal_statuses()
    achieved = statuses.get(state.graph.root) is Status.ACHIEVED
    b.emit(EventKind.SESSION_COMPLETED, {
        "root_achieved": achieved,
        "goal_statuses": {g: s.value for g, s in sorted(statuses.items())},
    })


# --- driving and persistence -------------------------------------------------


def run_session(
    state: SessionState,
    registry: Registry | None = None,
    fixtures: dict[str, FixtureTable] | None = None,
    faults: FaultSchedule | None = None,
    sink: Callable | None = None,
) -> SessionState:
    """Drive a session until it completes or needs user input.

    Agent calls happen here, one per iteration, and feed back into `step`
    as task_finished commands; `sink` receives each emitted event batch.
    """
    scenario = state.scenario
    if registry is None:
        registry = scenario.registry() if scenario is not None else Registry()
        registry.prime(dict(state.calls))
    if fixtures is None:
        fixtures = scenario.tables if scenario is not None else {}
    if faults is None:
        faults = scenario.faults if scenario is not None else FaultSchedule(())

    def push(command: Command) -> None:
        nonlocal state
        state, events = step(state, command)
        if sink is not None:
            for event in events:
                sink(event)

    if state.phase is Phase.PLANNING:
        push(Command(CommandKind.START, {}, Origin.USER))
    while state.phase is Phase.EXECUTING:
        running = [
            t for t in state.task_graph.ordered() if t.state is TaskState.RUNNING
        ]
        if not running:
            break
        running.sort(key=lambda t: (
            faults.delays(t.agent_id, registry.call_count(t.agent_id) + 1, t.goal_id),
            t.id,
        ))
        task = running[0]
        goal = state.graph.node(task.goal_id)
        prior = tuple(
            record for _, record in sorted(state.evidence.items())
            if record.goal_id != task.goal_id
        )
        try:
            record = registry.invoke(
                task.agent_id, task, goal, fixtures, faults,
                evidence=prior, ontology=state.ontology, seed=state.seed,
            )
            payload = {
                "task_id": task.id,
                "outcome": "completed",
                "evidence": record.to_obj(),
            }
        except OrchvisError as exc:
            payload = {
                "task_id": task.id,
                "outcome": "failed",
                "error": exc.to_payload(),
            }
        push(Command(CommandKind.TASK_FINISHED, payload, Origin.AGENT))
    return state


def awaiting_user(state: SessionState) -> bool:
    return state.phase is Phase.EXECUTING and bool(
        state.conflicts or state.pending is not None or state.paused
    )


def session_snapshot(state: SessionState) -> dict:
    """Read-model of a session, shaped for API responses and CLI reports."""
    pending = None
    if state.pending is not None:
        pending = {"conflict_id": state.pending[0], "candidate_id": state.pending[1]}
    return {
        "autonomy": state.autonomy.value,
        "awaiting_user": awaiting_user(state),
        "conflicts": [state.conflicts[c].to_obj() for c in sorted(state.conflicts)],
        "document": graph_to_obj(state.graph) if state.graph is not None else None,
        "goal_statuses": _statuses_obj(state),
        "paused_goal_ids": sorted(state.paused),
        "pending": pending,
        "phase": state.phase.value,
        "proposals": {
            cid: [c.to_obj() for c in cands]
            for cid, cands in sorted(state.proposals.items())
        },
        "root_achieved": state.root_achieved,
        "seq": state.seq,
        "session_id": state.session_id,
    }


def write_events(path: str, events: Iterable[Event], append: bool = True) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_line() + "\n")


def read_log(path: str) -> list:
    events: list[Event] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            expected = len(events) + 1
            try:
                obj = json.loads(line)
                event = Event.from_obj(obj)
            except (ValueError, KeyError) as exc:
                raise LogCorruption(
                    f"gapless-violation at seq {expected}", path=path,
                ) from exc
            if event.seq != expected:
                raise LogCorruption(
                    f"gapless-violation at seq {expected}",
                    path=path, found=event.seq,
                )
            events.append(event)
    return events


def replay(path: str) -> SessionState:
    return fold(read_log(path))
