"""Event-sourced session engine: fold/replay identity, guards, autonomy."""

import copy
import json
from dataclasses import replace
from datetime import timedelta

import pytest

import support
from orchvis import catalog
from orchvis.errors import InvalidCommand, LogCorruption, StaleCandidate, UnknownGoal
from orchvis.goal_dsl import node_to_obj
from orchvis.executor import (
    Autonomy,
    Command,
    CommandKind,
    Event,
    EventKind,
    Phase,
    awaiting_user,
    fold,
    open_session,
    read_log,
    replay,
    run_session,
    session_snapshot,
    step,
    write_events,
)
from orchvis.planner import TaskState
from orchvis.values import parse_timestamp

ONTOLOGY = catalog.load_ontology()
CONFLICT_ID = "cf-temporal_overlap-g1-flight-g3a-show"


def planning_session(name="travel_clean", autonomy=Autonomy.CONFLICT_GATED):
    bundle = catalog.load_scenario(name)
    return open_session(
        f"t-{name}", scenario=bundle, ontology=ONTOLOGY, autonomy=autonomy
    )


def kinds(events):
    return [e.kind for e in events]


@pytest.fixture(scope="module")
def gated_run():
    return support.run_bundle("travel_show_conflict")


@pytest.fixture(scope="module")
def clean_run():
    return support.run_bundle("travel_clean")


def test_genesis_event_opens_a_planning_session():
    state, events = planning_session()
    (event,) = events
    assert event.seq == 1
    assert event.kind is EventKind.GOAL_UPDATED
    assert event.payload["stage"] == "genesis"
    assert set(event.payload) == {
        "stage", "session_id", "seed", "autonomy", "config",
        "ontology", "scenario", "document",
    }
    assert state.phase is Phase.PLANNING
    assert state.session_id == "t-travel_clean"
    assert state.graph.root == "g-trip"
    assert state.task_graph is None


def test_open_session_needs_a_document_or_scenario():
    with pytest.raises(InvalidCommand):
        open_session("t-empty")


@pytest.mark.parametrize("name", catalog.scenario_names())
def test_fold_reproduces_live_state(name):
    state, events = support.run_bundle(name)
    folded = fold(events)
    assert session_snapshot(folded) == session_snapshot(state)
    assert folded.evidence == state.evidence
    assert folded.task_graph == state.task_graph
    assert folded.reports == state.reports


def test_fold_reproduces_live_state_under_auto_repair():
    state, events = support.run_bundle("travel_show_conflict", autonomy=Autonomy.AUTO)
    assert session_snapshot(fold(events)) == session_snapshot(state)


def test_fold_rejects_sequence_gaps(clean_run):
    _, events = clean_run
    with pytest.raises(LogCorruption) as err:
        fold(events[:2] + events[3:])
    assert "gapless-violation at seq 3" in str(err.value)
    assert err.value.details == {"expected": 3, "found": 4}


def test_event_timestamps_advance_one_second_per_seq(clean_run):
    _, events = clean_run
    clock = parse_timestamp(catalog.load_scenario("travel_clean").document["clock"])
    for event in events:
        assert event.timestamp == clock + timedelta(seconds=event.seq)


def test_log_lines_are_compact_sorted_json(clean_run):
    _, events = clean_run
    for event in events:
        line = event.to_line()
        obj = json.loads(line)
        assert list(obj) == ["kind", "payload", "seq", "timestamp"]
        assert line == json.dumps(obj, sort_keys=True, separators=(",", ":"),
                                  ensure_ascii=False)
        assert Event.from_obj(obj) == event


def test_clean_scenario_completes_and_achieves_root(clean_run):
    state, events = clean_run
    assert state.phase is Phase.COMPLETED
    assert state.root_achieved
    assert not awaiting_user(state)
    assert kinds(events) == [
        EventKind.GOAL_UPDATED, EventKind.PLAN_UPDATED,
        EventKind.TASK_STARTED, EventKind.TASK_STARTED,
        EventKind.TASK_COMPLETED, EventKind.VERIFICATION_REPORT,
        EventKind.TASK_STARTED, EventKind.TASK_COMPLETED,
        EventKind.VERIFICATION_REPORT, EventKind.TASK_COMPLETED,
        EventKind.VERIFICATION_REPORT, EventKind.TASK_STARTED,
        EventKind.TASK_COMPLETED, EventKind.VERIFICATION_REPORT,
        EventKind.SESSION_COMPLETED,
    ]
    statuses = session_snapshot(state)["goal_statuses"]
    assert set(statuses.values()) == {"achieved"}
    started = [e.payload for e in events if e.kind is EventKind.TASK_STARTED]
    assert all(set(p) == {"task_id", "goal_id", "agent_id"} for p in started)


def test_unmet_condition_skips_the_guarded_branch():
    state, events = support.run_bundle("travel_conditional")
    skip = next(e for e in events if e.kind is EventKind.TASK_COMPLETED
                and e.payload["task_id"] == "task-g4-lounge")
    assert skip.payload["skipped"] is True
    assert skip.payload["evidence"] is None
    assert skip.payload["note"] == "condition-unmet"
    note = events[events.index(skip) + 1]
    assert note.kind is EventKind.GOAL_UPDATED
    assert note.payload == {
        "stage": "condition", "goal_id": "g4-lounge", "note": "condition-unmet",
    }
    assert "g4-lounge" not in state.evidence
    assert state.root_achieved
    assert session_snapshot(state)["goal_statuses"]["g4-lounge"] == "achieved"


def test_met_condition_runs_the_guarded_branch():
    bundle = catalog.load_scenario("travel_conditional")
    document = copy.deepcopy(bundle.document)
    lounge = next(n for n in document["nodes"] if n["id"] == "g4-lounge")
    lounge["condition"]["value"]["value"] = "2025-03-12T11:00:00Z"  # after every arrival
    state, events = open_session(
        "t-lounge-met", scenario=replace(bundle, document=document),
        ontology=ONTOLOGY,
    )
    state = run_session(state, sink=events.append)
    done = next(e for e in events if e.kind is EventKind.TASK_COMPLETED
                and e.payload["task_id"] == "task-g4-lounge")
    assert done.payload["skipped"] is False
    assert state.evidence["g4-lounge"].fields["name"].value.startswith("SkyHarbor")
    assert state.phase is Phase.COMPLETED
    assert state.root_achieved


def test_conflict_pauses_downstream_and_awaits_user(gated_run):
    state, events = gated_run
    assert awaiting_user(state)
    assert list(state.conflicts) == [CONFLICT_ID]
    pause = next(e for e in events if e.kind is EventKind.BRANCH_PAUSED)
    assert pause.payload["goal_id"] == "g1-flight"
    assert pause.payload["task_ids"] == ["task-g3b-dinner"]
    assert pause.payload["conflict_id"] == CONFLICT_ID
    assert state.task_graph.task("task-g3b-dinner").state is TaskState.PAUSED
    statuses = session_snapshot(state)["goal_statuses"]
    assert statuses["g1-flight"] == "conflicted"
    assert statuses["g3a-show"] == "conflicted"
    assert statuses["g3b-dinner"] == "paused"
    assert statuses["g2-hotel"] == "achieved"
    assert statuses["g-trip"] == "conflicted"


def test_untangled_branch_finishes_while_others_pause(gated_run):
    state, events = gated_run
    pause_at = next(e.seq for e in events if e.kind is EventKind.BRANCH_PAUSED)
    hotel_done = next(e.seq for e in events if e.kind is EventKind.TASK_COMPLETED
                      and e.payload["task_id"] == "task-g2-hotel")
    assert hotel_done > pause_at
    assert state.task_graph.task("task-g2-hotel").state is TaskState.DONE
    assert "g2-hotel" in state.reports


def test_proposals_arrive_ranked(gated_run):
    state, events = gated_run
    proposed = next(e for e in events if e.kind is EventKind.REPAIR_PROPOSED)
    ids = [c["id"] for c in proposed.payload["candidates"]]
    assert ids == [c.id for c in state.proposals[CONFLICT_ID]]
    assert len(ids) == len(set(ids)) >= 1
    assert all(i.startswith(f"rc-{CONFLICT_ID}-") for i in ids)


def test_auto_mode_repairs_inline_and_completes():
    state, events = support.run_bundle("travel_show_conflict", autonomy=Autonomy.AUTO)
    assert EventKind.BRANCH_PAUSED not in kinds(events)
    proposed = next(e for e in events if e.kind is EventKind.REPAIR_PROPOSED)
    applied = events[events.index(proposed) + 1]
    assert applied.kind is EventKind.PLAN_UPDATED
    assert applied.payload["reason"] == "repair"
    assert applied.payload["candidate_id"] == proposed.payload["candidates"][0]["id"]
    assert proposed.payload["candidates"][0]["moves"][0]["kind"] == "choose_option"
    assert state.phase is Phase.COMPLETED
    assert state.root_achieved
    assert not state.conflicts


def test_manual_mode_stages_then_start_applies(gated_run):
    state, _ = support.run_bundle("travel_show_conflict", autonomy=Autonomy.MANUAL)
    top = state.proposals[CONFLICT_ID][0]
    state, events = step(state, Command(
        CommandKind.APPLY_PLAN_UPDATE, {"candidate_id": top.id}))
    assert kinds(events) == [EventKind.REPAIR_PROPOSED]
    assert events[0].payload == {
        "stage": "selected", "conflict_id": CONFLICT_ID, "candidate_id": top.id,
    }
    assert state.pending == (CONFLICT_ID, top.id)
    assert CONFLICT_ID in state.conflicts  # staged, not yet applied
    state, events = step(state, Command(CommandKind.START))
    assert events[0].kind is EventKind.PLAN_UPDATED
    assert events[0].payload["candidate_id"] == top.id
    assert EventKind.BRANCH_RESUMED in kinds(events)
    assert state.pending is None
    assert not state.conflicts
    state = run_session(state)
    assert state.phase is Phase.COMPLETED
    assert state.root_achieved


def test_manual_confirm_applies_in_one_command():
    state, _ = support.run_bundle("travel_show_conflict", autonomy=Autonomy.MANUAL)
    top = state.proposals[CONFLICT_ID][0]
    state, events = step(state, Command(
        CommandKind.APPLY_PLAN_UPDATE, {"candidate_id": top.id, "confirm": True}))
    assert events[0].kind is EventKind.PLAN_UPDATED
    assert not state.conflicts


def test_gated_mode_applies_without_confirmation(gated_run):
    state, _ = gated_run
    top = state.proposals[CONFLICT_ID][0]
    state, events = step(state, Command(
        CommandKind.APPLY_PLAN_UPDATE, {"candidate_id": top.id}))
    assert events[0].kind is EventKind.PLAN_UPDATED
    assert not state.conflicts
    assert run_session(state).root_achieved


def test_apply_rejects_unknown_candidates(gated_run):
    state, _ = gated_run
    with pytest.raises(StaleCandidate):
        step(state, Command(CommandKind.APPLY_PLAN_UPDATE,
                            {"candidate_id": "rc-ghost-1"}))


def test_apply_needs_an_executing_plan():
    state, _ = planning_session()
    with pytest.raises(InvalidCommand):
        step(state, Command(CommandKind.APPLY_PLAN_UPDATE, {"candidate_id": "rc-x-1"}))


def test_switching_to_auto_resolves_standing_conflicts(gated_run):
    state, _ = gated_run
    state, events = step(state, Command(
        CommandKind.SET_AUTONOMY, {"level": "auto"}))
    assert events[0].kind is EventKind.AUTONOMY_CHANGED
    assert EventKind.PLAN_UPDATED in kinds(events)
    assert state.autonomy is Autonomy.AUTO
    assert not state.conflicts
    assert not state.paused
    state = run_session(state)
    assert state.phase is Phase.COMPLETED
    assert state.root_achieved


def test_autonomy_change_is_an_event():
    state, _ = planning_session()
    state, events = step(state, Command(CommandKind.SET_AUTONOMY, {"level": "manual"}))
    assert kinds(events) == [EventKind.AUTONOMY_CHANGED]
    assert events[0].payload == {"level": "manual"}
    assert state.autonomy is Autonomy.MANUAL


def test_unknown_autonomy_level_is_rejected():
    state, _ = planning_session()
    with pytest.raises(InvalidCommand):
        step(state, Command(CommandKind.SET_AUTONOMY, {"level": "chaotic"}))


def test_user_pause_and_resume_roundtrip():
    state, _ = planning_session()
    state, _ = step(state, Command(CommandKind.START))
    state, events = step(state, Command(
        CommandKind.PAUSE_BRANCH, {"goal_id": "g3-itinerary"}))
    assert kinds(events) == [EventKind.BRANCH_PAUSED]
    assert events[0].payload["task_ids"] == ["task-g3a-show", "task-g3b-dinner"]
    assert events[0].payload["conflict_id"] is None
    assert session_snapshot(state)["paused_goal_ids"] == ["g3-itinerary"]
    assert state.task_graph.task("task-g3a-show").state is TaskState.PAUSED
    state, events = step(state, Command(
        CommandKind.RESUME_BRANCH, {"goal_id": "g3-itinerary"}))
    assert kinds(events) == [EventKind.BRANCH_RESUMED]
    assert state.task_graph.task("task-g3a-show").state is TaskState.BLOCKED
    assert not state.paused
    state = run_session(state)
    assert state.phase is Phase.COMPLETED
    assert state.root_achieved


def test_pause_validates_goal_and_phase():
    state, _ = planning_session()
    with pytest.raises(UnknownGoal):
        step(state, Command(CommandKind.PAUSE_BRANCH, {"goal_id": "g-ghost"}))
    with pytest.raises(InvalidCommand):
        step(state, Command(CommandKind.PAUSE_BRANCH, {"goal_id": "g2-hotel"}))


def test_resume_requires_a_paused_branch(clean_run):
    state, _ = clean_run
    with pytest.raises(InvalidCommand):
        step(state, Command(CommandKind.RESUME_BRANCH, {"goal_id": "g2-hotel"}))


def test_task_finished_requires_a_running_task(clean_run):
    planning, _ = planning_session()
    with pytest.raises(InvalidCommand):
        step(planning, Command(CommandKind.TASK_FINISHED,
                               {"task_id": "task-g1-flight", "outcome": "completed"}))
    completed, _ = clean_run
    with pytest.raises(InvalidCommand):
        step(completed, Command(CommandKind.TASK_FINISHED,
                                {"task_id": "task-g1-flight", "outcome": "completed"}))


def test_start_without_staged_repair_is_rejected(gated_run):
    state, _ = gated_run
    with pytest.raises(InvalidCommand) as err:
        step(state, Command(CommandKind.START))
    assert err.value.details["phase"] == "executing"


def test_user_edit_retitles_a_goal():
    state, _ = planning_session()
    state, events = step(state, Command(
        CommandKind.USER_EDIT,
        {"goal_id": "g2-hotel", "patch": {"title": "Hotel by the bay"}}))
    (event,) = events
    assert event.kind is EventKind.GOAL_UPDATED
    assert event.payload["stage"] == "edit"
    entry = next(c for c in event.payload["changes"] if c["field"] == "title")
    assert entry["after"] == "Hotel by the bay"
    assert state.graph.nodes["g2-hotel"].title == "Hotel by the bay"


def test_user_edit_refreshes_mirrored_budget():
    state, _ = planning_session()
    attrs = dict(node_to_obj(state.graph.nodes["g-trip"])["attributes"])
    attrs["budget"] = {"kind": "money", "value": "$900", "unit": None}
    state, events = step(state, Command(
        CommandKind.USER_EDIT, {"goal_id": "g-trip", "patch": {"attributes": attrs}}))
    mirror = next(c for c in state.graph.nodes["g-trip"].constraints
                  if c.id == "mirror:budget")
    assert str(mirror.value.value) == "900.00"
    fields = {c["field"] for c in events[0].payload["changes"]}
    assert {"attributes", "constraints"} <= fields


def test_user_edit_reverifies_goals_with_evidence(gated_run):
    state, _ = gated_run
    state, events = step(state, Command(
        CommandKind.USER_EDIT,
        {"goal_id": "g1-flight", "patch": {"title": "Outbound flight"}}))
    assert kinds(events) == [EventKind.GOAL_UPDATED, EventKind.VERIFICATION_REPORT]
    assert events[1].payload["report"]["goal_id"] == "g1-flight"


def test_user_edit_validates_goal_and_phase(clean_run):
    state, _ = planning_session()
    with pytest.raises(UnknownGoal):
        step(state, Command(CommandKind.USER_EDIT,
                            {"goal_id": "g-ghost", "patch": {"title": "x"}}))
    completed, _ = clean_run
    with pytest.raises(InvalidCommand):
        step(completed, Command(CommandKind.USER_EDIT,
                                {"goal_id": "g2-hotel", "patch": {"title": "x"}}))


def test_log_write_read_replay_roundtrip(tmp_path, clean_run):
    state, events = clean_run
    path = str(tmp_path / "session.jsonl")
    write_events(path, events, append=False)
    assert read_log(path) == events
    assert session_snapshot(replay(path)) == session_snapshot(state)


def test_write_events_appends_by_default(tmp_path, clean_run):
    _, events = clean_run
    path = str(tmp_path / "session.jsonl")
    write_events(path, events[:4], append=False)
    write_events(path, events[4:])
    assert read_log(path) == events


def test_read_log_rejects_gaps(tmp_path, clean_run):
    _, events = clean_run
    path = str(tmp_path / "gap.jsonl")
    write_events(path, events[:3] + events[4:], append=False)
    with pytest.raises(LogCorruption) as err:
        read_log(path)
    assert "gapless-violation at seq 4" in str(err.value)


def test_read_log_rejects_malformed_lines(tmp_path, clean_run):
    _, events = clean_run
    path = str(tmp_path / "bad.jsonl")
    write_events(path, events[:2], append=False)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("{not json}\n")
    with pytest.raises(LogCorruption) as err:
        read_log(path)
    assert err.value.details["path"] == path


def test_awaiting_user_predicate(clean_run, gated_run):
    completed, _ = clean_run
    waiting, _ = gated_run
    planning, _ = planning_session()
    assert not awaiting_user(completed)
    assert awaiting_user(waiting)
    assert not awaiting_user(planning)


def test_session_snapshot_shape(gated_run):
    state, _ = gated_run
    snap = session_snapshot(state)
    assert list(snap) == sorted(snap)
    assert set(snap) == {
        "autonomy", "awaiting_user", "conflicts", "document", "goal_statuses",
        "paused_goal_ids", "pending", "phase", "proposals", "root_achieved",
        "seq", "session_id",
    }
    assert snap["pending"] is None
    assert [c["id"] for c in snap["conflicts"]] == [CONFLICT_ID]
    assert json.dumps(snap)  # read model stays JSON-serializable
