"""HTTP surface: session lifecycle, goal/plan/conflict resources, event stream.

Every mutating endpoint routes exactly one command through the engine and
then lets the driver run until the session completes or needs input, so a
session driven over HTTP writes the same event log as one driven directly.
Streams are fan-out readers of that log; reads never block writes.
"""

from __future__ import annotations

import pathlib
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse

from . import catalog
from .agent_registry import ScenarioBundle
from .errors import (
    ExhaustedRepairs,
    InvalidCommand,
    OrchvisError,
    ProviderUnavailable,
    StaleCandidate,
    UnknownGoal,
    UnknownNode,
    UnknownScenario,
)
from .executor import (
    Autonomy,
    Command,
    CommandKind,
    Event,
    Origin,
    Phase,
    SessionState,
    fold,
    open_session,
    read_log,
    run_session,
    session_snapshot,
    step,
    write_events,
)
from .goal_dsl import graph_to_obj
from .intent_provider import IntentRequest, backend_from_env, propose_goals

DEFAULT_PORT = 8080
_STATUS_BY_CODE = {
    "unknown-goal": 404,
    "unknown-node": 404,
    "unknown-scenario": 404,
    "stale-candidate": 409,
    "invalid-command": 409,
    "provider-unavailable": 503,
}


@dataclass
class ServiceConfig:
    data_dir: pathlib.Path
    heartbeat_seconds: float = 15.0
    backend: object | None = None  # intent provider; default resolved from env


@dataclass
class Session:
    """One live session: folded state plus its append-only event log."""

    session_id: str
    created_at: float
    state: SessionState
    log_path: pathlib.Path
    events: list[Event] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    appended: threading.Condition = field(default_factory=threading.Condition)

    def record(self, event: Event) -> None:
        write_events(str(self.log_path), [event], append=True)
        with self.appended:
            self.events.append(event)
            self.appended.notify_all()

    def events_from(self, seq: int) -> list[Event]:
        with self.appended:
            return [e for e in self.events if e.seq >= seq]


def _error_response(exc: OrchvisError, status: int | None = None) -> JSONResponse:
    status = status or _STATUS_BY_CODE.get(exc.code, 422)
    payload = exc.to_payload()
    if isinstance(exc, ExhaustedRepairs):
        payload["transcript"] = [
            {"prompt": prompt, "response": response}
            for prompt, response in exc.transcript
        ]
    return JSONResponse(status_code=status, content={"error": payload})


def _bundle_for(document: dict, name: str | None) -> ScenarioBundle:
    if name is not None:
        return catalog.load_scenario(name)
    candidates = [catalog.load_scenario(n) for n in catalog.scenario_names()]
    for bundle in candidates:
        if bundle.document == document:
            return bundle
    leaf_types = {
        n["ontology_type"] for n in document["nodes"]
        if not any(m["parent"] == n["id"] for m in document["nodes"])
    }
    for bundle in candidates:
        if leaf_types <= set(bundle.tables):
            return bundle
    raise UnknownScenario(
        "no packaged scenario covers the proposed goals",
        leaf_types=sorted(leaf_types),
    )


def create_app(config: ServiceConfig) -> FastAPI:
    config.data_dir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="orchvis", docs_url=None, redoc_url=None)
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    ontology = catalog.load_ontology()
    backend = config.backend if config.backend is not None else backend_from_env()

    for log_path in sorted(config.data_dir.glob("*.jsonl")):
        events = read_log(str(log_path))
        if not events:
            continue
        state = fold(events)
        sessions[state.session_id] = Session(
            session_id=state.session_id,
            created_at=log_path.stat().st_mtime,
            state=state,
            log_path=log_path,
            events=events,
        )

    @app.exception_handler(OrchvisError)
    def _on_engine_error(request: Request, exc: OrchvisError):
        return _error_response(exc)

    def _session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise UnknownNode(f"no session {session_id!r}", session_id=session_id)
        return session

    def _apply(session: Session, command: Command) -> int:
        """Route one command, then drive; returns the last event seq.

        Driving is gated on the executing phase so pre-confirm mutations
        (edits, autonomy changes) never start execution implicitly.
        """
        with session.lock:
            state, events = step(session.state, command)
            session.state = state
            for event in events:
                session.record(event)
            if session.state.phase is Phase.EXECUTING:
                session.state = run_session(session.state, sink=session.record)
            return session.state.seq

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        task_text = body.get("task_text", "")
        if not isinstance(task_text, str) or not task_text.strip():
            return JSONResponse(
                status_code=400,
                content={"error": {"code": "invalid-request",
                                   "message": "task_text must be non-empty"}},
            )
        exemplars = tuple(
            (row["task_text"], row["document"])
            for row in catalog.load_intent_exemplars()
        )
        request = IntentRequest(task_text=task_text, exemplars=exemplars,
                                ontology=ontology)
        result = propose_goals(request, backend)
        document = graph_to_obj(result.graph)
        bundle = _bundle_for(document, body.get("scenario"))
        session_id = body.get("session_id") or f"s-{uuid.uuid4().hex[:12]}"
        autonomy = Autonomy(body.get("autonomy", Autonomy.CONFLICT_GATED.value))
        state, events = open_session(
            session_id, document, scenario=bundle, ontology=ontology,
            seed=int(body.get("seed", 0)), autonomy=autonomy,
        )
        session = Session(
            session_id=session_id,
            created_at=time.time(),
            state=state,
            log_path=config.data_dir / f"{session_id}.jsonl",
        )
        with registry_lock:
            if session_id in sessions:
                raise InvalidCommand(f"session {session_id!r} already exists")
            sessions[session_id] = session
        for event in events:
            session.record(event)
        return {
            "session_id": session_id,
            "document": graph_to_obj(state.graph),  # normalized at ingest
            "provider_id": result.provider_id,
            "rounds_used": result.rounds_used,
            "seq": session.state.seq,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = _session(session_id)
        with session.lock:
            return session_snapshot(session.state)

    @app.patch("/sessions/{session_id}/goals/{goal_id}")
    def patch_goal(session_id: str, goal_id: str, body: dict = Body(...)):
        session = _session(session_id)
        seq = _apply(session, Command(
            CommandKind.USER_EDIT,
            {"goal_id": goal_id, "patch": body.get("patch", body)},
            Origin.USER,
        ))
        with session.lock:
            node = session.state.graph.node(goal_id)
            from .goal_dsl import node_to_obj

            return {"seq": seq, "goal": node_to_obj(node)}

    @app.post("/sessions/{session_id}/confirm")
    def confirm(session_id: str):
        session = _session(session_id)
        seq = _apply(session, Command(CommandKind.START, {}, Origin.USER))
        with session.lock:
            return {"seq": seq, "session": session_snapshot(session.state)}

    @app.get("/sessions/{session_id}/plan")
    def get_plan(session_id: str):
        session = _session(session_id)
        with session.lock:
            state = session.state
            return {
                "seq": state.seq,
                "phase": state.phase.value,
                "task_graph": (
                    state.task_graph.to_obj() if state.task_graph is not None
                    else None
                ),
                "match_report": state.match_report,
            }

    @app.get("/sessions/{session_id}/conflicts")
    def get_conflicts(session_id: str):
        session = _session(session_id)
        with session.lock:
            snapshot = session_snapshot(session.state)
            return {
                "seq": snapshot["seq"],
                "conflicts": snapshot["conflicts"],
                "proposals": snapshot["proposals"],
                "pending": snapshot["pending"],
            }

    @app.post("/sessions/{session_id}/conflicts/{conflict_id}/resolve")
    def resolve(session_id: str, conflict_id: str, body: dict = Body(...)):
        session = _session(session_id)
        with session.lock:
            if conflict_id not in session.state.conflicts:
                raise UnknownNode(
                    f"no conflict {conflict_id!r}", conflict_id=conflict_id,
                )
        candidate_id = body.get("candidate_id", "")
        if not candidate_id:
            raise StaleCandidate("resolve needs a candidate_id")
        seq = _apply(session, Command(
            CommandKind.APPLY_PLAN_UPDATE, {"candidate_id": candidate_id},
            Origin.USER,
        ))
        with session.lock:
            return {"seq": seq, "session": session_snapshot(session.state)}

    @app.post("/sessions/{session_id}/autonomy")
    def set_autonomy(session_id: str, body: dict = Body(...)):
        session = _session(session_id)
        level = body.get("level", "")
        if level not in {a.value for a in Autonomy}:
            return JSONResponse(
                status_code=400,
                content={"error": {"code": "invalid-request",
                                   "message": f"unknown autonomy level {level!r}"}},
            )
        seq = _apply(session, Command(
            CommandKind.SET_AUTONOMY, {"level": level}, Origin.USER,
        ))
        with session.lock:
            return {"seq": seq, "session": session_snapshot(session.state)}

    @app.post("/sessions/{session_id}/pause")
    def pause(session_id: str, body: dict = Body(...)):
        session = _session(session_id)
        seq = _apply(session, Command(
            CommandKind.PAUSE_BRANCH, {"goal_id": body.get("goal_id", "")},
            Origin.USER,
        ))
        with session.lock:
            return {"seq": seq, "session": session_snapshot(session.state)}

    @app.post("/sessions/{session_id}/resume")
    def resume(session_id: str, body: dict = Body(...)):
        session = _session(session_id)
        seq = _apply(session, Command(
            CommandKind.RESUME_BRANCH, {"goal_id": body.get("goal_id", "")},
            Origin.USER,
        ))
        with session.lock:
            return {"seq": seq, "session": session_snapshot(session.state)}

    def _frames(session: Session, from_seq: int):
        next_seq = max(from_seq, 1)
        while True:
            batch = session.events_from(next_seq)
            for event in batch:
                yield f"id: {event.seq}\nevent: {event.kind.value}\ndata: {event.to_line()}\n\n"
                next_seq = event.seq + 1
            with session.lock:
                done = session.state.phase is Phase.COMPLETED
                head = session.state.seq
            if done and next_seq > head:
                yield "event: end\ndata: {}\n\n"
                return
            with session.appended:
                if session.state.seq < next_seq:
                    signaled = session.appended.wait(config.heartbeat_seconds)
                    if not signaled:
                        yield ": keep-alive\n\n"

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, from_seq: int = Query(default=1)):
        session = _session(session_id)
        return StreamingResponse(
            _frames(session, from_seq),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "Connection": "keep-alive",
                     "X-Accel-Buffering": "no"},
        )

    return app


def serve(port: int, data_dir: str, heartbeat_seconds: float = 15.0) -> None:
    import uvicorn

    app = create_app(ServiceConfig(
        data_dir=pathlib.Path(data_dir), heartbeat_seconds=heartbeat_seconds,
    ))
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="warning")
