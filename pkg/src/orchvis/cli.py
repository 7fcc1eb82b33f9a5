"""Headless entry points: run a scenario, verify evidence, replay a log, serve.

Exit codes: 0 when a session completed with the root achieved, 2 when it
stopped awaiting user input (open conflict, staged repair, paused branch),
1 on errors or a completed session whose root fell short. Failures print
one machine-readable error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import pathlib
import sys

from . import catalog
from .agent_registry import EvidenceRecord
from .errors import OrchvisError
from .executor import (
    Autonomy,
    EventKind,
    Phase,
    SessionState,
    awaiting_user,
    open_session,
    replay as replay_log,
    run_session,
    session_snapshot,
    write_events,
)
from .goal_dsl import canonical_json, parse
from .service_api import DEFAULT_PORT, serve as serve_app
from .verifier import VerifierConfig, evaluate


def exit_code_for(state: SessionState) -> int:
    if state.phase is Phase.COMPLETED:
        return 0 if state.root_achieved else 1
    return 2 if awaiting_user(state) else 1


def _fail(exc: OrchvisError) -> int:
    print(json.dumps(exc.to_payload(), sort_keys=True), file=sys.stderr)
    return 1


def _propose_via_endpoint(bundle, ontology):
    from .intent_provider import IntentRequest, backend_from_env, propose_goals
    from .goal_dsl import graph_to_obj

    exemplars = tuple(
        (row["task_text"], row["document"])
        for row in catalog.load_intent_exemplars()
    )
    backend = backend_from_env()
    request = IntentRequest(task_text=bundle.description, exemplars=exemplars,
                            ontology=ontology)
    return graph_to_obj(propose_goals(request, backend).graph)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        bundle = catalog.load_scenario(args.scenario)
        ontology = catalog.load_ontology()
        autonomy = Autonomy(args.autonomy)
        document = (
            _propose_via_endpoint(bundle, ontology) if args.llm
            else bundle.document
        )
        session_id = f"run-{bundle.name}-{autonomy.value}-{args.seed}"
        state, events = open_session(
            session_id, document, scenario=bundle, ontology=ontology,
            seed=args.seed, autonomy=autonomy,
        )
        state = run_session(state, sink=events.append)
    except OrchvisError as exc:
        return _fail(exc)

    out = pathlib.Path(args.out)
    log_path = out.with_suffix(".events.jsonl")
    write_events(str(log_path), events, append=False)

    report = {
        "autonomy": autonomy.value,
        "conflicts": [
            e.payload["conflict"] for e in events
            if e.kind is EventKind.CONFLICT_DETECTED
        ],
        "event_log": log_path.name,
        "exit_code": exit_code_for(state),
        "repairs_applied": [
            {
                "candidate_id": e.payload["candidate_id"],
                "resolved_conflict_id": e.payload["resolved_conflict_id"],
                "seq": e.seq,
            }
            for e in events
            if e.kind is EventKind.PLAN_UPDATED
            and e.payload.get("reason") == "repair"
        ],
        "scenario": bundle.name,
        "seed": args.seed,
        "session": session_snapshot(state),
        "verification_reports": [
            e.payload["report"] for e in events
            if e.kind is EventKind.VERIFICATION_REPORT
        ],
    }
    out.write_text(canonical_json(report), "utf-8")
    print(f"{bundle.name}: {state.phase.value}, "
          f"root_achieved={str(state.root_achieved).lower()}, "
          f"events={len(events)}, report={out}")
    return report["exit_code"]


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        graph = parse(pathlib.Path(args.goals).read_text("utf-8"))
        raw = json.loads(pathlib.Path(args.evidence).read_text("utf-8"))
        records = [EvidenceRecord.from_obj(obj) for obj in raw]
        config = VerifierConfig(lambda_=args.soft_weight)
        reports = []
        for record in records:
            goal = graph.node(record.goal_id)
            reports.append(evaluate(goal, record, config).to_obj())
    except OrchvisError as exc:
        return _fail(exc)
    sys.stdout.write(canonical_json(reports))
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        state = replay_log(args.log)
    except OrchvisError as exc:
        print(json.dumps(exc.to_payload(), sort_keys=True), file=sys.stderr)
        print(exc.message, file=sys.stderr)
        return 1
    sys.stdout.write(canonical_json(session_snapshot(state)))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    serve_app(port=args.port, data_dir=args.data_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orchvis",
        description="Deterministic goal-graph orchestration sessions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario end to end")
    run.add_argument("--scenario", required=True,
                     help="packaged scenario name or a scenario file path")
    run.add_argument("--autonomy", default=Autonomy.CONFLICT_GATED.value,
                     choices=[a.value for a in Autonomy])
    run.add_argument("--seed", type=int, default=0,
                     help="tie-breaking seed for fault schedules")
    run.add_argument("--out", required=True, help="report file path")
    run.add_argument("--llm", action="store_true",
                     help="re-derive the goal document through the configured "
                          "chat endpoint instead of using the scenario's")
    run.set_defaults(fn=cmd_run)

    verify = sub.add_parser("verify", help="score evidence against a goal file")
    verify.add_argument("--goals", required=True, help="goal document path")
    verify.add_argument("--evidence", required=True,
                        help="JSON array of evidence records")
    verify.add_argument("--lambda", dest="soft_weight", type=float, default=0.5,
                        help="weight of the soft-constraint fraction")
    verify.set_defaults(fn=cmd_verify)

    rep = sub.add_parser("replay", help="fold an event log and print the state")
    rep.add_argument("--log", required=True)
    rep.set_defaults(fn=cmd_replay)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--port", type=int,
                     default=int(os.environ.get("ORCHVIS_PORT", DEFAULT_PORT)))
    srv.add_argument("--data-dir",
                     default=os.environ.get("ORCHVIS_DATA_DIR", "orchvis-data"))
    srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
