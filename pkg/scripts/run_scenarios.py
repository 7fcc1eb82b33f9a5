"""Drive every packaged scenario across the autonomy levels.

Run from the repository root:

    python3 scripts/run_scenarios.py [--autonomy LEVEL] [--seed N] [--out-dir DIR]

One row per (scenario, autonomy) pair: final phase, whether the root goal
was achieved, event count, and any conflicts still on the table. With
--out-dir every run also leaves its report and event log behind, ready for
`orchvis replay` or the panel's offline mode.
"""

from __future__ import annotations

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from orchvis import catalog  # noqa: E402
from orchvis.executor import (  # noqa: E402
    Autonomy,
    awaiting_user,
    open_session,
    run_session,
    write_events,
)

COLUMNS = "{:<22} {:<15} {:<10} {:<5} {:>6}  {}"


def drive(name: str, autonomy: Autonomy, seed: int):
    bundle = catalog.load_scenario(name)
    state, events = open_session(
        f"run-{name}-{autonomy.value}-{seed}",
        scenario=bundle,
        ontology=catalog.load_ontology(),
        seed=seed,
        autonomy=autonomy,
    )
    events = list(events)
    state = run_session(state, sink=events.append)
    return state, events


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--autonomy", choices=[a.value for a in Autonomy],
                        help="run a single level instead of all three")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", help="write <scenario>-<level>.events.jsonl here")
    args = parser.parse_args(argv)

    levels = ([Autonomy(args.autonomy)] if args.autonomy
              else [Autonomy.MANUAL, Autonomy.CONFLICT_GATED, Autonomy.AUTO])
    out_dir = pathlib.Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    print(COLUMNS.format("scenario", "autonomy", "phase", "root", "events",
                         "conflicts"))
    awaiting = 0
    for name in catalog.scenario_names():
        for level in levels:
            state, events = drive(name, level, args.seed)
            if awaiting_user(state):
                awaiting += 1
            if out_dir:
                write_events(str(out_dir / f"{name}-{level.value}.events.jsonl"),
                             events, append=False)
            print(COLUMNS.format(
                name, level.value, state.phase.value,
                "yes" if state.root_achieved else "no", len(events),
                ", ".join(sorted(state.conflicts)) or "-"))
    print(f"\n{awaiting} run(s) stopped awaiting user input")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
