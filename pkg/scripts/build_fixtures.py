"""Regenerate the packaged fixture catalog from typed builders.

Run from the repository root:

    python3 scripts/build_fixtures.py

Every scenario document is round-tripped through the parser and the agent
selection is re-derived, so a fixture that drifts from the engine's rules
fails here instead of inside the test suite.
"""

from __future__ import annotations

import pathlib
import sys
from decimal import Decimal

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from orchvis.agent_registry import (  # noqa: E402
    FaultEffect,
    FaultEntry,
    FaultSchedule,
    FixtureRow,
    FixtureTable,
    ScenarioBundle,
    SkillMatrix,
    rank_rows,
)
from orchvis.goal_dsl import canonical_json, graph_to_obj, parse  # noqa: E402
from orchvis.goal_model import Ontology, normalize_graph  # noqa: E402
from orchvis.goal_dsl import regenerate_mirrors  # noqa: E402
from orchvis.values import TypedValue, ValueKind, parse_timestamp  # noqa: E402

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "src" / "orchvis" / "fixtures"


def money(amount: str) -> dict:
    return {"kind": "money", "unit": "USD", "value": amount}


def text(value: str) -> dict:
    return {"kind": "text", "unit": None, "value": value}


def number(value) -> dict:
    return {"kind": "number", "unit": None, "value": value}


def ts(value: str) -> dict:
    return {"kind": "timestamp", "unit": None, "value": value}


def interval(lo: dict, hi: dict) -> dict:
    return {"kind": "interval", "lo": lo, "hi": hi}


def constraint(cid, severity, subject, op, value, units=None) -> dict:
    return {
        "id": cid, "severity": severity, "subject": subject,
        "op": op, "value": value, "units": units,
    }


def node(nid, title, otype, parent, relation, attributes=None, constraints=None,
         condition=None) -> dict:
    obj = {
        "id": nid,
        "title": title,
        "parent": parent,
        "relation": relation,
        "ontology_type": otype,
        "attributes": attributes or {},
        "constraints": constraints or [],
        "status": "pending",
    }
    if condition is not None:
        obj["condition"] = condition
    return obj


# --- ontology ----------------------------------------------------------------

ONTOLOGY = {
    "types": {
        "travel.trip": {
            "attributes": {
                "budget": {
                    "kind": "money", "required": False,
                    "mirror": {
                        "subject": "price.amount", "op": "le", "severity": "hard",
                    },
                },
                "destination": {"kind": "text", "required": False},
            },
            "tools": [],
            "exclusive_attention": False,
            "parent": None,
        },
        "travel.flight": {
            "attributes": {
                "origin": {"kind": "text", "required": True},
                "destination": {"kind": "text", "required": True},
                "date": {"kind": "timestamp", "required": False},
            },
            "tools": ["flight_search", "booking"],
            "exclusive_attention": True,
            "parent": None,
        },
        "travel.hotel": {
            "attributes": {
                "city": {"kind": "text", "required": False},
                "nights": {"kind": "number", "required": False},
            },
            "tools": ["hotel_search", "booking"],
            "exclusive_attention": False,
            "parent": None,
        },
        "travel.event": {
            "attributes": {
                "name": {"kind": "text", "required": False},
                "date": {"kind": "timestamp", "required": False},
            },
            "tools": ["event_booking"],
            "exclusive_attention": True,
            "parent": None,
        },
        "travel.itinerary": {
            "attributes": {},
            "tools": [],
            "exclusive_attention": False,
            "parent": None,
        },
        "travel.lounge": {
            "attributes": {},
            "tools": ["concierge"],
            "exclusive_attention": False,
            "parent": None,
        },
        "errand.day": {
            "attributes": {},
            "tools": [],
            "exclusive_attention": False,
            "parent": None,
        },
        "errand.appointment": {
            "attributes": {
                "provider": {"kind": "text", "required": False},
            },
            "tools": ["scheduling"],
            "exclusive_attention": True,
            "parent": None,
        },
        "errand.service": {
            "attributes": {
                "provider": {"kind": "text", "required": False},
            },
            "tools": ["scheduling"],
            "exclusive_attention": True,
            "parent": None,
        },
    }
}


# --- goal documents ----------------------------------------------------------

CLOCK = "2025-03-10T08:00:00Z"
DAY = "2025-03-12"


def flight_node(parent="g-trip") -> dict:
    return node(
        "g1-flight", "Book outbound flight", "travel.flight", parent, "sequential",
        attributes={
            "origin": text("ATL"),
            "destination": text("SFO"),
            "date": ts(f"{DAY}T00:00:00Z"),
        },
        constraints=[
            constraint("c-budget", "hard", "price.amount", "le", money("400.00"),
                       units="USD"),
            constraint("c-dest", "hard", "destination", "eq", text("SFO")),
            constraint("c-origin", "hard", "origin", "eq", text("ATL")),
            constraint("c-morning", "soft", "depart_time", "within_interval",
                       interval(ts(f"{DAY}T06:00:00Z"), ts(f"{DAY}T12:00:00Z"))),
            constraint("c-nonstop", "soft", "stops", "eq", number(0)),
        ],
    )


def hotel_node() -> dict:
    return node(
        "g2-hotel", "Reserve a hotel", "travel.hotel", "g-trip", "parallel",
        attributes={"city": text("SFO"), "nights": number(2)},
        constraints=[
            constraint("c-city", "hard", "city", "eq", text("SFO")),
            constraint("c-price", "hard", "price.amount", "le", money("700.00"),
                       units="USD"),
            constraint("c-district", "soft", "district", "eq", text("downtown")),
            constraint("c-rating", "soft", "rating", "ge", number(4)),
        ],
    )


def trip_root(budget: str) -> dict:
    return node(
        "g-trip", "Weekend trip to San Francisco", "travel.trip", None, "parallel",
        attributes={"budget": money(budget), "destination": text("SFO")},
        constraints=[
            constraint("mirror:budget", "hard", "price.amount", "le", money(budget),
                       units="USD"),
        ],
    )


TRAVEL_DOC = {
    "version": 1,
    "root": "g-trip",
    "clock": CLOCK,
    "nodes": [
        trip_root("1200.00"),
        flight_node(),
        hotel_node(),
        node("g3-itinerary", "Evening itinerary", "travel.itinerary", "g-trip",
             "sequential"),
        node(
            "g3a-show", "Book an evening show", "travel.event", "g3-itinerary",
            "sequential",
            attributes={"date": ts(f"{DAY}T00:00:00Z")},
            constraints=[
                constraint("c-cat", "hard", "category", "eq", text("show")),
                constraint("c-showdate", "hard", "start_time", "within_interval",
                           interval(ts(f"{DAY}T00:00:00Z"), ts("2025-03-13T00:00:00Z"))),
                constraint("c-evening", "soft", "start_time", "ge",
                           ts(f"{DAY}T17:00:00Z")),
            ],
        ),
        node(
            "g3b-dinner", "Reserve a late dinner", "travel.event", "g3-itinerary",
            "sequential",
            constraints=[
                constraint("c-cat", "hard", "category", "eq", text("dining")),
                constraint("c-late", "hard", "start_time", "within_interval",
                           interval(ts(f"{DAY}T21:30:00Z"), ts(f"{DAY}T23:59:00Z"))),
            ],
        ),
    ],
}

BUDGET_DOC = {
    "version": 1,
    "root": "g-trip",
    "clock": CLOCK,
    "nodes": [trip_root("900.00"), flight_node(), hotel_node()],
}

CONDITIONAL_DOC = {
    "version": 1,
    "root": "g-trip",
    "clock": CLOCK,
    "nodes": [
        node("g-trip", "Fly out with a lounge stop if time allows", "travel.trip",
             None, "parallel", attributes={"destination": text("SFO")}),
        flight_node(),
        node(
            "g4-lounge", "Visit the arrivals lounge", "travel.lounge", "g-trip",
            "conditional",
            condition={
                "goal": "g1-flight",
                "subject": "arrive_time",
                "op": "le",
                "value": ts(f"{DAY}T09:00:00Z"),
            },
        ),
    ],
}

ERRANDS_DOC = {
    "version": 1,
    "root": "e-day",
    "clock": "2025-03-16T08:00:00Z",
    "nodes": [
        node("e-day", "Tuesday errands", "errand.day", None, "parallel"),
        node(
            "e1-dentist", "Dentist check-up", "errand.appointment", "e-day",
            "parallel",
            attributes={"provider": text("Lakeside Dental")},
            constraints=[
                constraint("c-window", "hard", "start_time", "within_interval",
                           interval(ts("2025-03-18T08:00:00Z"),
                                    ts("2025-03-18T12:00:00Z"))),
            ],
        ),
        node(
            "e2-car", "Car service", "errand.service", "e-day", "parallel",
            attributes={"provider": text("Hilltop Garage")},
            constraints=[
                constraint("c-window", "hard", "start_time", "within_interval",
                           interval(ts("2025-03-18T08:00:00Z"),
                                    ts("2025-03-18T12:00:00Z"))),
            ],
        ),
    ],
}


# --- fixture tables ----------------------------------------------------------


def tv(kind: str, value, unit=None) -> TypedValue:
    if kind == "money":
        return TypedValue(ValueKind.MONEY, Decimal(value), unit or "USD")
    if kind == "timestamp":
        return TypedValue(ValueKind.TIMESTAMP, parse_timestamp(value))
    if kind == "number":
        return TypedValue(ValueKind.NUMBER, value)
    return TypedValue(ValueKind.TEXT, value)


def flight_table() -> FixtureTable:
    columns = {
        "airline": {"kind": "text", "unit": None},
        "arrive_time": {"kind": "timestamp", "unit": None},
        "depart_time": {"kind": "timestamp", "unit": None},
        "destination": {"kind": "text", "unit": None},
        "origin": {"kind": "text", "unit": None},
        "price.amount": {"kind": "money", "unit": "USD"},
        "stops": {"kind": "number", "unit": None},
    }
    raw = [
        ("f01", "ATL", "SFO", "08:05", "10:31", "356.00", 0, "DL"),
        ("f02", "ATL", "SFO", "12:05", "14:40", "410.00", 0, "DL"),
        ("f03", "ATL", "SFO", "06:00", "09:45", "298.00", 1, "UA"),
        ("f04", "ATL", "SFO", "09:15", "11:55", "372.00", 0, "AA"),
        ("f05", "ATL", "JFK", "07:30", "09:45", "180.00", 0, "DL"),
        ("f06", "ATL", "SFO", "16:20", "18:55", "340.00", 1, "WN"),
        ("f07", "ATL", "SFO", "08:45", "13:10", "322.00", 2, "UA"),
        ("f08", "ATL", "SFO", "19:05", "21:38", "356.00", 0, "DL"),
        ("f09", "LAX", "SFO", "10:00", "11:30", "120.00", 0, "UA"),
        ("f10", "ATL", "SFO", "12:30", "15:02", "410.00", 0, "AA"),
    ]
    rows = tuple(
        FixtureRow(id=rid, fields={
            "origin": tv("text", origin),
            "destination": tv("text", dest),
            "depart_time": tv("timestamp", f"{DAY}T{dep}:00Z"),
            "arrive_time": tv("timestamp", f"{DAY}T{arr}:00Z"),
            "price.amount": tv("money", price),
            "stops": tv("number", stops),
            "airline": tv("text", airline),
        })
        for rid, origin, dest, dep, arr, price, stops, airline in raw
    )
    return FixtureTable(ontology_type="travel.flight", columns=columns, rows=rows)


def hotel_table() -> FixtureTable:
    columns = {
        "city": {"kind": "text", "unit": None},
        "district": {"kind": "text", "unit": None},
        "name": {"kind": "text", "unit": None},
        "price.amount": {"kind": "money", "unit": "USD"},
        "rating": {"kind": "number", "unit": None},
    }
    raw = [
        ("h01", "Marina Gate Hotel", "SFO", "downtown", "584.00", 4.5),
        ("h02", "Bayside Budget Inn", "SFO", "airport", "475.00", 3.8),
        ("h03", "Pacific Crown", "SFO", "downtown", "812.00", 4.8),
        ("h04", "Union Square Suites", "SFO", "downtown", "655.00", 4.2),
        ("h05", "Harborview Lodge", "OAK", "downtown", "390.00", 4.1),
    ]
    rows = tuple(
        FixtureRow(id=rid, fields={
            "name": tv("text", name),
            "city": tv("text", city),
            "district": tv("text", district),
            "price.amount": tv("money", price),
            "rating": tv("number", rating),
        })
        for rid, name, city, district, price, rating in raw
    )
    return FixtureTable(ontology_type="travel.hotel", columns=columns, rows=rows)


def event_table() -> FixtureTable:
    columns = {
        "category": {"kind": "text", "unit": None},
        "end_time": {"kind": "timestamp", "unit": None},
        "name": {"kind": "text", "unit": None},
        "price.amount": {"kind": "money", "unit": "USD"},
        "start_time": {"kind": "timestamp", "unit": None},
    }
    raw = [
        ("s01", "Riverside Jazz Night", "show", f"{DAY}T19:00:00Z",
         f"{DAY}T21:00:00Z", "95.00"),
        ("s02", "Riverside Jazz Matinee", "show", f"{DAY}T09:00:00Z",
         f"{DAY}T11:00:00Z", "120.00"),
        ("s03", "Harbor Lights Revue", "show", "2025-03-13T19:30:00Z",
         "2025-03-13T21:30:00Z", "150.00"),
        ("s04", "Late Supper at Marlow's", "dining", f"{DAY}T22:00:00Z",
         f"{DAY}T23:00:00Z", "40.00"),
        ("s05", "Chef's Counter", "dining", f"{DAY}T21:45:00Z",
         f"{DAY}T23:15:00Z", "85.00"),
    ]
    rows = tuple(
        FixtureRow(id=rid, fields={
            "name": tv("text", name),
            "category": tv("text", category),
            "start_time": tv("timestamp", start),
            "end_time": tv("timestamp", end),
            "price.amount": tv("money", price),
        })
        for rid, name, category, start, end, price in raw
    )
    return FixtureTable(ontology_type="travel.event", columns=columns, rows=rows)


def lounge_table() -> FixtureTable:
    columns = {
        "name": {"kind": "text", "unit": None},
        "price.amount": {"kind": "money", "unit": "USD"},
    }
    rows = (
        FixtureRow(id="l01", fields={
            "name": tv("text", "SkyHarbor Arrivals Lounge"),
            "price.amount": tv("money", "45.00"),
        }),
    )
    return FixtureTable(ontology_type="travel.lounge", columns=columns, rows=rows)


def appointment_table() -> FixtureTable:
    columns = {
        "end_time": {"kind": "timestamp", "unit": None},
        "provider": {"kind": "text", "unit": None},
        "start_time": {"kind": "timestamp", "unit": None},
    }
    raw = [
        ("a01", "Lakeside Dental", "2025-03-18T09:00:00Z", "2025-03-18T10:00:00Z"),
        ("a02", "Lakeside Dental", "2025-03-18T10:30:00Z", "2025-03-18T11:30:00Z"),
    ]
    rows = tuple(
        FixtureRow(id=rid, fields={
            "provider": tv("text", provider),
            "start_time": tv("timestamp", start),
            "end_time": tv("timestamp", end),
        })
        for rid, provider, start, end in raw
    )
    return FixtureTable(ontology_type="errand.appointment", columns=columns, rows=rows)


def service_table() -> FixtureTable:
    columns = {
        "end_time": {"kind": "timestamp", "unit": None},
        "provider": {"kind": "text", "unit": None},
        "start_time": {"kind": "timestamp", "unit": None},
    }
    raw = [
        ("v01", "Hilltop Garage", "2025-03-18T09:30:00Z", "2025-03-18T11:00:00Z"),
        ("v02", "Hilltop Garage", "2025-03-18T08:30:00Z", "2025-03-18T10:45:00Z"),
    ]
    rows = tuple(
        FixtureRow(id=rid, fields={
            "provider": tv("text", provider),
            "start_time": tv("timestamp", start),
            "end_time": tv("timestamp", end),
        })
        for rid, provider, start, end in raw
    )
    return FixtureTable(ontology_type="errand.service", columns=columns, rows=rows)


# --- agents and scenarios ----------------------------------------------------


def agent(agent_id, tools, input_types, success_rate, cost) -> SkillMatrix:
    return SkillMatrix(
        agent_id=agent_id,
        tools=frozenset(tools),
        input_types=frozenset(input_types),
        output_types=frozenset(input_types),
        success_rate=success_rate,
        cost_per_call=tv("money", cost),
    )


TRAVEL_AGENTS = (
    agent("bk-events", ["event_booking"], ["travel.event"], 0.93, "1.25"),
    agent("bk-flights", ["flight_search", "booking"], ["travel.flight"], 0.97, "2.50"),
    agent("bk-hotels", ["hotel_search", "booking"], ["travel.hotel"], 0.95, "2.00"),
)

TRAVEL_TABLES = {
    "travel.flight": flight_table(),
    "travel.hotel": hotel_table(),
    "travel.event": event_table(),
}

SCENARIOS = [
    ScenarioBundle(
        name="travel_clean",
        description=(
            "Flight, hotel, and an evening itinerary with no injected faults; "
            "every goal should verify on the first pass."
        ),
        document=TRAVEL_DOC,
        agents=TRAVEL_AGENTS,
        tables=TRAVEL_TABLES,
        faults=FaultSchedule(()),
        expected_conflicts=(),
    ),
    ScenarioBundle(
        name="travel_show_conflict",
        description=(
            "The events agent books the matinee slot, which collides with the "
            "outbound flight; the hotel booking is delayed so it lands after "
            "the conflict is flagged."
        ),
        document=TRAVEL_DOC,
        agents=TRAVEL_AGENTS,
        tables=TRAVEL_TABLES,
        faults=FaultSchedule((
            FaultEntry(agent_id="bk-events", trigger="g3a-show",
                       effect=FaultEffect.EMIT_CONFLICTING_TIME),
            FaultEntry(agent_id="bk-hotels", trigger="g2-hotel",
                       effect=FaultEffect.DELAY),
        )),
        expected_conflicts=(
            {"kind": "temporal_overlap",
             "involved_goal_ids": ["g1-flight", "g3a-show"]},
        ),
    ),
    ScenarioBundle(
        name="travel_budget",
        description=(
            "Flight plus hotel against a 900 USD trip budget; the default "
            "picks total 940 USD, so the budget overruns until a cheaper "
            "hotel option is chosen."
        ),
        document=BUDGET_DOC,
        agents=TRAVEL_AGENTS,
        tables=TRAVEL_TABLES,
        faults=FaultSchedule(()),
        expected_conflicts=(
            {"kind": "budget_exceeded",
             "involved_goal_ids": ["g-trip", "g1-flight", "g2-hotel"]},
        ),
    ),
    ScenarioBundle(
        name="errands_static",
        description=(
            "Two exclusive-attention errands whose only available slots all "
            "overlap; detected before any agent call, and no closed-move "
            "repair exists."
        ),
        document=ERRANDS_DOC,
        agents=(
            agent("bk-sched", ["scheduling"],
                  ["errand.appointment", "errand.service"], 0.92, "0.75"),
        ),
        tables={
            "errand.appointment": appointment_table(),
            "errand.service": service_table(),
        },
        faults=FaultSchedule(()),
        expected_conflicts=(
            {"kind": "static_contradiction",
             "involved_goal_ids": ["e1-dentist", "e2-car"]},
        ),
    ),
    ScenarioBundle(
        name="travel_conditional",
        description=(
            "A lounge visit gated on the flight landing by 09:00; the booked "
            "flight lands at 10:31, so the lounge goal completes vacuously "
            "without an agent call."
        ),
        document=CONDITIONAL_DOC,
        agents=TRAVEL_AGENTS + (
            agent("bk-concierge", ["concierge"], ["travel.lounge"], 0.90, "3.00"),
        ),
        tables={**TRAVEL_TABLES, "travel.lounge": lounge_table()},
        faults=FaultSchedule(()),
        expected_conflicts=(),
    ),
]


# --- extractor rules ---------------------------------------------------------

EXTRACTOR_RULES = [
    {"ontology_type": "travel.flight", "pattern": r"\b([A-Z]{2}\d{3,4})\b",
     "path": "flight_number", "kind": "text"},
    {"ontology_type": "travel.flight", "pattern": r"\b([A-Z]{3})(?:→|->)",
     "path": "origin", "kind": "text"},
    {"ontology_type": "travel.flight", "pattern": r"(?:→|->)([A-Z]{3})\b",
     "path": "destination", "kind": "text"},
    {"ontology_type": "travel.flight", "pattern": r"dep (\d{2}:\d{2})",
     "path": "depart_time", "kind": "time"},
    {"ontology_type": "travel.flight", "pattern": r"arr (\d{2}:\d{2})",
     "path": "arrive_time", "kind": "time"},
    {"ontology_type": "travel.flight", "pattern": r"\$(\d+(?:\.\d{2})?)",
     "path": "price.amount", "kind": "money", "unit": "USD"},
    {"ontology_type": "travel.hotel", "pattern": r"\$(\d+(?:\.\d{2})?)",
     "path": "price.amount", "kind": "money", "unit": "USD"},
    {"ontology_type": "travel.hotel", "pattern": r"at ([A-Z][\w' ]+?)(?:,|\.|$)",
     "path": "name", "kind": "text"},
    {"ontology_type": "travel.event", "pattern": r"\$(\d+(?:\.\d{2})?)",
     "path": "price.amount", "kind": "money", "unit": "USD"},
    {"ontology_type": "travel.event", "pattern": r"from (\d{2}:\d{2})",
     "path": "start_time", "kind": "time"},
    {"ontology_type": "travel.event", "pattern": r"until (\d{2}:\d{2})",
     "path": "end_time", "kind": "time"},
]


# --- intent exemplars ----------------------------------------------------------

INTENTS = {
    "exemplars": [
        {
            "name": "travel-weekend",
            "task_text": (
                "Book me a weekend trip to San Francisco from Atlanta on March "
                "12th: a flight under $400, a downtown hotel, and for the "
                "evening a show and a late dinner, all within $1200."
            ),
            "document": TRAVEL_DOC,
        },
        {
            "name": "travel-tight-budget",
            "task_text": (
                "Get me to San Francisco from Atlanta on March 12th with a "
                "flight and a hotel, keeping the whole trip under $900."
            ),
            "document": BUDGET_DOC,
        },
        {
            "name": "travel-lounge",
            "task_text": (
                "Fly me from Atlanta to San Francisco on March 12th and book "
                "the arrivals lounge if the flight lands by 9am."
            ),
            "document": CONDITIONAL_DOC,
        },
        {
            "name": "errands-tuesday",
            "task_text": (
                "On Tuesday morning I need a dentist check-up and the car "
                "serviced, both between 8 and noon."
            ),
            "document": ERRANDS_DOC,
        },
        {
            "name": "errands-single",
            "task_text": "Book just the dentist check-up on Tuesday morning.",
            "document": {
                "version": 1,
                "root": "e-day",
                "clock": "2025-03-16T08:00:00Z",
                "nodes": [
                    node("e-day", "Tuesday errand", "errand.day", None, "parallel"),
                    node(
                        "e1-dentist", "Dentist check-up", "errand.appointment",
                        "e-day", "parallel",
                        attributes={"provider": text("Lakeside Dental")},
                        constraints=[
                            constraint(
                                "c-window", "hard", "start_time", "within_interval",
                                interval(ts("2025-03-18T08:00:00Z"),
                                         ts("2025-03-18T12:00:00Z"))),
                        ],
                    ),
                ],
            },
        },
    ]
}


def check() -> None:
    ontology = Ontology.from_obj(ONTOLOGY)
    for bundle in SCENARIOS:
        graph = parse(canonical_json(bundle.document), ontology)
        graph = normalize_graph(graph)
        regenerated, changes = regenerate_mirrors(graph, ontology)
        assert not changes, f"{bundle.name}: mirror drift {changes}"
        assert graph_to_obj(regenerated) == graph_to_obj(graph)
        roundtrip = ScenarioBundle.from_obj(bundle.to_obj())
        assert roundtrip.to_obj() == bundle.to_obj(), f"{bundle.name}: round-trip"

    graph = parse(canonical_json(TRAVEL_DOC), ontology)
    flight = rank_rows(graph.node("g1-flight"), TRAVEL_TABLES["travel.flight"])
    assert [r.id for r in flight] == ["f01", "f04", "f03", "f07", "f08", "f06"], flight
    hotel = rank_rows(graph.node("g2-hotel"), TRAVEL_TABLES["travel.hotel"])
    assert [r.id for r in hotel] == ["h01", "h04", "h02"], [r.id for r in hotel]
    show = rank_rows(graph.node("g3a-show"), TRAVEL_TABLES["travel.event"])
    assert [r.id for r in show] == ["s01", "s02"], [r.id for r in show]
    dinner = rank_rows(graph.node("g3b-dinner"), TRAVEL_TABLES["travel.event"])
    assert [r.id for r in dinner] == ["s04", "s05"], [r.id for r in dinner]
    total = sum(
        rows[0].fields["price.amount"].value for rows in (flight, hotel, show, dinner)
    )
    assert total == Decimal("1075.00"), total

    errands = parse(canonical_json(ERRANDS_DOC), ontology)
    dentist = rank_rows(errands.node("e1-dentist"), appointment_table())
    car = rank_rows(errands.node("e2-car"), service_table())
    assert [r.id for r in dentist] == ["a01", "a02"]
    assert [r.id for r in car] == ["v01", "v02"]


def write() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / "scenarios").mkdir(exist_ok=True)
    (FIXTURES / "ontology.json").write_text(canonical_json(ONTOLOGY), "utf-8")
    (FIXTURES / "extractor_rules.json").write_text(
        canonical_json(EXTRACTOR_RULES), "utf-8")
    (FIXTURES / "intents.json").write_text(canonical_json(INTENTS), "utf-8")
    for bundle in SCENARIOS:
        path = FIXTURES / "scenarios" / f"{bundle.name}.json"
        path.write_text(canonical_json(bundle.to_obj()), "utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    check()
    write()
    print("fixture catalog is consistent")
