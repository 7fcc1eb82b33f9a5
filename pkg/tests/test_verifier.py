"""Constraint scoring against evidence, and the text-to-record extractor."""

import random
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

import oracles
import support
from orchvis import catalog
from orchvis.errors import (
    ExtractionEmpty,
    MissingConfig,
    TypeMismatch,
    UnknownBackendKind,
)
from orchvis.verifier import (
    ExtractorKind,
    VerifierConfig,
    evaluate,
    extract,
    load_rules,
    make_extractor,
)

RULES = load_rules(str(catalog.extractor_rules_path()))
CONFIG = VerifierConfig()


def run_raw_case(case, lam=0.5):
    """Run one oracle-domain case through the engine evaluator."""
    goal = support.goal_of("g-case", case["constraints"])
    evidence = support.evidence_of("g-case", case["evidence"])
    return evaluate(goal, evidence, VerifierConfig(lambda_=lam))


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        VerifierConfig(lambda_=-0.1)
    with pytest.raises(ValueError):
        VerifierConfig(risk_margin=0.0)
    with pytest.raises(ValueError):
        VerifierConfig(risk_margin=1.0)
    config = VerifierConfig(lambda_=0.25, risk_margin=0.2)
    assert VerifierConfig.from_obj(config.to_obj()) == config


def test_no_constraints_is_vacuously_achieved():
    report = run_raw_case({"constraints": [], "evidence": {"x": ("number", 1.0)}})
    assert report.achieved
    assert report.score == pytest.approx(1.5)  # 1 + lambda, both classes vacuous
    assert report.satisfied == () and report.violated == ()


def test_missing_subject_is_a_violation_not_an_error():
    case = {
        "constraints": [
            {"id": "c1", "severity": "hard", "subject": "ghost",
             "op": "eq", "value": ("number", 1.0)},
        ],
        "evidence": {"x": ("number", 1.0)},
    }
    report = run_raw_case(case)
    assert not report.achieved
    assert report.violated == ("c1",)
    assert report.diffs[0].observed is None


def test_soft_violations_do_not_gate_achievement():
    case = {
        "constraints": [
            {"id": "c-hard", "severity": "hard", "subject": "x",
             "op": "eq", "value": ("number", 1.0)},
            {"id": "c-soft", "severity": "soft", "subject": "x",
             "op": "eq", "value": ("number", 2.0)},
        ],
        "evidence": {"x": ("number", 1.0)},
    }
    report = run_raw_case(case)
    assert report.achieved
    assert report.score == pytest.approx(1.0)  # hard 1/1, soft 0/1
    assert report.violated == ("c-soft",)


def test_score_weights_soft_fraction_by_lambda():
    case = {
        "constraints": [
            {"id": f"c{i}", "severity": "soft", "subject": "x",
             "op": "le", "value": ("number", float(i))}
            for i in range(4)  # x=2.0 satisfies le 2, le 3: 2 of 4
        ],
        "evidence": {"x": ("number", 2.0)},
    }
    assert run_raw_case(case, lam=0.5).score == pytest.approx(1.0 + 0.5 * 0.5)
    assert run_raw_case(case, lam=0.0).score == pytest.approx(1.0)
    assert run_raw_case(case, lam=1.0).score == pytest.approx(1.5)


def test_constraints_are_reported_in_id_order():
    case = {
        "constraints": [
            {"id": "c9", "severity": "hard", "subject": "ghost",
             "op": "eq", "value": ("number", 1.0)},
            {"id": "c1", "severity": "hard", "subject": "ghost",
             "op": "eq", "value": ("number", 1.0)},
        ],
        "evidence": {},
    }
    report = run_raw_case(case)
    assert report.violated == ("c1", "c9")
    assert [d.constraint_id for d in report.diffs] == ["c1", "c9"]


def test_diff_shape_for_a_present_but_wrong_value():
    case = {
        "constraints": [
            {"id": "c-cap", "severity": "hard", "subject": "price.amount",
             "op": "le", "value": ("money", Decimal("100.00"), "USD")},
        ],
        "evidence": {"price.amount": ("money", Decimal("150.00"), "USD")},
    }
    diff = run_raw_case(case).diffs[0].to_obj()
    assert diff == {
        "constraint_id": "c-cap",
        "expected": {"op": "le", "value": {
            "kind": "money", "unit": "USD", "value": "100.00"}},
        "observed": {"kind": "money", "unit": "USD", "value": "150.00"},
        "subject": "price.amount",
    }


def test_kind_mismatch_raises():
    case = {
        "constraints": [
            {"id": "c1", "severity": "hard", "subject": "x",
             "op": "le", "value": ("money", Decimal("1.00"), "USD")},
        ],
        "evidence": {"x": ("number", 1.0)},
    }
    with pytest.raises(TypeMismatch):
        run_raw_case(case)


def test_evaluate_agrees_with_reference_scoring():
    rng = random.Random(7)
    for _ in range(150):
        constraints, evidence = oracles.random_score_case(rng)
        expected = oracles.score_case(constraints, evidence, 0.5)
        report = run_raw_case({"constraints": constraints, "evidence": evidence})
        assert report.achieved == expected["achieved"]
        assert list(report.satisfied) == expected["satisfied"]
        assert list(report.violated) == expected["violated"]
        assert report.score == pytest.approx(expected["score"], abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from((0.0, 0.25, 0.5, 1.0)))
@settings(max_examples=60, deadline=None)
def test_score_bounds_hold(seed, lam):
    constraints, evidence = oracles.random_score_case(random.Random(seed))
    report = run_raw_case({"constraints": constraints, "evidence": evidence},
                          lam=lam)
    assert 0.0 <= report.score <= 1.0 + lam + 1e-12
    assert set(report.satisfied) | set(report.violated) == {
        c["id"] for c in constraints}
    hard = [c for c in constraints if c["severity"] == "hard"]
    assert report.achieved == all(c["id"] in report.satisfied for c in hard)


def test_report_to_obj_is_plain_data():
    case = {
        "constraints": [
            {"id": "c1", "severity": "hard", "subject": "ghost",
             "op": "eq", "value": ("flag", True)},
        ],
        "evidence": {},
    }
    obj = run_raw_case(case).to_obj()
    assert set(obj) == {"achieved", "diffs", "goal_id", "satisfied",
                        "score", "violated"}
    assert obj["goal_id"] == "g-case"


FLIGHT_TEXT = "Booked DL0482 ATL->SFO dep 08:05 arr 10:55, total $388.00"


def test_extract_flight_fields_from_text():
    record = extract(FLIGHT_TEXT, "travel.flight", RULES, support.CLOCK,
                     goal_id="g1-flight", agent_id="bk-flights")
    assert record.id == "extracted-g1-flight"
    assert record.agent_id == "bk-flights"
    fields = record.fields
    assert fields["flight_number"].value == "DL0482"
    assert fields["origin"].value == "ATL"
    assert fields["destination"].value == "SFO"
    assert fields["price.amount"].value == Decimal("388.00")
    # times anchor to the session clock's date
    assert fields["depart_time"].value == support.CLOCK.replace(hour=8, minute=5)
    assert fields["arrive_time"].value == support.CLOCK.replace(hour=10, minute=55)


def test_extract_accepts_caption_blobs_and_passes_records_through():
    via_caption = extract({"caption": FLIGHT_TEXT}, "travel.flight", RULES,
                          support.CLOCK)
    assert via_caption.id == "extracted-travel.flight"
    assert via_caption.fields["flight_number"].value == "DL0482"
    structured = support.evidence_of("g-x", {"x": ("number", 1.0)})
    assert extract(structured, "travel.flight", RULES, support.CLOCK) is structured


def test_extract_ignores_rules_for_other_types():
    record = extract("Hotel stay $120.00 per night", "travel.hotel", RULES,
                     support.CLOCK)
    assert "flight_number" not in record.fields
    assert record.ontology_type == "travel.hotel"


def test_extract_empty_raises():
    with pytest.raises(ExtractionEmpty):
        extract("nothing to see here", "travel.flight", RULES, support.CLOCK)


def test_make_extractor_config_errors():
    with pytest.raises(MissingConfig):
        make_extractor({"kind": "rules"})
    with pytest.raises(MissingConfig) as err:
        make_extractor({"kind": "external-endpoint", "endpoint": "http://x"})
    assert err.value.details["variable"] == "model"
    with pytest.raises(UnknownBackendKind):
        make_extractor({"kind": "crystal-ball"})
    external = make_extractor({
        "kind": "external-endpoint", "endpoint": "http://x", "model": "m"})
    assert external.kind is ExtractorKind.EXTERNAL_ENDPOINT
