"""Typed values: parsing, normalization, comparison operators."""

from datetime import datetime, timedelta, timezone
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from orchvis.errors import TypeMismatch, UnparseableValue
from orchvis.values import (
    CmpOp,
    TypedInterval,
    TypedSet,
    TypedValue,
    ValueKind,
    apply_op,
    compare_values,
    decode_payload,
    encode_payload,
    format_timestamp,
    normalize_value,
    op_value_compatible,
    parse_duration_minutes,
    parse_money,
    parse_timestamp,
    resolve_relative_date,
)

# Monday morning; every relative-date expectation below is hand-computed
# against a March 2025 calendar.
CLOCK = datetime(2025, 3, 10, 8, 0, tzinfo=timezone.utc)

RELATIVE_DATES = [
    ("today", datetime(2025, 3, 10, tzinfo=timezone.utc)),
    ("tomorrow", datetime(2025, 3, 11, tzinfo=timezone.utc)),
    ("yesterday", datetime(2025, 3, 9, tzinfo=timezone.utc)),
    ("tuesday", datetime(2025, 3, 11, tzinfo=timezone.utc)),
    ("friday", datetime(2025, 3, 14, tzinfo=timezone.utc)),
    # "next"/"this" are synonyms; the clock's own weekday rolls a full week
    ("next friday", datetime(2025, 3, 14, tzinfo=timezone.utc)),
    ("this friday", datetime(2025, 3, 14, tzinfo=timezone.utc)),
    ("monday", datetime(2025, 3, 17, tzinfo=timezone.utc)),
    ("next monday", datetime(2025, 3, 17, tzinfo=timezone.utc)),
    ("in 3 days", datetime(2025, 3, 13, tzinfo=timezone.utc)),
    ("in 2 weeks", datetime(2025, 3, 24, tzinfo=timezone.utc)),
    ("in 5 hours", datetime(2025, 3, 10, 13, 0, tzinfo=timezone.utc)),
    ("tuesday at 19:30", datetime(2025, 3, 11, 19, 30, tzinfo=timezone.utc)),
    ("friday 7pm", datetime(2025, 3, 14, 19, 0, tzinfo=timezone.utc)),
    ("tomorrow 12pm", datetime(2025, 3, 11, 12, 0, tzinfo=timezone.utc)),
    ("tomorrow 12am", datetime(2025, 3, 11, 0, 0, tzinfo=timezone.utc)),
    ("Saturday at 7", datetime(2025, 3, 15, 7, 0, tzinfo=timezone.utc)),
]


@pytest.mark.parametrize("phrase,expected", RELATIVE_DATES)
def test_relative_dates(phrase, expected):
    assert resolve_relative_date(phrase, CLOCK) == expected


@pytest.mark.parametrize("phrase", ["someday", "friday at 25:00", "in 3 fortnights"])
def test_relative_date_rejects_unknown_phrases(phrase):
    with pytest.raises(UnparseableValue):
        resolve_relative_date(phrase, CLOCK)


MONEY_CASES = [
    ("$400", Decimal("400"), "USD"),
    ("under $1,200.50", Decimal("1200.50"), "USD"),
    ("€45", Decimal("45"), "EUR"),
    ("£12.99", Decimal("12.99"), "GBP"),
    ("45 EUR", Decimal("45"), "EUR"),
    ("CHF 99", Decimal("99"), "CHF"),
    ("at most $700", Decimal("700"), "USD"),
    ("350", Decimal("350"), "USD"),
]


@pytest.mark.parametrize("text,amount,unit", MONEY_CASES)
def test_parse_money(text, amount, unit):
    got_amount, got_unit = parse_money(text)
    assert got_amount == amount
    assert got_unit == unit


@pytest.mark.parametrize("text", ["four hundred", "cheap", "$", ""])
def test_parse_money_rejects(text):
    with pytest.raises(UnparseableValue):
        parse_money(text)


DURATION_CASES = [
    ("2h30", 150),
    ("90 minutes", 90),
    ("1.5h", 90),
    ("2 days", 2880),
    ("45", 45),
    ("45m", 45),
]


@pytest.mark.parametrize("text,minutes", DURATION_CASES)
def test_parse_duration(text, minutes):
    assert parse_duration_minutes(text) == minutes


def test_parse_timestamp_variants():
    want = datetime(2025, 3, 12, 19, 0, tzinfo=timezone.utc)
    assert parse_timestamp("2025-03-12T19:00:00Z") == want
    assert parse_timestamp("2025-03-12T19:00:00+00:00") == want
    assert parse_timestamp("2025-03-12T19:00:00") == want  # naive means UTC
    assert parse_timestamp("2025-03-12T20:00:00+01:00") == want
    # sub-second precision is truncated, not rounded
    assert parse_timestamp("2025-03-12T19:00:00.999Z") == want


def test_normalize_folds_raw_strings():
    money = normalize_value(TypedValue(ValueKind.MONEY, "under $400", None), CLOCK)
    assert (money.value, money.unit) == (Decimal("400.00"), "USD")
    when = normalize_value(TypedValue(ValueKind.TIMESTAMP, "friday 7pm", None), CLOCK)
    assert when.value == datetime(2025, 3, 14, 19, 0, tzinfo=timezone.utc)
    span = normalize_value(TypedValue(ValueKind.DURATION, "2h30", None), CLOCK)
    assert (span.value, span.unit) == (150, "minutes")


@given(cents=st.integers(min_value=0, max_value=10**9))
def test_normalize_money_idempotent(cents):
    value = TypedValue(ValueKind.MONEY, Decimal(cents).scaleb(-2), "USD")
    once = normalize_value(value, CLOCK)
    assert normalize_value(once, CLOCK) == once


@given(seconds=st.integers(min_value=0, max_value=10**9))
def test_normalize_timestamp_idempotent(seconds):
    value = TypedValue(
        ValueKind.TIMESTAMP, CLOCK + timedelta(seconds=seconds), "utc"
    )
    once = normalize_value(value, CLOCK)
    assert normalize_value(once, CLOCK) == once


def test_encode_decode_round_trip():
    cases = [
        TypedValue(ValueKind.MONEY, Decimal("1200.50"), "USD"),
        TypedValue(ValueKind.TIMESTAMP,
                   datetime(2025, 3, 12, 19, 0, tzinfo=timezone.utc), "utc"),
        TypedValue(ValueKind.NUMBER, 4.25, None),
        TypedValue(ValueKind.DURATION, 150, "minutes"),
        TypedValue(ValueKind.TEXT, "nonstop", None),
        TypedValue(ValueKind.FLAG, True, None),
    ]
    for tv in cases:
        assert decode_payload(tv.kind, encode_payload(tv)) == tv.value


def _money(text):
    return TypedValue(ValueKind.MONEY, Decimal(text), "USD")


def test_within_interval_is_inclusive():
    bound = TypedInterval(lo=_money("100.00"), hi=_money("200.00"))
    assert apply_op(_money("100.00"), CmpOp.WITHIN_INTERVAL, bound)
    assert apply_op(_money("200.00"), CmpOp.WITHIN_INTERVAL, bound)
    assert not apply_op(_money("200.01"), CmpOp.WITHIN_INTERVAL, bound)


def test_in_set_and_contains():
    colors = TypedSet(items=(
        TypedValue(ValueKind.TEXT, "red", None),
        TypedValue(ValueKind.TEXT, "blue", None),
    ))
    assert apply_op(TypedValue(ValueKind.TEXT, "red", None), CmpOp.IN_SET, colors)
    assert not apply_op(TypedValue(ValueKind.TEXT, "green", None), CmpOp.IN_SET, colors)
    hay = TypedValue(ValueKind.TEXT, "nonstop morning flight", None)
    assert apply_op(hay, CmpOp.CONTAINS, TypedValue(ValueKind.TEXT, "nonstop", None))
    assert not apply_op(hay, CmpOp.CONTAINS, TypedValue(ValueKind.TEXT, "redeye", None))


def test_cross_kind_and_cross_currency_mismatch():
    with pytest.raises(TypeMismatch):
        apply_op(TypedValue(ValueKind.NUMBER, 4.0, None), CmpOp.EQ, _money("4.00"))
    with pytest.raises(TypeMismatch):
        apply_op(_money("4.00"), CmpOp.LE,
                 TypedValue(ValueKind.MONEY, Decimal("4.00"), "EUR"))
    with pytest.raises(TypeMismatch):
        compare_values(TypedValue(ValueKind.TEXT, "a", None),
                       TypedValue(ValueKind.TEXT, "b", None))
    with pytest.raises(TypeMismatch):
        apply_op(TypedValue(ValueKind.FLAG, True, None), CmpOp.CONTAINS,
                 TypedValue(ValueKind.TEXT, "t", None))


def test_op_value_compatible_shapes():
    scalar = _money("4.00")
    interval = TypedInterval(lo=_money("1.00"), hi=_money("2.00"))
    items = TypedSet(items=(scalar,))
    assert op_value_compatible(CmpOp.LE, scalar)
    assert op_value_compatible(CmpOp.WITHIN_INTERVAL, interval)
    assert op_value_compatible(CmpOp.IN_SET, items)
    assert not op_value_compatible(CmpOp.LE, interval)
    assert not op_value_compatible(CmpOp.WITHIN_INTERVAL, scalar)
    assert not op_value_compatible(CmpOp.IN_SET, scalar)


def test_format_timestamp_whole_seconds_utc():
    inside = datetime(2025, 3, 12, 19, 0, 0, tzinfo=timezone.utc)
    assert format_timestamp(inside) == "2025-03-12T19:00:00Z"
