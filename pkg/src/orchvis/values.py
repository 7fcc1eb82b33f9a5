"""Typed attribute values and their normalization rules.

Every attribute, evidence field, and constraint bound in the engine is a
TypedValue with one of six kinds. Raw user input (relative dates, "$400",
"90 minutes") is folded into a canonical payload exactly once; normalization
is idempotent so re-normalizing a clean value is a no-op.

Canonical payloads:
    number     float
    money      Decimal quantized to 2 places, plus ISO-4217 unit
    timestamp  timezone-aware UTC datetime, whole seconds
    duration   non-negative int minutes
    text       str
    flag       bool
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Union

from .errors import TypeMismatch, UnparseableValue


class ValueKind(str, Enum):
    NUMBER = "number"
    MONEY = "money"
    TIMESTAMP = "timestamp"
    DURATION = "duration"
    TEXT = "text"
    FLAG = "flag"


class CmpOp(str, Enum):
    EQ = "eq"
    NE = "ne"
    LT = "lt"
    LE = "le"
    GT = "gt"
    GE = "ge"
    IN_SET = "in_set"
    CONTAINS = "contains"
    WITHIN_INTERVAL = "within_interval"


CURRENCY_SYMBOLS = {"$": "USD", "€": "EUR", "£": "GBP", "¥": "JPY"}
_ISO_CURRENCY = re.compile(r"^[A-Z]{3}$")

_WEEKDAYS = {
    "monday": 0, "tuesday": 1, "wednesday": 2, "thursday": 3,
    "friday": 4, "saturday": 5, "sunday": 6,
}


@dataclass(frozen=True)
class TypedValue:
    kind: ValueKind
    value: object
    unit: str | None = None

    def to_obj(self) -> dict:
        return {"kind": self.kind.value, "unit": self.unit, "value": encode_payload(self)}

    def sort_key(self):
        return (self.kind.value, str(self.unit), str(encode_payload(self)))


@dataclass(frozen=True)
class TypedInterval:
    lo: TypedValue
    hi: TypedValue

    def to_obj(self) -> dict:
        return {"kind": "interval", "lo": self.lo.to_obj(), "hi": self.hi.to_obj()}


@dataclass(frozen=True)
class TypedSet:
    items: tuple[TypedValue, ...]

    def to_obj(self) -> dict:
        return {"items": [v.to_obj() for v in self.items], "kind": "set"}


ConstraintValue = Union[TypedValue, TypedInterval, TypedSet]


def encode_payload(tv: TypedValue):
    """JSON-safe payload for a normalized value."""
    if tv.kind is ValueKind.MONEY and isinstance(tv.value, Decimal):
        return format(tv.value, "f")
    if tv.kind is ValueKind.TIMESTAMP and isinstance(tv.value, datetime):
        return format_timestamp(tv.value)
    return tv.value


def decode_payload(kind: "ValueKind", payload: object):
    """Fold canonical string payloads back into typed ones; leave raw as-is."""
    if kind is ValueKind.MONEY and isinstance(payload, str):
        try:
            return Decimal(payload)
        except InvalidOperation:
            return payload
    if kind is ValueKind.TIMESTAMP and isinstance(payload, str):
        try:
            return parse_timestamp(payload)
        except UnparseableValue:
            return payload
    return payload


def value_from_obj(obj: dict) -> ConstraintValue:
    """Decode a value object (scalar, interval, or set) from its JSON form."""
    if not isinstance(obj, dict):
        raise UnparseableValue(f"value must be an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind == "interval":
        lo = value_from_obj(obj["lo"])
        hi = value_from_obj(obj["hi"])
        if not isinstance(lo, TypedValue) or not isinstance(hi, TypedValue):
            raise UnparseableValue("interval bounds must be scalar values")
        return TypedInterval(lo=lo, hi=hi)
    if kind == "set":
        items = obj.get("items", [])
        decoded = []
        for item in items:
            v = value_from_obj(item)
            if not isinstance(v, TypedValue):
                raise UnparseableValue("set items must be scalar values")
            decoded.append(v)
        return TypedSet(items=tuple(decoded))
    try:
        vk = ValueKind(kind)
    except ValueError:
        raise UnparseableValue(f"unknown value kind {kind!r}") from None
    return TypedValue(
        kind=vk, value=decode_payload(vk, obj.get("value")), unit=obj.get("unit")
    )


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    """RFC 3339 → aware UTC datetime, truncated to whole seconds."""
    raw = text.strip()
    if raw.endswith("Z") or raw.endswith("z"):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        raise UnparseableValue(f"not an RFC 3339 timestamp: {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


_TIME_OF_DAY = re.compile(r"(?:at\s+)?(\d{1,2})(?::(\d{2}))?\s*(am|pm)?$", re.IGNORECASE)
_IN_N = re.compile(r"^in\s+(\d+)\s+(day|days|week|weeks|hour|hours)$", re.IGNORECASE)


def resolve_relative_date(phrase: str, clock: datetime) -> datetime:
    """Resolve a relative-date phrase against the session clock (UTC).

    Weekday names ("Friday", "next Friday", "this Friday") all mean the first
    occurrence of that weekday strictly after the clock's date. An optional
    trailing time of day ("7pm", "19:30") sets the time; otherwise midnight.
    """
    text = phrase.strip().lower()
    hour, minute = 0, 0
    m = _TIME_OF_DAY.search(text)
    if m and (m.group(2) or m.group(3) or _looks_like_bare_hour(text, m)):
        hour = int(m.group(1))
        minute = int(m.group(2) or 0)
        meridiem = (m.group(3) or "").lower()
        if meridiem == "pm" and hour != 12:
            hour += 12
        elif meridiem == "am" and hour == 12:
            hour = 0
        if hour > 23 or minute > 59:
            raise UnparseableValue(f"bad time of day in {phrase!r}")
        text = text[: m.start()].strip()

    base = clock.astimezone(timezone.utc).replace(hour=0, minute=0, second=0, microsecond=0)
    if text in ("today", ""):
        day = base
    elif text == "tomorrow":
        day = base + timedelta(days=1)
    elif text == "yesterday":
        day = base - timedelta(days=1)
    else:
        m2 = _IN_N.match(text)
        if m2:
            n = int(m2.group(1))
            unit = m2.group(2).rstrip("s")
            if unit == "day":
                day = base + timedelta(days=n)
            elif unit == "week":
                day = base + timedelta(weeks=n)
            else:
                return (clock.replace(microsecond=0, second=0) + timedelta(hours=n))
        else:
            words = text.split()
            if words and words[0] in ("next", "this"):
                words = words[1:]
            if len(words) == 1 and words[0] in _WEEKDAYS:
                target = _WEEKDAYS[words[0]]
                ahead = (target - base.weekday() - 1) % 7 + 1
                day = base + timedelta(days=ahead)
            else:
                raise UnparseableValue(f"unrecognized date phrase: {phrase!r}")
    return day.replace(hour=hour, minute=minute)


def _looks_like_bare_hour(text: str, m: re.Match) -> bool:
    # "at 7" is a time of day; a bare trailing digit ("in 3 days") is not
    return m.group(0).lstrip().lower().startswith("at")


_MONEY = re.compile(
    r"^(?:under|below|at most|up to|max|≤|<=)?\s*"
    r"(?:(?P<sym>[$€£¥])|(?P<pre>[A-Z]{3})\s+)?"
    r"(?P<amt>\d+(?:,\d{3})*(?:\.\d+)?)"
    r"\s*(?P<post>[A-Z]{3})?$"
)


def parse_money(text: str) -> tuple[Decimal, str]:
    raw = text.strip()
    m = _MONEY.match(raw)
    if not m:
        raise UnparseableValue(f"not a money amount: {text!r}")
    amount = Decimal(m.group("amt").replace(",", ""))
    code = None
    if m.group("sym"):
        code = CURRENCY_SYMBOLS[m.group("sym")]
    code = m.group("pre") or m.group("post") or code or "USD"
    if not _ISO_CURRENCY.match(code):
        raise UnparseableValue(f"bad currency code {code!r}")
    return quantize_money(amount), code


def quantize_money(amount: Decimal) -> Decimal:
    return amount.quantize(Decimal("0.01"))


_DURATION_PART = re.compile(r"(\d+(?:\.\d+)?)\s*(minutes?|mins?|m|hours?|hrs?|h|days?|d)\b", re.IGNORECASE)
_HM_COMPACT = re.compile(r"^(\d+)h(?:(\d+)m?)?$", re.IGNORECASE)

_UNIT_MINUTES = {"minute": 1, "min": 1, "m": 1, "hour": 60, "hr": 60, "h": 60, "day": 1440, "d": 1440}


def parse_duration_minutes(text: str) -> int:
    raw = text.strip().lower()
    m = _HM_COMPACT.match(raw.replace(" ", ""))
    if m:
        return int(m.group(1)) * 60 + int(m.group(2) or 0)
    total = 0.0
    matched = False
    for amt, unit in _DURATION_PART.findall(raw):
        matched = True
        total += float(amt) * _UNIT_MINUTES[unit.rstrip("s")]
    if not matched:
        try:
            total = float(raw)
        except ValueError:
            raise UnparseableValue(f"not a duration: {text!r}") from None
    if total < 0:
        raise UnparseableValue(f"negative duration: {text!r}")
    return int(round(total))


_FLAG_WORDS = {"true": True, "yes": True, "y": True, "on": True,
               "false": False, "no": False, "n": False, "off": False}


def normalize_value(tv: TypedValue, clock: datetime) -> TypedValue:
    """Fold a possibly-raw TypedValue into canonical form (idempotent)."""
    kind, value = tv.kind, tv.value
    if kind is ValueKind.NUMBER:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise UnparseableValue(f"not a number: {value!r}")
        try:
            num = float(value)
        except ValueError:
            raise UnparseableValue(f"not a number: {value!r}") from None
        return TypedValue(kind, num, None)
    if kind is ValueKind.MONEY:
        if isinstance(value, Decimal):
            amount, code = quantize_money(value), tv.unit
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            amount, code = quantize_money(Decimal(str(value))), tv.unit
        elif isinstance(value, str):
            try:
                amount, code = quantize_money(Decimal(value)), tv.unit
            except InvalidOperation:
                amount, code = parse_money(value)
        else:
            raise UnparseableValue(f"not a money amount: {value!r}")
        if not code or not _ISO_CURRENCY.match(code):
            raise UnparseableValue(f"money needs an ISO-4217 currency, got {code!r}")
        return TypedValue(kind, amount, code)
    if kind is ValueKind.TIMESTAMP:
        if isinstance(value, datetime):
            dt = value if value.tzinfo else value.replace(tzinfo=timezone.utc)
            dt = dt.astimezone(timezone.utc).replace(microsecond=0)
        elif isinstance(value, str):
            try:
                dt = parse_timestamp(value)
            except UnparseableValue:
                dt = resolve_relative_date(value, clock)
        else:
            raise UnparseableValue(f"not a timestamp: {value!r}")
        return TypedValue(kind, dt, "utc")
    if kind is ValueKind.DURATION:
        if isinstance(value, bool):
            raise UnparseableValue(f"not a duration: {value!r}")
        if isinstance(value, (int, float)):
            minutes = int(round(float(value)))
        elif isinstance(value, str):
            minutes = parse_duration_minutes(value)
        else:
            raise UnparseableValue(f"not a duration: {value!r}")
        if minutes < 0:
            raise UnparseableValue(f"negative duration: {value!r}")
        return TypedValue(kind, minutes, "minutes")
    if kind is ValueKind.TEXT:
        if not isinstance(value, str):
            raise UnparseableValue(f"not text: {value!r}")
        return TypedValue(kind, value, None)
    if kind is ValueKind.FLAG:
        if isinstance(value, bool):
            return TypedValue(kind, value, None)
        if isinstance(value, str) and value.strip().lower() in _FLAG_WORDS:
            return TypedValue(kind, _FLAG_WORDS[value.strip().lower()], None)
        raise UnparseableValue(f"not a flag: {value!r}")
    raise UnparseableValue(f"unknown kind {kind!r}")


def normalize_constraint_value(cv: ConstraintValue, clock: datetime) -> ConstraintValue:
    if isinstance(cv, TypedValue):
        return normalize_value(cv, clock)
    if isinstance(cv, TypedInterval):
        return TypedInterval(normalize_value(cv.lo, clock), normalize_value(cv.hi, clock))
    return TypedSet(tuple(normalize_value(v, clock) for v in cv.items))


ORDERED_KINDS = {ValueKind.NUMBER, ValueKind.MONEY, ValueKind.TIMESTAMP, ValueKind.DURATION}


def _comparable(a: TypedValue, b: TypedValue) -> None:
    if a.kind is not b.kind:
        raise TypeMismatch(f"cannot compare {a.kind.value} with {b.kind.value}")
    if a.kind is ValueKind.MONEY and a.unit != b.unit:
        raise TypeMismatch(f"cross-currency comparison: {a.unit} vs {b.unit}")


def compare_values(a: TypedValue, b: TypedValue) -> int:
    """Three-way compare for ordered kinds; raises TypeMismatch otherwise."""
    _comparable(a, b)
    if a.kind not in ORDERED_KINDS:
        raise TypeMismatch(f"{a.kind.value} values have no ordering")
    av, bv = a.value, b.value
    return (av > bv) - (av < bv)


def apply_op(observed: TypedValue, op: CmpOp, bound: ConstraintValue) -> bool:
    """Evaluate one predicate op against an observed value.

    Raises TypeMismatch when the op/bound kinds are incompatible with the
    observed kind (including cross-currency money comparisons).
    """
    if op is CmpOp.WITHIN_INTERVAL:
        if not isinstance(bound, TypedInterval):
            raise TypeMismatch("within_interval requires an interval bound")
        return (compare_values(observed, bound.lo) >= 0
                and compare_values(observed, bound.hi) <= 0)
    if op is CmpOp.IN_SET:
        if not isinstance(bound, TypedSet):
            raise TypeMismatch("in_set requires a set bound")
        for item in bound.items:
            _comparable(observed, item)
            if encode_payload(observed) == encode_payload(item):
                return True
        return False
    if not isinstance(bound, TypedValue):
        raise TypeMismatch(f"{op.value} requires a scalar bound")
    if op is CmpOp.CONTAINS:
        if observed.kind is not ValueKind.TEXT or bound.kind is not ValueKind.TEXT:
            raise TypeMismatch("contains requires text on both sides")
        return bound.value in observed.value
    if op in (CmpOp.EQ, CmpOp.NE):
        _comparable(observed, bound)
        same = encode_payload(observed) == encode_payload(bound)
        return same if op is CmpOp.EQ else not same
    c = compare_values(observed, bound)
    return {CmpOp.LT: c < 0, CmpOp.LE: c <= 0, CmpOp.GT: c > 0, CmpOp.GE: c >= 0}[op]


def op_value_compatible(op: CmpOp, value: ConstraintValue) -> bool:
    """Static compatibility of an op with its declared bound shape."""
    if op is CmpOp.WITHIN_INTERVAL:
        return isinstance(value, TypedInterval) and value.lo.kind is value.hi.kind
    if op is CmpOp.IN_SET:
        return isinstance(value, TypedSet)
    if not isinstance(value, TypedValue):
        return False
    if op is CmpOp.CONTAINS:
        return value.kind is ValueKind.TEXT
    if op in (CmpOp.LT, CmpOp.LE, CmpOp.GT, CmpOp.GE):
        return value.kind in ORDERED_KINDS
    return True
