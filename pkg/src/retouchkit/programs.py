"""Parsing, validation, and serialization of retouching programs and critic output.

Agent replies are never executed as code. The filter-call subset is parsed
into a RetouchProgram and interpreted by the filter engine; everything else
in a reply is inert.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import DescriptionParseError, ProgramParseError
from .filters import CANONICAL_FILTER_NAMES, FilterKind, RetouchStep

PROGRAM_FILE_EXTENSION = ".retouch.json"

# Discrete percent intervals the critic may choose from.
ALLOWED_RANGES = ((0, 5), (5, 10), (10, 20), (20, 40), (40, 60), (60, 100))

_CALL_RE = re.compile(r"filter\.([A-Za-z_][A-Za-z_0-9]*)\s*\(\s*([^()]*?)\s*\)")
_DECIMAL_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)")
_RANGE_RE = re.compile(r"(\d+(?:\.\d+)?)\s*-\s*(\d+(?:\.\d+)?)\s*%")
_NA_RE = re.compile(r"\bN/?A\b", re.IGNORECASE)


def allowed_ranges() -> list:
    """The six percent intervals, as (lo, hi) tuples."""
    return list(ALLOWED_RANGES)


def containing_range(percent: float) -> tuple:
    """Allowed range holding the given percent value; clamps past both ends."""
    if percent <= 0:
        return ALLOWED_RANGES[0]
    for lo, hi in ALLOWED_RANGES:
        if lo < percent <= hi:
            return (lo, hi)
    return ALLOWED_RANGES[-1]


def shifted_range(rng: tuple, offset: int) -> tuple:
    """Neighboring range ``offset`` positions away, clamped to the list."""
    idx = ALLOWED_RANGES.index(rng)
    idx = min(max(idx + offset, 0), len(ALLOWED_RANGES) - 1)
    return ALLOWED_RANGES[idx]


@dataclass(frozen=True)
class RetouchProgram:
    """Ordered retouching steps plus a note about where they came from."""

    steps: tuple = ()
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def extended(self, other: "RetouchProgram", provenance: str = "") -> "RetouchProgram":
        return RetouchProgram(self.steps + other.steps, provenance or self.provenance)

    def as_call_lines(self) -> str:
        """Render as filter-call statements that parse_program accepts back."""
        return "\n".join(
            f"adj = filter.{s.filter.value}({_decimal_literal(s.param)})" for s in self.steps
        )


def _decimal_literal(value: float) -> str:
    text = repr(value)
    if "e" in text or "E" in text:
        text = format(value, ".32f").rstrip("0")
    return text


def parse_program(text: str, provenance: str = "") -> RetouchProgram:
    """Extract the ordered filter calls from agent-generated code.

    Grammar: statements containing ``filter.<name>(<decimal>)`` are collected
    in textual order; assignments, comments, and surrounding plumbing are
    ignored. A placeholder ellipsis anywhere marks the reply non-executable.
    """
    if "..." in text:
        raise ProgramParseError("placeholder ellipsis found", reason="placeholder")
    code = "\n".join(line.split("#", 1)[0] for line in text.splitlines())

    steps = []
    for match in _CALL_RE.finditer(code):
        name, arg = match.group(1), match.group(2)
        if name not in CANONICAL_FILTER_NAMES:
            raise ProgramParseError(f"unknown filter {name!r}", reason="unknown_filter")
        if not _DECIMAL_RE.fullmatch(arg):
            raise ProgramParseError(
                f"filter.{name}: parameter {arg!r} is not a plain decimal", reason="bad_param"
            )
        value = float(arg)
        if abs(value) > 1.0:
            raise ProgramParseError(
                f"filter.{name}: parameter {value} outside [-1, 1]", reason="bad_param"
            )
        steps.append(RetouchStep(FilterKind(name), value))
    if not steps:
        raise ProgramParseError("no filter calls found", reason="empty")
    return RetouchProgram(tuple(steps), provenance)


def serialize_program(prog: RetouchProgram) -> str:
    """Canonical JSON form: {"steps": [{"filter": ..., "param": ...}], "provenance": ...}."""
    doc = {
        "steps": [{"filter": s.filter.value, "param": s.param} for s in prog.steps],
        "provenance": prog.provenance,
    }
    return json.dumps(doc)


def parse_program_json(text: str) -> RetouchProgram:
    """Companion reader for serialize_program output."""
    try:
        doc = json.loads(text)
        steps = tuple(
            RetouchStep(FilterKind(entry["filter"]), float(entry["param"]))
            for entry in doc["steps"]
        )
        return RetouchProgram(steps, str(doc.get("provenance", "")))
    except ProgramParseError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ProgramParseError(f"invalid program document: {exc}", reason="bad_json") from exc


def load_program(text: str, provenance: str = "") -> RetouchProgram:
    """Accept either the JSON exchange format or filter-call syntax."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return parse_program_json(text)
    return parse_program(text, provenance)


class Direction(str, Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    NA = "na"


class Overall(str, Enum):
    GO = "go"
    STOP = "stop"


_NO_JUDGMENT_SENTINEL = object()


@dataclass(frozen=True)
class AspectJudgment:
    """Per-filter verdict: adjust up/down within a percent range, or leave alone."""

    direction: Direction = Direction.NA
    range_lo: int | None = None
    range_hi: int | None = None

    def __post_init__(self):
        if self.direction is Direction.NA:
            if self.range_lo is not None or self.range_hi is not None:
                raise ValueError("NA judgment must not carry a range")
        else:
            if (self.range_lo, self.range_hi) not in ALLOWED_RANGES:
                raise ValueError(f"range ({self.range_lo}, {self.range_hi}) not in allowed list")

    @property
    def midpoint(self) -> float:
        return (self.range_lo + self.range_hi) / 2.0

    def signed_fraction(self) -> float:
        """Midpoint of the range as a signed [-1, 1] filter parameter."""
        if self.direction is Direction.NA:
            return 0.0
        sign = 1.0 if self.direction is Direction.INCREASE else -1.0
        return max(-1.0, min(1.0, sign * self.midpoint / 100.0))

    def as_dict(self) -> dict:
        return {"direction": self.direction.value, "range_lo": self.range_lo, "range_hi": self.range_hi}


NA_JUDGMENT = AspectJudgment()


@dataclass(frozen=True)
class DifferenceDescription:
    """Parsed critic output: one judgment per filter plus the go/stop flag."""

    judgments: dict
    overall: Overall
    raw_text: str = ""

    def __post_init__(self):
        full = {kind: self.judgments.get(kind, NA_JUDGMENT) for kind in FilterKind}
        object.__setattr__(self, "judgments", full)
        if self.overall is Overall.STOP and any(
            j.direction is not Direction.NA for j in full.values()
        ):
            # A stop that still lists adjustments is contradictory; keep going.
            object.__setattr__(self, "overall", Overall.GO)

    def as_dict(self) -> dict:
        return {
            "judgments": {k.value: j.as_dict() for k, j in self.judgments.items()},
            "overall": self.overall.value,
            "raw_text": self.raw_text,
        }


def stop_description(raw_text: str = "") -> DifferenceDescription:
    return DifferenceDescription({}, Overall.STOP, raw_text)


def render_description(desc: DifferenceDescription) -> str:
    """Render judgments back into the aspect-per-line format the parser reads."""
    lines = []
    for kind in FilterKind:
        judgment = desc.judgments[kind]
        if judgment.direction is Direction.NA:
            lines.append(f"- {kind.value.capitalize()}: N/A")
        else:
            word = "higher" if judgment.direction is Direction.INCREASE else "lower"
            lines.append(
                f"- {kind.value.capitalize()}: the {kind.value} of the target image is "
                f"{judgment.range_lo}-{judgment.range_hi}% {word} than the one of the source image."
            )
    lines.append(f"- Overall: {'Go' if desc.overall is Overall.GO else 'Stop'}")
    return "\n".join(lines)


def _parse_aspect_content(content: str):
    if _NA_RE.search(content):
        return NA_JUDGMENT
    range_match = _RANGE_RE.search(content)
    lowered = content.lower()
    if "higher" in lowered or "increas" in lowered:
        direction = Direction.INCREASE
    elif "lower" in lowered or "decreas" in lowered:
        direction = Direction.DECREASE
    else:
        direction = None
    if range_match is None or direction is None:
        return _NO_JUDGMENT_SENTINEL
    lo, hi = float(range_match.group(1)), float(range_match.group(2))
    rng = (int(lo), int(hi)) if (int(lo), int(hi)) in ALLOWED_RANGES else containing_range((lo + hi) / 2.0)
    return AspectJudgment(direction, rng[0], rng[1])


def parse_description(text: str) -> DifferenceDescription:
    """Parse one aspect-per-line critic block into a DifferenceDescription.

    Lenient per the failure-handling rules: malformed aspect content falls
    back to N/A, and a missing Overall line means keep going.
    """
    aspect_names = {kind.value: kind for kind in FilterKind}
    judgments = {}
    overall = None
    saw_aspect_line = False

    for line in text.splitlines():
        match = re.match(r"\s*-?\s*([A-Za-z]+)\s*:\s*(.*)$", line)
        if not match:
            continue
        label, content = match.group(1).lower(), match.group(2)
        if label == "overall":
            lowered = content.lower()
            if "stop" in lowered:
                overall = Overall.STOP
            elif "go" in lowered:
                overall = Overall.GO
        elif label in aspect_names:
            saw_aspect_line = True
            parsed = _parse_aspect_content(content)
            if parsed is not _NO_JUDGMENT_SENTINEL:
                judgments[aspect_names[label]] = parsed

    if not saw_aspect_line:
        raise DescriptionParseError("no aspect line found in critic output")
    if overall is None:
        overall = Overall.GO
    return DifferenceDescription(judgments, overall, raw_text=text)
