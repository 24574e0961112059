"""Trace data model: raw events, sessions, metadata and the closed vocabularies.

Trace files are either delimited text (CSV with a header row) or a JSON
document with an ``events`` array. Timestamps are integer milliseconds
relative to session start; ISO-8601 wall-clock timestamps are accepted on
load and shifted so each (user_id, server_id) session starts at 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import SchemaError

TRACE_COLUMNS = ("timestamp", "user_id", "server_id", "event_kind", "target", "detail")
METADATA_COLUMNS = (
    "user_id",
    "server_id",
    "level",
    "school",
    "essay_score",
    "pretest_score",
    "cet4_score",
    "task_length_minutes",
)

UnitId = tuple[str, str]


class MainAction(str, Enum):
    ANNOTATION = "ANNOTATION"
    ESSAY = "ESSAY"
    INSTRUCTION = "INSTRUCTION"
    NAVIGATION = "NAVIGATION"
    PLANNER = "PLANNER"
    READING = "READING"
    TIMER = "TIMER"

    @classmethod
    def parse(cls, token: str) -> "MainAction":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(f"unknown main action {token!r}") from None


class SrlProcess(str, Enum):
    """The seven SRL process codes, in the canonical order used for vectors."""

    ORIENTATION = "Orientation"
    PLANNING = "Planning"
    MONITORING = "Monitoring"
    EVALUATION = "Evaluation"
    FIRST_READING = "FirstReading"
    RE_READING = "ReReading"
    ELABORATION_ORGANISATION = "ElaborationOrganisation"

    @classmethod
    def parse(cls, token: str) -> "SrlProcess":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(f"unknown SRL process {token!r}") from None

    @property
    def index(self) -> int:
        return CODES.index(self)


CODES: tuple[SrlProcess, ...] = tuple(SrlProcess)


class EducationLevel(str, Enum):
    SE = "SE"
    HE = "HE"


@dataclass(frozen=True, slots=True)
class TraceEvent:
    """One timestamped interaction record.

    ``detail`` is kept as an ordered tuple of ``(key, value)`` pairs so the
    event stays hashable and serializes back in its original order.
    """

    timestamp: int
    user_id: str
    server_id: str
    event_kind: str
    target: str = ""
    detail: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.user_id:
            raise SchemaError("user_id must be non-empty", field="user_id")
        if not self.server_id:
            raise SchemaError("server_id must be non-empty", field="server_id")

    @property
    def unit_id(self) -> UnitId:
        return (self.user_id, self.server_id)

    def detail_dict(self) -> dict[str, str]:
        return dict(self.detail)


@dataclass(frozen=True, slots=True)
class SessionMetadata:
    education_level: EducationLevel
    essay_score: float
    pretest_score: float
    task_length_minutes: float
    school_id: str = ""
    cet4_score: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.education_level, EducationLevel):
            object.__setattr__(self, "education_level", EducationLevel(self.education_level))
        if self.essay_score < 0:
            raise ValueError("essay_score must be >= 0")
        if not 0 <= self.pretest_score <= 15:
            raise ValueError("pretest_score must lie in [0, 15]")
        if self.task_length_minutes <= 0:
            raise ValueError("task_length_minutes must be > 0")
        if self.cet4_score is not None and self.education_level is not EducationLevel.HE:
            raise ValueError("cet4_score is only defined for HE participants")


@dataclass(frozen=True, slots=True)
class Session:
    user_id: str
    server_id: str
    events: tuple[TraceEvent, ...]
    metadata: SessionMetadata

    def __post_init__(self) -> None:
        if not self.events:
            raise ValueError("a session needs at least one event")
        for ev in self.events:
            if ev.unit_id != (self.user_id, self.server_id):
                raise ValueError(f"event for {ev.unit_id} inside session {self.unit_id}")

    @property
    def unit_id(self) -> UnitId:
        return (self.user_id, self.server_id)


# --- detail payload ---------------------------------------------------------


def parse_detail(text: str) -> tuple[tuple[str, str], ...]:
    if text == "":
        return ()
    pairs = []
    for chunk in text.split(";"):
        key, sep, value = chunk.partition("=")
        if not sep or not key:
            raise ValueError(f"malformed detail entry {chunk!r}, expected k=v")
        pairs.append((key, value))
    return tuple(pairs)


def format_detail(detail: Iterable[tuple[str, str]]) -> str:
    parts = []
    for key, value in detail:
        if not key or any(c in key for c in "=;") or ";" in value:
            raise ValueError(f"detail entry {key!r}={value!r} cannot be serialized")
        parts.append(f"{key}={value}")
    return ";".join(parts)


# --- trace files ------------------------------------------------------------


def _parse_timestamp(raw) -> tuple[int, bool]:
    """Return (milliseconds, is_absolute)."""
    if isinstance(raw, bool):
        raise ValueError(f"unparseable timestamp {raw!r}")
    if isinstance(raw, int):
        return raw, False
    if isinstance(raw, float) and raw.is_integer():
        return int(raw), False
    text = str(raw).strip()
    try:
        return int(text), False
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ValueError(f"unparseable timestamp {raw!r}") from None
    return round(stamp.timestamp() * 1000), True


def _infer_format(path: Path) -> str:
    return "tree" if path.suffix.lower() == ".json" else "delimited"


def _rows_from_file(path: Path, fmt: str) -> list[tuple[int, dict]]:
    if fmt == "delimited":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError("empty file, header row missing", row=1) from None
            if tuple(header) != TRACE_COLUMNS:
                raise SchemaError(f"header must be {','.join(TRACE_COLUMNS)}, got {','.join(header)}", row=1)
            rows = []
            for lineno, values in enumerate(reader, start=2):
                if len(values) != len(TRACE_COLUMNS):
                    raise SchemaError(f"expected {len(TRACE_COLUMNS)} columns, got {len(values)}", row=lineno)
                rows.append((lineno, dict(zip(TRACE_COLUMNS, values))))
            return rows
    if fmt == "tree":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}") from None
        records = doc.get("events") if isinstance(doc, dict) else doc
        if not isinstance(records, list):
            raise SchemaError("expected an 'events' array")
        rows = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise SchemaError("event must be an object", row=i)
            rows.append((i, rec))
        return rows
    raise ValueError(f"unknown trace format {fmt!r}")


def load_trace(path: str | Path, format: str | None = None) -> list[TraceEvent]:
    """Read every event of a trace file in file order.

    Malformed rows raise :class:`SchemaError` naming the row (1-based line
    number for delimited files, 0-based array index for JSON) and field.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    rows = _rows_from_file(path, fmt)

    parsed: list[tuple[int, bool, list]] = []
    for row, rec in rows:
        get = rec.get
        user, server, kind = get("user_id"), get("server_id"), get("event_kind")
        for name, value in (("user_id", user), ("server_id", server), ("event_kind", kind)):
            if value is None or value == "":
                raise SchemaError("missing required value", row=row, field=name)
        if "timestamp" not in rec:
            raise SchemaError("missing required value", row=row, field="timestamp")
        raw = rec["timestamp"]
        try:
            # plain integer strings dominate; skip the general parser for them
            ms, absolute = (int(raw), False) if type(raw) is str and raw.isdigit() else _parse_timestamp(raw)
        except ValueError as exc:
            raise SchemaError(str(exc), row=row, field="timestamp") from None
        detail = get("detail", "")
        try:
            if isinstance(detail, dict):
                detail = tuple((str(k), str(v)) for k, v in detail.items())
                format_detail(detail)
            elif isinstance(detail, list):
                detail = tuple((str(k), str(v)) for k, v in detail)
            else:
                detail = parse_detail(str(detail))
        except (ValueError, TypeError) as exc:
            raise SchemaError(str(exc), row=row, field="detail") from None
        target = get("target", "")
        parsed.append(
            (row, absolute, [ms, str(user), str(server), str(kind), "" if target is None else str(target), detail])
        )

    # shift absolute timestamps so every session starts at 0
    kinds: dict[UnitId, bool] = {}
    origin: dict[UnitId, int] = {}
    for row, absolute, rec in parsed:
        key = (rec[1], rec[2])
        if kinds.setdefault(key, absolute) != absolute:
            raise SchemaError("session mixes relative and absolute timestamps", row=row, field="timestamp")
        if absolute:
            origin[key] = min(origin.get(key, rec[0]), rec[0])
    events = []
    for _, absolute, rec in parsed:
        if absolute:
            rec[0] -= origin[(rec[1], rec[2])]
        events.append(TraceEvent(*rec))
    return events


def write_trace(events: Sequence[TraceEvent], path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "delimited":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for ev in events:
                writer.writerow(
                    [ev.timestamp, ev.user_id, ev.server_id, ev.event_kind, ev.target, format_detail(ev.detail)]
                )
    elif fmt == "tree":
        doc = {
            "events": [
                {
                    "timestamp": ev.timestamp,
                    "user_id": ev.user_id,
                    "server_id": ev.server_id,
                    "event_kind": ev.event_kind,
                    "target": ev.target,
                    "detail": [list(kv) for kv in ev.detail],
                }
                for ev in events
            ]
        }
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError(f"unknown trace format {fmt!r}")


# --- metadata sidecar -------------------------------------------------------


def _opt_float(text: str) -> float | None:
    return None if text == "" else float(text)


def load_metadata(path: str | Path) -> dict[UnitId, SessionMetadata]:
    table: dict[UnitId, SessionMetadata] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METADATA_COLUMNS:
            raise SchemaError(f"header must be {','.join(METADATA_COLUMNS)}", row=1)
        for lineno, rec in enumerate(reader, start=2):
            key = (rec["user_id"], rec["server_id"])
            if not all(key):
                raise SchemaError("user_id and server_id are required", row=lineno)
            if key in table:
                raise SchemaError(f"duplicate metadata entry for {key}", row=lineno)
            try:
                table[key] = SessionMetadata(
                    education_level=EducationLevel(rec["level"]),
                    school_id=rec["school"],
                    essay_score=float(rec["essay_score"]),
                    pretest_score=float(rec["pretest_score"]),
                    cet4_score=_opt_float(rec["cet4_score"]),
                    task_length_minutes=float(rec["task_length_minutes"]),
                )
            except ValueError as exc:
                raise SchemaError(str(exc), row=lineno) from None
    return table


def _fmt_num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_metadata(table: Mapping[UnitId, SessionMetadata], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_COLUMNS)
        for (user, server), meta in sorted(table.items()):
            writer.writerow(
                [
                    user,
                    server,
                    meta.education_level.value,
                    meta.school_id,
                    _fmt_num(meta.essay_score),
                    _fmt_num(meta.pretest_score),
                    _fmt_num(meta.cet4_score),
                    _fmt_num(meta.task_length_minutes),
                ]
            )


# --- sessionization ---------------------------------------------------------


def sessionize(
    events: Sequence[TraceEvent], metadata_table: Mapping[UnitId, SessionMetadata]
) -> list[Session]:
    """Partition events into one session per (user_id, server_id).

    Events are stably sorted by timestamp inside each session, so ties keep
    their input order; sessions come back sorted by unit id.
    """
    if not events:
        raise ValueError("no events to sessionize")
    grouped: dict[UnitId, list[TraceEvent]] = {}
    for ev in events:
        grouped.setdefault(ev.unit_id, []).append(ev)
    missing = sorted(k for k in grouped if k not in metadata_table)
    if missing:
        raise KeyError(f"no metadata for sessions {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    sessions = []
    for key in sorted(grouped):
        ordered = sorted(grouped[key], key=lambda ev: ev.timestamp)
        sessions.append(Session(key[0], key[1], tuple(ordered), metadata_table[key]))
    return sessions

