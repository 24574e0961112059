"""SRL trace parser: label action sequences with processes from a pattern library.

Patterns are tried longest first (file order among equal lengths). A pattern
matches when its matchers accept a contiguous run of actions starting at the
cursor; the run is labelled and the cursor jumps past it, otherwise the cursor
advances by one and the action stays unlabelled.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .actions import WILDCARD, Action, ActionConfig
from .errors import ConfigError, SchemaError
from .trace import CODES, MainAction, SrlProcess, UnitId


@dataclass(frozen=True, slots=True)
class ActionMatcher:
    main_action: MainAction
    sub_action: str = WILDCARD

    def accepts(self, main: MainAction, sub: str) -> bool:
        return main is self.main_action and (self.sub_action == WILDCARD or sub == self.sub_action)

    def compatible(self, other: "ActionMatcher") -> bool:
        """Whether some concrete action satisfies both matchers."""
        if self.main_action is not other.main_action:
            return False
        return WILDCARD in (self.sub_action, other.sub_action) or self.sub_action == other.sub_action

    def __str__(self) -> str:
        return f"{self.main_action.value}/{self.sub_action}"


@dataclass(frozen=True, slots=True)
class Pattern:
    id: str
    process: SrlProcess
    sequence: tuple[ActionMatcher, ...]
    source_rank: int

    def __post_init__(self) -> None:
        if not self.sequence:
            raise ConfigError(f"pattern {self.id!r} has an empty sequence")

    def __len__(self) -> int:
        return len(self.sequence)

    def matches_at(self, actions: Sequence[Action], start: int) -> bool:
        if start + len(self.sequence) > len(actions):
            return False
        return all(
            m.accepts(actions[start + k].main_action, actions[start + k].sub_action)
            for k, m in enumerate(self.sequence)
        )


def _library_order(p: Pattern) -> tuple[int, int]:
    return (-len(p.sequence), p.source_rank)


@dataclass(frozen=True)
class PatternLibrary(Sequence[Pattern]):
    """Patterns in matching order: descending length, then ascending source rank."""

    patterns: tuple[Pattern, ...]

    def __post_init__(self) -> None:
        keys = [_library_order(p) for p in self.patterns]
        if keys != sorted(keys):
            raise ConfigError("pattern library is not in (descending length, source rank) order")
        ids = [p.id for p in self.patterns]
        dupes = sorted(i for i, n in Counter(ids).items() if n > 1)
        if dupes:
            raise ConfigError(f"duplicate pattern id(s): {', '.join(dupes)}")

    @classmethod
    def from_patterns(cls, patterns: Iterable[Pattern]) -> "PatternLibrary":
        return cls(tuple(sorted(patterns, key=_library_order)))

    def __getitem__(self, index):
        return self.patterns[index]

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self) -> Iterator[Pattern]:
        return iter(self.patterns)

    def by_id(self, pattern_id: str) -> Pattern:
        for p in self.patterns:
            if p.id == pattern_id:
                return p
        raise KeyError(pattern_id)

    def processes(self) -> set[SrlProcess]:
        return {p.process for p in self.patterns}

    def without(self, *pattern_ids: str) -> "PatternLibrary":
        return PatternLibrary(tuple(p for p in self.patterns if p.id not in pattern_ids))


def build_pattern_library(doc: Mapping, action_config: ActionConfig | None = None) -> PatternLibrary:
    entries = doc.get("patterns") if isinstance(doc, Mapping) else doc
    if not isinstance(entries, list):
        raise ConfigError("pattern library needs a 'patterns' array")
    patterns = []
    for rank, entry in enumerate(entries):
        pid = str(entry.get("id", ""))
        if not pid:
            raise ConfigError(f"pattern #{rank}: missing id")
        try:
            process = SrlProcess.parse(entry["process"])
            seq = []
            for step in entry.get("sequence", ()):
                main = MainAction.parse(step["main"])
                sub = str(step.get("sub", WILDCARD))
                if action_config is not None and sub != WILDCARD and sub not in action_config.sub_actions.get(main, ()):
                    raise ValueError(f"unknown sub action {main.value}/{sub}")
                seq.append(ActionMatcher(main, sub))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"pattern {pid!r}: {exc}") from None
        patterns.append(Pattern(pid, process, tuple(seq), rank))
    return PatternLibrary.from_patterns(patterns)


def load_pattern_library(
    path: str | Path | None = None, action_config: ActionConfig | None = None
) -> PatternLibrary:
    """Load a JSON pattern library; ``None`` loads the shipped 32-pattern default.

    When ``action_config`` is given, concrete sub-actions are checked against
    its vocabulary as well.
    """
    if path is None:
        text = resources.files("srlena").joinpath("data/default_patterns.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"pattern library is not valid JSON: {exc}") from None
    return build_pattern_library(doc, action_config)


@dataclass(frozen=True, slots=True)
class LabelledAction:
    action: Action
    process: SrlProcess | None = None
    pattern_id: str | None = None
    match_position: int | None = None

    def __post_init__(self) -> None:
        present = (self.process is not None, self.pattern_id is not None, self.match_position is not None)
        if len(set(present)) != 1:
            raise ValueError("process, pattern_id and match_position must be all present or all absent")

    @property
    def labelled(self) -> bool:
        return self.process is not None


def label_actions(actions: Sequence[Action], library: PatternLibrary) -> list[LabelledAction]:
    if not len(library):
        raise ConfigError("pattern library is empty")
    # candidate patterns keyed by the action that would start them
    by_head: dict[tuple[MainAction, str], list[Pattern]] = {}
    out: list[LabelledAction] = []
    n = len(actions)
    c = 0
    while c < n:
        head = actions[c].key
        candidates = by_head.get(head)
        if candidates is None:
            candidates = [p for p in library if p.sequence[0].accepts(*head)]
            by_head[head] = candidates
        for pattern in candidates:
            if pattern.matches_at(actions, c):
                for k in range(len(pattern.sequence)):
                    out.append(LabelledAction(actions[c + k], pattern.process, pattern.id, k))
                c += len(pattern.sequence)
                break
        else:
            out.append(LabelledAction(actions[c]))
            c += 1
    return out


@dataclass
class LabelCoverage:
    action_counts: dict[SrlProcess, int]
    instance_counts: dict[SrlProcess, int]
    pattern_counts: dict[str, int]
    total: int
    unlabelled: int

    @property
    def unlabelled_fraction(self) -> float:
        return self.unlabelled / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "unlabelled": self.unlabelled,
            "unlabelled_fraction": self.unlabelled_fraction,
            "action_counts": {p.value: n for p, n in self.action_counts.items()},
            "instance_counts": {p.value: n for p, n in self.instance_counts.items()},
            "pattern_counts": dict(sorted(self.pattern_counts.items())),
        }


def label_coverage(labelled: Iterable[LabelledAction]) -> LabelCoverage:
    """Per-process action and instance counts plus the unlabelled share."""
    actions = dict.fromkeys(CODES, 0)
    instances = dict.fromkeys(CODES, 0)
    patterns: Counter[str] = Counter()
    total = unlabelled = 0
    for la in labelled:
        total += 1
        if la.process is None:
            unlabelled += 1
            continue
        actions[la.process] += 1
        if la.match_position == 0:
            instances[la.process] += 1
            patterns[la.pattern_id] += 1
    return LabelCoverage(actions, instances, dict(patterns), total, unlabelled)


def shadowing_pairs(library: PatternLibrary) -> list[tuple[str, str]]:
    """Pairs ``(earlier, later)`` where the earlier-tried pattern can capture a
    stream that starts with an instance of the later one.

    An empty result means every rendered instance of every pattern is parsed
    back as that same pattern, whatever follows it.
    """
    pairs = []
    for j, later in enumerate(library):
        for earlier in library.patterns[:j]:
            head = earlier.sequence[: len(later.sequence)]
            if all(a.compatible(b) for a, b in zip(head, later.sequence)):
                pairs.append((earlier.id, later.id))
    return pairs



LABELLED_COLUMNS = (
    "user_id",
    "server_id",
    "timestamp",
    "main_action",
    "sub_action",
    "process",
    "pattern_id",
    "match_position",
)


def write_labelled(units: Mapping[UnitId, Sequence[LabelledAction]], path: str | Path) -> None:
    """Write labelled actions, one row each, units in sorted order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELLED_COLUMNS)
        for (user, server) in sorted(units):
            for la in units[(user, server)]:
                a = la.action
                writer.writerow(
                    [
                        user,
                        server,
                        a.timestamp,
                        a.main_action.value,
                        a.sub_action,
                        "" if la.process is None else la.process.value,
                        la.pattern_id or "",
                        "" if la.match_position is None else la.match_position,
                    ]
                )


def read_labelled(path: str | Path) -> dict[UnitId, list[LabelledAction]]:
    """Read a labelled-action file back, grouped by unit in file order.

    The file does not carry event spans, so each action gets the positional
    span ``(k, k + 1)`` within its unit.
    """
    units: dict[UnitId, list[LabelledAction]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LABELLED_COLUMNS:
            raise SchemaError(f"header must be {','.join(LABELLED_COLUMNS)}", row=1)
        for lineno, rec in enumerate(reader, start=2):
            key = (rec["user_id"], rec["server_id"])
            rows = units.setdefault(key, [])
            try:
                k = len(rows)
                action = Action(MainAction.parse(rec["main_action"]), rec["sub_action"], int(rec["timestamp"]), (k, k + 1))
                if rec["process"]:
                    la = LabelledAction(
                        action, SrlProcess.parse(rec["process"]), rec["pattern_id"], int(rec["match_position"])
                    )
                else:
                    la = LabelledAction(action)
            except ValueError as exc:
                raise SchemaError(str(exc), row=lineno) from None
            rows.append(la)
    return units
