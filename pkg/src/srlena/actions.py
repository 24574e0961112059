"""Action library: translate raw trace events into (main action, sub-action) pairs.

The mapping table is data, loaded from a JSON config::

    {
      "sub_actions": {"ANNOTATION": ["Create_Note", ...], ...},
      "rules": [
        {"event_kind": "note_create", "target_prefix": "*",
         "main": "ANNOTATION", "sub": "Create_Note", "priority": 10},
        ...
      ]
    }

``"*"`` is the wildcard for both match fields.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError, SchemaError
from .trace import MainAction, Session, TraceEvent, UnitId

WILDCARD = "*"


class ConfigWarning(UserWarning):
    """Non-fatal oddity in an action config (unreachable rule or sub-action)."""


@dataclass(frozen=True, slots=True)
class ActionRule:
    match_event_kind: str
    match_target_prefix: str
    main_action: MainAction
    sub_action: str
    priority: int = 0

    def matches(self, event: TraceEvent) -> bool:
        if self.match_event_kind != WILDCARD and event.event_kind != self.match_event_kind:
            return False
        if self.match_target_prefix != WILDCARD and not event.target.startswith(self.match_target_prefix):
            return False
        return True

    def covers(self, other: "ActionRule") -> bool:
        """True when every event matched by ``other`` is also matched by this rule."""
        kind_ok = self.match_event_kind == WILDCARD or self.match_event_kind == other.match_event_kind
        if self.match_target_prefix == WILDCARD:
            prefix_ok = True
        else:
            prefix_ok = other.match_target_prefix != WILDCARD and other.match_target_prefix.startswith(
                self.match_target_prefix
            )
        return kind_ok and prefix_ok

    @property
    def key(self) -> tuple[str, str]:
        return (self.match_event_kind, self.match_target_prefix)


@dataclass(frozen=True)
class ActionConfig(Sequence[ActionRule]):
    """Priority-ordered rules plus the closed sub-action vocabulary.

    Behaves as the ordered list of rules: highest priority first, file order
    among equal priorities.
    """

    rules: tuple[ActionRule, ...]
    sub_actions: Mapping[MainAction, tuple[str, ...]]

    def __post_init__(self) -> None:
        if not self.rules:
            raise ConfigError("action config has no rules")
        seen: dict[tuple[str, str], int] = {}
        for i, rule in enumerate(self.rules):
            if not rule.sub_action:
                raise ConfigError(f"rule {i}: empty sub_action")
            if rule.priority < 0:
                raise ConfigError(f"rule {i}: negative priority")
            allowed = self.sub_actions.get(rule.main_action, ())
            if rule.sub_action not in allowed:
                raise ConfigError(
                    f"rule {i}: unknown sub_action {rule.sub_action!r} for {rule.main_action.value}"
                )
            if rule.key in seen:
                raise ConfigError(f"rule {i}: duplicate match key {rule.key} (also rule {seen[rule.key]})")
            seen[rule.key] = i

    def __getitem__(self, index):
        return self.rules[index]

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[ActionRule]:
        return iter(self.rules)

    def vocabulary(self) -> list[tuple[MainAction, str]]:
        return [(main, sub) for main in MainAction for sub in self.sub_actions.get(main, ())]


def _sort_rules(rules: Iterable[ActionRule]) -> tuple[ActionRule, ...]:
    return tuple(sorted(rules, key=lambda r: -r.priority))


def build_action_config(doc: Mapping) -> ActionConfig:
    """Validate a parsed config document and return it priority-sorted."""
    raw_subs = doc.get("sub_actions")
    if not isinstance(raw_subs, Mapping):
        raise ConfigError("config needs a 'sub_actions' object")
    sub_actions: dict[MainAction, tuple[str, ...]] = {}
    for token, subs in raw_subs.items():
        try:
            main = MainAction.parse(token)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        subs = tuple(subs)
        if len(set(subs)) != len(subs) or not all(subs):
            raise ConfigError(f"sub_actions for {token} must be unique non-empty names")
        sub_actions[main] = subs

    rules = []
    for i, item in enumerate(doc.get("rules", ())):
        try:
            main = MainAction.parse(item["main"])
        except ValueError as exc:
            raise ConfigError(f"rule {i}: {exc}") from None
        except KeyError as exc:
            raise ConfigError(f"rule {i}: missing key {exc}") from None
        rules.append(
            ActionRule(
                match_event_kind=str(item.get("event_kind", WILDCARD)),
                match_target_prefix=str(item.get("target_prefix", WILDCARD)),
                main_action=main,
                sub_action=str(item.get("sub", "")),
                priority=int(item.get("priority", 0)),
            )
        )
    config = ActionConfig(_sort_rules(rules), sub_actions)

    for j, rule in enumerate(config.rules):
        for earlier in config.rules[:j]:
            if earlier.covers(rule):
                warnings.warn(f"rule {rule.key} can never fire; shadowed by {earlier.key}", ConfigWarning)
                break
    emitted = {(r.main_action, r.sub_action) for r in config.rules}
    for main, sub in config.vocabulary():
        if (main, sub) not in emitted:
            warnings.warn(f"sub-action {main.value}/{sub} has no rule", ConfigWarning)
    return config


def load_action_config(path: str | Path | None = None) -> ActionConfig:
    """Load an action config; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("srlena").joinpath("data/default_actions.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"action config is not valid JSON: {exc}") from None
    return build_action_config(doc)


@dataclass(frozen=True, slots=True)
class Action:
    main_action: MainAction
    sub_action: str
    timestamp: int
    source_span: tuple[int, int]

    @property
    def key(self) -> tuple[MainAction, str]:
        return (self.main_action, self.sub_action)


class _RuleIndex:
    """Per-event-kind candidate lists so matching skips irrelevant rules."""

    def __init__(self, rules: Sequence[ActionRule]):
        self.rules = list(rules)
        self._cache: dict[str, list[ActionRule]] = {}

    def first_match(self, event: TraceEvent) -> ActionRule | None:
        candidates = self._cache.get(event.event_kind)
        if candidates is None:
            candidates = [
                r for r in self.rules if r.match_event_kind in (WILDCARD, event.event_kind)
            ]
            self._cache[event.event_kind] = candidates
        for rule in candidates:
            if rule.match_target_prefix == WILDCARD or event.target.startswith(rule.match_target_prefix):
                return rule
        return None


def _map(events: Sequence[TraceEvent], index: _RuleIndex, coalesce_ms: int):
    actions: list[Action] = []
    unmatched: Counter[str] = Counter()
    matched: Counter[str] = Counter()
    last_ts = None
    for i, ev in enumerate(events):
        rule = index.first_match(ev)
        if rule is None:
            unmatched[ev.event_kind] += 1
            continue
        matched[ev.event_kind] += 1
        if (
            coalesce_ms > 0
            and actions
            and actions[-1].key == (rule.main_action, rule.sub_action)
            and ev.timestamp - last_ts <= coalesce_ms
        ):
            prev = actions[-1]
            actions[-1] = Action(prev.main_action, prev.sub_action, prev.timestamp, (prev.source_span[0], i + 1))
        else:
            actions.append(Action(rule.main_action, rule.sub_action, ev.timestamp, (i, i + 1)))
        last_ts = ev.timestamp
    return actions, matched, unmatched


def _events_of(session: Session | Sequence[TraceEvent]) -> Sequence[TraceEvent]:
    return session.events if isinstance(session, Session) else session


def map_events(
    session: Session | Sequence[TraceEvent], rules: Sequence[ActionRule], coalesce_ms: int = 0
) -> list[Action]:
    """Translate a session's events into actions.

    Each event takes the first matching rule in priority order. Events no rule
    matches are dropped (see :func:`coverage_report`). With ``coalesce_ms > 0``
    a run of identical actions whose successive events are at most
    ``coalesce_ms`` apart merges into one action spanning all of them.
    """
    if not rules:
        raise ConfigError("rules must be non-empty")
    if coalesce_ms < 0:
        raise ValueError("coalesce_ms must be >= 0")
    actions, _, _ = _map(_events_of(session), _RuleIndex(rules), coalesce_ms)
    return actions


@dataclass
class SessionCoverage:
    mapped: int = 0
    unmapped: int = 0
    mapped_by_kind: Counter = field(default_factory=Counter)
    unmapped_by_kind: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return self.mapped + self.unmapped

    def to_dict(self) -> dict:
        return {
            "mapped": self.mapped,
            "unmapped": self.unmapped,
            "total": self.total,
            "mapped_by_kind": dict(sorted(self.mapped_by_kind.items())),
            "unmapped_by_kind": dict(sorted(self.unmapped_by_kind.items())),
        }


@dataclass
class MappingCoverage:
    per_session: dict[UnitId, SessionCoverage] = field(default_factory=dict)

    @property
    def aggregate(self) -> SessionCoverage:
        agg = SessionCoverage()
        for cov in self.per_session.values():
            agg.mapped += cov.mapped
            agg.unmapped += cov.unmapped
            agg.mapped_by_kind.update(cov.mapped_by_kind)
            agg.unmapped_by_kind.update(cov.unmapped_by_kind)
        return agg

    @property
    def fraction_mapped(self) -> float | None:
        agg = self.aggregate
        return agg.mapped / agg.total if agg.total else None

    @property
    def unmapped_kinds(self) -> set[str]:
        return set(self.aggregate.unmapped_by_kind)

    def summary(self) -> str:
        agg = self.aggregate
        return f"{agg.mapped}/{agg.total} mapped"

    def to_dict(self) -> dict:
        if not self.per_session:
            return {"aggregate": None, "sessions": {}}
        return {
            "aggregate": self.aggregate.to_dict(),
            "sessions": {f"{u}/{s}": cov.to_dict() for (u, s), cov in sorted(self.per_session.items())},
        }


def map_sessions(
    sessions: Sequence[Session], rules: Sequence[ActionRule], coalesce_ms: int = 0
) -> tuple[dict[UnitId, list[Action]], MappingCoverage]:
    """Map every session and collect the coverage report in the same pass."""
    index = _RuleIndex(rules)
    out: dict[UnitId, list[Action]] = {}
    coverage = MappingCoverage()
    for session in sessions:
        actions, matched, unmatched = _map(session.events, index, coalesce_ms)
        out[session.unit_id] = actions
        coverage.per_session[session.unit_id] = SessionCoverage(
            sum(matched.values()), sum(unmatched.values()), matched, unmatched
        )
    return out, coverage


def coverage_report(sessions: Sequence[Session], rules: Sequence[ActionRule]) -> MappingCoverage:
    return map_sessions(sessions, rules)[1]


ACTION_COLUMNS = ("user_id", "server_id", "timestamp", "main_action", "sub_action", "span_start", "span_end")


def write_actions(units: Mapping[UnitId, Sequence[Action]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ACTION_COLUMNS)
        for (user, server) in sorted(units):
            for a in units[(user, server)]:
                writer.writerow(
                    [user, server, a.timestamp, a.main_action.value, a.sub_action, *a.source_span]
                )


def read_actions(path: str | Path) -> dict[UnitId, list[Action]]:
    units: dict[UnitId, list[Action]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ACTION_COLUMNS:
            raise SchemaError(f"header must be {','.join(ACTION_COLUMNS)}", row=1)
        for lineno, rec in enumerate(reader, start=2):
            try:
                action = Action(
                    MainAction.parse(rec["main_action"]),
                    rec["sub_action"],
                    int(rec["timestamp"]),
                    (int(rec["span_start"]), int(rec["span_end"])),
                )
            except ValueError as exc:
                raise SchemaError(str(exc), row=lineno) from None
            units.setdefault((rec["user_id"], rec["server_id"]), []).append(action)
    return units
