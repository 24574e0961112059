"""Seeded synthetic trace generator with planted group structure.

Each unit is a first-order Markov walk over the seven process codes (plus an
optional eighth "unlabelled" state). The walk can be emitted directly as coded
lines, or rendered back into raw trace events by picking a pattern for every
planted process instance and inverting the action config, so that the mapper
and parser should recover the planted labels.

Every unit draws from its own stream seeded by ``(seed, group index, unit
index)``, so units are reproducible independently of each other.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .actions import WILDCARD, ActionConfig, ActionRule, _RuleIndex
from .errors import ConfigError
from .parser import PatternLibrary, shadowing_pairs
from .trace import CODES, EducationLevel, MainAction, SessionMetadata, SrlProcess, TraceEvent, UnitId

UNLABELLED_STATE = len(CODES)
NOISE_EVENT_KIND = "ui_mouse_move"


@dataclass(frozen=True, eq=False)
class GroupProfile:
    name: str
    n_units: int
    transition_matrix: np.ndarray
    initial_distribution: np.ndarray
    lines_per_unit: tuple[int, int]
    score_distribution: tuple[float, float]
    covariate_distributions: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    education_level: EducationLevel = EducationLevel.SE
    schools: tuple[str, ...] = ()
    server_id: str = "srv1"

    def __post_init__(self) -> None:
        tm = np.asarray(self.transition_matrix, dtype=float)
        init = np.asarray(self.initial_distribution, dtype=float)
        object.__setattr__(self, "transition_matrix", tm)
        object.__setattr__(self, "initial_distribution", init)
        object.__setattr__(self, "education_level", EducationLevel(self.education_level))
        k = len(CODES)
        if tm.shape not in ((k, k), (k + 1, k + 1)):
            raise ConfigError(f"{self.name}: transition matrix must be 7x7 or 8x8, got {tm.shape}")
        if init.shape != (tm.shape[0],):
            raise ConfigError(f"{self.name}: initial distribution must have {tm.shape[0]} entries")
        if (tm < 0).any() or (init < 0).any():
            raise ConfigError(f"{self.name}: probabilities must be >= 0")
        if not np.allclose(tm.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ConfigError(f"{self.name}: transition rows must sum to 1")
        if abs(init.sum() - 1.0) > 1e-9:
            raise ConfigError(f"{self.name}: initial distribution must sum to 1")
        if self.n_units < 1:
            raise ConfigError(f"{self.name}: n_units must be >= 1")
        lo, hi = self.lines_per_unit
        if not 1 <= lo <= hi:
            raise ConfigError(f"{self.name}: lines_per_unit must satisfy 1 <= min <= max")
        if self.score_distribution[1] < 0:
            raise ConfigError(f"{self.name}: score sd must be >= 0")

    @property
    def n_states(self) -> int:
        return self.transition_matrix.shape[0]


@dataclass(frozen=True)
class SynthProfile:
    groups: tuple[GroupProfile, ...]
    action_noise: float = 0.0
    event_noise: float = 0.0
    step_ms: tuple[int, int] = (200, 3000)
    allow_ambiguous: bool = False

    def __post_init__(self) -> None:
        if not self.groups:
            raise ConfigError("profile has no groups")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ConfigError("group names must be unique")
        for rate in (self.action_noise, self.event_noise):
            if not 0 <= rate < 1:
                raise ConfigError("noise rates must lie in [0, 1)")


def group_from_dict(doc: Mapping) -> GroupProfile:
    try:
        return GroupProfile(
            name=str(doc["name"]),
            n_units=int(doc["n_units"]),
            transition_matrix=np.asarray(doc["transition_matrix"], dtype=float),
            initial_distribution=np.asarray(doc["initial_distribution"], dtype=float),
            lines_per_unit=tuple(doc["lines_per_unit"]),
            score_distribution=tuple(doc["score_distribution"]),
            covariate_distributions={k: tuple(v) for k, v in doc.get("covariate_distributions", {}).items()},
            education_level=EducationLevel(doc.get("education_level", "SE")),
            schools=tuple(doc.get("schools", ())),
            server_id=str(doc.get("server_id", "srv1")),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid group profile: {exc}") from None


def profile_from_dict(doc: Mapping) -> SynthProfile:
    noise = doc.get("noise", {})
    return SynthProfile(
        groups=tuple(group_from_dict(g) for g in doc.get("groups", ())),
        action_noise=float(noise.get("action", 0.0)),
        event_noise=float(noise.get("event", 0.0)),
        step_ms=tuple(doc.get("step_ms", (200, 3000))),
        allow_ambiguous=bool(doc.get("allow_ambiguous", False)),
    )


def load_profile(path: str | Path | None = None) -> SynthProfile:
    """Read a JSON profile; ``None`` gives the shipped high/low performance profile."""
    if path is None:
        text = resources.files("srlena").joinpath("data/default_profile.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return profile_from_dict(json.loads(text))


def unit_rng(seed: int, group_index: int, unit_index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, group_index, unit_index, stream]))


def markov_walk(rng: np.random.Generator, transition: np.ndarray, initial: np.ndarray, n: int) -> list[int]:
    cum_rows = [np.cumsum(row).tolist() for row in transition]
    for row in cum_rows:
        row[-1] = 1.0 + 1e-12
    cum_init = np.cumsum(initial).tolist()
    cum_init[-1] = 1.0 + 1e-12
    u = rng.random(n).tolist()
    states = [bisect.bisect_right(cum_init, u[0])]
    for i in range(1, n):
        states.append(bisect.bisect_right(cum_rows[states[-1]], u[i]))
    return states


def _draw_metadata(profile: GroupProfile, rng: np.random.Generator) -> SessionMetadata:
    covs = profile.covariate_distributions
    mean, sd = profile.score_distribution
    essay = max(0.0, round(float(rng.normal(mean, sd)), 1))
    pre_m, pre_sd = covs.get("pretest_score", (7.5, 2.5))
    pretest = float(np.clip(round(float(rng.normal(pre_m, pre_sd)), 1), 0, 15))
    len_m, len_sd = covs.get("task_length_minutes", (40.0, 8.0))
    task_length = max(1.0, round(float(rng.normal(len_m, len_sd)), 1))
    cet4 = None
    if profile.education_level is EducationLevel.HE and "cet4_score" in covs:
        c_m, c_sd = covs["cet4_score"]
        cet4 = max(0.0, round(float(rng.normal(c_m, c_sd)), 1))
    school = str(rng.choice(profile.schools)) if profile.schools else ""
    return SessionMetadata(
        education_level=profile.education_level,
        school_id=school,
        essay_score=essay,
        pretest_score=pretest,
        cet4_score=cet4,
        task_length_minutes=task_length,
    )


@dataclass(frozen=True, eq=False)
class SyntheticUnit:
    unit_id: UnitId
    group: str
    states: tuple[int, ...]
    metadata: SessionMetadata

    @property
    def lines(self) -> np.ndarray:
        """One-hot code lines; the unlabelled state gives an all-zero line."""
        out = np.zeros((len(self.states), len(CODES)), dtype=bool)
        s = np.asarray(self.states)
        coded = s < UNLABELLED_STATE
        out[np.flatnonzero(coded), s[coded]] = True
        return out


def _units_for(profile: GroupProfile, group_index: int, seed: int) -> list[SyntheticUnit]:
    units = []
    lo, hi = profile.lines_per_unit
    for u in range(profile.n_units):
        rng = unit_rng(seed, group_index, u)
        n = int(rng.integers(lo, hi + 1))
        states = markov_walk(rng, profile.transition_matrix, profile.initial_distribution, n)
        meta = _draw_metadata(profile, unit_rng(seed, group_index, u, stream=1))
        units.append(SyntheticUnit((f"{profile.name}{u:03d}", profile.server_id), profile.name, tuple(states), meta))
    return units


def generate_coded_lines(profile: GroupProfile | SynthProfile, seed: int) -> list[SyntheticUnit]:
    """Markov-walk coded lines and metadata for every unit of the profile."""
    groups = profile.groups if isinstance(profile, SynthProfile) else (profile,)
    units = []
    for g, group in enumerate(groups):
        units.extend(_units_for(group, g, seed))
    return units


# --- raw trace rendering ----------------------------------------------------


def _render_event(rule: ActionRule) -> tuple[str, str]:
    kind = rule.match_event_kind
    if kind == WILDCARD:
        kind = f"synthetic_{rule.main_action.value.lower()}_{rule.sub_action.lower()}"
    target = "" if rule.match_target_prefix == WILDCARD else rule.match_target_prefix
    return kind, target


def inverse_action_map(config: ActionConfig) -> dict[tuple[MainAction, str], tuple[str, str]]:
    """(event_kind, target) per action such that mapping the event gives that action back."""
    index = _RuleIndex(config.rules)
    inverse: dict[tuple[MainAction, str], tuple[str, str]] = {}
    for rule in config.rules:
        key = (rule.main_action, rule.sub_action)
        if key in inverse:
            continue
        kind, target = _render_event(rule)
        probe = TraceEvent(0, "u", "s", kind, target)
        if index.first_match(probe) is rule:
            inverse[key] = (kind, target)
    return inverse


@dataclass(frozen=True)
class PlantedLabel:
    process: SrlProcess | None
    pattern_id: str | None
    position: int | None


@dataclass
class SyntheticTrace:
    events: list[TraceEvent]
    metadata: dict[UnitId, SessionMetadata]
    groups: dict[UnitId, str]
    planted: dict[UnitId, list[PlantedLabel]]
    event_noise_count: int = 0
    action_noise_count: int = 0


def _noise_actions(
    library: PatternLibrary, renderable: Sequence[tuple[MainAction, str]]
) -> list[tuple[MainAction, str]]:
    matchers = [m for p in library for m in p.sequence]
    return [a for a in renderable if not any(m.accepts(*a) for m in matchers)]


def _geometric(rng: np.random.Generator, rate: float) -> int:
    n = 0
    while rate > 0 and rng.random() < rate:
        n += 1
    return n


def generate_raw_trace(
    profile: SynthProfile | GroupProfile,
    pattern_library: PatternLibrary,
    action_config: ActionConfig,
    seed: int,
) -> SyntheticTrace:
    """Render planted process walks as raw trace events.

    Each planted process becomes the action sequence of a uniformly chosen
    pattern for that process; each action becomes one event via the inverse
    action map. Action noise inserts actions no pattern can use between
    instances (an expected ``action_noise`` share of all actions); event
    noise inserts events no rule maps (an expected ``event_noise`` share of
    all events).
    """
    if isinstance(profile, GroupProfile):
        profile = SynthProfile((profile,))
    by_process: dict[SrlProcess, list] = {}
    for p in pattern_library:
        by_process.setdefault(p.process, []).append(p)
    for group in profile.groups:
        used = np.flatnonzero(group.transition_matrix.sum(axis=0) + group.initial_distribution > 0)
        for state in used:
            if state < len(CODES) and CODES[state] not in by_process:
                raise ConfigError(f"process {CODES[state].value} has no pattern in the library")
    if not profile.allow_ambiguous:
        pairs = shadowing_pairs(pattern_library)
        if pairs:
            raise ConfigError(
                f"pattern library is ambiguous for round-trip generation (e.g. {pairs[0][0]} "
                f"captures {pairs[0][1]}); set allow_ambiguous to override"
            )
    inverse = inverse_action_map(action_config)
    renderable_by_main: dict[MainAction, list[str]] = {}
    for main, sub in inverse:
        renderable_by_main.setdefault(main, []).append(sub)
    noise_pool = _noise_actions(pattern_library, list(inverse))
    needs_noise = profile.action_noise > 0 or any(g.n_states > len(CODES) for g in profile.groups)
    if needs_noise and not noise_pool:
        raise ConfigError("no action is free of every pattern, cannot emit action noise")
    if profile.event_noise > 0 and _RuleIndex(action_config.rules).first_match(
        TraceEvent(0, "u", "s", NOISE_EVENT_KIND, "")
    ):
        raise ConfigError(f"the action config maps {NOISE_EVENT_KIND!r}; event noise would be mapped")

    def render_matcher(rng, matcher) -> tuple[MainAction, str]:
        if matcher.sub_action != WILDCARD:
            key = (matcher.main_action, matcher.sub_action)
            if key not in inverse:
                raise ConfigError(f"no rule renders action {matcher}")
            return key
        subs = renderable_by_main.get(matcher.main_action)
        if not subs:
            raise ConfigError(f"no rule renders any {matcher.main_action.value} action")
        return (matcher.main_action, subs[int(rng.integers(len(subs)))])

    out = SyntheticTrace([], {}, {}, {})
    lo_step, hi_step = profile.step_ms
    for unit in generate_coded_lines(profile, seed):
        g = next(i for i, grp in enumerate(profile.groups) if grp.name == unit.group)
        rng = unit_rng(seed, g, int(unit.unit_id[0][len(unit.group):]), stream=2)
        actions: list[tuple[MainAction, str]] = []
        planted: list[PlantedLabel] = []
        for state in unit.states:
            if state == UNLABELLED_STATE:
                block = []
            else:
                candidates = by_process[CODES[state]]
                pattern = candidates[int(rng.integers(len(candidates)))]
                block = [render_matcher(rng, m) for m in pattern.sequence]
            n_noise = sum(_geometric(rng, profile.action_noise) for _ in block)
            if state == UNLABELLED_STATE:
                n_noise += 1
            for _ in range(n_noise):
                actions.append(noise_pool[int(rng.integers(len(noise_pool)))])
                planted.append(PlantedLabel(None, None, None))
            out.action_noise_count += n_noise
            for pos, key in enumerate(block):
                actions.append(key)
                planted.append(PlantedLabel(pattern.process, pattern.id, pos))

        user, server = unit.unit_id
        t = 0
        seq = 0
        for key in actions:
            for _ in range(_geometric(rng, profile.event_noise)):
                t += int(rng.integers(lo_step, hi_step + 1))
                out.events.append(TraceEvent(t, user, server, NOISE_EVENT_KIND, "", (("seq", str(seq)),)))
                out.event_noise_count += 1
                seq += 1
            t += int(rng.integers(lo_step, hi_step + 1))
            kind, target = inverse[key]
            out.events.append(TraceEvent(t, user, server, kind, target, (("seq", str(seq)),)))
            seq += 1
        out.metadata[unit.unit_id] = unit.metadata
        out.groups[unit.unit_id] = unit.group
        out.planted[unit.unit_id] = planted
    return out
