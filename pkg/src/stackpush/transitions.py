"""Learned action-outcome model.

Success statistics are kept per (action type, container load) context with
an optimistic prior: a context is assumed perfectly reliable until it has
accumulated ``m_known`` attempts, after which a Laplace-smoothed frequency
takes over. Counts are rebuilt from the experience pool, where simulated
entries are down-weighted relative to real ones.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

from . import symbols
from .symbols import GroundAction, load_count

log = logging.getLogger(__name__)

ACTION_TYPES = ("pickup", "stack", "push")


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


@dataclass(frozen=True, order=True)
class ActionContext:
    action_type: str
    load: int

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise ConfigError(f"unknown action type: {self.action_type!r}")
        if self.load < 0:
            raise ConfigError("load must be >= 0")


def context_of(s: frozenset, a: GroundAction) -> ActionContext:
    """Context at the moment the action starts."""
    return ActionContext(a.schema.name, load_count(s))


@dataclass(frozen=True)
class PoolEntry:
    state: frozenset
    action: GroundAction
    result: frozenset
    source: str  # "real" or "simulated_<i>"
    episode: int
    step: int

    @property
    def is_real(self) -> bool:
        return self.source == "real"


class ExperiencePool:
    """Append-only store of (s, a, s') transition tuples.

    ``retain`` bounds how many entries stay resident (oldest dropped);
    the logical length keeps counting everything ever added.
    """

    def __init__(self, retain: int = None):
        self._entries = []
        self._total = 0
        self._retain = retain

    def add(self, s, a, s_next, source, episode=0, step=0):
        self._entries.append(PoolEntry(s, a, s_next, source, episode, step))
        self._total += 1
        if self._retain is not None and len(self._entries) > self._retain:
            del self._entries[: len(self._entries) - self._retain]

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def __len__(self):
        return self._total


def classify_outcome(entry: PoolEntry):
    """success / failure / None (unclassifiable).

    Success means the action achieved exactly its symbolic effects. Failure
    means the primary effect is absent. Anything else (primary effect holds
    but side effects disturbed other fluents) cannot be credited to this
    context and is skipped by the count rebuild.
    """
    expected = symbols.apply(entry.state, entry.action)
    if entry.result == expected:
        return "success"
    a = entry.action
    if a.schema.name == "pickup":
        primary = symbols.fluent("is_holding", a.obj("R").name, a.obj("B").name)
    elif a.schema.name == "stack":
        primary = symbols.fluent("at_container", a.obj("B").name, a.obj("C").name)
    else:
        primary = symbols.fluent("is_in", a.obj("C").name, a.obj("L2").name)
    if primary not in entry.result:
        return "failure"
    if a.schema.name == "push":
        # payload lost along the way counts against the push
        kept = {f for f in entry.state if f.predicate == "at_container"}
        if not kept <= entry.result:
            return "failure"
    return None


@dataclass(frozen=True)
class TransitionModel:
    m_known: int
    counts: tuple = ()  # of (ActionContext, successes, attempts), weighted

    def _table(self) -> dict:
        cached = self.__dict__.get("_cached_table")
        if cached is None:
            cached = {ctx: (s, n) for ctx, s, n in self.counts}
            object.__setattr__(self, "_cached_table", cached)
        return cached


def init_optimistic(m_known: int = 5) -> TransitionModel:
    if m_known < 1:
        raise ConfigError("m_known must be >= 1")
    return TransitionModel(m_known=m_known)


def success_prob(t: TransitionModel, ctx: ActionContext) -> float:
    succ, att = t._table().get(ctx, (0.0, 0.0))
    if att < t.m_known:
        return 1.0
    return (succ + 1.0) / (att + 2.0)


def update_from_entries(
    t: TransitionModel,
    entries,
    real_weight: float = 1.0,
    sim_weight: float = 0.2,
) -> TransitionModel:
    """Add classified entries to the counts (the incremental form; counts
    are additive so folding in new entries equals a full rebuild)."""
    table = dict(t._table())
    skipped = 0
    for entry in entries:
        verdict = classify_outcome(entry)
        if verdict is None:
            skipped += 1
            continue
        w = real_weight if entry.is_real else sim_weight
        ctx = context_of(entry.state, entry.action)
        succ, att = table.get(ctx, (0.0, 0.0))
        table[ctx] = (succ + (w if verdict == "success" else 0.0), att + w)
    if skipped:
        log.debug("skipped %d unclassifiable pool entries", skipped)
    counts = tuple((ctx, s, n) for ctx, (s, n) in sorted(table.items()))
    return TransitionModel(m_known=t.m_known, counts=counts)


def update_from_pool(
    t: TransitionModel,
    pool: ExperiencePool,
    real_weight: float = 1.0,
    sim_weight: float = 0.2,
) -> TransitionModel:
    """Rebuild counts from the whole pool (idempotent on a snapshot)."""
    fresh = TransitionModel(m_known=t.m_known)
    return update_from_entries(fresh, pool.entries, real_weight, sim_weight)


def decay_counts(t: TransitionModel, factor: float) -> TransitionModel:
    """Exponentially age the evidence.

    Estimates formed while the agent was still clumsy stop being binding:
    once a context's attempts decay below the optimism threshold it gets
    probed again with current skills. Contexts visited regularly keep a
    steady-state window of recent evidence instead.
    """
    if not 0.0 < factor <= 1.0:
        raise ConfigError("decay factor must be in (0, 1]")
    counts = tuple(
        (ctx, s * factor, n * factor)
        for ctx, s, n in t.counts
        if n * factor >= 0.05)
    return TransitionModel(m_known=t.m_known, counts=counts)


def export_csv(t: TransitionModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["action_type", "load", "successes", "attempts", "probability"])
        for ctx, succ, att in t.counts:
            w.writerow(
                [
                    ctx.action_type,
                    ctx.load,
                    f"{succ:.6f}",
                    f"{att:.6f}",
                    f"{success_prob(t, ctx):.6f}",
                ]
            )
