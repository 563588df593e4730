"""Expected-utility task planning.

The plan space of this domain factorizes into trip compositions: each
satisficing plan loads the remaining blocks into the container over one or
more trips (pickup+stack per block, one push per trip). Blocks are
interchangeable at the task level, so pickup order within a trip is
canonicalized to lexicographic block order, which also puts the designated
big block at the bottom of its trip in the size-variation task.

The planner runs a depth-first search over canonical symbolic states and
scores each complete plan by its expected utility under the current
transition model: per step, success_prob * bonus - cost -
(1 - success_prob) * failure_penalty along the all-succeed trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import symbols, transitions
from .symbols import Domain, Goal, GroundAction, GOAL_LOC, INIT_LOC
from .transitions import TransitionModel, context_of


class PlanningFailure(RuntimeError):
    """Goal unreachable (or every satisficing plan filtered out)."""


@dataclass(frozen=True)
class CostFunction:
    pickup_cost: float = 15.0
    stack_cost: float = 10.0
    push_cost: float = 30.0
    stack_bonus: float = 40.0
    push_bonus: float = 80.0
    failure_penalty: float = 50.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise transitions.ConfigError(f"{name} must be non-negative")

    def action_cost(self, action_type: str) -> float:
        return {
            "pickup": self.pickup_cost,
            "stack": self.stack_cost,
            "push": self.push_cost,
        }[action_type]


def push_completes_task(s: frozenset, a: GroundAction) -> bool:
    """True iff a successful ``a`` (a push to the goal) would finish the
    delivery: nothing remains in the initial area except the container."""
    if a.schema.name != "push" or a.obj("L2").name != GOAL_LOC:
        return False
    c = a.obj("C").name
    return not any(
        f.predicate == "is_in" and f.args[1] == INIT_LOC and f.args[0] != c
        for f in s
    )


def step_bonus(s: frozenset, a: GroundAction, cost: CostFunction) -> float:
    """Utility earned when the step succeeds.

    A stack pays per block; the push bonus is earned by the delivery that
    completes the task (extra trips never pay for themselves, which is what
    makes tall-but-risky stacks worth learning about).
    """
    if a.schema.name == "stack":
        return cost.stack_bonus
    if push_completes_task(s, a):
        return cost.push_bonus
    return 0.0


@dataclass(frozen=True)
class Plan:
    steps: tuple  # of (expected SymbolicState, GroundAction)
    expected_utility: float

    @property
    def actions(self) -> tuple:
        return tuple(a for _, a in self.steps)

    @property
    def composition(self) -> tuple:
        """Trip sizes: number of blocks stacked before each push."""
        sizes, current = [], 0
        for _, a in self.steps:
            if a.schema.name == "stack":
                current += 1
            elif a.schema.name == "push":
                sizes.append(current)
                current = 0
        return tuple(sizes)

    def __str__(self):
        return " ; ".join(a.name for a in self.actions)


def expected_utility(plan_or_steps, t: TransitionModel, cost: CostFunction) -> float:
    """Score a chained (state, action) sequence under the transition model."""
    steps = plan_or_steps.steps if isinstance(plan_or_steps, Plan) else plan_or_steps
    total = 0.0
    for s, a in steps:
        p = transitions.success_prob(t, context_of(s, a))
        total += p * step_bonus(s, a, cost) - cost.action_cost(a.schema.name)
        total -= (1.0 - p) * cost.failure_penalty
    return total


def _enumerate_plans(domain: Domain, s_init: frozenset, goal: Goal, limit: int):
    """DFS over canonical states; yields complete step tuples.

    Branching: while holding, stack; otherwise pick up the lexicographically
    smallest block still in the initial area, or push a non-empty container
    to the goal (an empty push is allowed only when no blocks remain and the
    goal still requires the container to move).
    """
    plans = []
    max_depth = 4 * len(domain.blocks) + 8
    pickup_for = {b.name: domain.pickup(b.name, INIT_LOC) for b in domain.blocks}
    stack_for = {b.name: domain.stack(b.name) for b in domain.blocks}
    push_action = domain.push(INIT_LOC, GOAL_LOC)
    block_names = {b.name for b in domain.blocks}
    container_home_fluent = symbols.fluent("is_in", domain.container.name, INIT_LOC)

    def options(s):
        held = [f for f in s if f.predicate == "is_holding"]
        if held:
            yield stack_for[held[0].args[1]]
            return
        remaining = sorted(
            f.args[0]
            for f in s
            if f.predicate == "is_in"
            and f.args[1] == INIT_LOC
            and f.args[0] in block_names
        )
        if remaining:
            yield pickup_for[remaining[0]]
        loaded = symbols.load_count(s)
        if container_home_fluent in s and (
                loaded >= 1 or (not remaining and loaded == 0)):
            yield push_action

    def dfs(s, steps):
        if len(plans) >= limit:
            return
        if symbols.goal_satisfied(s, goal):
            plans.append(tuple(steps))
            return
        if len(steps) >= max_depth:
            return
        for a in options(s):
            steps.append((s, a))
            dfs(symbols.advance(domain, s, a), steps)
            steps.pop()

    dfs(s_init, [])
    return plans


def enumerate_satisficing(
    domain: Domain,
    s_init: frozenset,
    goal: Goal,
    max_plans: int,
    plan_filter=None,
) -> list:
    """Up to ``max_plans`` distinct satisficing plans (distinct trip
    compositions), ordered by composition tuple."""
    if max_plans < 1:
        raise transitions.ConfigError("max_plans must be >= 1")
    raw = _enumerate_plans(domain, s_init, goal, limit=1 << 14)
    if not raw:
        raise PlanningFailure("goal unreachable from the given state")
    plans = [Plan(steps, 0.0) for steps in raw]
    if plan_filter is not None:
        plans = [p for p in plans if plan_filter(p)]
        if not plans:
            raise PlanningFailure("all satisficing plans rejected by constraint")
    plans.sort(key=lambda p: (p.composition, tuple(a.name for a in p.actions)))
    return plans[:max_plans]


def plan(
    domain: Domain,
    s_init: frozenset,
    goal: Goal,
    t: TransitionModel,
    cost: CostFunction,
    plan_filter=None,
) -> Plan:
    """Expected-utility-maximal satisficing plan.

    Ties break toward fewer actions, then lexicographically smaller action
    sequences, so the result is deterministic.
    """
    n = len(domain.blocks)
    candidates = enumerate_satisficing(
        domain, s_init, goal, max_plans=max(2 ** max(n - 1, 0) + 8, 16),
        plan_filter=plan_filter,
    )
    scored = [
        Plan(p.steps, expected_utility(p.steps, t, cost)) for p in candidates
    ]
    best_u = max(p.expected_utility for p in scored)
    best = [p for p in scored if p.expected_utility == best_u]
    min_len = min(len(p.steps) for p in best)
    best = [p for p in best if len(p.steps) == min_len]
    best.sort(key=lambda p: tuple(a.name for a in p.actions))
    return best[0]


def big_block_low_filter(big_block: str):
    """Plan constraint for the size variant: the big block must be one of
    the first two blocks stacked within its trip."""

    def ok(p: Plan) -> bool:
        position = 0
        for _, a in p.steps:
            if a.schema.name == "stack":
                position += 1
                if a.obj("B").name == big_block and position > 2:
                    return False
            elif a.schema.name == "push":
                position = 0
        return True

    return ok
