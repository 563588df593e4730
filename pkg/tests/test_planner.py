"""Task planner vs a closed-form trip-composition oracle.

The oracle scores a trip composition directly from the utility arithmetic
(no state-space search, no fluent sets), so planner results are checked
against an independent computation path.
"""

import random

import pytest

from stackpush import symbols
from stackpush.planner import (
    CostFunction,
    Plan,
    PlanningFailure,
    big_block_low_filter,
    enumerate_satisficing,
    expected_utility,
    plan,
)
from stackpush.symbols import Goal, fluent, make_domain
from stackpush.transitions import ActionContext, TransitionModel, init_optimistic


def compositions(n):
    """All ordered compositions of n into positive parts (2^(n-1))."""
    if n == 0:
        yield ()
        return
    for k in range(1, n + 1):
        for rest in compositions(n - k):
            yield (k,) + rest


def oracle_utility(comp, probs, cost):
    """Closed-form expected utility of a trip composition."""
    u = 0.0
    for trip_idx, k in enumerate(comp):
        for i in range(k):
            pp = probs[("pickup", i)]
            u += -cost.pickup_cost - (1.0 - pp) * cost.failure_penalty
            ps = probs[("stack", i)]
            u += ps * cost.stack_bonus - cost.stack_cost
            u += -(1.0 - ps) * cost.failure_penalty
        pu = probs[("push", k)]
        u += -cost.push_cost - (1.0 - pu) * cost.failure_penalty
        if trip_idx == len(comp) - 1:
            u += pu * cost.push_bonus
    return u


def probs_from_model(t, n):
    out = {}
    for i in range(n):
        out[("pickup", i)] = _prob(t, "pickup", i)
        out[("stack", i)] = _prob(t, "stack", i)
    for k in range(1, n + 1):
        out[("push", k)] = _prob(t, "push", k)
    return out


def _prob(t, kind, load):
    table = {ctx: (s, a) for ctx, s, a in t.counts}
    succ, att = table.get(ActionContext(kind, load), (0.0, 0.0))
    if att < t.m_known:
        return 1.0
    return (succ + 1.0) / (att + 2.0)


def random_model(rng, n, m_known=5):
    counts = []
    for kind, loads in (("pickup", range(n)), ("stack", range(n)), ("push", range(1, n + 1))):
        for load in loads:
            if rng.random() < 0.3:
                continue  # leave optimistic
            att = float(rng.randint(m_known, 60))
            succ = float(rng.randint(0, int(att)))
            counts.append((ActionContext(kind, load), succ, att))
    return TransitionModel(m_known=m_known, counts=tuple(counts))


def test_single_trip_utility_is_170():
    dom = make_domain(8)
    cost = CostFunction()
    p = plan(dom, dom.init, dom.goal, init_optimistic(5), cost)
    assert p.composition == (8,)
    assert p.expected_utility == pytest.approx(170.0)
    assert len(p.actions) == 17


def test_degenerate_push_only_task():
    dom = make_domain(0)
    goal = Goal(frozenset({fluent("is_in", "C", "goal")}))
    p = plan(dom, dom.init, goal, init_optimistic(5), CostFunction())
    assert [a.schema.name for a in p.actions] == ["push"]
    assert p.expected_utility == pytest.approx(50.0)


def test_stack_cutoff_limits_trip_size():
    dom = make_domain(8)
    counts = []
    for load in range(4, 8):
        counts.append((ActionContext("stack", load), 2.0, 28.0))  # p = 0.1
    t = TransitionModel(m_known=5, counts=tuple(counts))
    p = plan(dom, dom.init, dom.goal, t, CostFunction())
    assert max(p.composition) <= 4
    assert p.composition == (4, 4)


def test_planner_matches_oracle_on_random_tables():
    cost = CostFunction()
    rng = random.Random(20240811)
    for trial in range(40):
        n = rng.randint(3, 8)
        dom = make_domain(n)
        t = random_model(rng, n)
        best = plan(dom, dom.init, dom.goal, t, cost)
        probs = probs_from_model(t, n)
        oracle_best = max(
            oracle_utility(c, probs, cost) for c in compositions(n)
        )
        assert best.expected_utility == pytest.approx(oracle_best, abs=1e-9)


def test_expected_utility_examples():
    dom = make_domain(2)
    s = symbols.state(
        fluent("is_holding", "R", "B1"),
        fluent("is_in", "C", "init"),
        fluent("is_in", "B2", "init"),
    )
    step = ((s, dom.stack("B1")),)
    cost = CostFunction()
    assert expected_utility(step, init_optimistic(5), cost) == pytest.approx(30.0)
    t_zero = TransitionModel(
        m_known=1, counts=((ActionContext("stack", 0), 0.0, 1e12),)
    )
    assert expected_utility(step, t_zero, cost) == pytest.approx(-60.0, abs=1e-6)
    assert expected_utility((), init_optimistic(5), cost) == 0.0


def test_enumerate_counts_match_compositions():
    for n, expect in ((1, 1), (3, 4), (8, 128)):
        dom = make_domain(n)
        plans = enumerate_satisficing(dom, dom.init, dom.goal, max_plans=1 << 12)
        assert len(plans) == expect
        comps = {p.composition for p in plans}
        assert comps == set(compositions(n))


def test_enumerate_is_deterministic_and_ordered():
    dom = make_domain(4)
    a = enumerate_satisficing(dom, dom.init, dom.goal, max_plans=100)
    b = enumerate_satisficing(dom, dom.init, dom.goal, max_plans=100)
    assert [p.composition for p in a] == [p.composition for p in b]
    assert [p.composition for p in a] == sorted(p.composition for p in a)


def test_plan_determinism():
    dom = make_domain(6)
    rng = random.Random(5)
    t = random_model(rng, 6)
    cost = CostFunction()
    p1 = plan(dom, dom.init, dom.goal, t, cost)
    p2 = plan(dom, dom.init, dom.goal, t, cost)
    assert [a.name for a in p1.actions] == [a.name for a in p2.actions]


def test_plans_chain_under_advance():
    dom = make_domain(5)
    for p in enumerate_satisficing(dom, dom.init, dom.goal, max_plans=16):
        s = dom.init
        for s_expected, a in p.steps:
            assert s_expected == s
            s = symbols.advance(dom, s, a)
        assert symbols.goal_satisfied(s, dom.goal)


def test_unreachable_goal_raises():
    dom = make_domain(2)
    impossible = Goal(frozenset({fluent("is_holding", "R", "B1"),
                                 fluent("hand_empty", "R")}))
    with pytest.raises(PlanningFailure):
        plan(dom, dom.init, impossible, init_optimistic(5), CostFunction())


def test_replanning_from_mid_task_state():
    dom = make_domain(3)
    s = symbols.state(
        fluent("hand_empty", "R"),
        fluent("is_in", "C", "init"),
        fluent("is_in", "B1", "goal"),
        fluent("at_container", "B2", "C"),
        fluent("is_in", "B3", "init"),
    )
    p = plan(dom, s, dom.goal, init_optimistic(5), CostFunction())
    names = [a.schema.name for a in p.actions]
    assert names.count("push") >= 1
    final = s
    for st, a in p.steps:
        final = symbols.advance(dom, final, a)
    assert symbols.goal_satisfied(final, dom.goal)


def test_big_block_filter_semantics():
    dom = make_domain(4)
    ok = big_block_low_filter("B1")
    plans = enumerate_satisficing(dom, dom.init, dom.goal, max_plans=100)
    # canonical order stacks B1 first in its trip, so all plans pass
    assert all(ok(p) for p in plans)
    # construct a violating plan by hand: B1 stacked third in its trip
    s = dom.init
    steps = []
    for b in ("B2", "B3", "B1"):
        a = dom.pickup(b)
        steps.append((s, a))
        s = symbols.advance(dom, s, a)
        a = dom.stack(b)
        steps.append((s, a))
        s = symbols.advance(dom, s, a)
    bad = Plan(tuple(steps), 0.0)
    assert not ok(bad)


def test_ties_broken_by_fewer_actions_then_lexicographic():
    # zero costs and bonuses make every composition score 0.0
    dom = make_domain(3)
    cost = CostFunction(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    p = plan(dom, dom.init, dom.goal, init_optimistic(5), cost)
    assert p.composition == (3,)  # fewest actions among ties
