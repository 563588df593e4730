"""Symbolic blocks-and-container domain.

Objects, ground fluents, states (frozen sets of fluents), the three
manipulation action schemas (pickup / stack / push) with STRIPS-style
preconditions and effects, and the deterministic effect application used by
the task planner.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

KINDS = ("block", "container", "gripper", "location")

ARITY = {"is_in": 2, "is_holding": 2, "hand_empty": 1, "at_container": 2}

# allowed object kinds per argument slot
SIGNATURE = {
    "is_in": (("block", "container"), ("location",)),
    "is_holding": (("gripper",), ("block",)),
    "hand_empty": (("gripper",),),
    "at_container": (("block",), ("container",)),
}

INIT_LOC = "init"
GOAL_LOC = "goal"


class DomainError(ValueError):
    """Malformed objects, fluents or bindings."""


class PreconditionError(DomainError):
    """Action applied in a state where its preconditions do not hold."""


@dataclass(frozen=True, order=True)
class ObjectId:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown object kind: {self.kind!r}")
        if not self.name:
            raise DomainError("object name must be non-empty")


@dataclass(frozen=True, order=True)
class Fluent:
    predicate: str
    args: tuple

    def __post_init__(self):
        if self.predicate not in ARITY:
            raise DomainError(f"unknown predicate: {self.predicate!r}")
        if len(self.args) != ARITY[self.predicate]:
            raise DomainError(
                f"{self.predicate} expects {ARITY[self.predicate]} args, "
                f"got {len(self.args)}"
            )

    def __str__(self):
        return f"{self.predicate}({','.join(self.args)})"


_FLUENT_CACHE = {}


def fluent(predicate: str, *args: str) -> Fluent:
    key = (predicate, args)
    got = _FLUENT_CACHE.get(key)
    if got is None:
        got = Fluent(predicate, args)
        _FLUENT_CACHE[key] = got
    return got


_FLUENT_RE = re.compile(r"^(\w+)\(([^)]*)\)$")


def parse_fluent(text: str) -> Fluent:
    m = _FLUENT_RE.match(text.strip())
    if m is None:
        raise DomainError(f"cannot parse fluent: {text!r}")
    args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
    return Fluent(m.group(1), args)


def state(*fluents: Fluent) -> frozenset:
    return frozenset(fluents)


@dataclass(frozen=True)
class ActionSchema:
    """Lifted action: parameter list plus precondition/add/delete templates.

    Template fluents use parameter names in place of object names.
    """

    name: str
    params: tuple  # of (param_name, kind)
    preconditions: tuple
    add_effects: tuple
    del_effects: tuple

    def __post_init__(self):
        if set(self.add_effects) & set(self.del_effects):
            raise DomainError(f"{self.name}: effect both added and deleted")


PICKUP = ActionSchema(
    "pickup",
    (("R", "gripper"), ("B", "block"), ("L", "location")),
    preconditions=(fluent("is_in", "B", "L"), fluent("hand_empty", "R")),
    add_effects=(fluent("is_holding", "R", "B"),),
    del_effects=(fluent("hand_empty", "R"), fluent("is_in", "B", "L")),
)

STACK = ActionSchema(
    "stack",
    (("R", "gripper"), ("B", "block"), ("C", "container")),
    preconditions=(fluent("is_holding", "R", "B"),),
    add_effects=(fluent("hand_empty", "R"), fluent("at_container", "B", "C")),
    del_effects=(fluent("is_holding", "R", "B"),),
)

PUSH = ActionSchema(
    "push",
    (("R", "gripper"), ("C", "container"), ("L1", "location"), ("L2", "location")),
    preconditions=(fluent("hand_empty", "R"), fluent("is_in", "C", "L1")),
    add_effects=(fluent("hand_empty", "R"), fluent("is_in", "C", "L2")),
    del_effects=(fluent("is_in", "C", "L1"),),
)

SCHEMAS = {s.name: s for s in (PICKUP, STACK, PUSH)}


@dataclass(frozen=True)
class GroundAction:
    schema: ActionSchema
    binding: tuple  # of (param_name, ObjectId), ordered as schema.params

    def __post_init__(self):
        bound = dict(self.binding)
        for pname, kind in self.schema.params:
            obj = bound.get(pname)
            if obj is None:
                raise DomainError(f"{self.schema.name}: parameter {pname} unbound")
            if obj.kind != kind:
                raise DomainError(
                    f"{self.schema.name}: {pname} must be a {kind}, "
                    f"got {obj.kind} {obj.name!r}"
                )
        if len(bound) != len(self.schema.params):
            raise DomainError(f"{self.schema.name}: binding arity mismatch")
        if self.schema.name == "push" and bound["L1"] == bound["L2"]:
            raise DomainError("push requires distinct locations")

    def obj(self, param: str) -> ObjectId:
        return dict(self.binding)[param]

    def _ground(self, templates) -> frozenset:
        names = {p: o.name for p, o in self.binding}
        return frozenset(
            Fluent(t.predicate, tuple(names[a] for a in t.args)) for t in templates
        )

    def _grounded(self, slot: str, templates) -> frozenset:
        cache = self.__dict__.get("_ground_cache")
        if cache is None:
            cache = {}
            object.__setattr__(self, "_ground_cache", cache)
        got = cache.get(slot)
        if got is None:
            got = self._ground(templates)
            cache[slot] = got
        return got

    @property
    def ground_pre(self) -> frozenset:
        return self._grounded("pre", self.schema.preconditions)

    @property
    def ground_add(self) -> frozenset:
        return self._grounded("add", self.schema.add_effects)

    @property
    def ground_del(self) -> frozenset:
        return self._grounded("del", self.schema.del_effects)

    @property
    def name(self) -> str:
        args = ",".join(o.name for _, o in self.binding)
        return f"{self.schema.name}({args})"

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Goal:
    required: frozenset

    def __str__(self):
        return " & ".join(sorted(str(f) for f in self.required))


def applicable(s: frozenset, a: GroundAction) -> bool:
    """True iff every ground precondition of ``a`` holds in ``s``."""
    if not isinstance(a, GroundAction):
        raise DomainError("expected a GroundAction")
    return a.ground_pre <= s


def apply(s: frozenset, a: GroundAction) -> frozenset:
    """Delete-effects removed, then add-effects inserted."""
    if not applicable(s, a):
        missing = sorted(str(f) for f in a.ground_pre - s)
        raise PreconditionError(f"{a.name} not applicable; missing {missing}")
    return (s - a.ground_del) | a.ground_add


def goal_satisfied(s: frozenset, g: Goal) -> bool:
    return g.required <= s


@dataclass(frozen=True)
class Domain:
    """One task instance: objects, initial fluents and the goal."""

    objects: tuple
    init: frozenset
    goal: Goal

    def __post_init__(self):
        names = [o.name for o in self.objects]
        if len(names) != len(set(names)):
            raise DomainError("object names must be unique")

    def by_name(self, name: str) -> ObjectId:
        for o in self.objects:
            if o.name == name:
                return o
        raise DomainError(f"unknown object: {name!r}")

    def of_kind(self, kind: str) -> tuple:
        return tuple(o for o in self.objects if o.kind == kind)

    @property
    def blocks(self) -> tuple:
        return self.of_kind("block")

    @property
    def container(self) -> ObjectId:
        return self.of_kind("container")[0]

    @property
    def gripper(self) -> ObjectId:
        return self.of_kind("gripper")[0]

    def location(self, name: str) -> ObjectId:
        obj = self.by_name(name)
        if obj.kind != "location":
            raise DomainError(f"{name!r} is not a location")
        return obj

    def pickup(self, block_name: str, loc: str = INIT_LOC) -> GroundAction:
        return GroundAction(
            PICKUP,
            (
                ("R", self.gripper),
                ("B", self.by_name(block_name)),
                ("L", self.location(loc)),
            ),
        )

    def stack(self, block_name: str) -> GroundAction:
        return GroundAction(
            STACK,
            (
                ("R", self.gripper),
                ("B", self.by_name(block_name)),
                ("C", self.container),
            ),
        )

    def push(self, frm: str = INIT_LOC, to: str = GOAL_LOC) -> GroundAction:
        return GroundAction(
            PUSH,
            (
                ("R", self.gripper),
                ("C", self.container),
                ("L1", self.location(frm)),
                ("L2", self.location(to)),
            ),
        )

    def ground_actions(self) -> list:
        """All type-correct ground actions (used by search and tests)."""
        acts = []
        for b in self.blocks:
            for loc in self.of_kind("location"):
                acts.append(self.pickup(b.name, loc.name))
            acts.append(self.stack(b.name))
        locs = self.of_kind("location")
        for l1 in locs:
            for l2 in locs:
                if l1 != l2:
                    acts.append(self.push(l1.name, l2.name))
        return acts


def make_domain(n_blocks: int = 8) -> Domain:
    """Standard task: move all blocks from the initial area to the goal area."""
    if n_blocks < 0:
        raise DomainError("n_blocks must be >= 0")
    objs = [
        ObjectId("R", "gripper"),
        ObjectId("C", "container"),
        ObjectId(INIT_LOC, "location"),
        ObjectId(GOAL_LOC, "location"),
    ]
    blocks = [ObjectId(f"B{i + 1}", "block") for i in range(n_blocks)]
    objs.extend(blocks)
    init = frozenset(
        {fluent("hand_empty", "R"), fluent("is_in", "C", INIT_LOC)}
        | {fluent("is_in", b.name, INIT_LOC) for b in blocks}
    )
    goal = Goal(frozenset(fluent("is_in", b.name, GOAL_LOC) for b in blocks))
    return Domain(tuple(objs), init, goal)


def check_state(domain: Domain, s: frozenset) -> None:
    """Raise DomainError if ``s`` violates the state invariants.

    A block is in at most one of {a location, the gripper, a container};
    hand_empty holds iff nothing is held; args match kind signatures.
    """
    for f in s:
        slots = SIGNATURE[f.predicate]
        for arg, kinds in zip(f.args, slots):
            if domain.by_name(arg).kind not in kinds:
                raise DomainError(f"bad argument kind in {f}")
    gripper = domain.gripper.name
    held = {f.args[1] for f in s if f.predicate == "is_holding"}
    if len(held) > 1:
        raise DomainError("gripper holds more than one block")
    if (fluent("hand_empty", gripper) in s) == bool(held):
        raise DomainError("hand_empty inconsistent with is_holding")
    for b in domain.blocks:
        placed = [
            f
            for f in s
            if (f.predicate in ("is_in", "at_container") and f.args[0] == b.name)
            or (f.predicate == "is_holding" and f.args[1] == b.name)
        ]
        if len(placed) > 1:
            raise DomainError(f"block {b.name} in more than one place: {placed}")


def unload_at_goal(domain: Domain, s: frozenset) -> frozenset:
    """Helper step after a successful push to the goal area.

    Every block riding in the container is set down in the goal area and the
    container returns to the initial area for the next trip.
    """
    c = domain.container.name
    if fluent("is_in", c, GOAL_LOC) not in s:
        return s
    if not any(f.predicate == "at_container" and f.args[1] == c for f in s):
        return s
    out = set(s)
    for f in list(out):
        if f.predicate == "at_container" and f.args[1] == c:
            out.remove(f)
            out.add(fluent("is_in", f.args[0], GOAL_LOC))
    out.remove(fluent("is_in", c, GOAL_LOC))
    out.add(fluent("is_in", c, INIT_LOC))
    return frozenset(out)


def advance(domain: Domain, s: frozenset, a: GroundAction) -> frozenset:
    """Apply ``a`` and, after a push into the goal area, the helper unload."""
    nxt = apply(s, a)
    if a.schema.name == "push" and a.obj("L2").name == GOAL_LOC:
        nxt = unload_at_goal(domain, nxt)
    return nxt


def load_count(s: frozenset) -> int:
    """Number of blocks riding in the container."""
    return sum(1 for f in s if f.predicate == "at_container")


def domain_to_jsonl(domain: Domain) -> str:
    lines = [
        json.dumps({"objects": [{"name": o.name, "kind": o.kind} for o in domain.objects]}),
        json.dumps({"init": sorted(str(f) for f in domain.init)}),
        json.dumps({"goal": sorted(str(f) for f in domain.goal.required)}),
    ]
    return "\n".join(lines) + "\n"


def domain_from_jsonl(text: str) -> Domain:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if line:
            fields.update(json.loads(line))
    for key in ("objects", "init", "goal"):
        if key not in fields:
            raise DomainError(f"missing field {key!r} in domain file")
    objs = tuple(ObjectId(o["name"], o["kind"]) for o in fields["objects"])
    init = frozenset(parse_fluent(t) for t in fields["init"])
    goal = Goal(frozenset(parse_fluent(t) for t in fields["goal"]))
    return Domain(objs, init, goal)
