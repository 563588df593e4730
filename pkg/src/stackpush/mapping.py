"""Task-to-motion mapping and sampling-based trajectory planning.

map_pose turns a (state, action) pair into a target gripper configuration
using one hypothesized set of object properties; per-particle poses are
fused by weighted averaging before the real robot moves. plan_motion finds
a collision-free polyline for the gripper footprint (straight shot, an
up-over-down detour, or an RRT with rewiring and shortcut smoothing, in
that order) and extract_state reads a symbolic state back out of a
continuous world snapshot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .physics import kernels, scene
from .symbols import GroundAction

log = logging.getLogger(__name__)

SPEED_LIMIT = scene.TRANSIT_SPEED
RRT_BUDGET = 2000
RRT_STEP = 1.0          # 5% of the workspace extent
RRT_REWIRE_RADIUS = 2.0
RRT_GOAL_BIAS = 0.1
SHORTCUT_ITERS = 100
CHECK_SPACING = 0.1


class GroundingError(KeyError):
    """An involved object has no pose in the given properties."""


class NormalizationError(ValueError):
    """Fusion weights do not form a distribution."""


class MotionFailure(RuntimeError):
    """No collision-free trajectory within the sample budget."""


@dataclass(frozen=True)
class Configuration:
    x: float
    y: float
    grip: float = 0.0

    def __post_init__(self):
        x0, x1, y0, y1 = scene.WORKSPACE
        if not (x0 - 1e-9 <= self.x <= x1 + 1e-9
                and y0 - 1e-9 <= self.y <= y1 + 1e-9):
            raise ValueError(f"configuration ({self.x}, {self.y}) out of bounds")
        if not (0.0 <= self.grip <= scene.GRIP_MAX):
            raise ValueError(f"grip opening {self.grip} out of range")


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple  # of Configuration
    timestamps: tuple  # seconds, strictly increasing

    def __post_init__(self):
        if len(self.waypoints) != len(self.timestamps):
            raise ValueError("waypoints and timestamps must align")
        if not self.waypoints:
            raise ValueError("empty trajectory")
        for t0, t1 in zip(self.timestamps, self.timestamps[1:]):
            if t1 <= t0:
                raise ValueError("timestamps must strictly increase")
        for (a, b), (t0, t1) in zip(
                zip(self.waypoints, self.waypoints[1:]),
                zip(self.timestamps, self.timestamps[1:])):
            if math.hypot(b.x - a.x, b.y - a.y) > SPEED_LIMIT * (t1 - t0) + 1e-6:
                raise ValueError("segment exceeds the displacement bound")

    @property
    def length(self) -> float:
        return sum(
            math.hypot(b.x - a.x, b.y - a.y)
            for a, b in zip(self.waypoints, self.waypoints[1:]))

    def to_csv(self) -> str:
        lines = ["t,x,y,grip"]
        for w, t in zip(self.waypoints, self.timestamps):
            lines.append(f"{t:.6f},{w.x:.6f},{w.y:.6f},{w.grip:.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class StateMapping:
    """Parameters of the task-to-motion pose map. grasp_offset is a height
    fraction (0 = block center, 1 = one height above it); it is the knob
    the agent hill-climbs on real grasp outcomes."""

    grasp_offset: float = 0.5
    place_clearance: float = 0.02
    push_contact_height: float = 0.35

    def __post_init__(self):
        if not 0.0 <= self.grasp_offset <= 1.0:
            raise ValueError("grasp_offset must be in [0, 1]")
        if self.place_clearance < 0.0 or self.push_contact_height < 0.0:
            raise ValueError("clearances must be non-negative")


def _stack_top(l, container_name: str, skip: str) -> float:
    cp = l[container_name]
    top = scene.container_base_top(cp.y)
    for name, bp in l.objects.items():
        if bp.kind != "block" or name == skip or name == l.attached_block:
            continue
        if scene.block_contained(bp.x, bp.y, bp.width, bp.height, bp.angle,
                                 cp.x, cp.y):
            top = max(top, bp.y + bp.height / 2.0)
    return top


def map_pose(y: StateMapping, s: frozenset, a: GroundAction, l) -> Configuration:
    """Target gripper configuration for one action under properties ``l``."""
    kind = a.schema.name
    try:
        if kind == "pickup":
            bp = l[a.obj("B").name]
            return Configuration(
                bp.x, bp.y + y.grasp_offset * bp.height,
                min(bp.width + scene.GRIP_SLACK, scene.GRIP_MAX))
        if kind == "stack":
            bp = l[a.obj("B").name]
            cp = l[a.obj("C").name]
            top = _stack_top(l, a.obj("C").name, skip=a.obj("B").name)
            block_center = top + y.place_clearance + bp.height / 2.0
            return Configuration(
                cp.x, block_center + y.grasp_offset * bp.height,
                min(bp.width + scene.GRIP_SLACK, scene.GRIP_MAX))
        cp = l[a.obj("C").name]
        side_x = cp.x - cp.width / 2.0 - scene.GRIPPER_HALF - 0.05
        base_bottom = cp.y - scene.CONTAINER_BASE_HALF[1]
        return Configuration(
            side_x, base_bottom + y.push_contact_height * scene.CONTAINER_HEIGHT,
            0.0)
    except KeyError as exc:
        raise GroundingError(f"object pose unknown: {exc}") from exc


def fuse_poses(poses, weights) -> Configuration:
    """Component-wise weighted arithmetic mean of configurations."""
    if len(poses) == 0:
        raise ValueError("cannot fuse an empty pose list")
    if len(poses) != len(weights):
        raise ValueError("poses and weights must align")
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise NormalizationError(f"weights sum to {w.sum()!r}")
    xs = np.array([p.x for p in poses])
    ys = np.array([p.y for p in poses])
    gs = np.array([p.grip for p in poses])
    return Configuration(float(w @ xs), float(w @ ys), float(w @ gs))


def _foot_array(held=None) -> np.ndarray:
    rows = [[0.0, 0.0, scene.GRIPPER_HALF, scene.GRIPPER_HALF]]
    if held is not None:
        hw, hh, dy = held
        rows.append([0.0, -dy, hw, hh])
    return np.array(rows)


def held_footprint(width: float, height: float, grasp_offset: float):
    """(half_w, half_h, drop) of a block held below the gripper."""
    return (width / 2.0, height / 2.0, grasp_offset * height)


def _free(p, foot, boxes) -> bool:
    return bool(kernels.footprint_clear(p[0], p[1], foot, boxes))


def _clear(p, q, foot, boxes) -> bool:
    return bool(kernels.segment_clear(p[0], p[1], q[0], q[1], foot, boxes,
                                      CHECK_SPACING))


def _path_length(path) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1])
               for a, b in zip(path, path[1:]))


def _shortcut(path, foot, boxes, rng):
    path = list(path)
    for _ in range(SHORTCUT_ITERS):
        if len(path) <= 2:
            break
        i = int(rng.integers(0, len(path) - 2))
        j = int(rng.integers(i + 2, len(path)))
        if _clear(path[i], path[j], foot, boxes):
            path = path[: i + 1] + path[j:]
    return path


def _rrt(p0, p1, foot, boxes, rng):
    xs = [p0]
    parent = [0]
    cost = [0.0]
    x_lo, x_hi, y_lo, y_hi = scene.WORKSPACE
    best_goal = None
    best_cost = math.inf
    for _ in range(RRT_BUDGET):
        if rng.random() < RRT_GOAL_BIAS:
            sample = p1
        else:
            sample = (float(rng.uniform(x_lo, x_hi)),
                      float(rng.uniform(y_lo, y_hi)))
        d2 = [(x[0] - sample[0]) ** 2 + (x[1] - sample[1]) ** 2 for x in xs]
        near = int(np.argmin(d2))
        dist = math.sqrt(d2[near])
        if dist < 1e-9:
            continue
        t = min(1.0, RRT_STEP / dist)
        new = (xs[near][0] + t * (sample[0] - xs[near][0]),
               xs[near][1] + t * (sample[1] - xs[near][1]))
        if not _free(new, foot, boxes):
            continue
        if not _clear(xs[near], new, foot, boxes):
            continue
        # choose best parent in the rewire radius, then rewire neighbors
        new_idx = len(xs)
        best_parent, best_c = near, cost[near] + math.hypot(
            new[0] - xs[near][0], new[1] - xs[near][1])
        for k in range(len(xs)):
            d = math.hypot(new[0] - xs[k][0], new[1] - xs[k][1])
            if d < RRT_REWIRE_RADIUS and cost[k] + d < best_c:
                if _clear(xs[k], new, foot, boxes):
                    best_parent, best_c = k, cost[k] + d
        xs.append(new)
        parent.append(best_parent)
        cost.append(best_c)
        for k in range(len(xs) - 1):
            d = math.hypot(new[0] - xs[k][0], new[1] - xs[k][1])
            if d < RRT_REWIRE_RADIUS and best_c + d < cost[k]:
                if _clear(new, xs[k], foot, boxes):
                    parent[k] = new_idx
                    cost[k] = best_c + d
        d_goal = math.hypot(new[0] - p1[0], new[1] - p1[1])
        if d_goal <= RRT_STEP and _clear(new, p1, foot, boxes):
            if best_c + d_goal < best_cost:
                best_cost = best_c + d_goal
                best_goal = new_idx
    if best_goal is None:
        return None
    path = [p1]
    k = best_goal
    while True:
        path.append(xs[k])
        if k == 0:
            break
        k = parent[k]
    path.reverse()
    return path


def plan_motion(x_curr: Configuration, x_goal: Configuration, world_snapshot,
                held=None, rng=None, speed: float = SPEED_LIMIT) -> Trajectory:
    """Collision-free trajectory from x_curr to x_goal.

    world_snapshot is an (n, 5) array of obstacle boxes (cx, cy, angle, hw,
    hh); held describes a carried block footprint. Straight and detour
    candidates are tried before the sampling planner; the shortest found
    path wins.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    boxes = np.asarray(world_snapshot, dtype=float)
    if boxes.size == 0:
        boxes = np.zeros((0, 5))
    foot = _foot_array(held)
    p0 = (x_curr.x, x_curr.y)
    p1 = (x_goal.x, x_goal.y)
    if not _free(p1, foot, boxes):
        raise MotionFailure("goal configuration is in collision")
    prefix = []
    if not _free(p0, foot, boxes):
        # release and push poses end in contact; escape straight up first
        for dy in np.arange(0.05, 1.55, 0.05):
            cand = (p0[0], min(p0[1] + dy, scene.WORKSPACE[3] - 0.1))
            if _free(cand, foot, boxes):
                prefix = [p0]
                p0 = cand
                break
        else:
            raise MotionFailure("start configuration is stuck in collision")

    if not prefix and math.hypot(p1[0] - p0[0], p1[1] - p0[1]) < 1e-12:
        return Trajectory((Configuration(p0[0], p0[1], x_goal.grip),), (0.0,))

    candidates = []
    if _clear(p0, p1, foot, boxes):
        candidates.append([p0, p1])
    else:
        top = 0.0
        for row in boxes:
            top = max(top, row[1] + math.hypot(row[3], row[4]))
        foot_drop = max(row[3] for row in foot) + max(r[1] + r[3] for r in foot)
        for margin in (0.4, 1.2):
            safe_y = min(top + foot_drop + margin, scene.WORKSPACE[3] - 0.1)
            via = [p0, (p0[0], safe_y), (p1[0], safe_y), p1]
            pts = [q for i, q in enumerate(via) if i == 0 or q != via[i - 1]]
            if all(_clear(a, b, foot, boxes) for a, b in zip(pts, pts[1:])):
                candidates.append(pts)
                break
        if not candidates:
            path = _rrt(p0, p1, foot, boxes, rng)
            if path is not None:
                candidates.append(_shortcut(path, foot, boxes, rng))
    if not candidates:
        raise MotionFailure("no path within the sample budget")

    path = prefix + min(candidates, key=_path_length)
    start = path[0]
    waypoints = [Configuration(start[0], start[1], x_curr.grip)]
    times = [0.0]
    for q in path[1:]:
        d = math.hypot(q[0] - waypoints[-1].x, q[1] - waypoints[-1].y)
        if d < 1e-12:
            continue
        waypoints.append(Configuration(q[0], q[1], x_goal.grip))
        times.append(times[-1] + d / speed)
    return Trajectory(tuple(waypoints), tuple(times))


def extract_state(l_prime, y: StateMapping = None) -> frozenset:
    """Symbolic state from continuous properties (the inverse mapping).

    Blocks held by the gripper are reported as is_holding; blocks whose
    footprint sits in the container interior as at_container; all others by
    the region their center falls in, with a logged nearest-region fallback
    for strays outside every region box.
    """
    from .symbols import fluent

    gripper = container = None
    for name, bp in l_prime.objects.items():
        if bp.kind == "gripper":
            gripper = name
        elif bp.kind == "container":
            container = name
    if gripper is None or container is None:
        raise GroundingError("properties must include a gripper and a container")

    fluents = set()
    if l_prime.attached_block is not None:
        fluents.add(fluent("is_holding", gripper, l_prime.attached_block))
    else:
        fluents.add(fluent("hand_empty", gripper))

    cp = l_prime[container]
    c_region = scene.region_of(cp.x, cp.y)
    if c_region is None:
        c_region = scene.nearest_region(cp.x, cp.y)
        log.warning("container outside both regions; classified to %s", c_region)
    fluents.add(fluent("is_in", container, c_region))

    for name, bp in l_prime.objects.items():
        if bp.kind != "block" or name == l_prime.attached_block:
            continue
        if scene.block_contained(bp.x, bp.y, bp.width, bp.height, bp.angle,
                                 cp.x, cp.y):
            fluents.add(fluent("at_container", name, container))
            continue
        region = scene.region_of(bp.x, bp.y)
        if region is None:
            region = scene.nearest_region(bp.x, bp.y)
            log.warning("block %s outside both regions; classified to %s",
                        name, region)
        fluents.add(fluent("is_in", name, region))
    return frozenset(fluents)
