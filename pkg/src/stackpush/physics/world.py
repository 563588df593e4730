"""World construction, trajectory execution and outcome events.

A World owns flat numpy arrays over bodies and shapes (the container is a
compound body: base slab plus two walls) and drives the kernels in
stackpush.physics.kernels. The same engine instantiates both the hidden
ground-truth "real" world (actuation noise on the executed gripper path,
sizes unknown to the agent) and the per-particle simulated worlds
(noise-free, hypothesized sizes).

Collision policy: blocks touch blocks, the container and the ground; the
gripper touches only the container (it pushes, it does not bump blocks);
a held block rides the gripper kinematically and collides with nothing.
Free-space transits where no interaction is possible are fast-forwarded
without stepping, which cannot change any outcome because every dynamic
body is asleep and the swept path stays clear of the gripper's only
collision partner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import symbols
from . import kernels, scene
from .kernels import STATUS_FAULT, STATUS_QUIESCENT


class ConstructionError(ValueError):
    """World assembly failed (interpenetration, bad properties)."""


class ExecutionError(RuntimeError):
    """Trajectory cannot be executed from the current configuration."""


class SimulationFault(RuntimeError):
    """Numerical blow-up; the episode must be aborted."""


@dataclass(frozen=True)
class BodyProps:
    width: float
    height: float
    density: float
    x: float
    y: float
    angle: float
    kind: str = "block"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.density <= 0:
            raise ConstructionError("width, height and density must be positive")

    @property
    def mass(self) -> float:
        return self.width * self.height * self.density

    @property
    def pose(self):
        return (self.x, self.y, self.angle)


@dataclass(frozen=True)
class ContinuousProperties:
    """Per-object physical parameters defining one grounded world."""

    objects: dict  # name -> BodyProps
    attached_block: Optional[str] = None

    def __getitem__(self, name: str) -> BodyProps:
        return self.objects[name]


@dataclass(frozen=True)
class ExecutionOutcome:
    l_prime: ContinuousProperties
    events: tuple


_SETTLE_CAP = 1200  # 10 s at 1/120


def _container_layout(density: float):
    """Fixture boxes relative to the base center plus mass properties."""
    bw, bh = scene.CONTAINER_BASE_HALF
    ww, wh = scene.CONTAINER_WALL_HALF
    dx = scene.CONTAINER_WALL_DX
    wall_dy = scene.CONTAINER_BASE_HALF[1] + scene.CONTAINER_WALL_HALF[1]
    fixtures = [
        (0.0, 0.0, bw, bh),
        (-dx, wall_dy, ww, wh),
        (dx, wall_dy, ww, wh),
    ]
    masses = [4.0 * hw * hh * density for (_, _, hw, hh) in fixtures]
    m = sum(masses)
    com_y = sum(mm * fy for mm, (_, fy, _, _) in zip(masses, fixtures)) / m
    inertia = 0.0
    for mm, (fx, fy, hw, hh) in zip(masses, fixtures):
        inertia += mm * ((2 * hw) ** 2 + (2 * hh) ** 2) / 12.0
        inertia += mm * (fx ** 2 + (fy - com_y) ** 2)
    return fixtures, m, com_y, inertia


class World:
    """One simulated instance: bodies, contact cache, RNG and grip state."""

    def __init__(self, domain, props: ContinuousProperties, seed: int,
                 noise_scale: float = 0.0, gravity: float = scene.GRAVITY,
                 friction: float = scene.FRICTION,
                 restitution: float = scene.RESTITUTION):
        self.domain = domain
        self.seed = int(seed)
        self.noise_scale = float(noise_scale)
        self.gravity = float(gravity)
        self.friction = float(friction)
        self.restitution = float(restitution)
        self.rng = np.random.default_rng(self.seed)
        self.time = 0.0
        self.grip = 0.0
        self.attached = -1
        self._attach_restore = (0.0, 0.0)
        self.parked = 0

        names, kinds = ["__ground__"], ["ground"]
        self.block_names = [b.name for b in domain.blocks]
        names += [domain.gripper.name, domain.container.name] + self.block_names
        kinds += ["gripper", "container"] + ["block"] * len(self.block_names)
        self.names = names
        self.kinds = kinds
        self.index = {n: i for i, n in enumerate(names)}
        self.gripper_body = 1
        self.container_body = 2
        self.block_bodies = [3 + i for i in range(len(self.block_names))]

        nb = len(names)
        self.pos = np.zeros((nb, 2))
        self.angle = np.zeros(nb)
        self.vel = np.zeros((nb, 2))
        self.omega = np.zeros(nb)
        self.inv_m = np.zeros(nb)
        self.inv_i = np.zeros(nb)
        self.sleep_cnt = np.zeros(nb, dtype=np.int64)
        self.asleep = np.zeros(nb, dtype=np.bool_)

        shapes = []  # (body, ox, oy, hw, hh)
        shapes.append((0, 0.0, 0.0, scene.GROUND_HALF[0], scene.GROUND_HALF[1]))
        self.pos[0] = scene.GROUND_POS
        shapes.append((1, 0.0, 0.0, scene.GRIPPER_HALF, scene.GRIPPER_HALF))

        gp = props[domain.gripper.name]
        self.pos[1] = (gp.x, gp.y)
        self.grip = scene.GRIP_MAX / 2.0

        cp = props[domain.container.name]
        fixtures, cmass, com_y, cinertia = _container_layout(cp.density)
        self._container_com_dy = com_y
        for (fx, fy, hw, hh) in fixtures:
            shapes.append((2, fx, fy - com_y, hw, hh))
        self.pos[2] = (cp.x, cp.y + com_y)
        self.angle[2] = cp.angle
        self.inv_m[2] = 1.0 / cmass
        self.inv_i[2] = 1.0 / cinertia
        self.container_density = cp.density

        self.block_sizes = np.zeros(len(self.block_names))
        for k, bname in enumerate(self.block_names):
            bp = props[bname]
            if abs(bp.width - bp.height) > 1e-12:
                raise ConstructionError("blocks are square in this domain")
            b = self.block_bodies[k]
            shapes.append((b, 0.0, 0.0, bp.width / 2.0, bp.height / 2.0))
            self.pos[b] = (bp.x, bp.y)
            self.angle[b] = bp.angle
            self.block_sizes[k] = bp.width
            m = bp.mass
            self.inv_m[b] = 1.0 / m
            self.inv_i[b] = 12.0 / (m * (bp.width ** 2 + bp.height ** 2))
        self.block_density = scene.BLOCK_DENSITY

        ns = len(shapes)
        self.body_of = np.array([s[0] for s in shapes], dtype=np.int64)
        self.off = np.array([[s[1], s[2]] for s in shapes])
        self.half = np.array([[s[3], s[4]] for s in shapes])

        self.base_mask = np.zeros((ns, ns), dtype=np.bool_)
        allowed = {
            frozenset(("ground", "block")),
            frozenset(("ground", "container")),
            frozenset(("gripper", "container")),
            frozenset(("container", "block")),
            frozenset(("block", "block")),
            frozenset(("block",)),  # block-block same kind
        }
        for i in range(ns):
            for j in range(ns):
                bi, bj = self.body_of[i], self.body_of[j]
                if bi == bj:
                    continue
                pair = frozenset((kinds[bi], kinds[bj]))
                if pair in allowed:
                    self.base_mask[i, j] = True
        self.mask = self.base_mask.copy()

        maxc = ns * (ns - 1)
        self.warm_key = np.zeros(maxc, dtype=np.int64)
        self.warm_pt = np.zeros((maxc, 2))
        self.warm_imp = np.zeros((maxc, 2))
        self.n_warm = 0

        if props.attached_block is not None:
            self.attach(props.attached_block)

        x0, x1, y0, y1 = scene.WORKSPACE
        for b in range(nb):
            if self.kinds[b] == "ground":
                continue
            if not (x0 - 1.0 <= self.pos[b, 0] <= x1 + 1.0
                    and y0 - 1.0 <= self.pos[b, 1] <= y1 + 1.0):
                raise ConstructionError(
                    f"{self.names[b]} built outside the workspace")
        overlap = kernels.max_overlap(
            self.pos, self.angle, self.body_of, self.off, self.half, self.mask)
        if overlap > 0.02:
            raise ConstructionError(f"initial interpenetration {overlap:.4f}")

    # ---------------------------------------------------------------- state

    def copy(self) -> "World":
        w = object.__new__(World)
        w.__dict__.update(self.__dict__)
        for name in ("pos", "angle", "vel", "omega", "inv_m", "inv_i",
                     "sleep_cnt", "asleep", "off", "half", "mask",
                     "warm_key", "warm_pt", "warm_imp", "block_sizes"):
            setattr(w, name, getattr(self, name).copy())
        w.rng = np.random.default_rng()
        w.rng.bit_generator.state = self.rng.bit_generator.state
        return w

    def snapshot(self) -> dict:
        return {
            "pos": self.pos.copy(),
            "angle": self.angle.copy(),
            "vel": self.vel.copy(),
            "omega": self.omega.copy(),
            "asleep": self.asleep.copy(),
            "grip": self.grip,
            "attached": self.attached,
            "parked": self.parked,
            "block_sizes": self.block_sizes.copy(),
        }

    @staticmethod
    def snapshots_equal(a: dict, b: dict) -> bool:
        for key in a:
            va, vb = a[key], b[key]
            if isinstance(va, np.ndarray):
                if not np.array_equal(va, vb):
                    return False
            elif va != vb:
                return False
        return True

    def body_pose(self, name: str):
        b = self.index[name]
        return (self.pos[b, 0], self.pos[b, 1], self.angle[b])

    def container_base_center(self):
        b = self.container_body
        c, s = math.cos(self.angle[b]), math.sin(self.angle[b])
        dy = -self._container_com_dy
        return (self.pos[b, 0] - s * dy, self.pos[b, 1] + c * dy)

    def gripper_config(self):
        return (self.pos[self.gripper_body, 0],
                self.pos[self.gripper_body, 1], self.grip)

    def block_size(self, name: str) -> float:
        return float(self.block_sizes[self.block_names.index(name)])

    def set_block_sizes(self, sizes) -> None:
        sizes = np.asarray(sizes, dtype=float)
        if sizes.shape != self.block_sizes.shape:
            raise ConstructionError("size vector has wrong length")
        self.block_sizes[:] = sizes
        for k, b in enumerate(self.block_bodies):
            s = sizes[k]
            sidx = self._shape_of_body(b)
            self.half[sidx, 0] = s / 2.0
            self.half[sidx, 1] = s / 2.0
            if self.attached != b:
                m = s * s * self.block_density
                self.inv_m[b] = 1.0 / m
                self.inv_i[b] = 12.0 / (m * 2.0 * s * s)
        self.n_warm = 0

    def _shape_of_body(self, b: int) -> int:
        return int(np.nonzero(self.body_of == b)[0][0])

    def props(self) -> ContinuousProperties:
        objs = {}
        gb = self.gripper_body
        objs[self.domain.gripper.name] = BodyProps(
            2 * scene.GRIPPER_HALF, 2 * scene.GRIPPER_HALF, 1.0,
            float(self.pos[gb, 0]), float(self.pos[gb, 1]),
            float(self.angle[gb]), kind="gripper")
        bx, by = self.container_base_center()
        objs[self.domain.container.name] = BodyProps(
            2 * (scene.CONTAINER_WALL_DX + scene.CONTAINER_WALL_HALF[0]),
            scene.CONTAINER_HEIGHT, self.container_density,
            float(bx), float(by), float(self.angle[self.container_body]),
            kind="container")
        for k, name in enumerate(self.block_names):
            b = self.block_bodies[k]
            objs[name] = BodyProps(
                float(self.block_sizes[k]), float(self.block_sizes[k]),
                self.block_density, float(self.pos[b, 0]),
                float(self.pos[b, 1]), float(self.angle[b]), kind="block")
        attached = None
        if self.attached >= 0:
            attached = self.names[self.attached]
        return ContinuousProperties(objects=objs, attached_block=attached)

    # ------------------------------------------------------------- dynamics

    def _run(self, sched: np.ndarray, settle_steps: int) -> int:
        status, steps, n_warm = kernels.run_segment(
            self.pos, self.angle, self.vel, self.omega, self.inv_m,
            self.inv_i, self.sleep_cnt, self.asleep, self.body_of, self.off,
            self.half, self.mask, self.warm_key, self.warm_pt, self.warm_imp,
            self.n_warm, sched, self.gripper_body, self.attached,
            self.gravity, self.friction, settle_steps, scene.DT)
        self.n_warm = int(n_warm)
        self.time += steps * scene.DT
        if status == STATUS_FAULT:
            raise SimulationFault(
                f"velocity blow-up at t={self.time:.3f} in world seed {self.seed}")
        return int(status)

    def step(self, n: int = 1) -> int:
        """Advance n free steps (no gripper motion, no quiescence exit)."""
        status, steps, n_warm = kernels.run_segment(
            self.pos, self.angle, self.vel, self.omega, self.inv_m,
            self.inv_i, self.sleep_cnt, self.asleep, self.body_of, self.off,
            self.half, self.mask, self.warm_key, self.warm_pt, self.warm_imp,
            self.n_warm, np.zeros((n, 2)), self.gripper_body, self.attached,
            self.gravity, self.friction, 0, scene.DT)
        self.n_warm = int(n_warm)
        self.time += steps * scene.DT
        if status == STATUS_FAULT:
            raise SimulationFault("velocity blow-up")
        return int(status)

    _EMPTY_SCHED = np.zeros((0, 2))

    def settle(self, cap: int = _SETTLE_CAP) -> int:
        if self.all_dynamic_asleep():
            return STATUS_QUIESCENT
        return self._run(self._EMPTY_SCHED, cap)

    def all_dynamic_asleep(self) -> bool:
        for b in range(len(self.names)):
            if self.inv_m[b] > 0.0 and not self.asleep[b]:
                return False
        return True

    def quiescent(self) -> bool:
        speeds = np.sqrt(np.sum(self.vel ** 2, axis=1))
        moving = (speeds > 1e-3) & (self.inv_m > 0) & (~self.asleep)
        return not bool(moving.any())

    def wake_all(self) -> None:
        for b in range(len(self.names)):
            if self.inv_m[b] > 0.0:
                self.asleep[b] = False
                self.sleep_cnt[b] = 0
        self.n_warm = 0

    def sync_gripper(self, x: float, y: float) -> None:
        """Snap the gripper (and any held block) to a commanded start pose;
        used before replaying a commanded trajectory in a particle world."""
        self._teleport_gripper((x, y), 0.0)

    def teleport(self, name: str, x: float, y: float, angle: float = 0.0,
                 wake: str = "all"):
        """Move a body instantly. wake="all" rouses every dynamic body (the
        safe default); "self" leaves others alone; "sleep" marks the moved
        body asleep, valid only for exactly-resting, clear placements."""
        b = self.index[name]
        self.pos[b] = (x, y)
        self.angle[b] = angle
        self.vel[b] = 0.0
        self.omega[b] = 0.0
        if wake == "all":
            self.wake_all()
        elif wake == "sleep":
            self.asleep[b] = True
            self.sleep_cnt[b] = 0
            self.n_warm = 0
        else:
            self.asleep[b] = False
            self.sleep_cnt[b] = 0
            self.n_warm = 0

    # ------------------------------------------------------------ grasping

    def attach(self, block_name: str) -> None:
        if self.attached >= 0:
            raise ExecutionError("gripper already holding a block")
        b = self.index[block_name]
        self._attach_restore = (self.inv_m[b], self.inv_i[b])
        self.inv_m[b] = 0.0
        self.inv_i[b] = 0.0
        self.vel[b] = 0.0
        self.omega[b] = 0.0
        self.asleep[b] = False
        self.attached = b
        sidx = self._shape_of_body(b)
        self.mask[sidx, :] = False
        self.mask[:, sidx] = False
        self.n_warm = 0

    def detach(self) -> None:
        if self.attached < 0:
            return
        b = self.attached
        k = self.block_bodies.index(b)
        s = self.block_sizes[k]
        m = s * s * self.block_density
        self.inv_m[b] = 1.0 / m
        self.inv_i[b] = 12.0 / (m * 2.0 * s * s)
        self.vel[b] = 0.0
        self.omega[b] = 0.0
        self.asleep[b] = False
        self.sleep_cnt[b] = 0
        sidx = self._shape_of_body(b)
        self.mask[sidx, :] = self.base_mask[sidx, :]
        self.mask[:, sidx] = self.base_mask[:, sidx]
        self.attached = -1
        self.n_warm = 0

    # ----------------------------------------------------------- semantics

    def contained_blocks(self) -> frozenset:
        if not self.block_names:
            return frozenset()
        base_cx, base_cy = self.container_base_center()
        rows = self.block_bodies
        mask = np.empty(len(rows), dtype=np.bool_)
        kernels.contained_mask(
            self.pos[rows, 0], self.pos[rows, 1], self.block_sizes,
            self.block_sizes, self.angle[rows], base_cx, base_cy,
            scene.CONTAINER_INTERIOR_HALF, scene.CONTAINER_BASE_HALF[1],
            scene.CONTAINMENT_TOL, mask)
        return frozenset(
            name for k, name in enumerate(self.block_names)
            if mask[k] and rows[k] != self.attached)

    def return_to_init(self, block_names) -> None:
        """Failure recovery: involved blocks go back to their row slots.

        A stray body may be lying near a slot, so the moved blocks stay
        awake and the caller settles the world."""
        for name in block_names:
            k = self.block_names.index(name)
            s = self.block_sizes[k]
            self.teleport(name, scene.block_slot(k), s / 2.0, 0.0, wake="self")

    def unload_cargo(self) -> tuple:
        """Helper step after a delivered push: park cargo in the goal area
        and send the container back to the staging pose. Both placements
        are exactly resting in guaranteed-clear spots, so the moved bodies
        go straight to sleep."""
        cargo = sorted(self.contained_blocks())
        for name in cargo:
            k = self.block_names.index(name)
            s = self.block_sizes[k]
            self.teleport(name, scene.park_slot(self.parked), s / 2.0, 0.0,
                          wake="sleep")
            self.parked += 1
        self.teleport(
            self.domain.container.name, scene.CONTAINER_X,
            scene.CONTAINER_BASE_HALF[1] + self._container_com_dy, 0.0,
            wake="sleep")
        return tuple(cargo)

    def obstacle_boxes(self, exclude=(), size_override=None) -> np.ndarray:
        """World OBBs for motion planning: (cx, cy, angle, hw, hh) rows.

        Block extents may be overridden with estimated sizes so the planner
        sees the agent's belief rather than the hidden truth.
        """
        rows = []
        for sidx in range(len(self.body_of)):
            b = int(self.body_of[sidx])
            name = self.names[b]
            if name in exclude or b == self.gripper_body or b == self.attached:
                continue
            c, s = math.cos(self.angle[b]), math.sin(self.angle[b])
            ox, oy = self.off[sidx]
            cx = self.pos[b, 0] + c * ox - s * oy
            cy = self.pos[b, 1] + s * ox + c * oy
            hw, hh = self.half[sidx]
            if size_override is not None and name in size_override:
                hw = hh = size_override[name] / 2.0
            rows.append((cx, cy, self.angle[b], hw, hh))
        return np.array(rows) if rows else np.zeros((0, 5))

    # ----------------------------------------------------------- execution

    def _container_guard_boxes(self) -> np.ndarray:
        boxes = []
        b = self.container_body
        c, s = math.cos(self.angle[b]), math.sin(self.angle[b])
        for sidx in range(len(self.body_of)):
            if int(self.body_of[sidx]) != b:
                continue
            ox, oy = self.off[sidx]
            boxes.append((self.pos[b, 0] + c * ox - s * oy,
                          self.pos[b, 1] + s * ox + c * oy,
                          self.angle[b],
                          self.half[sidx, 0] + 0.2, self.half[sidx, 1] + 0.2))
        return np.array(boxes)

    _GRIP_FOOT = np.array([[0.0, 0.0, scene.GRIPPER_HALF, scene.GRIPPER_HALF]])

    def _segment_skippable(self, p0, p1, guard=None) -> bool:
        if not self.all_dynamic_asleep():
            return False
        if guard is None:
            guard = self._container_guard_boxes()
        return bool(kernels.segment_clear(
            p0[0], p0[1], p1[0], p1[1], self._GRIP_FOOT, guard, 0.1))

    def _teleport_gripper(self, target, duration) -> None:
        g = self.gripper_body
        dx = target[0] - self.pos[g, 0]
        dy = target[1] - self.pos[g, 1]
        self.pos[g, 0] = target[0]
        self.pos[g, 1] = target[1]
        if self.attached >= 0:
            self.pos[self.attached, 0] += dx
            self.pos[self.attached, 1] += dy
        self.time += duration
        self.n_warm = 0

    @staticmethod
    def _schedule(points, speed) -> np.ndarray:
        rows = []
        for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
            dist = math.hypot(x1 - x0, y1 - y0)
            steps = max(1, math.ceil(dist / (speed * scene.DT)))
            vx = (x1 - x0) / (steps * scene.DT)
            vy = (y1 - y0) / (steps * scene.DT)
            rows.extend([(vx, vy)] * steps)
        return np.array(rows) if rows else np.zeros((0, 2))

    def _push_schedule(self, distance) -> np.ndarray:
        v, a, dt = scene.PUSH_SPEED, scene.PUSH_ACCEL, scene.DT
        d_ramp = v * v / (2.0 * a)
        if distance < 2.0 * d_ramp:
            v = math.sqrt(max(distance, 0.0) * a)
        n_ramp = max(1, round(v / (a * dt)))
        up = a * dt * np.arange(1, n_ramp + 1)
        cruise_d = max(distance - 2.0 * float(up.sum()) * dt, 0.0)
        n_cruise = round(cruise_d / (v * dt))
        speeds = np.concatenate([up, np.full(n_cruise, up[-1]), up[::-1]])
        sched = np.zeros((len(speeds), 2))
        sched[:, 0] = speeds
        return sched

    def _move_along(self, pts, speed) -> None:
        # fast-forward through stretches where no interaction is possible;
        # step physically only near the container or while anything moves
        guard = self._container_guard_boxes()
        g = self.gripper_body
        for i in range(len(pts) - 1):
            p0, p1 = pts[i], pts[i + 1]
            length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
            if self._segment_skippable(p0, p1, guard):
                self._teleport_gripper(p1, length / speed)
                continue
            chunks = max(1, math.ceil(length / 0.5))
            for c in range(chunks):
                q0 = (p0[0] + (p1[0] - p0[0]) * c / chunks,
                      p0[1] + (p1[1] - p0[1]) * c / chunks)
                q1 = (p0[0] + (p1[0] - p0[0]) * (c + 1) / chunks,
                      p0[1] + (p1[1] - p0[1]) * (c + 1) / chunks)
                if self._segment_skippable(q0, q1, guard):
                    self._teleport_gripper(q1, length / (chunks * speed))
                else:
                    self._run(self._schedule([q0, q1], speed), 0)
                    self.vel[g] = 0.0
                    if self.attached >= 0:
                        self.vel[self.attached] = 0.0

    def _try_grasp(self, block_name: str, grip_exec: float) -> bool:
        if self.attached >= 0:
            return False
        k = self.block_names.index(block_name)
        b = self.block_bodies[k]
        size = self.block_sizes[k]
        gx, gy = self.pos[self.gripper_body]
        lateral = abs(gx - self.pos[b, 0])
        gamma = (gy - self.pos[b, 1]) / size
        if lateral > scene.GRASP_LATERAL_FRAC * size:
            return False
        if not (-0.1 <= gamma <= 0.95):
            return False
        slack = scene.GRASP_WINDOW
        slack *= 1.0 - 0.4 * max(0.0, gamma - 0.35) / 0.65
        slack *= 1.0 - 0.5 * min(1.0, lateral / (scene.GRASP_LATERAL_FRAC * size))
        if abs(grip_exec - size - scene.GRIP_SLACK) > slack:
            return False
        self.attach(block_name)
        return True

    def execute(self, trajectory, action) -> ExecutionOutcome:
        """Drive the gripper along a trajectory and resolve the action.

        Pickup closes the grip at the end; stack releases the held block;
        push adds the horizontal contact drive toward the goal area. The
        world then settles to quiescence (10 s cap).
        """
        kind = action.schema.name
        gx, gy, _ = self.gripper_config()
        w0 = trajectory.waypoints[0]
        if math.hypot(w0.x - gx, w0.y - gy) > 1e-6:
            raise ExecutionError("trajectory does not start at the gripper pose")

        pts = [(w.x, w.y) for w in trajectory.waypoints]
        grip_cmd = trajectory.waypoints[-1].grip
        sigma = self.noise_scale * 0.01
        if sigma > 0.0:
            offsets = self.rng.normal(0.0, sigma, size=(len(pts) - 1, 2))
            pts = [pts[0]] + [
                (p[0] + o[0], p[1] + o[1]) for p, o in zip(pts[1:], offsets)
            ]
            grip_exec = grip_cmd + float(self.rng.normal(0.0, sigma))
        else:
            grip_exec = grip_cmd

        pre_contained = self.contained_blocks()
        events = []

        self._move_along(pts, scene.TRANSIT_SPEED)

        if kind == "pickup":
            self.grip = min(max(grip_exec, 0.0), scene.GRIP_MAX)
            target = action.obj("B").name
            if self._try_grasp(target, grip_exec):
                events.append("grasp_ok")
            else:
                events.append("grasp_slip")
            status = self.settle(_SETTLE_CAP)
        elif kind == "stack":
            # release whatever is actually held; particle worlds replaying a
            # commanded stack may have missed the grasp or hold the wrong block
            released = self.names[self.attached] if self.attached >= 0 else None
            self.detach()
            self.grip = scene.GRIP_MAX / 2.0
            status = self.settle(_SETTLE_CAP)
            target = action.obj("B").name
            if released is None or target not in self.contained_blocks():
                events.append("block_fell")
        else:  # push
            base_x, _ = self.container_base_center()
            distance = scene.PUSH_TARGET_X - base_x + 0.1
            if distance > 0.0:
                self._run(self._push_schedule(distance), 0)
                self.vel[self.gripper_body] = 0.0
            status = self.settle(_SETTLE_CAP)
            bx, by = self.container_base_center()
            if scene.in_region(bx, by, scene.GOAL_REGION):
                events.append("push_done")

        post_contained = self.contained_blocks()
        lost = pre_contained - post_contained
        if lost:
            events.append("stack_toppled" if kind == "push" else "block_fell")
        if status != STATUS_QUIESCENT:
            events.append("block_fell")

        return ExecutionOutcome(self.props(), tuple(dict.fromkeys(events)))


def build_world(objs, l: ContinuousProperties, seed: int,
                noise_scale: float = 0.0, domain=None) -> World:
    """Spec entry point: a world from an object set plus properties."""
    if domain is None:
        if hasattr(objs, "objects"):
            domain = objs
        else:
            raise ConstructionError("build_world needs the domain instance")
    return World(domain, l, seed, noise_scale)


def canonical_props(domain, sizes, gripper=scene.GRIPPER_HOME) -> ContinuousProperties:
    """Initial layout: blocks in their row slots, container staged, gripper home."""
    sizes = np.asarray(sizes, dtype=float)
    objs = {
        domain.gripper.name: BodyProps(
            2 * scene.GRIPPER_HALF, 2 * scene.GRIPPER_HALF, 1.0,
            gripper[0], gripper[1], 0.0, kind="gripper"),
        domain.container.name: BodyProps(
            2 * (scene.CONTAINER_WALL_DX + scene.CONTAINER_WALL_HALF[0]),
            scene.CONTAINER_HEIGHT, scene.CONTAINER_DENSITY,
            scene.CONTAINER_X, scene.CONTAINER_BASE_HALF[1], 0.0,
            kind="container"),
    }
    for k, b in enumerate(domain.blocks):
        s = float(sizes[k])
        objs[b.name] = BodyProps(s, s, scene.BLOCK_DENSITY,
                                 scene.block_slot(k), s / 2.0, 0.0,
                                 kind="block")
    return ContinuousProperties(objects=objs)


def realize(domain, state: frozenset, sizes) -> ContinuousProperties:
    """Properties whose poses realize a reachable symbolic state."""
    sizes = np.asarray(sizes, dtype=float)
    props = canonical_props(domain, sizes)
    objs = dict(props.objects)
    cont = domain.container.name
    c_at_goal = symbols.fluent("is_in", cont, symbols.GOAL_LOC) in state
    base_x = scene.PUSH_TARGET_X if c_at_goal else scene.CONTAINER_X
    objs[cont] = BodyProps(
        objs[cont].width, objs[cont].height, objs[cont].density,
        base_x, scene.CONTAINER_BASE_HALF[1], 0.0, kind="container")

    attached = None
    parked = 0
    stacked = sorted(
        f.args[0] for f in state if f.predicate == "at_container")
    stack_y = scene.CONTAINER_BASE_HALF[1] * 2.0
    for name in stacked:
        k = [b.name for b in domain.blocks].index(name)
        s = float(sizes[k])
        objs[name] = BodyProps(s, s, scene.BLOCK_DENSITY,
                               base_x, stack_y + s / 2.0, 0.0, kind="block")
        stack_y += s
    for f in sorted(state, key=str):
        if f.predicate == "is_in" and f.args[0] != cont:
            name = f.args[0]
            k = [b.name for b in domain.blocks].index(name)
            s = float(sizes[k])
            if f.args[1] == symbols.GOAL_LOC:
                objs[name] = BodyProps(s, s, scene.BLOCK_DENSITY,
                                       scene.park_slot(parked), s / 2.0, 0.0,
                                       kind="block")
                parked += 1
        elif f.predicate == "is_holding":
            attached = f.args[1]
            k = [b.name for b in domain.blocks].index(attached)
            s = float(sizes[k])
            gx, gy = scene.GRIPPER_HOME
            objs[attached] = BodyProps(s, s, scene.BLOCK_DENSITY,
                                       gx, gy - 0.5 * s, 0.0, kind="block")
    return ContinuousProperties(objects=objs, attached_block=attached)


def world_for_state(domain, state, sizes, seed, noise_scale=0.0) -> World:
    w = World(domain, realize(domain, state, sizes), seed, noise_scale)
    w.parked = sum(
        1 for f in state
        if f.predicate == "is_in" and f.args[1] == symbols.GOAL_LOC
        and domain.by_name(f.args[0]).kind == "block")
    return w


def execute(w: World, xi, a) -> ExecutionOutcome:
    return w.execute(xi, a)


# ------------------------------------------------------------------ traces


def save_trace(path, domain, sizes, seed, noise_scale, executed, final_world):
    """Line-delimited record of a build plus every executed trajectory.

    Each executed item is (trajectory, action) or (trajectory, action,
    post) where post captures the between-action intervention applied
    afterwards: {"unload": bool, "recover": [names], "restage": bool}.
    """
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "domain": symbols.domain_to_jsonl(domain),
            "sizes": [float(s) for s in sizes],
            "seed": int(seed),
            "noise_scale": float(noise_scale),
        }) + "\n")
        for item in executed:
            traj, action = item[0], item[1]
            post = item[2] if len(item) > 2 else {}
            if action is None:
                fh.write(json.dumps({"action": None, "post": post}) + "\n")
                continue
            fh.write(json.dumps({
                "action": action.name,
                "waypoints": [[w.x, w.y, w.grip] for w in traj.waypoints],
                "timestamps": list(traj.timestamps),
                "post": post,
            }) + "\n")
        snap = final_world.snapshot()
        fh.write(json.dumps({
            "final": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                      for k, v in snap.items()}
        }) + "\n")


def parse_action(domain, text: str):
    name, rest = text.split("(", 1)
    args = rest.rstrip(")").split(",")
    if name == "pickup":
        return domain.pickup(args[1], args[2])
    if name == "stack":
        return domain.stack(args[1])
    if name == "push":
        return domain.push(args[2], args[3])
    raise symbols.DomainError(f"cannot parse action {text!r}")


def replay_trace(path) -> bool:
    """Re-execute a trace and check the final state is bit-identical.

    Traces start from a settled canonical world, matching how episodes
    begin.
    """
    from ..mapping import Configuration, Trajectory

    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    head = lines[0]
    domain = symbols.domain_from_jsonl(head["domain"])
    w = World(domain, canonical_props(domain, head["sizes"]), head["seed"],
              head["noise_scale"])
    w.settle()
    for rec in lines[1:-1]:
        if rec["action"] is not None:
            traj = Trajectory(
                tuple(Configuration(x, y, g) for x, y, g in rec["waypoints"]),
                tuple(rec["timestamps"]))
            w.execute(traj, parse_action(domain, rec["action"]))
        post = rec.get("post") or {}
        if post.get("unload"):
            w.unload_cargo()
            w.settle()
        if post.get("recover"):
            if w.attached >= 0:
                w.detach()
            w.return_to_init(post["recover"])
            if post.get("restage"):
                w.teleport(domain.container.name, scene.CONTAINER_X,
                           scene.CONTAINER_BASE_HALF[1] + w._container_com_dy,
                           0.0, wake="self")
            w.settle()
    final = lines[-1]["final"]
    snap = w.snapshot()
    for key, stored in final.items():
        current = snap[key]
        if isinstance(current, np.ndarray):
            if not np.array_equal(np.asarray(stored), current):
                return False
        elif current != stored:
            return False
    return True
