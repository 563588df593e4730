"""Workspace layout and geometric predicates.

One fixed desk-scale scene: a row of blocks in the initial area, a walled
container staged between the areas, a kinematic gripper, and a goal area
where delivered blocks get parked. All dimensions are in abstract workspace
units with gravity pointing down the y axis.
"""

from __future__ import annotations

import numpy as np

DT = 1.0 / 120.0
GRAVITY = 9.8
FRICTION = 0.6
RESTITUTION = 0.0

WORKSPACE = (0.0, 30.0, 0.0, 16.0)  # x_min, x_max, y_min, y_max

GROUND_HALF = (40.0, 1.0)
GROUND_POS = (10.0, -1.0)  # top surface at y = 0

BLOCK_DENSITY = 1.0
SIZE_PRIOR = (0.8, 1.2)
BLOCK_ROW_X0 = 1.0
BLOCK_SPACING = 1.4

CONTAINER_X = 14.2
CONTAINER_BASE_HALF = (1.5, 0.15)
CONTAINER_WALL_HALF = (0.1, 0.4)
CONTAINER_WALL_DX = 1.4          # wall centers at +-1.4 from base center
CONTAINER_INTERIOR_HALF = 1.3
CONTAINER_HEIGHT = 1.1           # base bottom to wall top
CONTAINER_DENSITY = 1.0

GRIPPER_HALF = 0.15
GRIPPER_HOME = (12.5, 7.0)
GRIP_MAX = 2.0
GRIP_SLACK = 0.05                # commanded opening margin over block width
GRASP_WINDOW = 0.04              # tolerated |opening - width - slack|
GRASP_LATERAL_FRAC = 0.35        # max lateral offset as a fraction of width

INIT_REGION = (0.0, 15.0, 0.0, 4.0)
GOAL_REGION = (15.0, 30.0, 0.0, 4.0)

PUSH_TARGET_X = 16.4
PUSH_SPEED = 1.8
PUSH_ACCEL = 1.0  # calibrated: loads up to 4 ride out a push, 7+ topple
PARK_X0 = 18.8
PARK_SPACING = 1.3

TRANSIT_SPEED = 6.0
CONTAINMENT_TOL = 0.08


def block_slot(index: int) -> float:
    return BLOCK_ROW_X0 + BLOCK_SPACING * index


def park_slot(count: int) -> float:
    return PARK_X0 + PARK_SPACING * count


def container_base_top(base_center_y: float) -> float:
    return base_center_y + CONTAINER_BASE_HALF[1]


def in_region(x: float, y: float, region) -> bool:
    return region[0] <= x < region[1] and region[2] <= y < region[3]


def region_of(x: float, y: float):
    """"init"/"goal" when inside a region box, else None."""
    if in_region(x, y, INIT_REGION):
        return "init"
    if in_region(x, y, GOAL_REGION):
        return "goal"
    return None


def nearest_region(x: float, y: float) -> str:
    def center_dist(region):
        cx = 0.5 * (region[0] + region[1])
        cy = 0.5 * (region[2] + region[3])
        return (x - cx) ** 2 + (y - cy) ** 2

    return "init" if center_dist(INIT_REGION) <= center_dist(GOAL_REGION) else "goal"


def block_contained(bx, by, bw, bh, bangle, base_cx, base_cy) -> bool:
    """Footprint within the container interior and resting at or above the
    base. Rotated blocks use their world-aligned extent."""
    c = abs(np.cos(bangle))
    s = abs(np.sin(bangle))
    ex = c * bw / 2.0 + s * bh / 2.0
    ey = s * bw / 2.0 + c * bh / 2.0
    if abs(bx - base_cx) + ex > CONTAINER_INTERIOR_HALF + CONTAINMENT_TOL:
        return False
    bottom = by - ey
    base_top = container_base_top(base_cy)
    return base_top - CONTAINMENT_TOL <= bottom <= base_top + 12.0
