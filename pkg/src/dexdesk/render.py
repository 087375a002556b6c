"""Tiny top-down rasterizer for the planar world.

Two viewports: "overhead" is a fixed window over the workspace, "wrist"
recenters on the end effector. Surface / background / lighting config ids
pick the fill color, the border color, and a brightness factor. Output
channels are exact multiples of 1/255 so uint8 storage round-trips.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .hands import fk_points, planar_gripper_model
from .sim import WorldState

SURFACE_PALETTE = np.array([
    [0.82, 0.71, 0.55], [0.55, 0.57, 0.62], [0.72, 0.52, 0.42], [0.45, 0.62, 0.50],
    [0.68, 0.68, 0.40], [0.35, 0.45, 0.60], [0.75, 0.60, 0.70], [0.50, 0.50, 0.50],
])
BACKGROUND_PALETTE = np.array([
    [0.95, 0.95, 0.95], [0.20, 0.20, 0.25], [0.60, 0.80, 0.95], [0.85, 0.60, 0.30],
    [0.30, 0.60, 0.35], [0.70, 0.30, 0.30], [0.90, 0.85, 0.40], [0.10, 0.40, 0.55],
])
LIGHTING_LEVELS = np.array([0.70, 0.85, 1.00, 1.15])

OBJECT_COLORS = {
    "target": np.array([0.85, 0.25, 0.20]),
    "distractor": np.array([0.35, 0.40, 0.75]),
    "container": np.array([0.20, 0.55, 0.25]),
    "slot_rack": np.array([0.25, 0.25, 0.25]),
}
EE_COLOR = np.array([0.98, 0.98, 0.98])
TIP_COLOR = np.array([0.95, 0.80, 0.15])

OVERHEAD_WINDOW = ((-0.1, 0.9), (-0.45, 0.45))
WRIST_WINDOW_HALF = 0.16
_BORDER_PX = 2

_unit_cache: dict[int, np.ndarray] = {}


def _pixel_grid(size: int, window):
    if size not in _unit_cache:
        _unit_cache[size] = (np.arange(size) + 0.5) / size
    u = _unit_cache[size]
    (x0, x1), (y0, y1) = window
    xs = x0 + u * (x1 - x0)
    ys = y1 - u * (y1 - y0)  # row 0 at +y
    return np.meshgrid(xs, ys)


def render_camera(state: WorldState, camera: str, size: int = 24) -> np.ndarray:
    if camera == "overhead":
        window = OVERHEAD_WINDOW
    elif camera == "wrist":
        cx, cy = state.ee_pose.translation[:2]
        window = ((cx - WRIST_WINDOW_HALF, cx + WRIST_WINDOW_HALF),
                  (cy - WRIST_WINDOW_HALF, cy + WRIST_WINDOW_HALF))
    else:
        raise ContractViolation(f"unknown camera '{camera}'")

    surface_id, background_id, lighting_id = state.config
    px, py = _pixel_grid(size, ((window[0][0], window[0][1]), (window[1][0], window[1][1])))
    img = np.empty((size, size, 3))
    img[:, :] = SURFACE_PALETTE[surface_id % len(SURFACE_PALETTE)]

    # border strip shows the background setting
    border = BACKGROUND_PALETTE[background_id % len(BACKGROUND_PALETTE)]
    img[:_BORDER_PX, :] = border
    img[-_BORDER_PX:, :] = border
    img[:, :_BORDER_PX] = border
    img[:, -_BORDER_PX:] = border

    if state.conveyor is not None:
        c = state.conveyor
        mask = (np.abs(px - c.center[0]) <= c.half_extents[0]) & \
               (np.abs(py - c.center[1]) <= c.half_extents[1])
        img[mask] = img[mask] * 0.6 + np.array([0.15, 0.15, 0.18]) * 0.4

    # slots drawn as light wells on the rack
    for k in range(len(state.task.slot_centers)):
        sx, sy = state.task.slot_centers[k]
        r = 0.45 * (state.task.goal_half_extents[0])
        mask = (np.abs(px - sx) <= r) & (np.abs(py - sy) <= r)
        img[mask] = [0.85, 0.85, 0.80] if state.task.slot_initially_empty[k] else [0.55, 0.5, 0.45]

    order = {"container": 0, "slot_rack": 0, "distractor": 1, "target": 2}
    for obj in sorted(state.objects, key=lambda o: order[o.kind]):
        color = OBJECT_COLORS[obj.kind]
        if obj.kind in ("container", "slot_rack"):
            # frame only, so contents stay visible
            inv = obj.pose.inverse()
            lx = inv.rotation[0, 0] * (px - obj.pose.translation[0]) + \
                inv.rotation[0, 1] * (py - obj.pose.translation[1])
            ly = inv.rotation[1, 0] * (px - obj.pose.translation[0]) + \
                inv.rotation[1, 1] * (py - obj.pose.translation[1])
            hx, hy = obj.params if obj.shape == "box" else (obj.params[0], obj.params[0])
            inside = (np.abs(lx) <= hx) & (np.abs(ly) <= hy)
            rim = inside & ~((np.abs(lx) <= hx - 0.012) & (np.abs(ly) <= hy - 0.012))
            img[rim] = color
            continue
        inv = obj.pose.inverse()
        lx = inv.rotation[0, 0] * (px - obj.pose.translation[0]) + \
            inv.rotation[0, 1] * (py - obj.pose.translation[1])
        ly = inv.rotation[1, 0] * (px - obj.pose.translation[0]) + \
            inv.rotation[1, 1] * (py - obj.pose.translation[1])
        if obj.shape == "disc":
            mask = lx * lx + ly * ly <= obj.params[0] ** 2
        else:
            mask = (np.abs(lx) <= obj.params[0]) & (np.abs(ly) <= obj.params[1])
        shade = 1.0 - 0.5 * obj.deformation
        img[mask] = color * shade

    # end effector marker and fingertips
    ex, ey = state.ee_pose.translation[:2]
    mask = (px - ex) ** 2 + (py - ey) ** 2 <= 0.012 ** 2
    img[mask] = EE_COLOR
    _, tips = fk_points(planar_gripper_model(), np.clip(state.hand_dof[:2], 0.0, 1.2))
    for tip in tips:
        w = state.ee_pose.apply(tip)
        mask = (px - w[0]) ** 2 + (py - w[1]) ** 2 <= 0.007 ** 2
        img[mask] = TIP_COLOR

    img *= LIGHTING_LEVELS[lighting_id % len(LIGHTING_LEVELS)]
    np.clip(img, 0.0, 1.0, out=img)
    return np.rint(img * 255.0) / 255.0
