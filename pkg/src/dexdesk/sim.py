"""Deterministic planar manipulation world.

Poses live in SE(2) embedded in SE(3) (z = 0, rotation about +z). Dynamics
are purely kinematic: the end effector servos toward its commanded target
under speed caps, hand joints approach their targets under a rate cap, and
grasping is a geometric rule on fingertip/boundary distances. Identical
seeds and action streams reproduce identical states and rendered bytes.

Units: meters, radians, seconds. The control tick is 1/15 s.

Low-dimensional feature vector (see FEATURE_LAYOUT): all geometry is
expressed in the EE frame, so a rigid transform applied to the whole scene
leaves the features unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation
from .hands import HandModel, fk_points, planar_gripper_model
from .observations import Observation
from .poses import Pose, planar_pose

SIM_DT = 1.0 / 15.0
EE_SPEED_CAP = 0.25  # m/s
EE_YAW_RATE_CAP = 2.5  # rad/s
HAND_RATE_CAP = 1.8  # rad/s; slow enough that closing sweeps tips through
# the attach window (<= 9 mm of jaw travel per tick vs the 10 mm window)
ATTACH_DISTANCE = 0.005  # tip-to-boundary distance that counts as contact
RELEASE_MARGIN = 0.008
DEFORM_RATE = 1.0  # deformation units per second at full over-travel
DEFORM_SLACK = 0.004  # squeeze below (width - slack) before deforming
CRUSH_LIMIT = 0.5
DETACH_COUNTDOWN_STEPS = 10
MISALIGN_OFFSET = 0.02

TASK_KINDS = ("pick_place", "slot_sort", "precise_insert")

_SHAPES = ("box", "disc")
_KINDS = ("target", "distractor", "container", "slot_rack")
_EVENTS = ("attach", "miss", "drop", "misalign", "place")


@dataclass
class SimObject:
    shape: str  # box | disc
    params: np.ndarray  # box: (hx, hy); disc: (radius, 0)
    kind: str  # target | distractor | container | slot_rack
    pose: Pose
    attached: bool = False
    attach_rel: Pose | None = None  # object pose in EE frame while attached
    deformation: float = 0.0

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ContractViolation(f"unknown shape '{self.shape}'")
        if self.kind not in _KINDS:
            raise ContractViolation(f"unknown kind '{self.kind}'")
        self.params = np.asarray(self.params, dtype=np.float64).reshape(2)

    @property
    def grasp_width(self) -> float:
        """Extent across the jaw axis when grasped at the object's yaw."""
        return 2.0 * (self.params[1] if self.shape == "box" else self.params[0])

    def boundary_distance(self, point_world: np.ndarray) -> tuple[float, float]:
        """(|signed distance to boundary|, y in object frame) for a world point."""
        local = self.pose.inverse().apply(point_world)
        if self.shape == "disc":
            sd = np.hypot(local[0], local[1]) - self.params[0]
        else:
            dx = abs(local[0]) - self.params[0]
            dy = abs(local[1]) - self.params[1]
            if dx <= 0 and dy <= 0:
                sd = max(dx, dy)
            else:
                sd = np.hypot(max(dx, 0.0), max(dy, 0.0))
        return abs(float(sd)), float(local[1])


@dataclass
class Conveyor:
    axis: np.ndarray  # unit direction in the world plane
    speed: float  # m/s
    center: np.ndarray  # (2,) region center
    half_extents: np.ndarray  # (2,)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(2)
        self.axis = self.axis / np.linalg.norm(self.axis)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(2)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(2)

    def covers(self, xy: np.ndarray) -> bool:
        d = np.abs(xy[:2] - self.center)
        return bool(np.all(d <= self.half_extents))


@dataclass
class TaskInstance:
    """Goal geometry fixed at reset time."""

    goal_pose: Pose  # container center / insert-slot entrance / rack origin
    goal_half_extents: np.ndarray  # (2,)
    slot_centers: np.ndarray  # (K, 2) world xy, K may be 0
    slot_initially_empty: np.ndarray  # (K,) bool
    target_slot: int = -1
    punch_depth: float = 0.0
    slot_yaw: float = 0.0


@dataclass
class WorldState:
    task_kind: str
    config: tuple[int, int, int]  # surface, background, lighting ids
    clock: float
    ee_pose: Pose
    hand_dof: np.ndarray
    objects: list[SimObject]
    task: TaskInstance
    conveyor: Conveyor | None = None
    grasp_suppressed: bool = False
    detach_countdown: int = -1
    closed_attempt: bool = False  # miss-event latch, rearmed when the hand opens
    events: list[tuple[str, float]] = field(default_factory=list)
    rng_state: dict = field(default_factory=dict)

    @property
    def target_object(self) -> SimObject:
        return next(o for o in self.objects if o.kind == "target")

    @property
    def attached_object(self) -> SimObject | None:
        return next((o for o in self.objects if o.attached), None)

    def event_count(self, code: str) -> int:
        return sum(1 for e, _ in self.events if e == code)


@dataclass(frozen=True)
class TaskSpec:
    """Task family plus randomization ranges and success parameters."""

    kind: str
    ee_start: tuple[tuple[float, float], tuple[float, float]] = ((0.05, 0.15), (-0.1, 0.1))
    ee_yaw: tuple[float, float] = (-0.3, 0.3)
    object_xy: tuple[tuple[float, float], tuple[float, float]] = ((0.3, 0.5), (-0.15, 0.15))
    object_yaw: tuple[float, float] = (-0.4, 0.4)
    object_half_x: tuple[float, float] = (0.035, 0.045)
    object_half_y: tuple[float, float] = (0.023, 0.029)
    goal_xy: tuple[tuple[float, float], tuple[float, float]] = ((0.62, 0.72), (-0.08, 0.08))
    goal_half_extents: tuple[float, float] = (0.09, 0.09)
    distractor_prob: float = 0.5
    n_distractors: tuple[int, int] = (1, 2)
    n_slots: int = 3
    slot_pitch: float = 0.08
    slot_tolerance: float = 0.015
    yaw_tolerance: float = np.deg2rad(15.0)
    occupancy_prob: float = 0.4
    punch_depth: float = 0.03
    lateral_tolerance: float = 0.012
    conveyor_speed: tuple[float, float] = (0.03, 0.05)
    deformation_limit: float = CRUSH_LIMIT
    max_steps: int = 240

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ContractViolation(f"unknown task kind '{self.kind}'")


def pick_place_task(**overrides) -> TaskSpec:
    return TaskSpec(kind="pick_place", **overrides)


def slot_sort_task(**overrides) -> TaskSpec:
    defaults = dict(
        object_half_x=(0.030, 0.036),
        object_half_y=(0.016, 0.020),
        goal_xy=((0.62, 0.68), (-0.05, 0.05)),
        object_xy=((0.3, 0.42), (-0.12, 0.12)),
    )
    defaults.update(overrides)
    return TaskSpec(kind="slot_sort", **defaults)


def precise_insert_task(**overrides) -> TaskSpec:
    defaults = dict(
        object_half_x=(0.024, 0.028),
        object_half_y=(0.014, 0.017),
        object_yaw=(-0.15, 0.15),
        goal_xy=((0.62, 0.68), (-0.06, 0.06)),
    )
    defaults.update(overrides)
    return TaskSpec(kind="precise_insert", **defaults)


# ---------------------------------------------------------------------------
# Reset
# ---------------------------------------------------------------------------


def _uniform(rng, lohi):
    return float(rng.uniform(lohi[0], lohi[1]))


def reset(spec: TaskSpec, seed: int, scene=None, hand_model: HandModel | None = None,
          config: tuple[int, int, int] | None = None,
          force_distractors: bool | None = None) -> WorldState:
    """Fresh randomized state, or the exact state stored in a ResetScene."""
    if scene is not None:
        snapshot = scene.snapshot if hasattr(scene, "snapshot") else scene
        return load_snapshot(snapshot)

    hand_model = hand_model or planar_gripper_model()
    rng = np.random.default_rng(seed)
    if config is None:
        config = (int(rng.integers(0, 8)), int(rng.integers(0, 8)), int(rng.integers(0, 4)))

    hx = _uniform(rng, spec.object_half_x)
    hy = _uniform(rng, spec.object_half_y)
    # jaw gap runs 0.030..0.081; the tips must be able to reach within the
    # attach window of the object's sides, else the spec instance is infeasible
    if not 0.022 <= 2 * hy <= 0.075:
        raise ContractViolation(f"object grasp width {2 * hy:.3f} outside jaw range")
    if spec.kind == "slot_sort" and 2 * hy >= spec.slot_pitch:
        raise ContractViolation("slots narrower than the object; infeasible")

    target = SimObject(
        shape="box",
        params=np.array([hx, hy]),
        kind="target",
        pose=planar_pose(_uniform(rng, spec.object_xy[0]), _uniform(rng, spec.object_xy[1]),
                         _uniform(rng, spec.object_yaw)),
    )
    objects = [target]

    goal_x = _uniform(rng, spec.goal_xy[0])
    goal_y = _uniform(rng, spec.goal_xy[1])
    goal_pose = planar_pose(goal_x, goal_y, 0.0)
    conveyor = None
    slot_centers = np.zeros((0, 2))
    slot_empty = np.zeros(0, dtype=bool)
    target_slot = -1
    punch = 0.0
    goal_half = np.array(spec.goal_half_extents)

    if spec.kind == "pick_place":
        objects.append(SimObject("box", goal_half, "container", goal_pose))
    elif spec.kind == "slot_sort":
        # rack of n_slots along +y at the goal pose; bottle rides a conveyor
        centers = []
        for k in range(spec.n_slots):
            offset = (k - (spec.n_slots - 1) / 2.0) * spec.slot_pitch
            centers.append([goal_x, goal_y + offset])
        slot_centers = np.array(centers)
        slot_empty = rng.uniform(size=spec.n_slots) >= spec.occupancy_prob
        if not slot_empty.any():
            slot_empty[int(rng.integers(0, spec.n_slots))] = True
        target_slot = int(np.flatnonzero(slot_empty)[0])
        goal_half = np.array([spec.slot_pitch / 2, spec.slot_pitch * spec.n_slots / 2])
        objects.append(SimObject("box", goal_half, "slot_rack", goal_pose))
        for k in range(spec.n_slots):
            if not slot_empty[k]:
                objects.append(SimObject(
                    "box", np.array([hx, hy]), "distractor",
                    planar_pose(slot_centers[k][0], slot_centers[k][1], 0.0)))
        # belt axis runs along +x, perpendicular to the closing jaws, and the
        # region ends short of the rack
        conveyor = Conveyor(axis=[1.0, 0.0], speed=_uniform(rng, spec.conveyor_speed),
                            center=[np.mean(spec.object_xy[0]) + 0.02, 0.0],
                            half_extents=[0.18, 0.30])
    else:  # precise_insert
        punch = spec.punch_depth
        objects.append(SimObject("box", np.array([0.05, 0.05]), "slot_rack", goal_pose))
        slot_centers = np.array([[goal_x, goal_y]])
        slot_empty = np.array([True])
        target_slot = 0

    if force_distractors if force_distractors is not None else rng.uniform() < spec.distractor_prob:
        for _ in range(int(rng.integers(spec.n_distractors[0], spec.n_distractors[1] + 1))):
            objects.append(SimObject(
                "disc", np.array([_uniform(rng, (0.015, 0.025)), 0.0]), "distractor",
                planar_pose(_uniform(rng, (0.2, 0.55)), _uniform(rng, (-0.25, 0.25)),
                            0.0)))

    state = WorldState(
        task_kind=spec.kind,
        config=config,
        clock=0.0,
        ee_pose=planar_pose(_uniform(rng, spec.ee_start[0]), _uniform(rng, spec.ee_start[1]),
                            _uniform(rng, spec.ee_yaw)),
        hand_dof=np.full(hand_model.dof, 1.1),
        objects=objects,
        task=TaskInstance(goal_pose, goal_half, slot_centers, slot_empty, target_slot,
                          punch, 0.0),
        conveyor=conveyor,
        rng_state=rng.bit_generator.state,
    )
    return state


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def _wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


def hand_gap(model: HandModel, dof: np.ndarray) -> float:
    """Jaw opening: min finger tip y minus thumb tip y, in the EE frame."""
    _, tips = fk_points(model, dof)
    return float(tips[1:, 1].min() - tips[0, 1])


def step(state: WorldState, action: tuple[Pose, np.ndarray], dt: float = SIM_DT,
         hand_model: HandModel | None = None) -> WorldState:
    """Advance one tick toward the commanded (EE pose, hand dof) targets."""
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    ee_target, hand_target = action
    hand_target = np.asarray(hand_target, dtype=np.float64).reshape(-1)
    if not (np.all(np.isfinite(ee_target.translation)) and np.all(np.isfinite(hand_target))):
        raise ContractViolation("action contains non-finite values")
    model = hand_model or planar_gripper_model()

    # EE servo with speed caps, constrained to the plane
    delta = ee_target.translation - state.ee_pose.translation
    delta[2] = 0.0
    dist = float(np.linalg.norm(delta))
    max_step = EE_SPEED_CAP * dt
    if dist > max_step:
        delta *= max_step / dist
    dyaw = _wrap_angle(ee_target.yaw - state.ee_pose.yaw)
    dyaw = float(np.clip(dyaw, -EE_YAW_RATE_CAP * dt, EE_YAW_RATE_CAP * dt))
    new_xy = state.ee_pose.translation + delta
    state.ee_pose = planar_pose(new_xy[0], new_xy[1], state.ee_pose.yaw + dyaw)

    # hand joints: rate-capped approach, clamped to limits
    prev_dof = state.hand_dof.copy()
    hand_target = model.clamp(hand_target)
    move = np.clip(hand_target - state.hand_dof, -HAND_RATE_CAP * dt, HAND_RATE_CAP * dt)
    state.hand_dof = model.clamp(state.hand_dof + move)
    closing = bool(np.mean(hand_target) < np.mean(prev_dof) - 1e-9)
    opening = bool(np.mean(hand_target) > np.mean(prev_dof) + 1e-9)

    state.clock += dt

    attached = state.attached_object
    if attached is not None:
        attached.pose = state.ee_pose.compose(attached.attach_rel)

        # commanded over-squeeze deforms the payload
        cmd_gap = hand_gap(model, hand_target)
        width = attached.grasp_width
        over = max(0.0, (width - DEFORM_SLACK) - cmd_gap) / width
        attached.deformation = min(1.0, attached.deformation + DEFORM_RATE * over * dt)

        if state.detach_countdown > 0:
            state.detach_countdown -= 1
        if state.detach_countdown == 0:
            state.detach_countdown = -1
            _detach(state, attached, event="drop")
        elif hand_gap(model, state.hand_dof) > width + RELEASE_MARGIN and opening:
            _detach(state, attached)
    else:
        if closing:
            _try_attach(state, model)
        if closing and np.mean(state.hand_dof) < 0.3 and state.attached_object is None \
                and not state.closed_attempt:
            state.events.append(("miss", state.clock))
            state.closed_attempt = True
        if np.mean(state.hand_dof) > 0.6:
            state.closed_attempt = False

    # conveyor advances what rests on it
    if state.conveyor is not None:
        shift = state.conveyor.axis * state.conveyor.speed * dt
        for obj in state.objects:
            if not obj.attached and obj.kind in ("target", "distractor") \
                    and state.conveyor.covers(obj.pose.translation):
                t = obj.pose.translation
                obj.pose = planar_pose(t[0] + shift[0], t[1] + shift[1], obj.pose.yaw)
    return state


def _try_attach(state: WorldState, model: HandModel) -> None:
    palm, tips = fk_points(model, state.hand_dof)
    tips_world = np.stack([state.ee_pose.apply(t) for t in tips])
    for obj in state.objects:
        if obj.kind not in ("target", "distractor"):
            continue
        below, above = False, False
        for tip in tips_world:
            dist, local_y = obj.boundary_distance(tip)
            if dist <= ATTACH_DISTANCE:
                if local_y < 0:
                    below = True
                else:
                    above = True
        if below and above:
            if state.grasp_suppressed:
                # the suppressed attempt consumes the injection and fails loudly
                state.grasp_suppressed = False
                state.events.append(("miss", state.clock))
                return
            obj.attached = True
            obj.attach_rel = obj.pose.relative_to(state.ee_pose)
            state.events.append(("attach", state.clock))
            return


def _detach(state: WorldState, obj: SimObject, event: str | None = None) -> None:
    obj.attached = False
    obj.attach_rel = None
    t = obj.pose.translation
    obj.pose = planar_pose(t[0], t[1], obj.pose.yaw)  # settles where released
    if event is None:
        event = "place" if _in_goal_region(state, obj) else "drop"
    state.events.append((event, state.clock))


def _in_goal_region(state: WorldState, obj: SimObject) -> bool:
    local = state.task.goal_pose.inverse().apply(obj.pose.translation)
    half = state.task.goal_half_extents
    return bool(abs(local[0]) <= half[0] and abs(local[1]) <= half[1])


def inject_failure(state: WorldState, mode) -> WorldState:
    """Stage one of the taxonomy failures.

    unstable_grasp: the attached object detaches after a short countdown.
    no_grasp: the next otherwise-valid grasp attempt silently fails.
    misalignment: the attached object shifts sideways in the hand.
    """
    from .episodes import FailureMode

    mode = FailureMode(mode) if not isinstance(mode, FailureMode) else mode
    if mode is FailureMode.UNSTABLE_GRASP:
        if state.attached_object is None:
            raise ContractViolation("unstable_grasp requires an attached object")
        state.detach_countdown = DETACH_COUNTDOWN_STEPS
    elif mode is FailureMode.NO_GRASP:
        if state.attached_object is not None:
            raise ContractViolation("no_grasp applies before an object is attached")
        state.grasp_suppressed = True
    elif mode is FailureMode.MISALIGNMENT:
        obj = state.attached_object
        if obj is None:
            raise ContractViolation("misalignment requires an attached object")
        rel = obj.attach_rel
        obj.attach_rel = Pose(rel.translation + np.array([MISALIGN_OFFSET, 0.0, 0.0]),
                              rel.rotation)
        obj.pose = state.ee_pose.compose(obj.attach_rel)
        state.events.append(("misalign", state.clock))
    return state


# ---------------------------------------------------------------------------
# Success predicates
# ---------------------------------------------------------------------------


def _object_corners(obj: SimObject) -> np.ndarray:
    if obj.shape == "disc":
        r = obj.params[0]
        offsets = np.array([[r, 0], [-r, 0], [0, r], [0, -r]])
    else:
        hx, hy = obj.params
        offsets = np.array([[hx, hy], [hx, -hy], [-hx, hy], [-hx, -hy]])
    pts = [obj.pose.apply([ox, oy, 0.0])[:2] for ox, oy in offsets]
    return np.stack(pts)


def success(state: WorldState, spec: TaskSpec) -> bool:
    obj = state.target_object
    task = state.task
    if obj.attached:
        return False
    if spec.kind == "pick_place":
        if obj.deformation >= spec.deformation_limit:
            return False  # crushed
        inv = task.goal_pose.inverse()
        half = task.goal_half_extents
        for corner in _object_corners(obj):
            local = inv.apply([corner[0], corner[1], 0.0])
            if abs(local[0]) > half[0] or abs(local[1]) > half[1]:
                return False
        return True
    if spec.kind == "slot_sort":
        xy = obj.pose.translation[:2]
        yaw_err = abs(_wrap_angle(obj.pose.yaw - task.slot_yaw))
        if yaw_err > spec.yaw_tolerance:
            return False  # toppled / not upright
        for k in np.flatnonzero(task.slot_initially_empty):
            if np.linalg.norm(xy - task.slot_centers[k]) <= spec.slot_tolerance:
                return True
        return False
    # precise_insert: depth along the slot axis (+x of the goal pose)
    local = task.goal_pose.inverse().apply(obj.pose.translation)
    if abs(local[1]) > spec.lateral_tolerance:
        return False
    return bool(local[0] >= task.punch_depth)


def insertion_depth(state: WorldState) -> float:
    local = state.task.goal_pose.inverse().apply(state.target_object.pose.translation)
    return float(local[0])


# ---------------------------------------------------------------------------
# Observation features
# ---------------------------------------------------------------------------

N_CONFIG_SURFACE = 8
N_CONFIG_BACKGROUND = 8
N_CONFIG_LIGHTING = 4

FEATURE_LAYOUT = (
    ("object_rel_pos", 3),
    ("object_rel_yaw_cos_sin", 2),
    ("attached", 1),
    ("object_half_extents", 2),
    ("deformation", 1),
    ("goal_rel_pos", 3),
    ("goal_rel_yaw_cos_sin", 2),
    ("goal_half_extents", 2),
    ("distractor_count", 1),
    ("conveyor_rel_velocity", 2),
    ("insertion_depth", 1),
    ("free_slot_fraction", 1),
    ("hand_gap", 1),
    ("config_surface_onehot", N_CONFIG_SURFACE),
    ("config_background_onehot", N_CONFIG_BACKGROUND),
    ("config_lighting_onehot", N_CONFIG_LIGHTING),
)
FEATURE_SIZE = sum(n for _, n in FEATURE_LAYOUT)
FEATURE_OFFSETS = {}
_ofs = 0
for _name, _n in FEATURE_LAYOUT:
    FEATURE_OFFSETS[_name] = (_ofs, _ofs + _n)
    _ofs += _n
GEOMETRY_SLICE = slice(0, FEATURE_OFFSETS["config_surface_onehot"][0])


def low_dim_features(state: WorldState, hand_model: HandModel | None = None) -> np.ndarray:
    model = hand_model or planar_gripper_model()
    inv = state.ee_pose.inverse()
    obj = state.target_object
    f = np.zeros(FEATURE_SIZE)

    def put(name, values):
        a, b = FEATURE_OFFSETS[name]
        f[a:b] = values

    put("object_rel_pos", inv.apply(obj.pose.translation))
    rel_yaw = obj.pose.yaw - state.ee_pose.yaw
    put("object_rel_yaw_cos_sin", [np.cos(rel_yaw), np.sin(rel_yaw)])
    put("attached", [1.0 if obj.attached else 0.0])
    put("object_half_extents", obj.params)
    put("deformation", [obj.deformation])

    task = state.task
    if state.task_kind == "slot_sort" and task.target_slot >= 0:
        goal_xy = task.slot_centers[task.target_slot]
        goal_world = np.array([goal_xy[0], goal_xy[1], 0.0])
        goal_yaw = task.slot_yaw
        goal_half = np.array([task.goal_half_extents[0], task.goal_half_extents[0]])
    else:
        goal_world = task.goal_pose.translation
        goal_yaw = task.goal_pose.yaw
        goal_half = task.goal_half_extents
    put("goal_rel_pos", inv.apply(goal_world))
    rel_goal_yaw = goal_yaw - state.ee_pose.yaw
    put("goal_rel_yaw_cos_sin", [np.cos(rel_goal_yaw), np.sin(rel_goal_yaw)])
    put("goal_half_extents", goal_half)
    put("distractor_count",
        [sum(1 for o in state.objects if o.kind == "distractor") / 4.0])
    if state.conveyor is not None:
        vel = state.conveyor.axis * state.conveyor.speed
        rel_vel = inv.rotation[:2, :2] @ vel
        put("conveyor_rel_velocity", rel_vel / 0.1)
    if state.task_kind == "precise_insert":
        put("insertion_depth", [insertion_depth(state) / max(task.punch_depth, 1e-6)])
    if len(task.slot_centers) and state.task_kind == "slot_sort":
        put("free_slot_fraction", [task.slot_initially_empty.mean()])
    put("hand_gap", [hand_gap(model, state.hand_dof) / 0.1])

    s, b, l = state.config
    f[FEATURE_OFFSETS["config_surface_onehot"][0] + s % N_CONFIG_SURFACE] = 1.0
    f[FEATURE_OFFSETS["config_background_onehot"][0] + b % N_CONFIG_BACKGROUND] = 1.0
    f[FEATURE_OFFSETS["config_lighting_onehot"][0] + l % N_CONFIG_LIGHTING] = 1.0
    return f


def observe(state: WorldState, cameras: tuple[str, ...] = (), image_size: int = 24,
            hand_model: HandModel | None = None) -> Observation:
    """Sensor snapshot: low-dim features plus optional rendered rasters.

    ``cameras`` may list "wrist" (viewport follows the EE) and "overhead"
    (fixed workspace viewport). Rendering is deterministic; identical states
    produce identical bytes.
    """
    from .render import render_camera

    images = tuple(render_camera(state, cam, image_size) for cam in cameras)
    return Observation(
        timestamp=state.clock,
        ee_pose=state.ee_pose,
        hand_joints=state.hand_dof.copy(),
        images=images,
        low_dim_features=low_dim_features(state, hand_model),
    )


# ---------------------------------------------------------------------------
# Byte-stable snapshots
# ---------------------------------------------------------------------------

_SNAP_MAGIC = b"DDWS"
_SNAP_VERSION = 2


def _pack_pose(buf: bytearray, pose: Pose) -> None:
    buf += struct.pack("<12d", *pose.translation, *pose.rotation.reshape(9))


def _unpack_pose(view, ofs):
    vals = struct.unpack_from("<12d", view, ofs)
    return Pose(np.array(vals[:3]), np.array(vals[3:]).reshape(3, 3)), ofs + 96


def save_snapshot(state: WorldState) -> bytes:
    buf = bytearray()
    buf += _SNAP_MAGIC
    buf += struct.pack("<I", _SNAP_VERSION)
    buf += struct.pack("<B", TASK_KINDS.index(state.task_kind))
    buf += struct.pack("<3H", *state.config)
    buf += struct.pack("<d", state.clock)
    _pack_pose(buf, state.ee_pose)
    buf += struct.pack("<H", state.hand_dof.size)
    buf += struct.pack(f"<{state.hand_dof.size}d", *state.hand_dof)
    buf += struct.pack("<BBi", state.grasp_suppressed, state.closed_attempt,
                      state.detach_countdown)

    buf += struct.pack("<H", len(state.objects))
    for obj in state.objects:
        buf += struct.pack("<BB", _SHAPES.index(obj.shape), _KINDS.index(obj.kind))
        buf += struct.pack("<2d", *obj.params)
        _pack_pose(buf, obj.pose)
        buf += struct.pack("<B", obj.attached)
        _pack_pose(buf, obj.attach_rel if obj.attach_rel is not None else Pose.identity())
        buf += struct.pack("<d", obj.deformation)

    task = state.task
    _pack_pose(buf, task.goal_pose)
    buf += struct.pack("<2d", *task.goal_half_extents)
    buf += struct.pack("<H", len(task.slot_centers))
    for k in range(len(task.slot_centers)):
        buf += struct.pack("<2dB", task.slot_centers[k][0], task.slot_centers[k][1],
                           bool(task.slot_initially_empty[k]))
    buf += struct.pack("<hdd", task.target_slot, task.punch_depth, task.slot_yaw)

    if state.conveyor is None:
        buf += struct.pack("<B", 0)
    else:
        c = state.conveyor
        buf += struct.pack("<B", 1)
        buf += struct.pack("<7d", *c.axis, c.speed, *c.center, *c.half_extents)

    buf += struct.pack("<I", len(state.events))
    for code, t in state.events:
        buf += struct.pack("<Bd", _EVENTS.index(code), t)

    rng = state.rng_state or {}
    if rng:
        inner = rng["state"]
        buf += struct.pack("<B", 1)
        for big in (inner["state"], inner["inc"]):
            buf += int(big).to_bytes(16, "little")
        buf += struct.pack("<BQ", bool(rng.get("has_uint32", 0)), rng.get("uinteger", 0))
    else:
        buf += struct.pack("<B", 0)
    return bytes(buf)


def load_snapshot(data: bytes) -> WorldState:
    if data[:4] != _SNAP_MAGIC:
        raise ContractViolation("not a world snapshot")
    ofs = 4
    (version,) = struct.unpack_from("<I", data, ofs)
    ofs += 4
    if version != _SNAP_VERSION:
        raise ContractViolation(f"unsupported snapshot version {version}")
    (kind_id,) = struct.unpack_from("<B", data, ofs)
    ofs += 1
    config = struct.unpack_from("<3H", data, ofs)
    ofs += 6
    (clock,) = struct.unpack_from("<d", data, ofs)
    ofs += 8
    ee_pose, ofs = _unpack_pose(data, ofs)
    (dof_n,) = struct.unpack_from("<H", data, ofs)
    ofs += 2
    hand = np.array(struct.unpack_from(f"<{dof_n}d", data, ofs))
    ofs += 8 * dof_n
    suppressed, closed_attempt, countdown = struct.unpack_from("<BBi", data, ofs)
    ofs += 6

    (n_obj,) = struct.unpack_from("<H", data, ofs)
    ofs += 2
    objects = []
    for _ in range(n_obj):
        shape_id, kind_id2 = struct.unpack_from("<BB", data, ofs)
        ofs += 2
        params = np.array(struct.unpack_from("<2d", data, ofs))
        ofs += 16
        pose, ofs = _unpack_pose(data, ofs)
        (attached,) = struct.unpack_from("<B", data, ofs)
        ofs += 1
        attach_rel, ofs = _unpack_pose(data, ofs)
        (deform,) = struct.unpack_from("<d", data, ofs)
        ofs += 8
        objects.append(SimObject(_SHAPES[shape_id], params, _KINDS[kind_id2], pose,
                                 bool(attached), attach_rel if attached else None, deform))

    goal_pose, ofs = _unpack_pose(data, ofs)
    goal_half = np.array(struct.unpack_from("<2d", data, ofs))
    ofs += 16
    (n_slots,) = struct.unpack_from("<H", data, ofs)
    ofs += 2
    centers, empties = [], []
    for _ in range(n_slots):
        x, y, e = struct.unpack_from("<2dB", data, ofs)
        ofs += 17
        centers.append([x, y])
        empties.append(bool(e))
    target_slot, punch, slot_yaw = struct.unpack_from("<hdd", data, ofs)
    ofs += 18

    (has_conv,) = struct.unpack_from("<B", data, ofs)
    ofs += 1
    conveyor = None
    if has_conv:
        vals = struct.unpack_from("<7d", data, ofs)
        ofs += 56
        conveyor = Conveyor(axis=vals[:2], speed=vals[2], center=vals[3:5],
                            half_extents=vals[5:7])

    (n_events,) = struct.unpack_from("<I", data, ofs)
    ofs += 4
    events = []
    for _ in range(n_events):
        code, t = struct.unpack_from("<Bd", data, ofs)
        ofs += 9
        events.append((_EVENTS[code], t))

    (has_rng,) = struct.unpack_from("<B", data, ofs)
    ofs += 1
    rng_state: dict = {}
    if has_rng:
        s = int.from_bytes(data[ofs:ofs + 16], "little")
        ofs += 16
        inc = int.from_bytes(data[ofs:ofs + 16], "little")
        ofs += 16
        has_u, uint = struct.unpack_from("<BQ", data, ofs)
        ofs += 9
        rng_state = {"bit_generator": "PCG64", "state": {"state": s, "inc": inc},
                     "has_uint32": int(has_u), "uinteger": int(uint)}

    return WorldState(
        task_kind=TASK_KINDS[kind_id],
        config=tuple(int(c) for c in config),
        clock=clock,
        ee_pose=ee_pose,
        hand_dof=hand,
        objects=objects,
        task=TaskInstance(goal_pose, goal_half, np.array(centers).reshape(-1, 2),
                          np.array(empties, dtype=bool), int(target_slot), float(punch),
                          float(slot_yaw)),
        conveyor=conveyor,
        grasp_suppressed=bool(suppressed),
        detach_countdown=int(countdown),
        closed_attempt=bool(closed_attempt),
        events=events,
        rng_state=rng_state,
    )
