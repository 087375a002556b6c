"""Scripted demonstrators and rollout actors.

The oracle is a state-reactive controller: given the current world state it
emits the teleoperation target (EE pose + hand joints) for this tick. Being
reactive makes it double as the recovery demonstrator: started from a staged
failure state it simply performs the remaining work (re-approach, re-grasp,
compensate an in-hand offset), which is exactly what a self-correction
episode should contain.

Demo styles:
    clean                    straight successful run
    sloppy                   succeeds, but with jittery erratic targets and
                             an over-tight squeeze; curation bait
    with_failure_then_correct  stages one taxonomy failure (unrecorded),
                             snapshots it, then records the recovery
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import (
    Episode,
    EpisodeMeta,
    EpisodeRecorder,
    FailureMode,
    Label,
)
from .errors import ContractViolation
from .hands import HandModel, planar_gripper_model
from .poses import Pose, planar_pose
from .sim import (
    SIM_DT,
    TaskSpec,
    WorldState,
    hand_gap,
    inject_failure,
    observe,
    reset,
    save_snapshot,
    step,
    success,
)

OPEN_DOF = 1.1
LEAD_DISTANCE = 0.08  # teleop target runs this far ahead of the gripper
POS_TOL = 0.004
YAW_TOL = 0.06
GRIP_SLACK = 0.006
PLACE_TOL = 0.003
INSERT_OVERDEPTH = 0.006
RETREAT_TICKS = 10

DEMO_STYLES = ("clean", "sloppy", "with_failure_then_correct")


def close_dof_for_width(width: float, slack: float = GRIP_SLACK) -> float:
    """Invert the planar jaw-gap map 0.11 - 0.08 cos(q) for a target width."""
    gap = np.clip(width - slack, 0.031, 0.0805)
    return float(np.arccos(np.clip((0.11 - gap) / 0.08, -1.0, 1.0)))


def _wrap(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


def _toward(current: np.ndarray, goal_xy: np.ndarray, lead: float = LEAD_DISTANCE) -> np.ndarray:
    d = goal_xy - current[:2]
    dist = float(np.hypot(d[0], d[1]))
    if dist <= lead:
        return goal_xy
    return current[:2] + d * (lead / dist)


class OracleActor:
    """Privileged-state demonstrator for one episode."""

    def __init__(self, spec: TaskSpec, seed: int = 0, style: str = "clean",
                 hand_model: HandModel | None = None):
        if style not in ("clean", "sloppy"):
            raise ContractViolation(f"actor style must be clean or sloppy, got '{style}'")
        self.spec = spec
        self.style = style
        self.model = hand_model or planar_gripper_model()
        self.rng = np.random.default_rng(seed)
        self.close_ticks = 0
        self.released = False
        self.retreat_from: np.ndarray | None = None

    # -- target geometry ----------------------------------------------------
    def _grasp_yaw(self, state: WorldState) -> float:
        # boxes are 180-degree symmetric; take the representative nearest the EE yaw
        obj_yaw = state.target_object.pose.yaw
        best = obj_yaw
        for k in (-2, -1, 0, 1, 2):
            cand = obj_yaw + k * np.pi
            if abs(_wrap(cand - state.ee_pose.yaw)) < abs(_wrap(best - state.ee_pose.yaw)):
                best = cand
        return best

    def _grasp_xy(self, state: WorldState) -> np.ndarray:
        obj = state.target_object
        xy = obj.pose.translation[:2].copy()
        if state.conveyor is not None and state.conveyor.covers(obj.pose.translation):
            dist = float(np.linalg.norm(xy - state.ee_pose.translation[:2]))
            eta = dist / 0.18 + 0.25
            xy = xy + state.conveyor.axis * state.conveyor.speed * eta
        return xy

    def _desired_object_pose(self, state: WorldState) -> Pose:
        task = state.task
        obj = state.target_object
        if state.task_kind == "pick_place":
            return planar_pose(task.goal_pose.translation[0], task.goal_pose.translation[1],
                               obj.pose.yaw)
        if state.task_kind == "slot_sort":
            sx, sy = task.slot_centers[task.target_slot]
            return planar_pose(sx, sy, task.slot_yaw)
        depth = task.punch_depth + INSERT_OVERDEPTH
        target = task.goal_pose.apply([depth, 0.0, 0.0])
        return planar_pose(target[0], target[1], task.goal_pose.yaw)

    # -- policy --------------------------------------------------------------
    def act(self, state: WorldState) -> tuple[Pose, np.ndarray]:
        obj = state.target_object
        pose, hand, precise = self._act_nominal(state, obj)
        if self.style == "sloppy" and not precise:
            # wandering targets during the coarse legs; endpoints stay exact
            t = pose.translation
            jitter = self.rng.normal(scale=0.008, size=2)
            pose = planar_pose(t[0] + jitter[0], t[1] + jitter[1],
                               pose.yaw + float(self.rng.normal(scale=0.04)))
            hand = np.clip(hand + self.rng.normal(scale=0.03, size=hand.shape), 0.0, 1.2)
        return pose, hand

    def _act_nominal(self, state: WorldState, obj) -> tuple[Pose, np.ndarray, bool]:
        ee = state.ee_pose
        open_hand = np.full(self.model.dof, OPEN_DOF)

        if obj.attached:
            self.close_ticks = 0
            grip = np.full(self.model.dof,
                           close_dof_for_width(obj.grasp_width,
                                               GRIP_SLACK + (0.006 if self.style == "sloppy" else 0.0)))
            desired_obj = self._desired_object_pose(state)
            # compensate the in-hand offset: ee_needed = desired_obj * rel^-1
            ee_needed = desired_obj.compose(obj.attach_rel.inverse())
            err = float(np.linalg.norm(ee.translation[:2] - ee_needed.translation[:2]))
            yaw_err = abs(_wrap(ee.yaw - ee_needed.yaw))
            if err <= PLACE_TOL and yaw_err <= YAW_TOL:
                self.released = True
                self.retreat_from = ee.translation[:2].copy()
                return Pose(ee.translation, ee.rotation), open_hand, True  # let go in place
            xy = _toward(ee.translation, ee_needed.translation[:2])
            return planar_pose(xy[0], xy[1], ee_needed.yaw), grip, err <= 0.06

        if self.released and success(state, self.spec):
            # retreat a little, then hold
            base = self.retreat_from if self.retreat_from is not None else ee.translation[:2]
            away = base + np.array([-0.06, 0.0])
            xy = _toward(ee.translation, away)
            return planar_pose(xy[0], xy[1], ee.yaw), open_hand, True

        # approach and grasp (also the recovery path after a drop or miss)
        self.released = False
        grasp_xy = self._grasp_xy(state)
        grasp_yaw = self._grasp_yaw(state)
        err = float(np.linalg.norm(ee.translation[:2] - grasp_xy))
        yaw_err = abs(_wrap(ee.yaw - grasp_yaw))
        if err > POS_TOL or yaw_err > YAW_TOL:
            self.close_ticks = 0
            xy = _toward(ee.translation, grasp_xy)
            return planar_pose(xy[0], xy[1], grasp_yaw), open_hand, err <= 0.05
        # in position: close on the object
        self.close_ticks += 1
        if self.close_ticks > 30:
            self.close_ticks = 0  # failed attempt; reopen and retry
            return planar_pose(grasp_xy[0], grasp_xy[1], grasp_yaw), open_hand, True
        grip = np.full(self.model.dof, close_dof_for_width(obj.grasp_width))
        return planar_pose(grasp_xy[0], grasp_xy[1], grasp_yaw), grip, True


class RandomActor:
    """Null baseline: seeded random targets in the workspace."""

    def __init__(self, seed: int = 0, hand_model: HandModel | None = None):
        self.rng = np.random.default_rng(seed)
        self.model = hand_model or planar_gripper_model()

    def act(self, state: WorldState) -> tuple[Pose, np.ndarray]:
        pose = planar_pose(self.rng.uniform(0.0, 0.8), self.rng.uniform(-0.4, 0.4),
                           self.rng.uniform(-np.pi, np.pi))
        hand = self.rng.uniform(0.0, 1.2, size=self.model.dof)
        return pose, hand


def quantize_action(pose: Pose, hand: np.ndarray) -> tuple[Pose, np.ndarray]:
    """Round an action to float32, the storage precision.

    Applied before both recording and execution so that replaying a stored
    episode drives the simulator with bit-identical commands.
    """
    t32 = pose.translation.astype(np.float32).astype(np.float64)
    r32 = pose.rotation.astype(np.float32).astype(np.float64)
    return Pose(t32, r32), np.asarray(hand, dtype=np.float32).astype(np.float64)


@dataclass
class DemoResult:
    episode: Episode
    final_state: WorldState
    succeeded: bool
    failure_snapshot: bytes = b""  # staged failure state (correction demos)


def _stage_failure(spec: TaskSpec, rng: np.random.Generator, seed: int,
                   mode: FailureMode, hand_model: HandModel,
                   config, force_distractors) -> WorldState:
    state = reset(spec, seed, hand_model=hand_model, config=config,
                  force_distractors=force_distractors)
    actor = OracleActor(spec, seed=seed, hand_model=hand_model)
    if mode is FailureMode.NO_GRASP:
        inject_failure(state, mode)
    inject_after = int(rng.integers(4, 16))
    attached_ticks = 0
    for _ in range(spec.max_steps):
        if mode is FailureMode.NO_GRASP and state.event_count("miss") > 0:
            break
        if mode is not FailureMode.NO_GRASP and state.attached_object is not None:
            attached_ticks += 1
            if attached_ticks == inject_after:
                inject_failure(state, mode)
                if mode is FailureMode.MISALIGNMENT:
                    break
        if mode is FailureMode.UNSTABLE_GRASP and state.event_count("drop") > 0:
            break
        pose, hand = quantize_action(*actor.act(state))
        step(state, (pose, hand), hand_model=hand_model)
    return state


def scripted_demo(spec: TaskSpec, seed: int, style: str = "clean",
                  cameras: tuple[str, ...] = ("wrist", "overhead"), image_size: int = 32,
                  hand_model: HandModel | None = None, task_config_id: int | None = None,
                  failure_mode: FailureMode | None = None,
                  episode_id: str | None = None,
                  collector_id: str = "collector:sim-oracle") -> DemoResult:
    """Run one demonstration episode and return it fully recorded.

    An oracle that exhausts the step budget still yields a recorded episode,
    labeled as a failure. Identical arguments reproduce identical episodes
    byte for byte.
    """
    if style not in DEMO_STYLES:
        raise ContractViolation(f"unknown demo style '{style}'")
    model = hand_model or planar_gripper_model()
    rng = np.random.default_rng(np.random.SeedSequence((seed, DEMO_STYLES.index(style))))
    config = None if task_config_id is None else config_triple(task_config_id)

    failure_snapshot = b""
    staged_mode: FailureMode | None = None
    if style == "with_failure_then_correct":
        staged_mode = failure_mode or list(FailureMode)[seed % 3]
        state = _stage_failure(spec, rng, seed, staged_mode, model, config, None)
        failure_snapshot = save_snapshot(state)
        state = reset(spec, seed, scene=failure_snapshot)
    else:
        state = reset(spec, seed, hand_model=model, config=config, force_distractors=None)

    actor = OracleActor(spec, seed=seed, style="sloppy" if style == "sloppy" else "clean",
                        hand_model=model)
    recorder = EpisodeRecorder()
    initial_snapshot = save_snapshot(state)

    settle = 0
    for _ in range(spec.max_steps):
        obs = observe(state, cameras=cameras, image_size=image_size, hand_model=model)
        pose, hand = quantize_action(*actor.act(state))
        recorder.append(obs, pose, hand)
        step(state, (pose, hand), hand_model=model)
        if success(state, spec) and actor.released:
            settle += 1
            if settle >= RETREAT_TICKS:
                break

    ok = success(state, spec)
    if staged_mode is not None:
        mode = staged_mode
    elif ok:
        mode = None
    elif state.event_count("drop"):
        mode = FailureMode.UNSTABLE_GRASP
    elif state.event_count("miss"):
        mode = FailureMode.NO_GRASP
    else:
        mode = None
    eid = episode_id or f"{spec.kind}-{style}-{seed:08d}"
    meta = EpisodeMeta(
        episode_id=eid,
        task_name=spec.kind,
        task_config_id=task_config_id if task_config_id is not None else -1,
        label=Label.SUCCESS if ok else Label.FAILURE,
        distractors_present=any(o.kind == "distractor" for o in state.objects),
        is_correction=style == "with_failure_then_correct",
        failure_mode=mode,
        collector_id=collector_id,
        labeler_id=collector_id,
        audit=({"event": "label", "label": "success" if ok else "failure",
                "failure_mode": mode.value if mode else None,
                "by": collector_id, "at": state.clock},),
    )
    episode = recorder.finish(meta, initial_state=initial_snapshot,
                              final_state=save_snapshot(state))
    return DemoResult(episode, state, ok, failure_snapshot)


def config_triple(config_id: int) -> tuple[int, int, int]:
    """Deterministic mapping from a task-config id to (surface, background, lighting)."""
    return (config_id % 8, (3 * config_id + 1) % 8, config_id % 4)


def replay_episode(episode: Episode, spec: TaskSpec,
                   hand_model: HandModel | None = None) -> WorldState:
    """Re-run a stored episode's actions from its initial snapshot."""
    from .sim import load_snapshot

    if not episode.initial_state:
        raise ContractViolation("episode has no initial snapshot to replay from")
    model = hand_model or planar_gripper_model()
    state = load_snapshot(episode.initial_state)
    for i in range(len(episode)):
        pose, hand = episode.target(i)
        step(state, (pose, hand), hand_model=model)
    return state
