import numpy as np
import pytest

from dexdesk.episodes import FailureMode
from dexdesk.errors import ContractViolation
from dexdesk.hands import planar_gripper_model
from dexdesk.oracle import (
    OracleActor,
    close_dof_for_width,
    quantize_action,
    replay_episode,
    scripted_demo,
)
from dexdesk.poses import Pose, planar_pose
from dexdesk.protocol import make_reset_scene
from dexdesk.render import render_camera
from dexdesk.sim import (
    EE_SPEED_CAP,
    GEOMETRY_SLICE,
    SIM_DT,
    Conveyor,
    WorldState,
    hand_gap,
    inject_failure,
    insertion_depth,
    load_snapshot,
    low_dim_features,
    observe,
    pick_place_task,
    precise_insert_task,
    reset,
    save_snapshot,
    slot_sort_task,
    step,
    success,
)

MODEL = planar_gripper_model()


def hold_action(state):
    return state.ee_pose, state.hand_dof.copy()


class TestReset:
    def test_same_seed_identical(self):
        spec = pick_place_task()
        a = reset(spec, 42)
        b = reset(spec, 42)
        assert save_snapshot(a) == save_snapshot(b)

    def test_different_seed_differs(self):
        spec = pick_place_task()
        assert save_snapshot(reset(spec, 1)) != save_snapshot(reset(spec, 2))

    def test_reset_scene_reproduces_exactly(self):
        spec = pick_place_task()
        state = reset(spec, 7)
        for _ in range(10):
            step(state, (planar_pose(0.4, 0.0, 0.1), np.array([0.5, 0.5])))
        snap = save_snapshot(state)
        scene = make_reset_scene("s", FailureMode.NO_GRASP, snap)
        restored = reset(spec, 999, scene=scene)
        assert save_snapshot(restored) == snap

    def test_distractor_fraction_over_seeds(self):
        spec = pick_place_task()
        frac = np.mean([any(o.kind == "distractor" for o in reset(spec, s).objects)
                        for s in range(1000)])
        assert abs(frac - 0.5) <= 0.05

    def test_infeasible_spec_rejected(self):
        spec = pick_place_task(object_half_y=(0.05, 0.06))  # wider than the jaws
        with pytest.raises(ContractViolation):
            reset(spec, 0)


class TestStep:
    def test_hold_changes_only_clock(self):
        state = reset(pick_place_task(), 3)
        before = save_snapshot(state)
        step(state, hold_action(state))
        after = load_snapshot(before)
        assert state.clock == pytest.approx(after.clock + SIM_DT)
        assert np.abs(state.ee_pose.translation - after.ee_pose.translation).max() < 1e-12
        assert np.abs(state.hand_dof - after.hand_dof).max() < 1e-12

    def test_speed_cap_no_teleport(self):
        state = reset(pick_place_task(), 4)
        for _ in range(30):
            prev = state.ee_pose.translation.copy()
            step(state, (planar_pose(5.0, -5.0, 2.0), state.hand_dof))
            moved = np.linalg.norm(state.ee_pose.translation - prev)
            assert moved <= EE_SPEED_CAP * SIM_DT + 1e-12

    def test_conveyor_advances_exactly(self):
        state = reset(slot_sort_task(), 5)
        state.conveyor = Conveyor(axis=[1.0, 0.0], speed=0.05, center=[0.38, 0.0],
                                  half_extents=[0.4, 0.4])
        obj = state.target_object
        x0 = obj.pose.translation[0]
        for _ in range(15):
            step(state, hold_action(state))
        assert obj.pose.translation[0] - x0 == pytest.approx(0.05, abs=1e-9)

    def test_constructed_grasp_attaches(self):
        state = reset(pick_place_task(), 6)
        obj = state.target_object
        # park the EE over the object, aligned, then close
        for _ in range(60):
            step(state, (planar_pose(obj.pose.translation[0], obj.pose.translation[1],
                                     obj.pose.yaw), np.full(2, 1.1)))
        close = np.full(2, close_dof_for_width(obj.grasp_width))
        for _ in range(20):
            step(state, (planar_pose(obj.pose.translation[0], obj.pose.translation[1],
                                     obj.pose.yaw), close))
        assert obj.attached

    def test_attached_object_rigidity(self):
        spec = pick_place_task()
        res = scripted_demo(spec, 11, "clean", cameras=())
        state = load_snapshot(res.episode.initial_state)
        actor = OracleActor(spec, seed=11)
        rels = []
        for _ in range(spec.max_steps):
            pose, hand = quantize_action(*actor.act(state))
            step(state, (pose, hand))
            obj = state.attached_object
            if obj is not None:
                rel = obj.pose.relative_to(state.ee_pose)
                rels.append(np.concatenate([rel.translation, rel.rotation.reshape(9)]))
        rels = np.stack(rels)
        spread = np.abs(rels - rels[0]).max(axis=0)
        assert spread.max() < 1e-12

    def test_nonfinite_action_rejected(self):
        state = reset(pick_place_task(), 8)
        with pytest.raises(ContractViolation):
            step(state, (state.ee_pose, np.array([np.nan, 0.5])))


class TestObserve:
    def test_background_change_alters_raster_not_geometry(self):
        spec = pick_place_task()
        a = reset(spec, 9, config=(1, 2, 3))
        b = reset(spec, 9, config=(1, 5, 3))
        im_a = render_camera(a, "overhead", 24)
        im_b = render_camera(b, "overhead", 24)
        assert not np.array_equal(im_a, im_b)
        fa, fb = low_dim_features(a), low_dim_features(b)
        assert np.array_equal(fa[GEOMETRY_SLICE], fb[GEOMETRY_SLICE])

    def test_wrist_recenters_overhead_fixed(self):
        state = reset(pick_place_task(), 10, config=(0, 0, 2))
        wrist0 = render_camera(state, "wrist", 24)
        over0 = render_camera(state, "overhead", 24)
        target = planar_pose(state.ee_pose.translation[0] + 0.3, 0.3, 0.0)
        for _ in range(40):
            step(state, (target, state.hand_dof))
        # scene itself unchanged: overhead identical except the EE marker moved
        over1 = render_camera(state, "overhead", 24)
        wrist1 = render_camera(state, "wrist", 24)
        assert not np.array_equal(wrist0, wrist1)
        assert not np.array_equal(over0, over1)
        assert np.mean(np.any(over0 != over1, axis=2)) < 0.15  # only the marker region

    def test_observe_deterministic_bytes(self):
        state = reset(pick_place_task(), 11, config=(2, 2, 2))
        a = observe(state, cameras=("wrist", "overhead"), image_size=32)
        b = observe(state, cameras=("wrist", "overhead"), image_size=32)
        for im1, im2 in zip(a.images, b.images):
            assert np.array_equal(im1, im2)
        assert np.array_equal(a.low_dim_features, b.low_dim_features)

    def test_renders_quantized_to_uint8_grid(self):
        state = reset(pick_place_task(), 12)
        im = render_camera(state, "overhead", 24)
        assert np.array_equal(im, np.rint(im * 255) / 255)


class TestSuccess:
    def _placed_state(self, deformation=0.0):
        spec = pick_place_task()
        state = reset(spec, 13)
        obj = state.target_object
        goal = state.task.goal_pose.translation
        obj.pose = planar_pose(goal[0], goal[1], 0.2)
        obj.deformation = deformation
        return spec, state

    def test_centered_object_succeeds(self):
        spec, state = self._placed_state()
        assert success(state, spec)

    def test_crushed_object_fails(self):
        spec, state = self._placed_state(deformation=0.9)
        assert not success(state, spec)

    def test_attached_object_fails(self):
        spec, state = self._placed_state()
        state.target_object.attached = True
        state.target_object.attach_rel = Pose.identity()
        assert not success(state, spec)

    def test_partial_punch_fails_until_threshold(self):
        spec = precise_insert_task()
        state = reset(spec, 14)
        goal = state.task.goal_pose
        punch = state.task.punch_depth
        state.target_object.pose = Pose(goal.apply([0.9 * punch, 0.0, 0.0]), goal.rotation)
        assert insertion_depth(state) == pytest.approx(0.9 * punch)
        assert not success(state, spec)
        state.target_object.pose = Pose(goal.apply([punch + 1e-6, 0.0, 0.0]), goal.rotation)
        assert success(state, spec)

    def test_slot_sort_respects_occupancy_and_tilt(self):
        spec = slot_sort_task()
        state = reset(spec, 15)
        task = state.task
        empty = int(np.flatnonzero(task.slot_initially_empty)[0])
        sx, sy = task.slot_centers[empty]
        state.target_object.pose = planar_pose(sx, sy, 0.0)
        assert success(state, spec)
        state.target_object.pose = planar_pose(sx, sy, np.deg2rad(25))
        assert not success(state, spec)
        occupied = [k for k in range(spec.n_slots) if not task.slot_initially_empty[k]]
        if occupied:
            ox, oy = task.slot_centers[occupied[0]]
            state.target_object.pose = planar_pose(ox, oy, 0.0)
            assert not success(state, spec)


class TestFailureInjection:
    def _attached_state(self, seed=16):
        spec = pick_place_task()
        res = scripted_demo(spec, seed, "clean", cameras=())
        state = load_snapshot(res.episode.initial_state)
        actor = OracleActor(spec, seed=seed)
        for _ in range(spec.max_steps):
            pose, hand = quantize_action(*actor.act(state))
            step(state, (pose, hand))
            if state.attached_object is not None:
                return spec, state, actor
        raise AssertionError("oracle never attached")

    def test_unstable_grasp_detaches_after_countdown(self):
        spec, state, actor = self._attached_state()
        inject_failure(state, FailureMode.UNSTABLE_GRASP)
        for _ in range(10):
            assert state.attached_object is not None
            step(state, hold_action(state))
        assert state.attached_object is None
        assert state.event_count("drop") == 1

    def test_no_grasp_suppresses_next_attempt(self):
        spec = pick_place_task()
        state = reset(spec, 17)
        inject_failure(state, FailureMode.NO_GRASP)
        actor = OracleActor(spec, seed=17)
        attach_tick = None
        for t in range(spec.max_steps):
            pose, hand = quantize_action(*actor.act(state))
            step(state, (pose, hand))
            if state.attached_object is not None:
                attach_tick = t
                break
        assert state.event_count("miss") == 1
        assert attach_tick is not None  # retry succeeded after the miss

    def test_misalignment_defeats_nominal_placement(self):
        spec = slot_sort_task(occupancy_prob=0.0)
        state = reset(spec, 18)
        obj = state.target_object
        actor = OracleActor(spec, seed=18)
        while state.attached_object is None:
            pose, hand = quantize_action(*actor.act(state))
            step(state, (pose, hand))
        inject_failure(state, FailureMode.MISALIGNMENT)
        rel = obj.attach_rel
        # drive the EE so the EE-frame nominal grip point sits on the slot,
        # ignoring the in-hand offset (what a non-compensating policy does)
        nominal_rel = Pose(rel.translation - np.array([0.02, 0.0, 0.0]), rel.rotation)
        sx, sy = state.task.slot_centers[state.task.target_slot]
        desired_obj = planar_pose(sx, sy, 0.0)
        ee_naive = desired_obj.compose(nominal_rel.inverse())
        for _ in range(120):
            step(state, (ee_naive, np.full(2, close_dof_for_width(obj.grasp_width))))
        for _ in range(10):
            step(state, (ee_naive, np.full(2, 1.1)))
        assert state.attached_object is None
        assert not success(state, spec)

    def test_inapplicable_injection_rejected(self):
        state = reset(pick_place_task(), 19)
        with pytest.raises(ContractViolation):
            inject_failure(state, FailureMode.UNSTABLE_GRASP)  # nothing attached
        spec, attached, _ = self._attached_state(20)
        with pytest.raises(ContractViolation):
            inject_failure(attached, FailureMode.NO_GRASP)  # already holding


class TestDeterminismAndSnapshots:
    def test_action_stream_reproduces_trajectory_and_bytes(self):
        spec = pick_place_task()
        finals, frames = [], []
        for _ in range(2):
            state = reset(spec, 21)
            actor = OracleActor(spec, seed=21)
            for _ in range(60):
                pose, hand = quantize_action(*actor.act(state))
                step(state, (pose, hand))
            finals.append(save_snapshot(state))
            frames.append(render_camera(state, "overhead", 32).tobytes())
        assert finals[0] == finals[1]
        assert frames[0] == frames[1]

    def test_snapshot_roundtrip_bit_exact(self):
        for task in (pick_place_task(), slot_sort_task(), precise_insert_task()):
            state = reset(task, 22)
            for _ in range(20):
                step(state, (planar_pose(0.4, 0.1, 0.2), np.array([0.4, 0.4])))
            snap = save_snapshot(state)
            assert save_snapshot(load_snapshot(snap)) == snap

    def test_deformation_monotone(self):
        spec, state, actor = TestFailureInjection()._attached_state(23)
        obj = state.attached_object
        crush = np.zeros(2)
        last = obj.deformation
        for _ in range(40):
            step(state, (state.ee_pose, crush))
            assert obj.deformation >= last
            last = obj.deformation
        assert last > 0.1


class TestScriptedDemo:
    @pytest.mark.parametrize("maker", [pick_place_task, slot_sort_task, precise_insert_task])
    def test_clean_demo_succeeds(self, maker):
        spec = maker()
        res = scripted_demo(spec, 30, "clean", cameras=())
        assert res.succeeded
        assert success(res.final_state, spec)
        assert res.episode.meta.label.value == "success"

    def test_same_seed_bit_identical_episode(self, tmp_path):
        from dexdesk.episodes import EpisodeStore

        spec = pick_place_task()
        a = scripted_demo(spec, 31, "clean", cameras=("wrist",), image_size=16)
        b = scripted_demo(spec, 31, "clean", cameras=("wrist",), image_size=16)
        sa, sb = EpisodeStore(tmp_path / "a"), EpisodeStore(tmp_path / "b")
        sa.write_episode(a.episode)
        sb.write_episode(b.episode)
        for name in ("header.json", "obs_ee.bin", "act_ee.bin", "cam0.bin"):
            assert (sa.episode_dir(a.episode.episode_id) / name).read_bytes() == \
                   (sb.episode_dir(b.episode.episode_id) / name).read_bytes()

    def test_correction_demo_metadata_and_snapshot(self):
        spec = pick_place_task()
        res = scripted_demo(spec, 32, "with_failure_then_correct", cameras=())
        assert res.episode.meta.is_correction
        assert res.episode.meta.failure_mode is not None
        assert res.failure_snapshot
        assert res.episode.initial_state == res.failure_snapshot

    def test_replay_reproduces_final_state(self):
        spec = pick_place_task()
        for style in ("clean", "with_failure_then_correct"):
            res = scripted_demo(spec, 33, style, cameras=())
            final = replay_episode(res.episode, spec)
            assert save_snapshot(final) == res.episode.final_state

    def test_recording_never_drops_ticks(self):
        spec = pick_place_task()
        res = scripted_demo(spec, 34, "clean", cameras=())
        ts = res.episode.obs_ts.astype(np.float64)
        assert np.allclose(np.diff(ts), SIM_DT, atol=1e-6)


class TestHandGap:
    def test_gap_monotone_in_dof(self):
        qs = np.linspace(0.0, 1.2, 20)
        gaps = [hand_gap(MODEL, np.array([q, q])) for q in qs]
        assert all(b > a for a, b in zip(gaps, gaps[1:]))
        assert gaps[0] == pytest.approx(0.03, abs=1e-9)
        assert gaps[-1] == pytest.approx(0.11 - 0.08 * np.cos(1.2), abs=1e-9)

    def test_close_dof_inverts_gap(self):
        for w in (0.04, 0.05, 0.06):
            q = close_dof_for_width(w, slack=0.0)
            assert hand_gap(MODEL, np.array([q, q])) == pytest.approx(w, abs=1e-9)
