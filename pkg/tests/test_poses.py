import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dexdesk.errors import ContractViolation, Degenerate6DError, InvalidRotationError
from dexdesk.poses import (
    Pose,
    PoseHorizon,
    RelChunk,
    ReprMode,
    decode_action_chunk,
    decode_rot6d,
    encode_action_chunk,
    encode_rot6d,
    encode_state_horizon,
    planar_pose,
    rot_rpy,
    rot_z,
)


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


def random_pose(rng, scale=1.0) -> Pose:
    return Pose(rng.normal(scale=scale, size=3), random_rotation(rng))


class TestRot6D:
    def test_identity(self):
        assert np.allclose(encode_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
        assert np.allclose(decode_rot6d([1, 0, 0, 0, 1, 0]), np.eye(3))

    def test_z90_columns_read_off(self):
        v = encode_rot6d(rot_z(np.pi / 2))
        assert np.allclose(v, [0, 1, 0, -1, 0, 0], atol=1e-12)

    def test_roundtrip_1000_random_rotations(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            r = random_rotation(rng)
            assert np.abs(decode_rot6d(encode_rot6d(r)) - r).max() < 1e-9

    def test_scale_removed(self):
        assert np.allclose(decode_rot6d([2, 0, 0, 0, 3, 0]), np.eye(3))

    def test_perturbed_still_orthonormal(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            v = encode_rot6d(random_rotation(rng)) + rng.normal(scale=1e-3, size=6)
            r = decode_rot6d(v)
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_encode_rejects_non_orthonormal(self):
        bad = np.eye(3) + 1e-3
        with pytest.raises(InvalidRotationError):
            encode_rot6d(bad)

    def test_decode_rejects_degenerate(self):
        with pytest.raises(Degenerate6DError):
            decode_rot6d([0, 0, 0, 0, 1, 0])
        with pytest.raises(Degenerate6DError):
            decode_rot6d([1, 0, 0, 1, 1e-12, 0])


class TestPose:
    def test_compose_inverse(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            ab = a.compose(b)
            assert ab.compose(b.inverse()).allclose(a, 1e-9)
            assert a.inverse().compose(ab).allclose(b, 1e-9)

    def test_matches_scipy_composition(self):
        rng = np.random.default_rng(4)
        a, b = random_pose(rng), random_pose(rng)
        expected_r = a.rotation @ b.rotation
        expected_t = a.translation + a.rotation @ b.translation
        got = a.compose(b)
        assert np.allclose(got.rotation, expected_r)
        assert np.allclose(got.translation, expected_t)

    def test_rot_rpy_matches_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            r, p, y = rng.uniform(-np.pi, np.pi, size=3)
            ours = rot_rpy(r, p, y)
            ref = Rotation.from_euler("ZYX", [y, p, r]).as_matrix()
            assert np.abs(ours - ref).max() < 1e-12

    def test_invalid_rotation_rejected_on_construction(self):
        with pytest.raises(InvalidRotationError):
            Pose(np.zeros(3), np.eye(3) * 1.01)


class TestStateHorizon:
    def test_last_entry_is_identity(self):
        rng = np.random.default_rng(9)
        poses = tuple(random_pose(rng) for _ in range(3))
        hz = PoseHorizon(poses, [0.0, 0.1, 0.2])
        rel_t, rel_r6 = encode_state_horizon(hz)[-1]
        assert np.abs(rel_t).max() < 1e-12
        assert np.abs(rel_r6 - [1, 0, 0, 0, 1, 0]).max() < 1e-12

    def test_pure_translation(self):
        base = Pose([1, 0, 0], np.eye(3))
        obs = Pose([2, 0, 0], np.eye(3))
        hz = PoseHorizon((obs, base), [0.0, 0.1])
        rel_t, _ = encode_state_horizon(hz)[0]
        assert np.allclose(rel_t, [1, 0, 0])

    def test_offset_rotated_into_base_frame(self):
        base = Pose([0.3, -0.2, 0.0], rot_z(np.pi / 2))
        obs = Pose(base.translation + np.array([0, 1, 0]), np.eye(3))
        hz = PoseHorizon((obs, base), [0.0, 0.1])
        rel_t, _ = encode_state_horizon(hz)[0]
        assert np.allclose(rel_t, [1, 0, 0], atol=1e-12)

    def test_timestamps_must_increase(self):
        with pytest.raises(ContractViolation):
            PoseHorizon((Pose.identity(), Pose.identity()), [0.1, 0.1])

    def test_empty_horizon_rejected(self):
        with pytest.raises(ContractViolation):
            PoseHorizon((), [])


class TestActionChunk:
    @pytest.mark.parametrize("mode", list(ReprMode))
    def test_roundtrip_100_random_chunks(self, mode):
        rng = np.random.default_rng(21)
        for _ in range(100):
            base = random_pose(rng)
            chunk = [random_pose(rng) for _ in range(8)]
            enc = encode_action_chunk(chunk, base, mode)
            dec_base = enc.base if mode is ReprMode.RELATIVE_WRONG_BASE else base
            dec = decode_action_chunk(enc, dec_base, mode)
            for p, q in zip(chunk, dec):
                assert p.allclose(q, 1e-9)

    def test_relative_self_is_identity(self):
        rng = np.random.default_rng(22)
        base = random_pose(rng)
        enc = encode_action_chunk([base, random_pose(rng)], base, ReprMode.RELATIVE)
        assert np.abs(enc.rel_poses[0] - [0, 0, 0, 1, 0, 0, 0, 1, 0]).max() < 1e-12

    def test_absolute_mode_is_verbatim(self):
        rng = np.random.default_rng(23)
        chunk = [random_pose(rng) for _ in range(4)]
        enc = encode_action_chunk(chunk, random_pose(rng), ReprMode.ABSOLUTE)
        for row, p in zip(enc.rel_poses, chunk):
            assert np.allclose(row[:3], p.translation)
            assert np.allclose(row[3:], encode_rot6d(p.rotation))

    def test_delta_static_chunk_all_identity(self):
        base = planar_pose(0.2, 0.1, 0.4)
        enc = encode_action_chunk([base] * 5, base, ReprMode.DELTA)
        assert np.abs(enc.rel_poses - np.tile([0, 0, 0, 1, 0, 0, 0, 1, 0], (5, 1))).max() < 1e-12

    def test_identity_chunk_decodes_to_base(self):
        rng = np.random.default_rng(24)
        base = random_pose(rng)
        rel = RelChunk(np.tile([0, 0, 0, 1, 0, 0, 0, 1, 0], (6, 1)), base)
        for p in decode_action_chunk(rel, base, ReprMode.RELATIVE):
            assert p.allclose(base, 1e-12)

    def test_wrong_base_uses_first_target(self):
        rng = np.random.default_rng(25)
        chunk = [random_pose(rng) for _ in range(4)]
        enc = encode_action_chunk(chunk, random_pose(rng), ReprMode.RELATIVE_WRONG_BASE)
        assert enc.base.allclose(chunk[0], 0)
        assert np.abs(enc.rel_poses[0] - [0, 0, 0, 1, 0, 0, 0, 1, 0]).max() < 1e-12

    def test_empty_chunk_rejected(self):
        with pytest.raises(ContractViolation):
            encode_action_chunk([], Pose.identity(), ReprMode.RELATIVE)

    def test_relative_mode_equivariance(self):
        rng = np.random.default_rng(26)
        for _ in range(50):
            base = random_pose(rng)
            chunk = [random_pose(rng) for _ in range(6)]
            g = random_pose(rng)
            enc = encode_action_chunk(chunk, base, ReprMode.RELATIVE)
            moved = decode_action_chunk(enc, g.compose(base), ReprMode.RELATIVE)
            for p, q in zip(chunk, moved):
                assert g.compose(p).allclose(q, 1e-9)

    def test_absolute_mode_not_equivariant(self):
        rng = np.random.default_rng(27)
        base = random_pose(rng)
        chunk = [random_pose(rng) for _ in range(6)]
        g = Pose([1.0, 0.0, 0.0], np.eye(3))
        enc = encode_action_chunk(chunk, base, ReprMode.ABSOLUTE)
        moved = decode_action_chunk(enc, g.compose(base), ReprMode.ABSOLUTE)
        assert any(not g.compose(p).allclose(q, 1e-6) for p, q in zip(chunk, moved))
