"""Rigid-transform math and the pose/action representation codecs.

A :class:`Pose` is a translation plus a 3x3 rotation matrix. Sequences of
poses (observation horizons, action chunks) are exchanged with learned models
in encoded form: translations stay Cartesian, rotations become 6D vectors
(the first two matrix columns), and every pose is expressed in the frame of a
"base pose" according to a :class:`ReprMode`.

All math is double precision. Input validation uses a 1e-6 orthonormality
tolerance; round-trip guarantees hold to 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ContractViolation, Degenerate6DError, InvalidRotationError

ORTHO_INPUT_TOL = 1e-6
ROUNDTRIP_TOL = 1e-9
_DEGENERATE_NORM = 1e-8


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(3).copy()
    v.flags.writeable = False
    return v


def _as_mat3(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64).reshape(3, 3).copy()
    m.flags.writeable = False
    return m


def check_rotation(rotation: np.ndarray, tol: float = ORTHO_INPUT_TOL) -> np.ndarray:
    """Validate that ``rotation`` is a proper rotation matrix within ``tol``."""
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidRotationError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidRotationError("rotation contains non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise InvalidRotationError(f"matrix is not orthonormal (|R^T R - I| = {err:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > max(tol, 1e-5):
        raise InvalidRotationError(f"matrix determinant {det:.6f} != +1")
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``translation`` in meters, ``rotation`` a proper 3x3 matrix."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", _as_vec3(self.translation))
        check_rotation(self.rotation)
        object.__setattr__(self, "rotation", _as_mat3(self.rotation))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    def compose(self, other: "Pose") -> "Pose":
        """self * other (apply ``other`` in this pose's frame)."""
        return Pose(
            self.translation + self.rotation @ other.translation,
            self.rotation @ other.rotation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(-rt @ self.translation, rt)

    def apply(self, point) -> np.ndarray:
        """Map a point from this pose's frame into the parent frame."""
        return self.translation + self.rotation @ np.asarray(point, dtype=np.float64)

    def relative_to(self, base: "Pose") -> "Pose":
        """This pose expressed in ``base``'s frame: base^-1 * self."""
        rt = base.rotation.T
        return Pose(rt @ (self.translation - base.translation), rt @ self.rotation)

    def allclose(self, other: "Pose", tol: float = ROUNDTRIP_TOL) -> bool:
        return (
            np.abs(self.translation - other.translation).max() <= tol
            and np.abs(self.rotation - other.rotation).max() <= tol
        )

    @property
    def yaw(self) -> float:
        """Rotation angle about +z (meaningful for planar poses)."""
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_axis(axis, angle: float) -> np.ndarray:
    """Rotation about an arbitrary unit axis (Rodrigues form)."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < _DEGENERATE_NORM:
        raise ContractViolation("rotation axis has near-zero norm")
    a = a / n
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rot_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic z-y-x convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return (
        rot_axis([0, 0, 1], yaw) @ rot_axis([0, 1, 0], pitch) @ rot_axis([1, 0, 0], roll)
    )


def planar_pose(x: float, y: float, yaw: float) -> Pose:
    """SE(2) pose embedded in SE(3): z = 0, rotation about +z."""
    return Pose(np.array([x, y, 0.0]), rot_z(yaw))


# ---------------------------------------------------------------------------
# 6D rotation codec
# ---------------------------------------------------------------------------

IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def encode_rot6d(rotation: np.ndarray) -> np.ndarray:
    """Encode a rotation matrix as its first two columns stacked into a 6-vector."""
    r = check_rotation(rotation)
    return np.concatenate([r[:, 0], r[:, 1]])


def decode_rot6d(values: np.ndarray) -> np.ndarray:
    """Recover a rotation matrix from a 6-vector by Gram-Schmidt.

    The first stored column is normalized, the second is orthogonalized
    against it, and the third column is their cross product. Inputs that are
    merely scaled or mildly perturbed versions of a valid encoding therefore
    decode to an exactly orthonormal matrix.
    """
    v = np.asarray(values, dtype=np.float64).reshape(6)
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na <= _DEGENERATE_NORM:
        raise Degenerate6DError(f"first column norm {na:.3e} too small to normalize")
    c0 = a / na
    b_perp = b - (c0 @ b) * c0
    nb = np.linalg.norm(b_perp)
    if nb <= _DEGENERATE_NORM:
        raise Degenerate6DError("columns are near-parallel; cannot orthogonalize")
    c1 = b_perp / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=1)


# ---------------------------------------------------------------------------
# Representation modes and encoded containers
# ---------------------------------------------------------------------------


class ReprMode(Enum):
    """Reference-frame convention for encoding a sequence of poses.

    ABSOLUTE: poses kept in the global frame (no base).
    DELTA: each pose relative to the immediately preceding one.
    RELATIVE: every pose relative to a single base pose, which must be the
        last observed proprioceptive end-effector pose.
    RELATIVE_WRONG_BASE: deliberately broken variant that bases the chunk on
        its own first target pose. Exists only so the corresponding ablation
        can be run; inference rejects it unless explicitly allowed.
    """

    ABSOLUTE = "absolute"
    DELTA = "delta"
    RELATIVE = "relative"
    RELATIVE_WRONG_BASE = "relative_wrong_base"


@dataclass(frozen=True)
class PoseHorizon:
    """Observation-side pose history. The last entry is the base pose."""

    poses: tuple[Pose, ...]
    timestamps: np.ndarray

    def __post_init__(self):
        if len(self.poses) == 0:
            raise ContractViolation("pose horizon must be non-empty")
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(len(self.poses)).copy()
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ContractViolation("horizon timestamps must be strictly increasing")
        ts.flags.writeable = False
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "timestamps", ts)

    @property
    def base(self) -> Pose:
        return self.poses[-1]


@dataclass(frozen=True)
class RelChunk:
    """Encoded action chunk: per-step (translation, 6D rotation) rows plus the base."""

    rel_poses: np.ndarray  # (H, 9): columns 0:3 translation, 3:9 rot6d
    base: Pose

    def __post_init__(self):
        arr = np.asarray(self.rel_poses, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 9 or arr.shape[0] == 0:
            raise ContractViolation(f"rel_poses must be (H, 9) with H >= 1, got {arr.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "rel_poses", arr)

    def __len__(self) -> int:
        return self.rel_poses.shape[0]


def pose_to_row(pose: Pose) -> np.ndarray:
    """[translation(3), rot6d(6)] row for one pose."""
    return np.concatenate([pose.translation, encode_rot6d(pose.rotation)])


def row_to_pose(row: np.ndarray) -> Pose:
    row = np.asarray(row, dtype=np.float64).reshape(9)
    return Pose(row[:3], decode_rot6d(row[3:]))


# ---------------------------------------------------------------------------
# State-horizon and action-chunk codecs
# ---------------------------------------------------------------------------


def encode_state_horizon(horizon: PoseHorizon) -> list[tuple[np.ndarray, np.ndarray]]:
    """Express each horizon pose relative to the base (the last entry).

    Entry k carries (R_base^T (T_k - T_base), rot6d(R_base^T R_k)); the last
    entry always encodes the identity pose.
    """
    base = horizon.base
    rt = base.rotation.T
    out = []
    for pose in horizon.poses:
        rel_t = rt @ (pose.translation - base.translation)
        rel_r = rt @ pose.rotation
        out.append((rel_t, encode_rot6d(rel_r)))
    return out


def encode_action_chunk(chunk: list[Pose], base: Pose, mode: ReprMode) -> RelChunk:
    """Encode a sequence of absolute target poses under ``mode``.

    RELATIVE requires ``base`` to be the last observed proprioceptive pose;
    RELATIVE_WRONG_BASE ignores ``base`` and uses the chunk's own first pose
    (the ablation variant); DELTA chains each pose off its predecessor with
    the first entry relative to ``base``; ABSOLUTE stores poses verbatim.
    """
    if len(chunk) == 0:
        raise ContractViolation("action chunk must be non-empty")
    if mode is ReprMode.ABSOLUTE:
        rows = [pose_to_row(p) for p in chunk]
        return RelChunk(np.stack(rows), Pose.identity())
    if mode is ReprMode.RELATIVE_WRONG_BASE:
        base = chunk[0]
    rows = []
    if mode is ReprMode.DELTA:
        prev = base
        for p in chunk:
            rows.append(pose_to_row(p.relative_to(prev)))
            prev = p
    else:
        for p in chunk:
            rows.append(pose_to_row(p.relative_to(base)))
    return RelChunk(np.stack(rows), base)


def decode_action_chunk(rel: RelChunk, base: Pose, mode: ReprMode) -> list[Pose]:
    """Invert :func:`encode_action_chunk` using ``base`` as the reference frame.

    For ABSOLUTE the rows already hold global poses and ``base`` is ignored.
    For RELATIVE_WRONG_BASE the math matches RELATIVE; callers supply
    whatever base frame their context provides, which is exactly where the
    ablation's train/inference mismatch comes from.
    """
    rows = rel.rel_poses
    out: list[Pose] = []
    if mode is ReprMode.ABSOLUTE:
        return [row_to_pose(r) for r in rows]
    if mode is ReprMode.DELTA:
        prev = base
        for r in rows:
            prev = prev.compose(row_to_pose(r))
            out.append(prev)
        return out
    for r in rows:
        out.append(base.compose(row_to_pose(r)))
    return out
