"""Coupled kinematic hand models and forward kinematics.

A hand is a tree of revolute links. Joint angles are not actuated directly:
a coupling matrix maps D actuated degrees of freedom to the J joint angles
(rows with several nonzero entries realize underactuated/coupled joints, a
zero row is a fixed link such as the palm).

Frame convention per link i with parent p and joint angle theta_i:

    world_i = world_p * offset_i * Rot(axis_i, theta_i)

so the joint axis lives in the post-offset frame. The palm and five
fingertip frames are what downstream consumers (retargeting, grasp checks)
care about.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .poses import Pose, rot_axis, rot_rpy


@dataclass(frozen=True)
class Link:
    parent: int  # -1 for the hand base
    offset: Pose  # fixed transform from parent frame to the joint frame
    axis: np.ndarray  # unit revolute axis in the joint frame

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64).reshape(3).copy()
        n = np.linalg.norm(a)
        if n < 1e-9:
            raise ContractViolation("link axis must be nonzero")
        a /= n
        a.flags.writeable = False
        object.__setattr__(self, "axis", a)


@dataclass(frozen=True)
class HandModel:
    links: tuple[Link, ...]
    actuation: np.ndarray  # (J, D): joint_angles = actuation @ dof
    limits: np.ndarray  # (D, 2) per-DoF (min, max) radians
    fingertips: tuple[int, ...]  # 5 frame indices
    palm: int  # palm frame index

    def __post_init__(self):
        j = len(self.links)
        act = np.asarray(self.actuation, dtype=np.float64).copy()
        if act.ndim != 2 or act.shape[0] != j:
            raise ContractViolation(f"actuation must have {j} rows, got {act.shape}")
        lim = np.asarray(self.limits, dtype=np.float64).copy()
        if lim.shape != (act.shape[1], 2):
            raise ContractViolation(f"limits must be ({act.shape[1]}, 2), got {lim.shape}")
        if not np.all(lim[:, 0] < lim[:, 1]):
            raise ContractViolation("every DoF needs min < max")
        if len(self.fingertips) != 5:
            raise ContractViolation("exactly five fingertip frames required")
        for idx in (*self.fingertips, self.palm):
            if not (0 <= idx < j):
                raise ContractViolation(f"frame index {idx} out of range")
        for i, link in enumerate(self.links):
            if not (-1 <= link.parent < i):
                raise ContractViolation("links must be topologically ordered (parent < child)")
        act.flags.writeable = False
        lim.flags.writeable = False
        object.__setattr__(self, "actuation", act)
        object.__setattr__(self, "limits", lim)
        object.__setattr__(self, "fingertips", tuple(self.fingertips))
        chains: list[tuple[int, ...]] = []
        for i, link in enumerate(self.links):
            chain = () if link.parent < 0 else chains[link.parent]
            chains.append(chain + (i,))
        object.__setattr__(self, "_chains", tuple(chains))

    @property
    def dof(self) -> int:
        return self.actuation.shape[1]

    @property
    def n_joints(self) -> int:
        return len(self.links)

    def clamp(self, dof: np.ndarray) -> np.ndarray:
        return np.clip(dof, self.limits[:, 0], self.limits[:, 1])

    def mid_dof(self) -> np.ndarray:
        return 0.5 * (self.limits[:, 0] + self.limits[:, 1])


@dataclass(frozen=True)
class HandFrames:
    palm: Pose
    tips: tuple[Pose, ...]
    all_frames: tuple[Pose, ...]


def _fk_arrays(model: HandModel, joint_angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotations (J,3,3) and origins (J,3) of every link frame, array-only hot path."""
    j = model.n_joints
    rots = np.empty((j, 3, 3))
    origs = np.empty((j, 3))
    cos = np.cos(joint_angles)
    sin = np.sin(joint_angles)
    for i, link in enumerate(model.links):
        if link.parent < 0:
            pr, pt = _EYE3, _ZERO3
        else:
            pr, pt = rots[link.parent], origs[link.parent]
        jr = pr @ link.offset.rotation
        origs[i] = pt + pr @ link.offset.translation
        # Rodrigues about the (unit) link axis
        a = link.axis
        k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
        rot = _EYE3 + sin[i] * k + (1.0 - cos[i]) * (k @ k)
        rots[i] = jr @ rot
    return rots, origs


_EYE3 = np.eye(3)
_ZERO3 = np.zeros(3)


def _validated_dof(model: HandModel, dof: np.ndarray, warn: bool = True) -> np.ndarray:
    q = np.asarray(dof, dtype=np.float64).reshape(-1)
    if q.shape[0] != model.dof:
        raise ContractViolation(f"expected {model.dof} dof, got {q.shape[0]}")
    clamped = model.clamp(q)
    if warn and np.abs(clamped - q).max() > 1e-12:
        warnings.warn("dof outside joint limits; clamped", stacklevel=3)
    return clamped


def fk_points(model: HandModel, dof: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Palm position and (5,3) fingertip positions; cheap path for solvers."""
    q = _validated_dof(model, dof, warn=False)
    _, origs = _fk_arrays(model, model.actuation @ q)
    return origs[model.palm].copy(), origs[list(model.fingertips)].copy()


def forward_kinematics(model: HandModel, dof: np.ndarray) -> HandFrames:
    """Palm and fingertip frames (in the hand-base frame) for actuated angles ``dof``.

    Out-of-limit values are clamped with a warning rather than rejected, so a
    sloppy caller degrades gracefully during teleoperation.
    """
    q = _validated_dof(model, dof)
    rots, origs = _fk_arrays(model, model.actuation @ q)
    poses = tuple(Pose(origs[i], rots[i]) for i in range(model.n_joints))
    return HandFrames(
        palm=poses[model.palm],
        tips=tuple(poses[i] for i in model.fingertips),
        all_frames=poses,
    )


def point_jacobians(model: HandModel, dof: np.ndarray) -> np.ndarray:
    """d(position)/d(dof) for the palm and fingertip frames.

    Returns (6, 3, D): row 0 is the palm, rows 1..5 the fingertips. Uses the
    revolute-axis formula dp/dtheta_j = w_j x (p - o_j) for each ancestor
    joint j, then chains through the coupling matrix.
    """
    q = _validated_dof(model, dof, warn=False)
    rots, origs = _fk_arrays(model, model.actuation @ q)

    # world axis and origin of each joint (the post-offset frame)
    axes = np.empty((model.n_joints, 3))
    for i, link in enumerate(model.links):
        pr = _EYE3 if link.parent < 0 else rots[link.parent]
        axes[i] = (pr @ link.offset.rotation) @ link.axis

    chains = model._chains
    targets = (model.palm, *model.fingertips)
    jac = np.zeros((len(targets), 3, model.dof))
    for row, fi in enumerate(targets):
        p = origs[fi]
        j_joint = np.zeros((3, model.n_joints))
        for j in chains[fi]:
            j_joint[:, j] = np.cross(axes[j], p - origs[j])
        jac[row] = j_joint @ model.actuation
    return jac


# ---------------------------------------------------------------------------
# Declarative model file format
# ---------------------------------------------------------------------------
#
#   hand-model v1
#   link <name> parent=<int> t=<x>,<y>,<z> r=<r00>,...,<r22> axis=<x>,<y>,<z>
#   dof <name> min=<float> max=<float>
#   couple joint=<int> dof=<int> ratio=<float>
#   palm <int>
#   tips <i>,<i>,<i>,<i>,<i>
#
# Floats are written with repr(), which is exact for doubles, so
# load(save(model)) reproduces every array bit for bit.

_HEADER = "hand-model v1"


def _fmt_floats(values) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def save_hand_model(model: HandModel, names: list[str] | None = None,
                    dof_names: list[str] | None = None) -> str:
    names = names or [f"link{i}" for i in range(model.n_joints)]
    dof_names = dof_names or [f"dof{i}" for i in range(model.dof)]
    out = io.StringIO()
    out.write(_HEADER + "\n")
    for name, link in zip(names, model.links):
        out.write(
            f"link {name} parent={link.parent} t={_fmt_floats(link.offset.translation)} "
            f"r={_fmt_floats(link.offset.rotation)} axis={_fmt_floats(link.axis)}\n"
        )
    for name, (lo, hi) in zip(dof_names, model.limits):
        out.write(f"dof {name} min={float(lo)!r} max={float(hi)!r}\n")
    rows, cols = np.nonzero(model.actuation)
    for j, d in zip(rows, cols):
        out.write(f"couple joint={j} dof={d} ratio={float(model.actuation[j, d])!r}\n")
    out.write(f"palm {model.palm}\n")
    out.write("tips " + ",".join(str(i) for i in model.fingertips) + "\n")
    return out.getvalue()


def load_hand_model(text: str) -> HandModel:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != _HEADER:
        raise ContractViolation(f"expected header '{_HEADER}'")

    links: list[Link] = []
    limits: list[tuple[float, float]] = []
    couples: list[tuple[int, int, float]] = []
    palm = None
    tips: tuple[int, ...] | None = None

    def kv(tokens: list[str]) -> dict[str, str]:
        return dict(tok.split("=", 1) for tok in tokens)

    for ln in lines[1:]:
        parts = ln.split()
        kind = parts[0]
        if kind == "link":
            fields = kv(parts[2:])
            t = [float(v) for v in fields["t"].split(",")]
            r = np.array([float(v) for v in fields["r"].split(",")]).reshape(3, 3)
            axis = [float(v) for v in fields["axis"].split(",")]
            links.append(Link(int(fields["parent"]), Pose(t, r), axis))
        elif kind == "dof":
            fields = kv(parts[2:])
            limits.append((float(fields["min"]), float(fields["max"])))
        elif kind == "couple":
            fields = kv(parts[1:])
            couples.append((int(fields["joint"]), int(fields["dof"]), float(fields["ratio"])))
        elif kind == "palm":
            palm = int(parts[1])
        elif kind == "tips":
            tips = tuple(int(v) for v in parts[1].split(","))
        else:
            raise ContractViolation(f"unknown record kind '{kind}'")

    if palm is None or tips is None:
        raise ContractViolation("model file missing palm or tips record")
    actuation = np.zeros((len(links), len(limits)))
    for j, d, ratio in couples:
        actuation[j, d] = ratio
    return HandModel(tuple(links), actuation, np.array(limits), tips, palm)


# ---------------------------------------------------------------------------
# Shipped models
# ---------------------------------------------------------------------------


def planar_gripper_model() -> HandModel:
    """Planar five-tip pincer used by the simulator: 2 actuated DoF.

    DoF 0 drives the thumb joint, DoF 1 drives the four finger joints; angle
    0 is fully closed, the upper limit fully open. Finger pairs mirror each
    other so their sideways drift cancels and the jaw gap stays centered.
    Everything lives in the z=0 plane of the hand base (the EE frame).

    Jaw gap between thumb tip and finger tips: 0.11 - 0.08 cos(q), i.e.
    0.030 m closed, 0.081 m fully open.
    """
    links = [Link(-1, Pose.identity(), [0, 0, 1])]  # palm, fixed
    # thumb: base on -y side, segment points +y (toward the center line) when closed
    links.append(Link(0, Pose([0.0, -0.055, 0.0], rot_rpy(0, 0, np.pi / 2)), [0, 0, 1]))
    links.append(Link(1, Pose([0.04, 0.0, 0.0], np.eye(3)), [0, 0, 1]))  # thumb tip carrier
    tip_indices = [2]
    # four fingers: bases spread along x on +y side, segments point -y when closed
    for dx in (-0.03, -0.01, 0.01, 0.03):
        base_idx = len(links)
        links.append(Link(0, Pose([dx, 0.055, 0.0], rot_rpy(0, 0, -np.pi / 2)), [0, 0, 1]))
        links.append(Link(base_idx, Pose([0.04, 0.0, 0.0], np.eye(3)), [0, 0, 1]))
        tip_indices.append(base_idx + 1)

    act = np.zeros((len(links), 2))
    act[1, 0] = -1.0  # thumb swings away from the center line as dof grows
    for base_idx, sign in zip((3, 5, 7, 9), (1.0, 1.0, -1.0, -1.0)):
        act[base_idx, 1] = sign
    limits = np.array([[0.0, 1.2], [0.0, 1.2]])
    return HandModel(tuple(links), act, limits, tuple(tip_indices), palm=0)


def dexterous_hand_model() -> HandModel:
    """Five-finger 3D hand: 20 revolute joints driven by 16 actuated DoF.

    The thumb is fully actuated (4 DoF, 4 joints). Each of the four fingers
    has 4 joints (abduction, MCP, PIP, DIP) on 3 DoF, the DIP coupled to the
    PIP at a 0.7 ratio.
    """
    links: list[Link] = [Link(-1, Pose.identity(), [0, 0, 1])]  # palm
    joint_rows: list[tuple[int, int, float]] = []  # (joint, dof, ratio)
    tips: list[int] = []
    dof_limits: list[tuple[float, float]] = []
    dof_count = 0

    def add_joint(parent, t, rpy, axis, dof_idx, ratio=1.0):
        links.append(Link(parent, Pose(t, rot_rpy(*rpy)), axis))
        joint_rows.append((len(links) - 1, dof_idx, ratio))
        return len(links) - 1

    # thumb: sticks out sideways, 4 independent joints
    d0 = dof_count
    dof_limits += [(-0.5, 0.8), (-0.3, 1.4), (0.0, 1.2), (0.0, 1.2)]
    dof_count += 4
    j = add_joint(0, [0.02, -0.03, 0.0], (0, 0, -0.9), [0, 0, 1], d0)  # CMC abduction
    j = add_joint(j, [0.03, 0.0, 0.0], (np.pi / 2, 0, 0), [0, 0, 1], d0 + 1)  # CMC flexion
    j = add_joint(j, [0.035, 0.0, 0.0], (0, 0, 0), [0, 0, 1], d0 + 2)  # MCP
    j = add_joint(j, [0.03, 0.0, 0.0], (0, 0, 0), [0, 0, 1], d0 + 3)  # IP
    links.append(Link(j, Pose([0.025, 0.0, 0.0], np.eye(3)), [0, 0, 1]))
    tips.append(len(links) - 1)

    # fingers: index, middle, ring, pinky
    for bx, by in [(0.09, -0.025), (0.095, 0.0), (0.09, 0.025), (0.08, 0.05)]:
        da = dof_count
        dof_limits += [(-0.35, 0.35), (-0.2, 1.6), (0.0, 1.7)]
        dof_count += 3
        j = add_joint(0, [bx, by, 0.0], (0, 0, 0), [0, 0, 1], da)  # abduction about z
        j = add_joint(j, [0.005, 0.0, 0.0], (np.pi / 2, 0, 0), [0, 0, 1], da + 1)  # MCP flex
        j = add_joint(j, [0.045, 0.0, 0.0], (0, 0, 0), [0, 0, 1], da + 2)  # PIP
        j = add_joint(j, [0.03, 0.0, 0.0], (0, 0, 0), [0, 0, 1], da + 2, ratio=0.7)  # DIP
        links.append(Link(j, Pose([0.022, 0.0, 0.0], np.eye(3)), [0, 0, 1]))
        tips.append(len(links) - 1)

    act = np.zeros((len(links), dof_count))
    for joint, dof_idx, ratio in joint_rows:
        act[joint, dof_idx] = ratio
    return HandModel(tuple(links), act, np.array(dof_limits), tuple(tips), palm=0)


def random_hand_model(rng: np.random.Generator) -> HandModel:
    """Randomized five-finger chain for solver stress tests and demos."""
    links: list[Link] = [Link(-1, Pose.identity(), [0, 0, 1])]
    rows: list[tuple[int, int, float]] = []
    tips: list[int] = []
    dof_limits: list[tuple[float, float]] = []
    dof = 0
    angles = np.linspace(-0.8, 0.8, 5) + rng.uniform(-0.1, 0.1, size=5)
    for f in range(5):
        n_joints = int(rng.integers(2, 4))
        base_r = rng.uniform(0.02, 0.05)
        base = [base_r * np.cos(angles[f]), base_r * np.sin(angles[f]), 0.0]
        parent = 0
        first = True
        for k in range(n_joints):
            length = rng.uniform(0.025, 0.05)
            offset = base if first else [length, 0.0, 0.0]
            rpy = (rng.uniform(0.6, 1.2), 0.0, angles[f]) if first else (0.0, 0.0, 0.0)
            links.append(Link(parent, Pose(offset, rot_rpy(*rpy)), [0, 0, 1]))
            parent = len(links) - 1
            if k == n_joints - 1 and rng.uniform() < 0.5 and k > 0:
                rows.append((parent, dof - 1, float(rng.uniform(0.5, 0.9))))  # coupled distal
            else:
                rows.append((parent, dof, 1.0))
                dof_limits.append((-0.2, 1.5))
                dof += 1
            first = False
        links.append(Link(parent, Pose([rng.uniform(0.02, 0.04), 0.0, 0.0], np.eye(3)), [0, 0, 1]))
        tips.append(len(links) - 1)
    act = np.zeros((len(links), dof))
    for joint, d, ratio in rows:
        act[joint, d] = ratio
    return HandModel(tuple(links), act, np.array(dof_limits), tuple(tips), palm=0)
