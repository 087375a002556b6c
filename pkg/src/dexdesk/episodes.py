"""Episode persistence.

One directory per episode: a human-readable ``header.json`` (meta, schema
version, stream table with per-file SHA-256 checksums) next to packed
little-endian float32 column files, one per stream, and raw uint8 RGB plane
files for cameras. Writes go to a temp directory first and are renamed into
place, so a crash never leaves a readable partial episode.

Streams (row counts all equal N):

    obs_ts.bin    float32 (N,)        observation timestamps, seconds
    obs_ee.bin    float32 (N, 12)     EE pose: translation xyz + rotation row-major
    obs_hand.bin  float32 (N, D)      hand joint angles, radians
    obs_feat.bin  float32 (N, F)      low-dimensional feature vector
    act_ee.bin    float32 (N, 12)     teleop target pose
    act_hand.bin  float32 (N, D)      teleop hand joint targets
    cam<k>.bin    uint8   (N, H, W, 3) camera k frames (values are v*255)

Optional opaque byte streams ``initial_state.bin`` / ``final_state.bin``
carry simulator snapshots for exact replay.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ContractViolation, CorruptEpisodeError, EpisodeNotFound
from .observations import Observation
from .poses import Pose

SCHEMA_VERSION = 1


class Label(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    UNLABELED = "unlabeled"


class FailureMode(Enum):
    UNSTABLE_GRASP = "unstable_grasp"
    NO_GRASP = "no_grasp"
    MISALIGNMENT = "misalignment"


class CurationFlag(Enum):
    NON_STABLE_GRASP = "non_stable_grasp"
    ERRATIC_MOTION = "erratic_motion"
    AMBIGUOUS_COMPLETION = "ambiguous_completion"


@dataclass(frozen=True)
class EpisodeMeta:
    episode_id: str
    task_name: str
    task_config_id: int
    label: Label = Label.UNLABELED
    distractors_present: bool = False
    is_correction: bool = False
    failure_mode: FailureMode | None = None
    curation_flags: frozenset[CurationFlag] = frozenset()
    collector_id: str = ""
    labeler_id: str = ""
    curator_id: str = ""
    audit: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.failure_mode is not None and self.label is not Label.FAILURE \
                and not self.is_correction:
            raise ContractViolation(
                "failure_mode may only be set on failures or correction episodes")
        object.__setattr__(self, "curation_flags", frozenset(self.curation_flags))
        object.__setattr__(self, "audit", tuple(self.audit))

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "task_name": self.task_name,
            "task_config_id": self.task_config_id,
            "label": self.label.value,
            "distractors_present": self.distractors_present,
            "is_correction": self.is_correction,
            "failure_mode": self.failure_mode.value if self.failure_mode else None,
            "curation_flags": sorted(f.value for f in self.curation_flags),
            "collector_id": self.collector_id,
            "labeler_id": self.labeler_id,
            "curator_id": self.curator_id,
            "audit": list(self.audit),
        }

    @staticmethod
    def from_json(d: dict) -> "EpisodeMeta":
        return EpisodeMeta(
            episode_id=d["episode_id"],
            task_name=d["task_name"],
            task_config_id=d["task_config_id"],
            label=Label(d["label"]),
            distractors_present=d["distractors_present"],
            is_correction=d["is_correction"],
            failure_mode=FailureMode(d["failure_mode"]) if d["failure_mode"] else None,
            curation_flags=frozenset(CurationFlag(v) for v in d["curation_flags"]),
            collector_id=d["collector_id"],
            labeler_id=d["labeler_id"],
            curator_id=d["curator_id"],
            audit=tuple(d["audit"]),
        )


def pose_to_f32_row(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.translation, pose.rotation.reshape(9)]).astype(np.float32)


def f32_row_to_pose(row: np.ndarray) -> Pose:
    row = np.asarray(row, dtype=np.float64)
    return Pose(row[:3], row[3:].reshape(3, 3))


@dataclass
class Episode:
    """Array-backed episode: streams plus metadata.

    ``images`` maps camera index to a uint8 (N, H, W, 3) array; convert with
    ``frame / 255.0`` to recover the unit-interval floats the renderer
    produced (renders are exact multiples of 1/255, so this is lossless).
    """

    meta: EpisodeMeta
    obs_ts: np.ndarray
    obs_ee: np.ndarray
    obs_hand: np.ndarray
    obs_feat: np.ndarray
    act_ee: np.ndarray
    act_hand: np.ndarray
    images: dict[int, np.ndarray] = field(default_factory=dict)
    initial_state: bytes = b""
    final_state: bytes = b""

    def __post_init__(self):
        n = len(self.obs_ts)
        for name in ("obs_ee", "obs_hand", "obs_feat", "act_ee", "act_hand"):
            if len(getattr(self, name)) != n:
                raise ContractViolation(f"stream {name} length != {n}")
        if n == 0:
            raise ContractViolation("episode must contain at least one step")
        if n > 1 and not np.all(np.diff(self.obs_ts.astype(np.float64)) > 0):
            raise ContractViolation("episode timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.obs_ts)

    @property
    def episode_id(self) -> str:
        return self.meta.episode_id

    def observation(self, i: int) -> Observation:
        imgs = tuple(self.images[k][i].astype(np.float64) / 255.0 for k in sorted(self.images))
        return Observation(
            timestamp=float(self.obs_ts[i]),
            ee_pose=f32_row_to_pose(self.obs_ee[i]),
            hand_joints=self.obs_hand[i].astype(np.float64),
            images=imgs,
            low_dim_features=self.obs_feat[i].astype(np.float64),
        )

    def target(self, i: int) -> tuple[Pose, np.ndarray]:
        return f32_row_to_pose(self.act_ee[i]), self.act_hand[i].astype(np.float64)


class EpisodeRecorder:
    """Accumulates (observation, teleop target) pairs into episode streams."""

    def __init__(self):
        self._ts: list[float] = []
        self._obs_ee: list[np.ndarray] = []
        self._obs_hand: list[np.ndarray] = []
        self._obs_feat: list[np.ndarray] = []
        self._act_ee: list[np.ndarray] = []
        self._act_hand: list[np.ndarray] = []
        self._frames: dict[int, list[np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self._ts)

    def append(self, obs: Observation, target_pose: Pose, target_hand: np.ndarray) -> None:
        self._ts.append(obs.timestamp)
        self._obs_ee.append(pose_to_f32_row(obs.ee_pose))
        self._obs_hand.append(obs.hand_joints.astype(np.float32))
        self._obs_feat.append(obs.low_dim_features.astype(np.float32))
        self._act_ee.append(pose_to_f32_row(target_pose))
        self._act_hand.append(np.asarray(target_hand, dtype=np.float32).reshape(-1))
        for k, im in enumerate(obs.images):
            q = np.rint(np.asarray(im) * 255.0).clip(0, 255).astype(np.uint8)
            self._frames.setdefault(k, []).append(q)

    def finish(self, meta: EpisodeMeta, initial_state: bytes = b"",
               final_state: bytes = b"") -> Episode:
        if not self._ts:
            raise ContractViolation("cannot finish an empty recording")
        return Episode(
            meta=meta,
            obs_ts=np.asarray(self._ts, dtype=np.float32),
            obs_ee=np.stack(self._obs_ee),
            obs_hand=np.stack(self._obs_hand),
            obs_feat=np.stack(self._obs_feat),
            act_ee=np.stack(self._act_ee),
            act_hand=np.stack(self._act_hand),
            images={k: np.stack(v) for k, v in self._frames.items()},
            initial_state=initial_state,
            final_state=final_state,
        )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class EpisodeStore:
    """Directory-per-episode store with checksummed streams.

    Layout: ``<root>/episodes/<id>/`` for episodes, ``<root>/scenes/<name>``
    for reset scenes. Multiple readers are safe; one writer per episode.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "episodes").mkdir(parents=True, exist_ok=True)
        (self.root / "scenes").mkdir(parents=True, exist_ok=True)

    # -- paths ------------------------------------------------------------
    def episode_dir(self, episode_id: str) -> Path:
        return self.root / "episodes" / episode_id

    def list_ids(self) -> list[str]:
        return sorted(p.name for p in (self.root / "episodes").iterdir() if p.is_dir())

    def __contains__(self, episode_id: str) -> bool:
        return self.episode_dir(episode_id).is_dir()

    # -- write ------------------------------------------------------------
    def write_episode(self, episode: Episode) -> str:
        eid = episode.episode_id
        final_dir = self.episode_dir(eid)
        if final_dir.exists():
            raise ContractViolation(f"episode '{eid}' already exists")
        tmp_dir = self.root / "episodes" / f".tmp-{eid}-{uuid.uuid4().hex[:8]}"
        tmp_dir.mkdir(parents=True)
        try:
            streams: dict[str, dict] = {}

            def put(name: str, arr: np.ndarray):
                data = np.ascontiguousarray(arr).tobytes()
                (tmp_dir / f"{name}.bin").write_bytes(data)
                streams[name] = {
                    "dtype": str(arr.dtype),
                    "shape": list(arr.shape),
                    "sha256": _sha256(data),
                }

            put("obs_ts", episode.obs_ts.astype("<f4"))
            put("obs_ee", episode.obs_ee.astype("<f4"))
            put("obs_hand", episode.obs_hand.astype("<f4"))
            put("obs_feat", episode.obs_feat.astype("<f4"))
            put("act_ee", episode.act_ee.astype("<f4"))
            put("act_hand", episode.act_hand.astype("<f4"))
            for k in sorted(episode.images):
                put(f"cam{k}", episode.images[k].astype(np.uint8))
            blobs = {}
            for name, data in (("initial_state", episode.initial_state),
                               ("final_state", episode.final_state)):
                if data:
                    (tmp_dir / f"{name}.bin").write_bytes(data)
                    blobs[name] = {"bytes": len(data), "sha256": _sha256(data)}

            header = {
                "schema_version": SCHEMA_VERSION,
                "meta": episode.meta.to_json(),
                "streams": streams,
                "blobs": blobs,
            }
            (tmp_dir / "header.json").write_text(
                json.dumps(header, sort_keys=True, indent=1) + "\n")
            os.rename(tmp_dir, final_dir)
        except BaseException:
            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise
        return eid

    # -- read -------------------------------------------------------------
    def _read_header(self, episode_id: str) -> dict:
        path = self.episode_dir(episode_id) / "header.json"
        if not path.is_file():
            raise EpisodeNotFound(episode_id)
        header = json.loads(path.read_text())
        if header.get("schema_version") != SCHEMA_VERSION:
            raise CorruptEpisodeError(
                f"episode '{episode_id}': unsupported schema {header.get('schema_version')}")
        return header

    def read_meta(self, episode_id: str) -> EpisodeMeta:
        return EpisodeMeta.from_json(self._read_header(episode_id)["meta"])

    def read_episode(self, episode_id: str) -> Episode:
        header = self._read_header(episode_id)
        ep_dir = self.episode_dir(episode_id)
        arrays: dict[str, np.ndarray] = {}
        images: dict[int, np.ndarray] = {}
        for name, info in header["streams"].items():
            data = (ep_dir / f"{name}.bin").read_bytes()
            if _sha256(data) != info["sha256"]:
                raise CorruptEpisodeError(f"episode '{episode_id}': checksum mismatch in {name}")
            arr = np.frombuffer(data, dtype=np.dtype(info["dtype"]))
            expected = int(np.prod(info["shape"]))
            if arr.size != expected:
                raise CorruptEpisodeError(f"episode '{episode_id}': {name} truncated")
            arr = arr.reshape(info["shape"])
            if name.startswith("cam"):
                images[int(name[3:])] = arr
            else:
                arrays[name] = arr
        blobs = {}
        for name, info in header.get("blobs", {}).items():
            data = (ep_dir / f"{name}.bin").read_bytes()
            if _sha256(data) != info["sha256"]:
                raise CorruptEpisodeError(f"episode '{episode_id}': checksum mismatch in {name}")
            blobs[name] = data
        return Episode(
            meta=EpisodeMeta.from_json(header["meta"]),
            obs_ts=arrays["obs_ts"],
            obs_ee=arrays["obs_ee"],
            obs_hand=arrays["obs_hand"],
            obs_feat=arrays["obs_feat"],
            act_ee=arrays["act_ee"],
            act_hand=arrays["act_hand"],
            images=images,
            initial_state=blobs.get("initial_state", b""),
            final_state=blobs.get("final_state", b""),
        )

    # -- meta updates -----------------------------------------------------
    def _rewrite_meta(self, episode_id: str, meta: EpisodeMeta) -> None:
        header = self._read_header(episode_id)
        header["meta"] = meta.to_json()
        path = self.episode_dir(episode_id) / "header.json"
        tmp = path.with_suffix(f".tmp-{uuid.uuid4().hex[:8]}")
        tmp.write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, path)

    def label_episode(self, episode_id: str, label: Label,
                      failure_mode: FailureMode | None = None,
                      labeler_id: str = "", at: float = 0.0) -> EpisodeMeta:
        """Record a label with an audit-trail entry; relabeling appends."""
        meta = self.read_meta(episode_id)
        event = {
            "event": "label",
            "label": label.value,
            "failure_mode": failure_mode.value if failure_mode else None,
            "by": labeler_id,
            "at": at,
        }
        meta = replace(
            meta,
            label=label,
            failure_mode=failure_mode if failure_mode else meta.failure_mode,
            labeler_id=labeler_id or meta.labeler_id,
            audit=meta.audit + (event,),
        )
        self._rewrite_meta(episode_id, meta)
        return meta

    def set_curation(self, episode_id: str, flags: frozenset[CurationFlag],
                     curator_id: str, at: float = 0.0) -> EpisodeMeta:
        meta = self.read_meta(episode_id)
        event = {
            "event": "curate",
            "flags": sorted(f.value for f in flags),
            "by": curator_id,
            "at": at,
        }
        meta = replace(meta, curation_flags=frozenset(flags), curator_id=curator_id,
                       audit=meta.audit + (event,))
        self._rewrite_meta(episode_id, meta)
        return meta

    # -- reset scenes -------------------------------------------------------
    def save_reset_scene(self, scene: "ResetScene") -> str:
        path = self.root / "scenes" / f"{scene.name}.json"
        doc = {
            "name": scene.name,
            "failure_mode": scene.failure_mode.value,
            "source_annotation": scene.source_annotation,
            "snapshot_hex": scene.snapshot.hex(),
            "sha256": _sha256(scene.snapshot),
        }
        tmp = path.with_suffix(f".tmp-{uuid.uuid4().hex[:8]}")
        tmp.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, path)
        return scene.name

    def load_reset_scene(self, name: str) -> "ResetScene":
        path = self.root / "scenes" / f"{name}.json"
        if not path.is_file():
            raise EpisodeNotFound(name)
        doc = json.loads(path.read_text())
        snapshot = bytes.fromhex(doc["snapshot_hex"])
        if _sha256(snapshot) != doc["sha256"]:
            raise CorruptEpisodeError(f"reset scene '{name}': checksum mismatch")
        return ResetScene(doc["name"], snapshot, FailureMode(doc["failure_mode"]),
                          doc["source_annotation"])

    def list_reset_scenes(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "scenes").glob("*.json"))


@dataclass(frozen=True)
class ResetScene:
    """A stored simulator snapshot reproducing an annotated failure state."""

    name: str
    snapshot: bytes
    failure_mode: FailureMode
    source_annotation: str = ""

    def __post_init__(self):
        if not self.snapshot:
            raise ContractViolation("reset scene requires a non-empty snapshot")
