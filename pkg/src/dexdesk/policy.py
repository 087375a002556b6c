"""Policy-side glue: normalization, conditioning, samples, chunk inference.

Conditioning layout, per horizon step (oldest first, base last):

    [ relative EE pose: translation(3) + rot6d(6), normalized ]
    [ absolute hand joints (D), normalized ]
    [ encoder features (F), as produced by the observation encoder ]

The action vector x0 is the flattened (H_a, 9 + D) array of per-step
[relative EE pose | absolute hand joints] rows, normalized per step
dimension. The relative encodings use the last observed proprioceptive EE
pose as the base (see poses.ReprMode for the alternatives and the
deliberately wrong ablation variant).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import augment_image, center_crop
from .diffusion import NoiseSchedule, ddim_sample
from .episodes import Episode
from .errors import ContractViolation, Degenerate6DError, InferenceError
from .observations import Observation
from .poses import Pose, ReprMode, encode_action_chunk, row_to_pose

H_O_DEFAULT = 2
H_A_DEFAULT = 48
CONTROL_RATE_HZ = 15.0
CROP_RATIO_DEFAULT = 0.95


@dataclass(frozen=True)
class PolicyConfig:
    h_o: int = H_O_DEFAULT
    h_a: int = H_A_DEFAULT
    rate_hz: float = CONTROL_RATE_HZ
    repr_mode: ReprMode = ReprMode.RELATIVE
    encoder: str = "lowdim"  # lowdim | lowdim+raster
    crop_ratio: float = CROP_RATIO_DEFAULT
    allow_wrong_base: bool = False
    project_low_dim: bool = False  # optional linear projection of low-dim inputs
    ddim_steps: int = 16

    def __post_init__(self):
        if self.h_o < 0 or self.h_a < 1:
            raise ContractViolation("need h_o >= 0 and h_a >= 1")

    @property
    def horizon_len(self) -> int:
        return self.h_o + 1

    @property
    def chunk_seconds(self) -> float:
        return self.h_a / self.rate_hz


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class Normalizer:
    """Per-dimension affine maps into [-1, 1] from training-set min/max.

    Two tables: one for per-step proprio rows [rel pose(9) | joints(D)] and
    one for per-step action rows of the same layout. Constant dimensions are
    epsilon-expanded so the map stays invertible.
    """

    proprio_center: np.ndarray
    proprio_half: np.ndarray
    action_center: np.ndarray
    action_half: np.ndarray

    EPS = 1e-6

    @staticmethod
    def _fit_table(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lo = rows.min(axis=0)
        hi = rows.max(axis=0)
        center = 0.5 * (lo + hi)
        half = np.maximum(0.5 * (hi - lo), Normalizer.EPS / 2)
        return center, half

    @staticmethod
    def fit(proprio_rows: np.ndarray, action_rows: np.ndarray) -> "Normalizer":
        if len(proprio_rows) == 0 or len(action_rows) == 0:
            raise ContractViolation("cannot fit a normalizer on an empty dataset")
        pc, ph = Normalizer._fit_table(np.asarray(proprio_rows, dtype=np.float64))
        ac, ah = Normalizer._fit_table(np.asarray(action_rows, dtype=np.float64))
        return Normalizer(pc, ph, ac, ah)

    def normalize_proprio(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.proprio_center) / self.proprio_half

    def normalize_action(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.action_center) / self.action_half

    def denormalize_action(self, rows: np.ndarray) -> np.ndarray:
        return rows * self.action_half + self.action_center

    def denormalize_proprio(self, rows: np.ndarray) -> np.ndarray:
        return rows * self.proprio_half + self.proprio_center


def pose_rows(poses: list[Pose], base: Pose, mode: ReprMode) -> np.ndarray:
    return encode_action_chunk(poses, base, mode).rel_poses


def _split_pose_stream(stream_f32: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr = stream_f32.astype(np.float64)
    return arr[:, :3], arr[:, 3:].reshape(-1, 3, 3)


def _rel_rows(R_base, T_base, R_other, T_other) -> np.ndarray:
    """Batched [R_b^T (T_o - T_b) | rot6d(R_b^T R_o)] rows."""
    rel_t = np.einsum("nji,nj->ni", R_base, T_other - T_base)
    rel_r = np.einsum("nji,njk->nik", R_base, R_other)
    return np.concatenate([rel_t, rel_r[:, :, 0], rel_r[:, :, 1]], axis=1)


def _abs_rows(R, T) -> np.ndarray:
    return np.concatenate([T, R[:, :, 0], R[:, :, 1]], axis=1)


def episode_raw_rows(episode: Episode, cfg: PolicyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Un-normalized per-timestep rows, vectorized over the episode.

    Returns (proprio (N, H_o+1, 9+D), action (N, H_a, 9+D)); index [t, k]
    holds the row for horizon/chunk offset k anchored at timestep t, with
    repeat-padded edges. Matches build_training_sample row for row.
    """
    n = len(episode)
    T_obs, R_obs = _split_pose_stream(episode.obs_ee)
    T_act, R_act = _split_pose_stream(episode.act_ee)
    hand_obs = episode.obs_hand.astype(np.float64)
    hand_act = episode.act_hand.astype(np.float64)
    d = hand_obs.shape[1]
    ts = np.arange(n)

    prop = np.empty((n, cfg.horizon_len, 9 + d))
    for k in range(cfg.horizon_len):
        idx = np.maximum(ts - (cfg.h_o - k), 0)
        prop[:, k, :9] = _rel_rows(R_obs, T_obs, R_obs[idx], T_obs[idx])
        prop[:, k, 9:] = hand_obs[idx]

    act = np.empty((n, cfg.h_a, 9 + d))
    mode = cfg.repr_mode
    if mode is ReprMode.RELATIVE_WRONG_BASE:
        base_T, base_R = T_act, R_act
    else:
        base_T, base_R = T_obs, R_obs
    for j in range(cfg.h_a):
        idx = np.minimum(ts + j, n - 1)
        if mode is ReprMode.ABSOLUTE:
            act[:, j, :9] = _abs_rows(R_act[idx], T_act[idx])
        elif mode is ReprMode.DELTA:
            prev = np.minimum(ts + j - 1, n - 1)
            if j == 0:
                act[:, j, :9] = _rel_rows(R_obs, T_obs, R_act[idx], T_act[idx])
            else:
                act[:, j, :9] = _rel_rows(R_act[prev], T_act[prev], R_act[idx], T_act[idx])
        else:
            act[:, j, :9] = _rel_rows(base_R, base_T, R_act[idx], T_act[idx])
        act[:, j, 9:] = hand_act[idx]
    return prop, act


def fit_normalizer(episodes: list[Episode], cfg: PolicyConfig) -> Normalizer:
    """Training-set min/max over every proprio and action row the sampler
    can produce (all horizon offsets, all chunk offsets, repeat-padded edges)."""
    if not episodes:
        raise ContractViolation("cannot fit a normalizer on an empty dataset")
    prop, act = [], []
    for ep in episodes:
        p, a = episode_raw_rows(ep, cfg)
        prop.append(p.reshape(-1, p.shape[2]))
        act.append(a.reshape(-1, a.shape[2]))
    return Normalizer.fit(np.concatenate(prop), np.concatenate(act))


def build_dataset_arrays(episodes: list[Episode], cfg: PolicyConfig,
                         normalizer: Normalizer, encoder) -> tuple[np.ndarray, np.ndarray]:
    """All (x0, condition) pairs of a low-dim dataset as two dense arrays.

    Fast path for training; agrees with build_training_sample sample for
    sample (tested). Only valid for encoders that ignore images, since no
    augmentation is applied here.
    """
    if getattr(encoder, "n_cameras", 0) > 0:
        raise ContractViolation("dense dataset arrays require an image-free encoder")
    xs, cs = [], []
    for ep in episodes:
        n = len(ep)
        prop, act = episode_raw_rows(ep, cfg)
        x0 = normalizer.normalize_action(
            act.reshape(-1, act.shape[2])).reshape(n, -1)
        prop_n = normalizer.normalize_proprio(
            prop.reshape(-1, prop.shape[2])).reshape(n, cfg.horizon_len, -1)
        feats = np.stack([
            encoder.encode((), ep.obs_feat[i].astype(np.float64)) for i in range(n)])
        ts = np.arange(n)
        blocks = []
        for k in range(cfg.horizon_len):
            idx = np.maximum(ts - (cfg.h_o - k), 0)
            blocks.append(np.concatenate([prop_n[:, k, :], feats[idx]], axis=1))
        cs.append(np.concatenate(blocks, axis=1))
        xs.append(x0)
    return np.concatenate(xs), np.concatenate(cs)


# ---------------------------------------------------------------------------
# Observation encoders
# ---------------------------------------------------------------------------


class LowDimEncoder:
    """Passes the environment's low-dimensional features through.

    With ``project_low_dim`` a fixed seeded linear map stands in for the
    projection layer; by default features are concatenated unprojected.
    """

    name = "lowdim"

    def __init__(self, feature_dim: int, project: bool = False, out_dim: int | None = None,
                 seed: int = 0):
        self.feature_dim = feature_dim
        self.project = project
        if project:
            out = out_dim or feature_dim
            rng = np.random.default_rng(seed)
            self.weight = rng.normal(scale=1.0 / np.sqrt(feature_dim),
                                     size=(feature_dim, out))
            self.out_dim = out
        else:
            self.weight = None
            self.out_dim = feature_dim

    def encode(self, images: tuple[np.ndarray, ...], low_dim: np.ndarray) -> np.ndarray:
        feats = np.asarray(low_dim, dtype=np.float64).reshape(-1)
        if feats.size != self.feature_dim:
            raise ContractViolation(
                f"expected {self.feature_dim} low-dim features, got {feats.size}")
        if self.project:
            return feats @ self.weight
        return feats.copy()

    def get_params(self) -> np.ndarray:
        return np.zeros(0)

    def set_params(self, flat: np.ndarray) -> None:
        if np.asarray(flat).size:
            raise ContractViolation("lowdim encoder has no trainable parameters")


class RasterPatchEncoder:
    """Low-dim passthrough plus a tiny trainable raster featurizer.

    Each camera image is mean-pooled over an 8x8 patch grid and mapped by a
    linear layer whose weights are shared across all camera streams; the
    per-camera outputs are concatenated after the low-dim block.
    """

    name = "lowdim+raster"
    PATCH_GRID = 8

    def __init__(self, feature_dim: int, n_cameras: int, image_size: int,
                 out_per_camera: int = 8, seed: int = 0):
        self.feature_dim = feature_dim
        self.n_cameras = n_cameras
        self.image_size = image_size
        self.patch_dim = self.PATCH_GRID * self.PATCH_GRID * 3
        self.out_per_camera = out_per_camera
        rng = np.random.default_rng(seed)
        self.weight = rng.normal(scale=1.0 / np.sqrt(self.patch_dim),
                                 size=(self.patch_dim, out_per_camera))
        self.bias = np.zeros(out_per_camera)
        self.out_dim = feature_dim + n_cameras * out_per_camera

    def patch_features(self, image: np.ndarray) -> np.ndarray:
        g = self.PATCH_GRID
        h, w = image.shape[:2]
        ph, pw = h // g, w // g
        if ph == 0 or pw == 0:
            raise ContractViolation(f"image {h}x{w} too small for an {g}x{g} patch grid")
        trimmed = image[:ph * g, :pw * g]
        pooled = trimmed.reshape(g, ph, g, pw, 3).mean(axis=(1, 3))
        return pooled.reshape(-1)

    def encode(self, images: tuple[np.ndarray, ...], low_dim: np.ndarray) -> np.ndarray:
        if len(images) != self.n_cameras:
            raise ContractViolation(f"expected {self.n_cameras} cameras, got {len(images)}")
        parts = [np.asarray(low_dim, dtype=np.float64).reshape(-1)]
        for im in images:
            parts.append(self.patch_features(im) @ self.weight + self.bias)
        return np.concatenate(parts)

    # flat parameter interface, mirroring the denoiser's
    def get_params(self) -> np.ndarray:
        return np.concatenate([self.weight.reshape(-1), self.bias])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        n = self.weight.size
        if flat.size != n + self.bias.size:
            raise ContractViolation("parameter vector size mismatch")
        self.weight = flat[:n].reshape(self.weight.shape).copy()
        self.bias = flat[n:].copy()

    def param_grads(self, patch_batches: np.ndarray, feat_grads: np.ndarray) -> np.ndarray:
        """Gradient of sum(feat_grads * output) for one camera stream.

        patch_batches: (B, patch_dim), feat_grads: (B, out_per_camera).
        """
        gw = patch_batches.T @ feat_grads
        gb = feat_grads.sum(axis=0)
        return np.concatenate([gw.reshape(-1), gb])


def make_encoder(cfg: PolicyConfig, feature_dim: int, n_cameras: int = 0,
                 image_size: int = 32, seed: int = 0):
    if cfg.encoder == "lowdim":
        return LowDimEncoder(feature_dim, project=cfg.project_low_dim, seed=seed)
    if cfg.encoder == "lowdim+raster":
        return RasterPatchEncoder(feature_dim, n_cameras, image_size, seed=seed)
    raise ContractViolation(f"unknown encoder '{cfg.encoder}'")


# ---------------------------------------------------------------------------
# Condition assembly
# ---------------------------------------------------------------------------


def condition_layout(cfg: PolicyConfig, hand_dim: int, encoder_dim: int) -> list[dict]:
    """Position-stable offset map of the condition vector."""
    layout = []
    ofs = 0
    for k in range(cfg.horizon_len):
        for name, size in (("rel_pose", 9), ("hand_joints", hand_dim),
                           ("features", encoder_dim)):
            layout.append({"step": k, "name": name, "offset": ofs, "size": size})
            ofs += size
    return layout


def layout_hash(layout: list[dict]) -> str:
    return hashlib.sha256(json.dumps(layout, sort_keys=True).encode()).hexdigest()


def condition_dim(cfg: PolicyConfig, hand_dim: int, encoder_dim: int) -> int:
    return cfg.horizon_len * (9 + hand_dim + encoder_dim)


def build_condition(horizon: list[Observation], encoder, normalizer: Normalizer,
                    cfg: PolicyConfig, augment_rng: np.random.Generator | None = None,
                    eval_crop: bool = False) -> np.ndarray:
    """Concatenated per-step condition blocks; the last step is the base.

    Images pass through the encoder after optional augmentation (training)
    or a deterministic center crop (inference with a raster encoder).
    """
    if len(horizon) != cfg.horizon_len:
        raise ContractViolation(
            f"horizon must contain {cfg.horizon_len} observations, got {len(horizon)}")
    base = horizon[-1].ee_pose
    rows = pose_rows([o.ee_pose for o in horizon], base, ReprMode.RELATIVE)
    hands = np.stack([o.hand_joints for o in horizon])
    prop = normalizer.normalize_proprio(np.concatenate([rows, hands], axis=1))
    uses_images = getattr(encoder, "n_cameras", 0) > 0
    blocks = []
    for k, obs in enumerate(horizon):
        images = obs.images
        if uses_images:
            if augment_rng is not None:
                images = tuple(augment_image(im, augment_rng, cfg.crop_ratio)
                               for im in images)
            elif eval_crop:
                images = tuple(center_crop(im, cfg.crop_ratio) for im in images)
        feats = encoder.encode(images if uses_images else (), obs.low_dim_features)
        blocks.append(np.concatenate([prop[k], feats]))
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Training samples
# ---------------------------------------------------------------------------


def sample_rng(dataset_seed: int, episode_id: str, t: int) -> np.random.Generator:
    """Per-sample generator: a pure function of (seed, episode id, index)."""
    digest = hashlib.sha256(f"{dataset_seed}|{episode_id}|{t}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def horizon_slice(episode: Episode, t: int, cfg: PolicyConfig) -> list[Observation]:
    """H_o+1 observations ending at t; early steps repeat the first frame
    (with extrapolated timestamps, so downstream ordering checks still hold)."""
    out = []
    for k in range(cfg.h_o, -1, -1):
        i = t - k
        if i >= 0:
            out.append(episode.observation(i))
        else:
            first = episode.observation(0)
            out.append(replace(first, timestamp=first.timestamp + i / cfg.rate_hz))
    return out


def build_training_sample(episode: Episode, t: int, cfg: PolicyConfig,
                          normalizer: Normalizer, encoder,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(x0, condition) for one (episode, timestep).

    x0 is the normalized flattened action chunk; the condition encodes the
    observation horizon. Images are augmented with the provided generator;
    proprio and action tensors are never augmented. Identical
    (episode, t, rng state) produce bitwise-identical samples.
    """
    n = len(episode)
    if not 0 <= t < n:
        raise ContractViolation(f"t={t} outside episode of length {n}")
    horizon = horizon_slice(episode, t, cfg)
    cond = build_condition(horizon, encoder, normalizer, cfg, augment_rng=rng)

    future_idx = [min(n - 1, t + j) for j in range(cfg.h_a)]
    chunk_poses = [episode.target(i)[0] for i in future_idx]
    hand_rows = episode.act_hand[future_idx].astype(np.float64)
    base = chunk_poses[0] if cfg.repr_mode is ReprMode.RELATIVE_WRONG_BASE \
        else horizon[-1].ee_pose
    rows = pose_rows(chunk_poses, base, cfg.repr_mode)
    x0 = normalizer.normalize_action(np.concatenate([rows, hand_rows], axis=1))
    return x0.reshape(-1), cond


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@dataclass
class ChunkStep:
    timestamp: float
    ee_target: Pose
    hand_targets: np.ndarray


def decode_chunk_vector(x0: np.ndarray, base: Pose, normalizer: Normalizer,
                        cfg: PolicyConfig, hand_dim: int) -> list[tuple[Pose, np.ndarray]]:
    """Denormalize and decode a sampled chunk into absolute (pose, hand) steps."""
    rows = normalizer.denormalize_action(
        np.asarray(x0, dtype=np.float64).reshape(cfg.h_a, 9 + hand_dim))
    poses: list[Pose] = []
    prev = base
    for j in range(cfg.h_a):
        try:
            step_pose = row_to_pose(rows[j, :9])
        except Degenerate6DError as err:
            raise InferenceError(f"degenerate rotation at chunk step {j}: {err}",
                                 step_index=j) from err
        if cfg.repr_mode is ReprMode.ABSOLUTE:
            poses.append(step_pose)
        elif cfg.repr_mode is ReprMode.DELTA:
            prev = prev.compose(step_pose)
            poses.append(prev)
        else:  # RELATIVE and the wrong-base ablation decode identically
            poses.append(base.compose(step_pose))
    return [(pose, rows[j, 9:]) for j, pose in enumerate(poses)]


def infer_chunk(denoiser, sched: NoiseSchedule, normalizer: Normalizer, encoder,
                cfg: PolicyConfig, horizon: list[Observation], now: float,
                rng: np.random.Generator) -> list[ChunkStep]:
    """Sample one action chunk and decode it to absolute timed targets.

    Targets are stamped now + j/rate for j = 0..H_a-1. The wrong-base
    representation is refused unless the config explicitly allows it (it
    exists only for the corresponding ablation).
    """
    if cfg.repr_mode is ReprMode.RELATIVE_WRONG_BASE and not cfg.allow_wrong_base:
        raise ContractViolation(
            "wrong-base representation is an ablation variant; set allow_wrong_base")
    cond = build_condition(horizon, encoder, normalizer, cfg, eval_crop=True)
    hand_dim = horizon[-1].hand_joints.size
    dim = cfg.h_a * (9 + hand_dim)
    x0 = ddim_sample(denoiser, cond, sched, n_steps=cfg.ddim_steps, rng=rng, dim=dim)
    decoded = decode_chunk_vector(x0, horizon[-1].ee_pose, normalizer, cfg, hand_dim)
    return [ChunkStep(now + j / cfg.rate_hz, pose, hand)
            for j, (pose, hand) in enumerate(decoded)]
