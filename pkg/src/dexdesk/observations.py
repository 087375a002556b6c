"""Observation record shared by the simulator, recorder, and policy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .poses import Pose


@dataclass(frozen=True)
class Observation:
    """One sensor snapshot.

    ``images`` are (H, W, 3) float arrays with unit-interval channels, all
    cameras at the same declared resolution. ``low_dim_features`` is the
    environment feature vector (may be empty).
    """

    timestamp: float
    ee_pose: Pose
    hand_joints: np.ndarray
    images: tuple[np.ndarray, ...] = ()
    low_dim_features: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        hj = np.asarray(self.hand_joints, dtype=np.float64).reshape(-1).copy()
        hj.flags.writeable = False
        object.__setattr__(self, "hand_joints", hj)
        feats = np.asarray(self.low_dim_features, dtype=np.float64).reshape(-1).copy()
        feats.flags.writeable = False
        object.__setattr__(self, "low_dim_features", feats)
        imgs = tuple(np.asarray(im, dtype=np.float64) for im in self.images)
        if imgs:
            shape = imgs[0].shape
            for im in imgs:
                if im.ndim != 3 or im.shape[2] != 3:
                    raise ContractViolation(f"images must be (H, W, 3), got {im.shape}")
                if im.shape != shape:
                    raise ContractViolation("all cameras must share one resolution")
        object.__setattr__(self, "images", imgs)
