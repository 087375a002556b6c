"""Byte-stable policy bundle files.

A bundle is everything inference needs: denoiser parameters, noise schedule,
normalization statistics, representation config, encoder weights, and the
condition layout descriptor whose hash is validated on load. The file is a
json header (sorted keys) followed by raw little-endian float64 arrays, so
identical bundles are identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .denoiser import MlpDenoiser
from .diffusion import NoiseSchedule
from .errors import ContractViolation
from .policy import (
    LowDimEncoder,
    Normalizer,
    PolicyConfig,
    RasterPatchEncoder,
    condition_layout,
    infer_chunk,
    layout_hash,
)
from .poses import ReprMode

_MAGIC = b"DDPB"
_VERSION = 1


@dataclass
class PolicyBundle:
    denoiser: MlpDenoiser
    sched: NoiseSchedule
    normalizer: Normalizer
    cfg: PolicyConfig
    encoder: LowDimEncoder | RasterPatchEncoder
    hand_dim: int
    meta: dict

    @property
    def layout(self) -> list[dict]:
        return condition_layout(self.cfg, self.hand_dim, self.encoder.out_dim)

    def infer(self, horizon, now, rng):
        return infer_chunk(self.denoiser, self.sched, self.normalizer, self.encoder,
                           self.cfg, horizon, now, rng)


def _cfg_to_json(cfg: PolicyConfig) -> dict:
    d = asdict(cfg)
    d["repr_mode"] = cfg.repr_mode.value
    return d


def _cfg_from_json(d: dict) -> PolicyConfig:
    d = dict(d)
    d["repr_mode"] = ReprMode(d["repr_mode"])
    return PolicyConfig(**d)


def _encoder_to_json(enc) -> dict:
    if isinstance(enc, LowDimEncoder):
        return {"kind": "lowdim", "feature_dim": enc.feature_dim,
                "project": enc.project, "out_dim": enc.out_dim}
    if isinstance(enc, RasterPatchEncoder):
        return {"kind": "lowdim+raster", "feature_dim": enc.feature_dim,
                "n_cameras": enc.n_cameras, "image_size": enc.image_size,
                "out_per_camera": enc.out_per_camera}
    raise ContractViolation(f"cannot serialize encoder {type(enc).__name__}")


def _encoder_from_json(d: dict):
    if d["kind"] == "lowdim":
        enc = LowDimEncoder(d["feature_dim"], project=d["project"],
                            out_dim=d["out_dim"] if d["project"] else None)
        return enc
    enc = RasterPatchEncoder(d["feature_dim"], d["n_cameras"], d["image_size"],
                             out_per_camera=d["out_per_camera"])
    return enc


def save_bundle(bundle: PolicyBundle, path: str | Path) -> Path:
    path = Path(path)
    arrays = [
        ("denoiser_params", bundle.denoiser.get_params()),
        ("encoder_params", bundle.encoder.get_params()),
        ("betas", bundle.sched.betas),
        ("alphas_bar", bundle.sched.alphas_bar),
        ("proprio_center", bundle.normalizer.proprio_center),
        ("proprio_half", bundle.normalizer.proprio_half),
        ("action_center", bundle.normalizer.action_center),
        ("action_half", bundle.normalizer.action_half),
        # low-dim projection weights, when enabled, ride along
        ("lowdim_projection",
         bundle.encoder.weight.reshape(-1) if isinstance(bundle.encoder, LowDimEncoder)
         and bundle.encoder.project else np.zeros(0)),
    ]
    layout = bundle.layout
    header = {
        "version": _VERSION,
        "cfg": _cfg_to_json(bundle.cfg),
        "encoder": _encoder_to_json(bundle.encoder),
        "denoiser": {
            "chunk_dim": bundle.denoiser.chunk_dim,
            "cond_dim": bundle.denoiser.cond_dim,
            "hidden": list(bundle.denoiser.hidden),
            "time_emb_dim": bundle.denoiser.time_emb_dim,
            "schedule_eps_scale": bundle.denoiser.eps_scale is not None,
        },
        "schedule_kind": bundle.sched.kind,
        "hand_dim": bundle.hand_dim,
        "layout": layout,
        "layout_hash": layout_hash(layout),
        "meta": bundle.meta,
        "arrays": [{"name": n, "size": int(a.size)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def load_bundle(path: str | Path) -> PolicyBundle:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ContractViolation(f"{path} is not a policy bundle")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + hlen])
    if header["version"] != _VERSION:
        raise ContractViolation(f"unsupported bundle version {header['version']}")
    ofs = 8 + hlen
    arrays = {}
    for spec in header["arrays"]:
        n = spec["size"]
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=n, offset=ofs).copy()
        ofs += 8 * n

    cfg = _cfg_from_json(header["cfg"])
    den_info = header["denoiser"]
    sched = NoiseSchedule(arrays["betas"], arrays["alphas_bar"], header["schedule_kind"])
    eps_scale = MlpDenoiser.schedule_eps_scale(sched.alphas_bar) \
        if den_info.get("schedule_eps_scale") else None
    denoiser = MlpDenoiser(den_info["chunk_dim"], den_info["cond_dim"],
                           hidden=tuple(den_info["hidden"]),
                           time_emb_dim=den_info["time_emb_dim"], eps_scale=eps_scale)
    denoiser.set_params(arrays["denoiser_params"])
    normalizer = Normalizer(arrays["proprio_center"], arrays["proprio_half"],
                            arrays["action_center"], arrays["action_half"])
    encoder = _encoder_from_json(header["encoder"])
    if arrays["encoder_params"].size:
        encoder.set_params(arrays["encoder_params"])
    if isinstance(encoder, LowDimEncoder) and encoder.project:
        encoder.weight = arrays["lowdim_projection"].reshape(encoder.feature_dim,
                                                             encoder.out_dim)

    bundle = PolicyBundle(denoiser, sched, normalizer, cfg, encoder,
                          header["hand_dim"], header["meta"])
    expected = layout_hash(bundle.layout)
    if expected != header["layout_hash"]:
        raise ContractViolation(
            "condition layout mismatch: stored "
            f"{header['layout_hash'][:12]}, reconstructed {expected[:12]}")
    return bundle
