"""Voxel-space numerical kernels.

Covers the feature-volume operations used around a voxel grid that is
rigidly attached to the ego frame: re-expressing a past frame's volume in
the current frame (nearest-voxel snapping, no interpolation), channel
concatenation of a temporal window, a conv3x3x3 + batch-norm + ReLU
forward pass, sigmoid-gated fusion of two volumes, and masked-cosine /
cross-entropy losses with their scalar composition.

Everything is pure and operates on float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import EMPTY_ID, NOISE_ID, FeatureVolume, OccupancyGrid, RigidPose
from .errors import (
    IncompatibleGridError,
    IncompatibleShapeError,
    InvalidInputError,
    InvalidLossError,
    UndefinedLossError,
)


@dataclass(frozen=True)
class TemporalWindowConfig:
    """Temporal aggregation window: total frame count (current included)
    and the nominal spacing between consecutive frames, in seconds."""

    frames: int = 4
    interval: float = 0.5

    def __post_init__(self):
        if self.frames < 1:
            raise InvalidInputError("temporal window needs at least one frame")
        if not self.interval > 0:
            raise InvalidInputError("frame interval must be positive")


@dataclass(frozen=True)
class ConvBNReluWeights:
    """Inference-mode weights for one conv3x3x3 + batch-norm + ReLU block."""

    kernel: np.ndarray
    bias: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 5 or k.shape[2:] != (3, 3, 3):
            raise IncompatibleShapeError(f"kernel must be (C_out, C_in, 3, 3, 3), got {k.shape}")
        c_out = k.shape[0]
        object.__setattr__(self, "kernel", k)
        for name in ("bias", "bn_mean", "bn_var", "bn_gamma", "bn_beta"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape[0] != c_out:
                raise IncompatibleShapeError(f"{name} must have {c_out} entries, got {v.shape[0]}")
            object.__setattr__(self, name, v)
        if np.any(self.bn_var < 0):
            raise InvalidInputError("bn_var must be non-negative")

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1]


@dataclass(frozen=True)
class LossConfig:
    """`lam` weights the distillation term in the total loss; `distill_sign`
    turns the masked cosine mean into a quantity to minimize (-1) or keeps
    the raw mean (+1)."""

    lam: float = 0.8
    distill_sign: int = -1

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0:
            raise InvalidInputError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.distill_sign not in (-1, 1):
            raise InvalidInputError("distill_sign must be +1 or -1")


def _check_same_spec(a: FeatureVolume, b: FeatureVolume) -> None:
    if a.spec != b.spec:
        raise IncompatibleGridError("feature volumes live on different lattices")


def nearest_voxel_indices(spec, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Snap world points to the nearest voxel center of `spec`.

    Returns (indices (N,3) int64, in_grid (N,) bool). A point exactly
    between two centers snaps to the lower index; points outside the
    half-open grid volume are flagged out. Indices are clipped, so mask
    them with `in_grid` before use.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u = (p - spec.origin_array) / spec.voxel_size
    dims = np.array(spec.dims, dtype=np.int64)
    in_grid = np.all((u >= 0.0) & (u < dims), axis=1)
    idx = np.ceil(u).astype(np.int64) - 1
    return np.clip(idx, 0, dims - 1), in_grid


def align_volume(src: FeatureVolume, pose_src: RigidPose, pose_tgt: RigidPose) -> FeatureVolume:
    """Re-express `src` (bound to the ego frame of `pose_src`) in the ego
    frame of `pose_tgt`.

    Each target voxel center is carried target-ego -> world -> source-ego
    and snapped to the nearest source voxel center, whose feature vector
    is copied. Centers landing outside the source grid yield zeros.
    """
    spec = src.spec
    relative = pose_src.inverse().compose(pose_tgt)
    centers = spec.all_centers().reshape(-1, 3)
    mapped = relative.apply(centers)
    idx, in_grid = nearest_voxel_indices(spec, mapped)
    gathered = src.data[:, idx[:, 0], idx[:, 1], idx[:, 2]]
    gathered[:, ~in_grid] = 0.0
    return FeatureVolume(spec, gathered.reshape((src.channels,) + spec.dims))


def temporal_concat(volumes: list[FeatureVolume]) -> FeatureVolume:
    """Stack volumes along the channel axis, oldest first."""
    if not volumes:
        raise InvalidInputError("temporal_concat needs at least one volume")
    first = volumes[0]
    for v in volumes[1:]:
        _check_same_spec(first, v)
        if v.channels != first.channels:
            raise IncompatibleGridError(
                f"channel counts differ: {first.channels} vs {v.channels}")
    return FeatureVolume(first.spec, np.concatenate([v.data for v in volumes], axis=0))


def temporal_align_concat(volumes: list[FeatureVolume], poses: list[RigidPose],
                          cfg: TemporalWindowConfig | None = None) -> FeatureVolume:
    """Align each historical volume to the last (current) frame, then
    concatenate oldest -> current."""
    if len(volumes) != len(poses):
        raise InvalidInputError("one pose per volume required")
    if not volumes:
        raise InvalidInputError("temporal window is empty")
    if cfg is not None and len(volumes) != cfg.frames:
        raise InvalidInputError(
            f"expected {cfg.frames} volumes per window config, got {len(volumes)}")
    current = poses[-1]
    aligned = [align_volume(v, p, current) for v, p in zip(volumes[:-1], poses[:-1])]
    return temporal_concat(aligned + [volumes[-1]])


def voxel_encoder_forward(v: FeatureVolume, w: ConvBNReluWeights) -> FeatureVolume:
    """conv3x3x3 (stride 1, zero pad 1) + inference batch-norm + ReLU."""
    if v.channels != w.c_in:
        raise IncompatibleShapeError(
            f"volume has {v.channels} channels but kernel expects {w.c_in}")
    padded = np.pad(v.data, ((0, 0), (1, 1), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3, 3), axis=(1, 2, 3))
    out = np.einsum("cxyzijk,ocijk->oxyz", windows, w.kernel, optimize=True)
    out += w.bias[:, None, None, None]
    scale = w.bn_gamma / np.sqrt(w.bn_var + w.eps)
    out = scale[:, None, None, None] * (out - w.bn_mean[:, None, None, None])
    out += w.bn_beta[:, None, None, None]
    np.maximum(out, 0.0, out=out)
    return FeatureVolume(v.spec, out)


def adaptive_fuse(f_i: FeatureVolume, f_l: FeatureVolume, w: FeatureVolume) -> FeatureVolume:
    """Voxelwise sigmoid-gated blend: sigmoid(w) * f_l + (1 - sigmoid(w)) * f_i."""
    _check_same_spec(f_i, f_l)
    _check_same_spec(f_i, w)
    if not (f_i.data.shape == f_l.data.shape == w.data.shape):
        raise IncompatibleShapeError(
            f"shapes differ: {f_i.data.shape}, {f_l.data.shape}, {w.data.shape}")
    gate = expit(w.data)
    return FeatureVolume(f_i.spec, gate * f_l.data + (1.0 - gate) * f_i.data)


def occupancy_mask(gt: OccupancyGrid) -> np.ndarray:
    """Boolean volume, true where the annotation is non-empty and non-noise."""
    return (gt.labels != EMPTY_ID) & (gt.labels != NOISE_ID)


def distill_loss(f_i: FeatureVolume, f_l: FeatureVolume, mask: np.ndarray,
                 cfg: LossConfig | None = None) -> float:
    """Masked mean cosine similarity between two volumes, scaled by
    1/(H*W*D) and multiplied by cfg.distill_sign.

    Voxels where either feature vector has norm below 1e-12 contribute 0,
    so zero-padded or empty cells cannot poison the mean.
    """
    cfg = cfg or LossConfig()
    _check_same_spec(f_i, f_l)
    if f_i.data.shape != f_l.data.shape:
        raise IncompatibleShapeError(
            f"shapes differ: {f_i.data.shape} vs {f_l.data.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.shape != f_i.spec.dims:
        raise IncompatibleShapeError(
            f"mask shape {m.shape} does not match dims {f_i.spec.dims}")
    ni = np.linalg.norm(f_i.data, axis=0)
    nl = np.linalg.norm(f_l.data, axis=0)
    valid = m & (ni >= 1e-12) & (nl >= 1e-12)
    dot = np.sum(f_i.data * f_l.data, axis=0)
    cos = np.zeros(f_i.spec.dims)
    np.divide(dot, ni * nl, out=cos, where=valid)
    raw = float(cos[valid].sum()) / f_i.spec.n_voxels
    return cfg.distill_sign * raw


def cross_entropy_loss(logits: FeatureVolume, gt: OccupancyGrid) -> float:
    """Mean voxel cross entropy of `logits` (one channel per label 0..N)
    against `gt`, skipping noise voxels. Stabilized by max subtraction."""
    if logits.spec != gt.spec:
        raise IncompatibleGridError("logits and labels live on different lattices")
    labels = gt.labels
    valid = labels != NOISE_ID
    if not np.any(valid):
        raise UndefinedLossError("every voxel is ignored; cross entropy undefined")
    if int(labels[valid].max()) >= logits.channels:
        raise IncompatibleShapeError(
            f"label {int(labels[valid].max())} needs more than {logits.channels} channels")
    x = logits.data
    m = np.max(x, axis=0)
    lse = m + np.log(np.sum(np.exp(x - m[None]), axis=0))
    picked = np.take_along_axis(x, labels[None].astype(np.int64), axis=0)[0]
    nll = lse - picked
    return float(nll[valid].mean())


def total_loss(ce: float, ls: float, distill: float, d: float,
               cfg: LossConfig | None = None) -> float:
    """ce + ls + lam * distill + d; `ls` and `d` are externally supplied."""
    cfg = cfg or LossConfig()
    terms = (ce, ls, distill, d)
    if not all(math.isfinite(t) for t in terms):
        raise InvalidLossError(f"non-finite loss term in {terms}")
    return ce + ls + cfg.lam * distill + d
