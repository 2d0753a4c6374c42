"""Multi-frame point cloud aggregation.

Each frame's cloud lives in its own ego coordinates. Aggregation lifts
every frame to world coordinates through its pose, concatenates the
window in frame order, and re-expresses the result in the coordinates of
a chosen current frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RigidPose, SemanticPointCloud
from .errors import EmptyInputError, InvalidInputError


@dataclass(frozen=True)
class PosedFrame:
    """One labeled sweep in ego coordinates plus its ego-to-world pose."""

    cloud: SemanticPointCloud
    pose_world: RigidPose
    timestamp: float
    frame_index: int


def frame_to_world(frame: PosedFrame) -> SemanticPointCloud:
    """Transform a frame's cloud into world coordinates; labels untouched."""
    cloud = frame.cloud
    if cloud.frame_id is None:
        cloud = SemanticPointCloud(
            cloud.points, cloud.labels, cloud.intensity,
            np.full(len(cloud), frame.frame_index, dtype=np.int64))
    return cloud.transformed(frame.pose_world)


def aggregate_window(frames: list[PosedFrame], current: RigidPose,
                     window: int) -> SemanticPointCloud:
    """Concatenate the first `window` frames in world coordinates and map
    them into the current frame via `current` (a world-to-current pose).

    Point order is frame order then point order, so the output is
    deterministic. Labels, intensity, and per-point frame ids survive.
    """
    if window < 1 or not frames:
        raise EmptyInputError("aggregation window must contain at least one frame")
    if window > len(frames):
        raise InvalidInputError(
            f"window {window} exceeds available frames {len(frames)}")
    world = SemanticPointCloud.concat(frame_to_world(f) for f in frames[:window])
    return world.transformed(current)


def window_bounds(n_frames: int, current_index: int, window: int,
                  window_offset: int | None = None) -> tuple[int, int]:
    """Frame index range [start, stop) for a window around `current_index`.

    The default offset centers the window on the current frame; the range
    is shifted, never shrunk, when it would cross the sequence bounds.
    """
    if window < 1:
        raise InvalidInputError("window must be >= 1")
    window = min(window, n_frames)
    offset = -(window // 2) if window_offset is None else int(window_offset)
    start = current_index + offset
    start = max(0, min(start, n_frames - window))
    return start, start + window
