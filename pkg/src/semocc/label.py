"""Semantic labeling of occupied voxels by k-nearest-neighbor majority vote."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import NOISE_ID, OccupancyGrid, LabelMap, SemanticPointCloud
from .errors import InsufficientPointsError, InvalidInputError


@dataclass(frozen=True)
class KnnConfig:
    k: int = 15
    max_radius: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError(f"k must be >= 1, got {self.k}")
        if self.max_radius is not None and self.max_radius <= 0:
            raise InvalidInputError("max_radius must be positive")


class SpatialIndex:
    """Exact Euclidean k-NN over a point set.

    A KD-tree preselects candidates; final distances are recomputed with
    numpy so results are defined by the plain float64 metric, and ties are
    broken by point index. `query` therefore agrees exactly with a
    brute-force scan that sorts by (squared distance, index).
    """

    def __init__(self, points: np.ndarray):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise InsufficientPointsError("cannot index an empty point set")
        self._points = pts
        self._tree = cKDTree(pts)

    @property
    def n_points(self) -> int:
        return self._points.shape[0]

    def _candidates(self, q: np.ndarray, k: int) -> np.ndarray:
        """Indices guaranteed to contain the true k nearest under ties."""
        n = self.n_points
        if n <= k:
            return np.arange(n)
        kq = min(n, k + 8)
        d, idx = self._tree.query(q, k=kq)
        # if the preselection boundary is still tied with the k-th distance,
        # widen to a ball query so no tied point is missed
        if kq < n and d[-1] <= d[k - 1] * (1.0 + 1e-9) + 1e-300:
            radius = d[k - 1] * (1.0 + 1e-9) + 1e-12
            return np.asarray(self._tree.query_ball_point(q, radius), dtype=np.int64)
        return np.asarray(idx, dtype=np.int64)

    def query(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k nearest points to `q`, sorted by (distance, point index).

        Returns (distances, indices); fewer than k results only when the
        indexed set is smaller than k.
        """
        q = np.asarray(q, dtype=np.float64).reshape(3)
        cand = self._candidates(q, k)
        d2 = np.sum((self._points[cand] - q) ** 2, axis=1)
        order = np.lexsort((cand, d2))[: min(k, cand.size)]
        return np.sqrt(d2[order]), cand[order]

    def query_vote_set(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Like `query`, but a tie at the k-th distance keeps every tied
        point, which makes downstream voting independent of point order."""
        q = np.asarray(q, dtype=np.float64).reshape(3)
        cand = self._candidates(q, k)
        d2 = np.sum((self._points[cand] - q) ** 2, axis=1)
        if cand.size <= k:
            order = np.lexsort((cand, d2))
            return np.sqrt(d2[order]), cand[order]
        kth = np.partition(d2, k - 1)[k - 1]
        keep = d2 <= kth
        if np.count_nonzero(keep) < cand.size:
            cand, d2 = cand[keep], d2[keep]
        order = np.lexsort((cand, d2))
        return np.sqrt(d2[order]), cand[order]


def build_index(cloud: SemanticPointCloud) -> SpatialIndex:
    if len(cloud) == 0:
        raise InsufficientPointsError("cannot build an index over an empty cloud")
    return SpatialIndex(cloud.points)


def majority_vote(labels: np.ndarray, distances: np.ndarray) -> int:
    """Modal label; ties go to the class with smaller summed neighbor
    distance, then to the smaller class id."""
    best = None
    for cls in np.unique(labels):
        sel = labels == cls
        key = (-int(sel.sum()), float(distances[sel].sum()), int(cls))
        if best is None or key < best:
            best = key
    return best[2]


def knn_label(occ: OccupancyGrid, cloud: SemanticPointCloud, cfg: KnnConfig,
              labels: LabelMap) -> OccupancyGrid:
    """Assign each occupied voxel the modal class of the k nearest
    non-noise points to its center.

    Empty voxels stay 0. With `max_radius` set, neighbors beyond the
    radius do not vote and voxels with no neighbor in range become noise.
    """
    if len(cloud) == 0:
        raise InsufficientPointsError("labeling requires a non-empty cloud")
    cloud.validate_labels(labels)
    keep = cloud.labels != NOISE_ID
    if not np.any(keep):
        raise InsufficientPointsError("labeling requires non-noise points")
    pts = cloud.points[keep]
    cls = cloud.labels[keep]
    index = SpatialIndex(pts)

    occupied = np.argwhere(occ.labels != 0)
    out = np.zeros(occ.spec.dims, dtype=np.uint8)
    centers = occ.spec.centers(occupied)
    for row, center in zip(occupied, centers):
        d, idx = index.query_vote_set(center, cfg.k)
        if cfg.max_radius is not None:
            in_range = d <= cfg.max_radius
            d, idx = d[in_range], idx[in_range]
        if idx.size == 0:
            out[tuple(row)] = NOISE_ID
            continue
        out[tuple(row)] = majority_vote(cls[idx], d)
    return OccupancyGrid(occ.spec, out)
