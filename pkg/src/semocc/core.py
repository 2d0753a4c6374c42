"""Core value types: rigid poses, voxel lattices, point clouds, meshes, feature volumes.

All types are immutable after construction (backing arrays are marked
read-only), so they can be shared freely across worker processes.
Coordinates are metric, float64. Class ids fit in one byte: 0 is reserved
for empty space and 255 for noise/ignore.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInputError,
    GridRangeError,
    IncompatibleGridError,
    InvalidInputError,
    InvalidPoseError,
)

EMPTY_ID = 0
NOISE_ID = 255

# Default class table: 7 semantic categories, ids contiguous from 1.
DEFAULT_CLASS_NAMES = ("grass", "tree", "bush", "puddle", "mud", "barrier", "rubble")
DEFAULT_GROUND_NAMES = ("grass", "puddle", "mud", "rubble")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_point(p) -> np.ndarray:
    """Coerce to a finite (3,) float64 vector."""
    v = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"point has non-finite components: {v}")
    return v


@dataclass(frozen=True)
class RigidPose:
    """A 4x4 homogeneous rigid transform (rotation + translation, meters)."""

    matrix: np.ndarray

    ORTHO_TOL = 1e-6

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidPoseError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidPoseError("pose matrix has non-finite entries")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise InvalidPoseError(f"bottom row must be [0,0,0,1], got {m[3]}")
        m = m.copy()
        m[3] = (0.0, 0.0, 0.0, 1.0)
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > self.ORTHO_TOL:
            raise InvalidPoseError("rotation block is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise InvalidPoseError("rotation block has negative determinant")
        object.__setattr__(self, "matrix", _freeze(m))

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "RigidPose":
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=np.float64)
        m[:3, 3] = as_point(translation)
        return cls(m)

    @classmethod
    def from_translation(cls, translation) -> "RigidPose":
        return cls.from_rotation_translation(np.eye(3), translation)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def apply(self, points) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if p.shape[1] != 3:
            raise InvalidInputError(f"expected points with 3 components, got {p.shape}")
        out = p @ self.rotation.T + self.translation
        return out[0] if single else out

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return the pose applying `other` first, then `self`."""
        return RigidPose(self.matrix @ other.matrix)

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = rt
        m[:3, 3] = -rt @ self.translation
        return RigidPose(m)


@dataclass(frozen=True)
class GridSpec:
    """Voxel lattice geometry.

    `origin` is the world position of the min corner of voxel (0,0,0).
    Cells are half-open boxes [origin + i*s, origin + (i+1)*s) per axis;
    a point exactly on the outer max face is out of range.
    """

    origin: tuple[float, float, float]
    dims: tuple[int, int, int]
    voxel_size: float

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        dims = tuple(int(v) for v in self.dims)
        if len(origin) != 3 or len(dims) != 3:
            raise InvalidInputError("origin and dims must have 3 components")
        if not all(np.isfinite(origin)):
            raise InvalidInputError(f"origin must be finite, got {origin}")
        if any(d <= 0 for d in dims):
            raise InvalidInputError(f"dims must be positive, got {dims}")
        if not (np.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise InvalidInputError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @classmethod
    def default(cls) -> "GridSpec":
        """100x100x40 lattice at 0.2 m covering x [0,20], y [-10,10], z [-2,6]."""
        return cls(origin=(0.0, -10.0, -2.0), dims=(100, 100, 40), voxel_size=0.2)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin_array + np.array(self.dims, dtype=np.float64) * self.voxel_size

    def voxel_center(self, index) -> np.ndarray:
        i = np.asarray(index, dtype=np.int64).reshape(3)
        if np.any(i < 0) or np.any(i >= np.array(self.dims)):
            raise GridRangeError(f"voxel index {tuple(i)} outside dims {self.dims}")
        return self.origin_array + (i + 0.5) * self.voxel_size

    def centers(self, indices: np.ndarray) -> np.ndarray:
        """Centers of an (N, 3) integer index array. No range check."""
        idx = np.asarray(indices, dtype=np.float64)
        return self.origin_array + (idx + 0.5) * self.voxel_size

    def all_centers(self) -> np.ndarray:
        """Centers of every voxel, shape (nx, ny, nz, 3), index order (i, j, k)."""
        nx, ny, nz = self.dims
        ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([ii, jj, kk], axis=-1).astype(np.float64)
        return self.origin_array + (idx + 0.5) * self.voxel_size

    def index_of(self, point) -> tuple[int, int, int]:
        """Voxel owning a world point; raises GridRangeError when outside."""
        idx, inside = self.indices_of(np.asarray(point, dtype=np.float64).reshape(1, 3))
        if not inside[0]:
            raise GridRangeError(f"point {point} outside grid")
        return tuple(int(v) for v in idx[0])

    def indices_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized point -> cell ownership.

        Returns (indices (N,3) int64, inside (N,) bool). Indices of outside
        points are clipped and must be masked by the caller.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        u = (p - self.origin_array) / self.voxel_size
        idx = np.floor(u).astype(np.int64)
        dims = np.array(self.dims, dtype=np.int64)
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        return np.clip(idx, 0, dims - 1), inside

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.indices_of(points)[1]


@dataclass(frozen=True)
class LabelMap:
    """Ordered semantic class table with a designated ground subset."""

    classes: tuple[tuple[int, str], ...]
    ground_classes: frozenset = frozenset()

    def __post_init__(self):
        classes = tuple((int(i), str(n)) for i, n in self.classes)
        ids = [i for i, _ in classes]
        if ids != list(range(1, len(ids) + 1)):
            raise InvalidInputError(f"class ids must be contiguous from 1, got {ids}")
        ground = frozenset(int(g) for g in self.ground_classes)
        if not ground <= set(ids):
            raise InvalidInputError("ground_classes must be a subset of class ids")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "ground_classes", ground)

    @classmethod
    def default(cls) -> "LabelMap":
        classes = tuple((i + 1, n) for i, n in enumerate(DEFAULT_CLASS_NAMES))
        ground = frozenset(i + 1 for i, n in enumerate(DEFAULT_CLASS_NAMES) if n in DEFAULT_GROUND_NAMES)
        return cls(classes, ground)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.classes)

    def name_of(self, class_id: int) -> str:
        for i, n in self.classes:
            if i == class_id:
                return n
        raise KeyError(class_id)

    def id_of(self, name: str) -> int:
        for i, n in self.classes:
            if n == name:
                return i
        raise KeyError(name)

    def valid_label_values(self) -> frozenset:
        return frozenset(self.ids) | {EMPTY_ID, NOISE_ID}


@dataclass(frozen=True)
class SemanticPointCloud:
    """Labeled points: positions (N,3) m, per-point class id, optional extras."""

    points: np.ndarray
    labels: np.ndarray
    intensity: np.ndarray | None = None
    frame_id: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud has non-finite coordinates")
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)
        if labels.shape[0] != pts.shape[0]:
            raise InvalidInputError(
                f"labels length {labels.shape[0]} != point count {pts.shape[0]}")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "labels", _freeze(labels))
        for name in ("intensity", "frame_id"):
            a = getattr(self, name)
            if a is None:
                continue
            dtype = np.float64 if name == "intensity" else np.int64
            a = np.ascontiguousarray(a, dtype=dtype).reshape(-1)
            if a.shape[0] != pts.shape[0]:
                raise InvalidInputError(f"{name} length {a.shape[0]} != point count {pts.shape[0]}")
            object.__setattr__(self, name, _freeze(a))

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "SemanticPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.uint8))

    def validate_labels(self, label_map: LabelMap) -> None:
        valid = np.array(sorted(label_map.valid_label_values()), dtype=np.uint8)
        bad = ~np.isin(self.labels, valid)
        if np.any(bad):
            raise InvalidInputError(
                f"{int(bad.sum())} points carry labels outside the label map")

    def select(self, mask: np.ndarray) -> "SemanticPointCloud":
        return SemanticPointCloud(
            self.points[mask],
            self.labels[mask],
            None if self.intensity is None else self.intensity[mask],
            None if self.frame_id is None else self.frame_id[mask],
        )

    def transformed(self, pose: RigidPose) -> "SemanticPointCloud":
        return SemanticPointCloud(
            pose.apply(self.points) if len(self) else self.points,
            self.labels, self.intensity, self.frame_id)

    @staticmethod
    def concat(clouds) -> "SemanticPointCloud":
        clouds = list(clouds)
        if not clouds:
            raise EmptyInputError("cannot concatenate zero clouds")
        intensity = None
        if all(c.intensity is not None for c in clouds):
            intensity = np.concatenate([c.intensity for c in clouds])
        frame_id = None
        if all(c.frame_id is not None for c in clouds):
            frame_id = np.concatenate([c.frame_id for c in clouds])
        return SemanticPointCloud(
            np.concatenate([c.points for c in clouds], axis=0),
            np.concatenate([c.labels for c in clouds]),
            intensity, frame_id)


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle set. `triangles` holds vertex indices, shape (T, 3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise InvalidInputError("triangle indices out of vertex range")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "triangles", _freeze(t))

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def clean(self, dedup_tol: float = 1e-7, min_area: float = 1e-12) -> "TriangleMesh":
        """Merge vertices closer than `dedup_tol` and drop degenerate triangles."""
        if self.n_vertices == 0:
            return TriangleMesh.empty()
        key = np.round(self.vertices / dedup_tol).astype(np.int64)
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        verts = self.vertices[first]
        tris = inverse[self.triangles]
        distinct = (
            (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2]))
        tris = tris[distinct]
        mesh = TriangleMesh(verts, tris)
        if mesh.n_triangles:
            mesh = TriangleMesh(verts, tris[mesh.triangle_areas() >= min_area])
        # drop unreferenced vertices
        if mesh.n_triangles:
            used = np.unique(mesh.triangles)
            remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
            remap[used] = np.arange(used.shape[0])
            return TriangleMesh(mesh.vertices[used], remap[mesh.triangles])
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @staticmethod
    def concat(meshes) -> "TriangleMesh":
        meshes = [m for m in meshes]
        if not meshes:
            return TriangleMesh.empty()
        verts, tris, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            offset += m.n_vertices
        return TriangleMesh(np.concatenate(verts, axis=0), np.concatenate(tris, axis=0))


@dataclass(frozen=True)
class OccupancyGrid:
    """Per-voxel class ids on a GridSpec lattice; 0 empty, 255 noise/ignore."""

    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if lab.shape != self.spec.dims:
            if lab.size == self.spec.n_voxels:
                lab = lab.reshape(self.spec.dims)
            else:
                raise IncompatibleGridError(
                    f"labels shape {lab.shape} does not match dims {self.spec.dims}")
        object.__setattr__(self, "labels", _freeze(lab))

    @classmethod
    def empty(cls, spec: GridSpec) -> "OccupancyGrid":
        return cls(spec, np.zeros(spec.dims, dtype=np.uint8))

    def occupied_mask(self) -> np.ndarray:
        """True where a voxel holds a semantic class (not empty, not noise)."""
        return (self.labels != EMPTY_ID) & (self.labels != NOISE_ID)

    def count_occupied(self) -> int:
        return int(self.occupied_mask().sum())

    def with_labels(self, labels: np.ndarray) -> "OccupancyGrid":
        return OccupancyGrid(self.spec, labels)


@dataclass(frozen=True)
class FeatureVolume:
    """Dense real feature tensor bound to a lattice, shape (C, nx, ny, nz)."""

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float64)
        if d.ndim != 4 or d.shape[1:] != self.spec.dims:
            raise IncompatibleGridError(
                f"data shape {d.shape} does not match (C, {self.spec.dims})")
        if not np.all(np.isfinite(d)):
            raise InvalidInputError("feature volume has non-finite values")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, spec: GridSpec, channels: int) -> "FeatureVolume":
        return cls(spec, np.zeros((channels,) + spec.dims))
