"""File formats.

- point .bin: records of 4 little-endian float32 (x, y, z, intensity)
- .label: one uint32 per point, semantic id in the low 16 bits
- pose text: 12 whitespace-separated reals per line, row-major 3x4
- WOCC grid: magic "WOCC", u16 version, u32 dims, f32 voxel size/origin,
  then one label byte per voxel, x-major (i slowest), little-endian
- FVOL volume: same header idea, float32 payload, channel-major
- PLY mesh: ascii or binary_little_endian, float32 positions only
- config / label map: flat "key = value" text

Floats are stored at 32-bit precision; everything is computed at 64-bit.
"""
from __future__ import annotations

import os
import struct
import tempfile
import warnings

import numpy as np

from .core import FeatureVolume, GridSpec, LabelMap, OccupancyGrid, RigidPose, SemanticPointCloud, TriangleMesh
from .errors import (
    GridFormatError,
    InvalidInputError,
    MalformedFileError,
    PairingError,
    PoseParseError,
)

GRID_MAGIC = b"WOCC"
GRID_VERSION = 1
VOLUME_MAGIC = b"FVOL"
VOLUME_VERSION = 1

POINT_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4


def atomic_write(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# ---------------------------------------------------------------- points

def read_point_bin(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read an (N,3) float64 position array and (N,) intensity array."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % POINT_RECORD_BYTES != 0:
        raise MalformedFileError(
            f"{path}: size {raw.size} is not a multiple of {POINT_RECORD_BYTES}-byte records")
    rec = raw.view("<f4").reshape(-1, 4).astype(np.float64)
    return rec[:, :3], rec[:, 3]


def write_point_bin(path: str, points: np.ndarray, intensity: np.ndarray | None = None) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inten = np.zeros(len(pts)) if intensity is None else np.asarray(intensity, dtype=np.float64)
    rec = np.concatenate([pts, inten.reshape(-1, 1)], axis=1).astype("<f4")
    atomic_write(path, rec.tobytes())


def read_raw_labels(path: str) -> np.ndarray:
    """Raw uint16 semantic ids (low 16 bits of each uint32 record)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % LABEL_RECORD_BYTES != 0:
        raise MalformedFileError(
            f"{path}: size {raw.size} is not a multiple of {LABEL_RECORD_BYTES}-byte records")
    return (raw.view("<u4") & 0xFFFF).astype(np.uint16)


def read_labels(path: str, remap: dict[int, int]) -> np.ndarray:
    """Read and remap a .label file; ids missing from `remap` become noise (255)."""
    from .core import NOISE_ID

    raw = read_raw_labels(path)
    table = np.full(65536, NOISE_ID, dtype=np.uint8)
    for src, dst in remap.items():
        table[int(src)] = np.uint8(dst)
    return table[raw]


def write_raw_labels(path: str, raw_ids: np.ndarray) -> None:
    atomic_write(path, np.asarray(raw_ids).astype("<u4").tobytes())


def read_labeled_cloud(point_path: str, label_path: str, remap: dict[int, int],
                       frame_index: int | None = None) -> SemanticPointCloud:
    points, intensity = read_point_bin(point_path)
    labels = read_labels(label_path, remap)
    if len(labels) != len(points):
        raise PairingError(
            f"{point_path} has {len(points)} points but {label_path} has {len(labels)} labels")
    frame_id = None if frame_index is None else np.full(len(points), frame_index, dtype=np.int64)
    return SemanticPointCloud(points, labels, intensity, frame_id)


# ----------------------------------------------------------------- poses

def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] = -u[:, -1]
        q = u @ vt
    return q


def read_poses(path: str) -> list[RigidPose]:
    """Parse KITTI-style pose lines (12 reals, row-major 3x4).

    Rotation blocks off orthonormal by more than 1e-3 are rejected; smaller
    drift is re-orthonormalized via polar decomposition with a warning.
    """
    poses = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            tokens = stripped.split()
            if len(tokens) != 12:
                raise PoseParseError(f"expected 12 values, got {len(tokens)}", lineno)
            try:
                vals = np.array([float(t) for t in tokens], dtype=np.float64)
            except ValueError as exc:
                raise PoseParseError(str(exc), lineno) from exc
            m = np.eye(4)
            m[:3, :4] = vals.reshape(3, 4)
            r = m[:3, :3]
            err = np.max(np.abs(r.T @ r - np.eye(3)))
            if err > 1e-3:
                raise PoseParseError(f"rotation block off orthonormal by {err:.2e}", lineno)
            if err > RigidPose.ORTHO_TOL:
                warnings.warn(f"{path} line {lineno}: re-orthonormalizing rotation (err {err:.2e})")
                m[:3, :3] = _orthonormalize(r)
            poses.append(RigidPose(m))
    return poses


def write_poses(path: str, poses) -> None:
    lines = []
    for p in poses:
        lines.append(" ".join(repr(v) for v in p.matrix[:3, :4].reshape(-1)))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_timestamps(path: str) -> list[float]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(float(line))
    return out


def write_timestamps(path: str, stamps) -> None:
    atomic_write(path, ("\n".join(repr(float(t)) for t in stamps) + "\n").encode())


# ------------------------------------------------------------ WOCC grids

def grid_to_bytes(grid: OccupancyGrid) -> bytes:
    spec = grid.spec
    header = GRID_MAGIC + struct.pack(
        "<HIIIf3f", GRID_VERSION, *spec.dims, spec.voxel_size, *spec.origin)
    return header + grid.labels.tobytes(order="C")


def write_grid(path: str, grid: OccupancyGrid) -> None:
    atomic_write(path, grid_to_bytes(grid))


def grid_from_bytes(data: bytes) -> OccupancyGrid:
    header_size = 4 + struct.calcsize("<HIIIf3f")
    if len(data) < header_size:
        raise GridFormatError(f"grid file truncated: {len(data)} bytes")
    if data[:4] != GRID_MAGIC:
        raise GridFormatError(f"bad magic {data[:4]!r}, expected {GRID_MAGIC!r}")
    version, nx, ny, nz, size, ox, oy, oz = struct.unpack("<HIIIf3f", data[4:header_size])
    if version != GRID_VERSION:
        raise GridFormatError(f"unsupported grid version {version}")
    n = nx * ny * nz
    payload = data[header_size:]
    if len(payload) != n:
        raise GridFormatError(f"expected {n} label bytes, found {len(payload)}")
    spec = GridSpec(origin=(float(ox), float(oy), float(oz)), dims=(nx, ny, nz),
                    voxel_size=float(size))
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(nx, ny, nz)
    return OccupancyGrid(spec, labels)


def read_grid(path: str) -> OccupancyGrid:
    with open(path, "rb") as f:
        return grid_from_bytes(f.read())


# -------------------------------------------------------- feature volumes

def volume_to_bytes(volume: FeatureVolume) -> bytes:
    spec = volume.spec
    header = VOLUME_MAGIC + struct.pack(
        "<HIIIIf3f", VOLUME_VERSION, volume.channels, *spec.dims, spec.voxel_size, *spec.origin)
    return header + volume.data.astype("<f4").tobytes(order="C")


def write_volume(path: str, volume: FeatureVolume) -> None:
    atomic_write(path, volume_to_bytes(volume))


def volume_from_bytes(data: bytes) -> FeatureVolume:
    header_size = 4 + struct.calcsize("<HIIIIf3f")
    if len(data) < header_size:
        raise GridFormatError(f"volume file truncated: {len(data)} bytes")
    if data[:4] != VOLUME_MAGIC:
        raise GridFormatError(f"bad magic {data[:4]!r}, expected {VOLUME_MAGIC!r}")
    version, c, nx, ny, nz, size, ox, oy, oz = struct.unpack("<HIIIIf3f", data[4:header_size])
    if version != VOLUME_VERSION:
        raise GridFormatError(f"unsupported volume version {version}")
    n = c * nx * ny * nz
    payload = np.frombuffer(data, dtype="<f4", offset=header_size)
    if payload.size != n:
        raise GridFormatError(f"expected {n} float32 values, found {payload.size}")
    spec = GridSpec(origin=(float(ox), float(oy), float(oz)), dims=(nx, ny, nz),
                    voxel_size=float(size))
    return FeatureVolume(spec, payload.astype(np.float64).reshape(c, nx, ny, nz))


def read_volume(path: str) -> FeatureVolume:
    with open(path, "rb") as f:
        return volume_from_bytes(f.read())


# -------------------------------------------------------------------- PLY

def write_ply(path: str, mesh: TriangleMesh, binary: bool = True) -> None:
    """Write positions-only PLY, float32 vertices, int32 face indices."""
    verts = mesh.vertices.astype("<f4")
    tris = mesh.triangles.astype("<i4")
    fmt = "binary_little_endian 1.0" if binary else "ascii 1.0"
    header = (
        "ply\n"
        f"format {fmt}\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    ).encode("ascii")
    if binary:
        counts = np.full((mesh.n_triangles, 1), 3, dtype=np.uint8)
        face_blob = b"".join(
            counts[i].tobytes() + tris[i].tobytes() for i in range(mesh.n_triangles))
        atomic_write(path, header + verts.tobytes() + face_blob)
    else:
        body = []
        for v in verts:
            body.append(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        for t in tris:
            body.append(f"3 {t[0]} {t[1]} {t[2]}")
        atomic_write(path, header + ("\n".join(body) + "\n").encode("ascii"))


def read_ply(path: str) -> TriangleMesh:
    """Read the PLY subset produced by write_ply."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedFileError(f"{path}: not a PLY file")
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    fmt, n_verts, n_faces = None, 0, 0
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element" and parts[1] == "vertex":
            n_verts = int(parts[2])
        elif parts[0] == "element" and parts[1] == "face":
            n_faces = int(parts[2])
    if fmt == "binary_little_endian":
        vert_bytes = n_verts * 12
        verts = np.frombuffer(body[:vert_bytes], dtype="<f4").reshape(n_verts, 3)
        tris = np.zeros((n_faces, 3), dtype=np.int64)
        offset = vert_bytes
        for i in range(n_faces):
            count = body[offset]
            if count != 3:
                raise MalformedFileError(f"{path}: face {i} has {count} vertices")
            tris[i] = np.frombuffer(body[offset + 1:offset + 13], dtype="<i4")
            offset += 13
    elif fmt == "ascii":
        lines = body.decode("ascii").split()
        vals = lines[: n_verts * 3]
        verts = np.array(vals, dtype=np.float64).reshape(n_verts, 3)
        rest = lines[n_verts * 3:]
        tris = np.zeros((n_faces, 3), dtype=np.int64)
        pos = 0
        for i in range(n_faces):
            count = int(rest[pos])
            if count != 3:
                raise MalformedFileError(f"{path}: face {i} has {count} vertices")
            tris[i] = [int(rest[pos + 1]), int(rest[pos + 2]), int(rest[pos + 3])]
            pos += 4
    else:
        raise MalformedFileError(f"{path}: unsupported PLY format {fmt}")
    return TriangleMesh(np.asarray(verts, dtype=np.float64), tris)


# ------------------------------------------------------------ flat config

def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise MalformedFileError(f"config line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_config(path: str) -> dict[str, str]:
    with open(path) as f:
        return parse_config_text(f.read())


def write_config(path: str, values: dict) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


# -------------------------------------------------------------- label map

def parse_label_map_text(text: str) -> tuple[LabelMap, dict[int, int]]:
    """Parse a label-map file.

    Lines: `class <id> <name> [ground]` define the class table and
    `remap <raw_id> <id|noise>` the raw-id remap applied by read_labels.
    """
    classes: list[tuple[int, str]] = []
    ground: set[int] = set()
    remap: dict[int, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if parts[0] == "class" and len(parts) in (3, 4):
            cid = int(parts[1])
            classes.append((cid, parts[2]))
            if len(parts) == 4:
                if parts[3] != "ground":
                    raise MalformedFileError(f"label map line {lineno}: unknown flag {parts[3]}")
                ground.add(cid)
        elif parts[0] == "remap" and len(parts) == 3:
            from .core import NOISE_ID

            dst = NOISE_ID if parts[2] == "noise" else int(parts[2])
            remap[int(parts[1])] = dst
        else:
            raise MalformedFileError(f"label map line {lineno}: cannot parse {stripped!r}")
    if not classes:
        raise MalformedFileError("label map defines no classes")
    return LabelMap(tuple(classes), frozenset(ground)), remap


def read_label_map(path: str) -> tuple[LabelMap, dict[int, int]]:
    with open(path) as f:
        return parse_label_map_text(f.read())


def write_label_map(path: str, label_map: LabelMap, remap: dict[int, int]) -> None:
    from .core import NOISE_ID

    lines = []
    for cid, name in label_map.classes:
        flag = " ground" if cid in label_map.ground_classes else ""
        lines.append(f"class {cid} {name}{flag}")
    for raw, dst in sorted(remap.items()):
        lines.append(f"remap {raw} {'noise' if dst == NOISE_ID else dst}")
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def default_remap(label_map: LabelMap) -> dict[int, int]:
    """Best-effort raw-id table for Rellis-style label files.

    Covers the seven default classes; any raw id not listed maps to noise.
    Override with a label-map file for other taxonomies.
    """
    raw_by_name = {"grass": 3, "tree": 4, "bush": 19, "barrier": 27,
                   "puddle": 31, "mud": 33, "rubble": 34}
    return {raw_by_name[name]: cid for cid, name in label_map.classes if name in raw_by_name}


def identity_remap(label_map: LabelMap) -> dict[int, int]:
    """Raw ids equal class ids; noise id maps to itself. Used by synthetic data."""
    from .core import NOISE_ID

    out = {cid: cid for cid, _ in label_map.classes}
    out[NOISE_ID] = NOISE_ID
    return out
