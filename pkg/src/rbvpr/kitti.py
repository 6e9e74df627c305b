"""KITTI Odometry ingestion: ground-truth poses, sensor calibration,
velodyne scans, and distance-threshold relevance sets.

File formats follow the published benchmark exactly: poses.txt carries one
row-major 3x4 matrix (12 reals) per frame, calib.txt carries "KEY: 12 reals"
lines, velodyne scans are packed little-endian float32 (x, y, z, intensity)
records. Ground-truth poses live in the left-camera frame (x right, y down,
z forward); helpers convert to the ground convention (x forward, y left,
z up) used everywhere else in this package.
"""

from __future__ import annotations

import os
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CameraModel
from .types import DataError, FormatError, Frame, PointCloud, Pose

POINT_RECORD_BYTES = 16
DEFAULT_IMAGE_WIDTH = 1226
DEFAULT_IMAGE_HEIGHT = 370

# camera axes (x right, y down, z forward) -> ground axes (x fwd, y left, z up)
CAM_TO_GROUND = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...] = tuple(f"{i:02d}" for i in range(11, 22))
    test: tuple[str, ...] = tuple(f"{i:02d}" for i in range(0, 11))

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise DataError("train and test sequences must be disjoint")


@dataclass(frozen=True)
class SequenceManifest:
    sequence_id: str
    frame_count: int
    pose_file: Path
    calib_file: Path
    velodyne_dir: Path
    image_dir: Path

    def __post_init__(self):
        if not re.fullmatch(r"\d{2}", self.sequence_id):
            raise DataError(f"sequence_id must be two digits, got {self.sequence_id!r}")
        if self.frame_count < 0:
            raise DataError("frame_count must be nonnegative")


def frame_id(sequence_id: str, index: int) -> str:
    return f"{sequence_id}/{index:06d}"


def resolve_data_root(explicit: str | None = None) -> Path:
    root = explicit or os.environ.get("RB_DATA_ROOT")
    if not root:
        raise FileNotFoundError(
            "no data root: pass --data-root or set RB_DATA_ROOT"
        )
    path = Path(root)
    if not path.is_dir():
        raise FileNotFoundError(f"data root is not a directory: {path}")
    return path


def discover_sequence(data_root: str | Path, sequence_id: str) -> SequenceManifest:
    """Build a manifest from the standard odometry layout:
    {root}/sequences/{seq}/velodyne, {root}/sequences/{seq}/calib.txt,
    {root}/poses/{seq}.txt. Verifies pose count against scan count when
    both are present."""
    root = Path(data_root)
    seq_dir = root / "sequences" / sequence_id
    velo_dir = seq_dir / "velodyne"
    if not velo_dir.is_dir():
        raise FileNotFoundError(f"no velodyne directory for sequence {sequence_id}: {velo_dir}")
    frame_count = len(sorted(velo_dir.glob("*.bin")))
    manifest = SequenceManifest(
        sequence_id=sequence_id,
        frame_count=frame_count,
        pose_file=root / "poses" / f"{sequence_id}.txt",
        calib_file=seq_dir / "calib.txt",
        velodyne_dir=velo_dir,
        image_dir=seq_dir / "image_2",
    )
    if manifest.pose_file.is_file():
        poses = parse_poses(manifest.pose_file)
        if len(poses) != frame_count:
            raise DataError(
                f"sequence {sequence_id}: {len(poses)} poses but {frame_count} scans"
            )
    return manifest


def _orthonormalize(rot: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rot)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        fixed = u @ vt
    return fixed


def parse_poses(path: str | Path) -> list[Pose]:
    """One pose per nonblank line, 12 reals forming a row-major 3x4 matrix.

    Rotations with orthonormality drift above 1e-6 are re-orthonormalized
    (SVD projection) with a warning; drift above 1e-3 is a data error.
    """
    poses: list[Pose] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 12:
                raise FormatError(
                    f"{path}:{lineno}: expected 12 fields, got {len(fields)}"
                )
            try:
                mat = np.array([float(f) for f in fields]).reshape(3, 4)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric pose field") from None
            rot, trans = mat[:, :3], mat[:, 3]
            drift = float(np.abs(rot @ rot.T - np.eye(3)).max())
            if drift > 1e-3:
                raise DataError(
                    f"{path}:{lineno}: rotation drift {drift:.2e} exceeds 1e-3"
                )
            if drift > 1e-6:
                warnings.warn(
                    f"{path}:{lineno}: re-orthonormalizing rotation (drift {drift:.2e})",
                    stacklevel=2,
                )
                rot = _orthonormalize(rot)
            poses.append(Pose(rot, trans))
    return poses


def serialize_poses(poses: Sequence[Pose], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pose in poses:
            flat = np.hstack([pose.rotation, pose.translation[:, None]]).ravel()
            fh.write(" ".join(repr(float(v)) for v in flat) + "\n")


def parse_velodyne(path: str | Path) -> PointCloud:
    """Packed float32 (x, y, z, intensity) records, little-endian."""
    raw = Path(path).read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: size {len(raw)} is not a multiple of {POINT_RECORD_BYTES} bytes"
        )
    recs = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(
        points=recs[:, :3].astype(np.float64),
        frame=Frame.LIDAR,
        intensity=recs[:, 3].astype(np.float64),
    )


def serialize_velodyne(cloud: PointCloud, path: str | Path) -> None:
    n = len(cloud)
    recs = np.zeros((n, 4), dtype="<f4")
    recs[:, :3] = cloud.points.astype("<f4")
    if cloud.intensity is not None:
        recs[:, 3] = cloud.intensity.astype("<f4")
    Path(path).write_bytes(recs.tobytes())


def _parse_calib_line(line: str, path, lineno: int) -> tuple[str, np.ndarray]:
    if ":" not in line:
        raise FormatError(f"{path}:{lineno}: malformed calib line {line.strip()!r}")
    key, _, rest = line.partition(":")
    try:
        vals = np.array([float(f) for f in rest.split()])
    except ValueError:
        raise FormatError(
            f"{path}:{lineno}: malformed calib line {line.strip()!r}"
        ) from None
    return key.strip(), vals


def parse_calib(
    path: str | Path,
    image_width: int = DEFAULT_IMAGE_WIDTH,
    image_height: int = DEFAULT_IMAGE_HEIGHT,
) -> CameraModel:
    """Intrinsics come from the P2 (left color camera) projection matrix;
    the camera-from-lidar extrinsic composes the P2 baseline offset with the
    Tr velodyne-to-camera transform."""
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            key, vals = _parse_calib_line(line, path, lineno)
            entries[key] = vals
    for key in ("P2", "Tr"):
        if key not in entries:
            raise FormatError(f"{path}: missing calib key {key!r}")
        if entries[key].size != 12:
            raise FormatError(f"{path}: key {key!r} must carry 12 values")

    p2 = entries["P2"].reshape(3, 4)
    tr = entries["Tr"].reshape(3, 4)
    fx, fy = p2[0, 0], p2[1, 1]
    cx, cy = p2[0, 2], p2[1, 2]
    # P2 = K [I | t2]; recover the metric baseline offset t2 = K^-1 P2[:,3]
    tz = p2[2, 3]
    t2 = np.array([(p2[0, 3] - cx * tz) / fx, (p2[1, 3] - cy * tz) / fy, tz])
    lidar_to_cam = Pose(tr[:, :3], tr[:, 3] + t2)
    return CameraModel(
        fx=float(fx),
        fy=float(fy),
        cx=float(cx),
        cy=float(cy),
        image_width=image_width,
        image_height=image_height,
        cam_to_lidar=lidar_to_cam.inverse(),
    )


def camera_pose_to_ground(pose: Pose) -> Pose:
    """Re-express a camera-frame pose in the ground convention by conjugating
    with the fixed axis permutation."""
    m = CAM_TO_GROUND
    return Pose(m @ pose.rotation @ m.T, m @ pose.translation)


def build_ground_truth(
    query_poses: Sequence[Pose],
    db_poses: Sequence[Pose],
    db_ids: Sequence[str],
    t: float = 10.0,
) -> list[set[str]]:
    """Per query, the set of database ids within planar distance t. Poses
    must already be in the ground convention (position_xy is the planar
    location)."""
    if len(db_poses) != len(db_ids):
        raise DataError("db_poses and db_ids must align")
    if t < 0:
        raise DataError("distance threshold must be nonnegative")
    if not db_poses:
        return [set() for _ in query_poses]
    qxy = np.array([p.position_xy() for p in query_poses]).reshape(-1, 2)
    dxy = np.array([p.position_xy() for p in db_poses])
    ids = list(db_ids)
    out: list[set[str]] = []
    for q in qxy:
        dist = np.linalg.norm(dxy - q, axis=1)
        out.append({ids[i] for i in np.flatnonzero(dist <= t)})
    return out
