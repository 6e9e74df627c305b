"""Core domain types shared by every stage of the pipeline.

Coordinate conventions: the ego/ground frame is x forward, y left, z up.
``Pose`` maps local coordinates into a world frame with the same handedness.
All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ROTATION_TOL = 1e-6
UNIT_NORM_TOL = 1e-6
DESCRIPTOR_DIM = 256


class FormatError(ValueError):
    """A file does not match its declared byte layout."""


class DataError(ValueError):
    """Values violate a type invariant (non-finite, out of range, duplicated)."""


class NormalizationError(DataError):
    """A zero vector cannot be unit-normalized."""


class DimensionError(ValueError):
    """Vector or matrix shapes disagree."""


class ContractError(ValueError):
    """A documented caller-side precondition was violated."""


class Frame(enum.Enum):
    LIDAR = "lidar"
    CAMERA = "camera"
    WORLD = "world"


class RasterKind(enum.Enum):
    DEPTH = "depth"
    RANGE = "range"
    BEV = "bev"


class Modality(enum.Enum):
    RGB = "rgb"
    RANGE = "range"
    CAMERA_BEV = "camera_bev"
    LIDAR_BEV = "lidar_bev"


def _readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    # always copy: freezing an aliased input would freeze the caller's array
    arr = np.array(a, dtype=dtype, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Pose:
    """Rigid SE(3) transform: ``x_world = rotation @ x_local + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        rot = _readonly(self.rotation)
        t = _readonly(self.translation)
        if rot.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {rot.shape}")
        if t.shape != (3,):
            raise DimensionError(f"translation must be a 3-vector, got {t.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(t).all()):
            raise DataError("pose contains non-finite values")
        ortho_err = np.abs(rot.T @ rot - np.eye(3)).max()
        if ortho_err > ROTATION_TOL:
            raise DataError(f"rotation not orthonormal (err={ortho_err:.3e})")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise DataError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(frame_id: str = "") -> "Pose":
        return Pose(np.eye(3), np.zeros(3), frame_id)

    @staticmethod
    def from_matrix(mat: np.ndarray, frame_id: str = "") -> "Pose":
        """Build from a 3x4 or 4x4 row-major [R | t] matrix."""
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape not in ((3, 4), (4, 4)):
            raise DimensionError(f"expected 3x4 or 4x4 matrix, got {mat.shape}")
        return Pose(mat[:3, :3], mat[:3, 3], frame_id)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(x) = self(other(x))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            self.frame_id,
        )

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation, self.frame_id)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one 3-vector or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape == (3,):
            return self.rotation @ pts + self.translation
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionError(f"expected (N, 3) points, got {pts.shape}")
        return pts @ self.rotation.T + self.translation

    def position_xy(self) -> np.ndarray:
        """Planar position on the ground plane (z-up convention)."""
        return self.translation[:2].copy()

    def heading_xy(self) -> float:
        """Heading angle in radians: direction of the rotated forward (+x) axis."""
        fwd = self.rotation[:, 0]
        return float(np.arctan2(fwd[1], fwd[0]))


@dataclass(frozen=True)
class PointCloud:
    """Unordered 3-D points with a coordinate-frame tag."""

    points: np.ndarray
    frame: Frame = Frame.LIDAR
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionError(f"points must be (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise DataError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(pts))
        if self.intensity is not None:
            inten = _readonly(self.intensity)
            if inten.shape != (len(pts),):
                raise DimensionError("intensity length must match point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, pose: Pose, frame: Frame = Frame.WORLD) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity.copy()
        return PointCloud(pose.transform(self.points), frame, inten)

    def select(self, mask: np.ndarray) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity[mask]
        return PointCloud(self.points[mask], self.frame, inten)


@dataclass(frozen=True)
class RasterImage:
    """H x W grid of depth, range, or BEV values with a validity mask.

    Pixels with ``valid_mask`` False carry no information and are excluded
    from every downstream computation. Valid depth/range values are strictly
    positive.
    """

    values: np.ndarray
    valid_mask: np.ndarray
    kind: RasterKind

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, order="C")
        mask = np.array(self.valid_mask, dtype=bool, order="C")
        if vals.ndim != 2:
            raise DimensionError(f"values must be 2-D, got {vals.shape}")
        if mask.shape != vals.shape:
            raise DimensionError("valid_mask shape must match values")
        if not np.isfinite(vals[mask]).all():
            raise DataError("valid pixels must hold finite values")
        if self.kind in (RasterKind.DEPTH, RasterKind.RANGE) and vals[mask].size:
            if (vals[mask] <= 0).any():
                raise DataError(f"valid {self.kind.value} values must be > 0")
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid_mask", mask)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _normalize_rows(data: np.ndarray, tol: float = UNIT_NORM_TOL) -> np.ndarray:
    """L2-normalize rows, leaving already-unit rows bit-identical.

    The skip rule makes load -> save -> load a fixed point: float32 rows that
    were normalized once have |norm - 1| well under the tolerance and are
    passed through untouched on the next load.
    """
    out = np.array(data, dtype=np.float32, copy=True)
    norms = np.linalg.norm(out.astype(np.float64), axis=1)
    if (norms == 0).any():
        idx = int(np.nonzero(norms == 0)[0][0])
        raise NormalizationError(f"row {idx} has zero norm and cannot be normalized")
    off = np.abs(norms - 1.0) > tol
    if off.any():
        out[off] = (out[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    return out


@dataclass(frozen=True)
class Descriptor:
    """A unit-norm global descriptor for one frame and modality."""

    vector: np.ndarray
    frame_id: str
    modality: Modality

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise DimensionError(f"descriptor vector must be 1-D, got {vec.shape}")
        if not np.isfinite(vec).all():
            raise DataError("descriptor contains non-finite values")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise NormalizationError("zero vector cannot be unit-normalized")
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            vec = vec / norm
        object.__setattr__(self, "vector", _readonly(vec))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


class DescriptorSet:
    """An ordered, id-indexed matrix of unit-norm descriptors.

    Rows are stored as float32 (the on-disk payload type); ids are unique and
    preserve insertion order.
    """

    def __init__(self, ids: Sequence[str], data: np.ndarray, modality: Modality):
        ids = tuple(str(i) for i in ids)
        data = np.asarray(data, dtype=np.float32)
        if data.size == 0:
            dim = data.shape[1] if data.ndim == 2 else DESCRIPTOR_DIM
            data = data.reshape(0, dim)
        if data.ndim != 2:
            raise DimensionError(f"data must be (count, dim), got {data.shape}")
        if len(ids) != data.shape[0]:
            raise DimensionError(
                f"{len(ids)} ids but {data.shape[0]} data rows"
            )
        if len(set(ids)) != len(ids):
            seen: set[str] = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DataError(f"duplicate descriptor id {dup!r}")
        if not np.isfinite(data).all():
            raise DataError("descriptor data contains non-finite values")
        self.ids = ids
        self.data = _readonly(_normalize_rows(data), dtype=np.float32)
        self.modality = modality
        self._index = {fid: row for row, fid in enumerate(ids)}

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.count

    def row(self, frame_id: str) -> np.ndarray:
        return self.data[self._index[frame_id]]

    def get(self, frame_id: str) -> Descriptor:
        return Descriptor(self.row(frame_id), frame_id, self.modality)

    def subset(self, ids: Iterable[str], modality: Modality | None = None) -> "DescriptorSet":
        ids = list(ids)
        rows = np.stack([self.row(i) for i in ids]) if ids else np.zeros((0, self.dim))
        return DescriptorSet(ids, rows, modality or self.modality)

    def descriptors(self) -> list[Descriptor]:
        return [Descriptor(self.data[i], fid, self.modality) for i, fid in enumerate(self.ids)]
