"""Similarity-label generation from pose pairs.

Five generators are provided: points average distance (the primary method),
sector area overlap, point-cloud mutual-nearest-neighbor overlap, exponential
negative distance, and binary position+heading labels. All of them map a pose
pair to a similarity in [0, 1], are symmetric, and are computed on demand so
no O(n^2) matrix is ever materialized.

Poses are expected in the ground convention (x forward, y left, z up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial import cKDTree

from .types import ContractError, DataError, Frame, PointCloud, Pose

DEFAULT_SAMPLE_POINTS = 64
DEFAULT_SAMPLE_SEED = 0


@dataclass(frozen=True)
class SectorSpec:
    """Planar sector attached to the ego frame: apex at the sensor origin,
    bisector along the forward (+x) axis."""

    angle: float = 90.0
    radius: float = 10.0

    def __post_init__(self):
        if not 0 < self.angle <= 360:
            raise DataError(f"sector angle {self.angle} outside (0, 360]")
        if self.radius <= 0:
            raise DataError("sector radius must be positive")

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Membership test for (N, 2) ego-frame planar points."""
        xy = np.asarray(xy, dtype=np.float64)
        r = np.hypot(xy[:, 0], xy[:, 1])
        bearing = np.degrees(np.arctan2(xy[:, 1], xy[:, 0]))
        half = self.angle / 2.0
        return (r <= self.radius) & (np.abs(bearing) <= half)


@dataclass(frozen=True)
class SampledPointSet:
    """Fixed ego-frame sample points; index k corresponds across all poses."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, order="C")
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DataError(f"sample points must be (n, 2), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def as_3d(self) -> np.ndarray:
        """Planar samples lifted to z=0 so SE(3) poses can act on them."""
        return np.column_stack([self.points, np.zeros(self.n)])


@dataclass(frozen=True)
class SimilarityParams:
    d_th: float = 7.5
    tau: float = 3.0
    binary_pos_th: float = 10.0
    binary_heading_th: float = 30.0
    mnn_radius: float = 0.5

    def __post_init__(self):
        if self.d_th <= 0:
            raise DataError("d_th must be positive")


def sample_sector_points(
    spec: SectorSpec, n: int = DEFAULT_SAMPLE_POINTS, seed: int = DEFAULT_SAMPLE_SEED
) -> SampledPointSet:
    """Area-uniform sector samples, stratified along the radial coordinate.

    Deterministic for fixed (spec, n, seed); two calls with the same
    arguments return bit-identical sets, which is what gives sample point k
    its one-to-one correspondence across poses.
    """
    if n < 1:
        raise ContractError("need at least one sample point")
    rng = np.random.default_rng(seed)
    # r = R*sqrt(u) makes the density uniform over the sector area; u is
    # stratified into n equal slabs to stabilize the mean.
    u = (np.arange(n) + rng.random(n)) / n
    r = spec.radius * np.sqrt(u)
    half = math.radians(spec.angle / 2.0)
    theta = rng.uniform(-half, half, size=n)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return SampledPointSet(pts)


def points_average_distance(pose_i: Pose, pose_j: Pose, pts: SampledPointSet) -> float:
    """Mean Euclidean displacement of corresponding sample points under the
    two poses. Symmetric, and invariant to any common rigid transform."""
    local = pts.as_3d()
    wi = pose_i.transform(local)
    wj = pose_j.transform(local)
    return float(np.linalg.norm(wi - wj, axis=1).mean())


def sim_points_avg(
    pose_i: Pose, pose_j: Pose, pts: SampledPointSet, params: SimilarityParams
) -> float:
    """Similarity (d_th - D_avg)/d_th clipped at zero."""
    d_avg = points_average_distance(pose_i, pose_j, pts)
    if d_avg < params.d_th:
        return (params.d_th - d_avg) / params.d_th
    return 0.0


def _sector_membership_world(
    xy: np.ndarray, pose: Pose, spec: SectorSpec
) -> np.ndarray:
    """Test world-frame planar points against the sector placed at a pose."""
    c = pose.position_xy()
    h = pose.heading_xy()
    d = xy - c
    cos_h, sin_h = math.cos(-h), math.sin(-h)
    ego = np.column_stack([
        d[:, 0] * cos_h - d[:, 1] * sin_h,
        d[:, 0] * sin_h + d[:, 1] * cos_h,
    ])
    return spec.contains(ego)


def sim_sector_overlap(
    pose_i: Pose,
    pose_j: Pose,
    spec: SectorSpec | None = None,
    mode: Literal["raster", "montecarlo"] = "raster",
    seed: int = 0,
    mc_samples: int = 20000,
    raster_cells: int = 1000,
) -> float:
    """Overlap ratio |S_i intersect S_j| / |S| of the two planar sectors.

    The sectors are congruent, so |S_i| = |S_j| = |S| and the ratio is
    symmetric; both estimators are symmetrized so the computed value is
    exactly invariant under swapping the poses. Raster mode counts cell
    centers of a fixed raster_cells^2 grid over the joint bounding box;
    montecarlo mode transforms one seeded area-uniform sample set by either
    pose and averages the two directional membership fractions.
    """
    spec = spec or SectorSpec()
    ci, cj = pose_i.position_xy(), pose_j.position_xy()
    if np.linalg.norm(ci - cj) > 2 * spec.radius:
        return 0.0
    if mode == "raster":
        lo = np.minimum(ci, cj) - spec.radius
        hi = np.maximum(ci, cj) + spec.radius
        span = max(hi[0] - lo[0], hi[1] - lo[1])
        step = span / raster_cells
        xs = lo[0] + step * (np.arange(raster_cells) + 0.5)
        ys = lo[1] + step * (np.arange(raster_cells) + 0.5)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        xy = np.column_stack([gx.ravel(), gy.ravel()])
        in_i = _sector_membership_world(xy, pose_i, spec)
        in_j = _sector_membership_world(xy, pose_j, spec)
        denom = (in_i.sum() + in_j.sum()) / 2.0
        if denom == 0:
            return 0.0
        return float(min((in_i & in_j).sum() / denom, 1.0))
    if mode == "montecarlo":
        local = sample_sector_points(spec, mc_samples, seed).as_3d()
        frac_ij = _sector_membership_world(pose_i.transform(local)[:, :2], pose_j, spec).mean()
        frac_ji = _sector_membership_world(pose_j.transform(local)[:, :2], pose_i, spec).mean()
        return float((frac_ij + frac_ji) / 2.0)
    raise ContractError(f"unknown overlap mode {mode!r}")


def sim_pointcloud_mnn(
    cloud_i: PointCloud,
    cloud_j: PointCloud,
    pose_i: Pose,
    pose_j: Pose,
    params: SimilarityParams,
) -> float:
    """Mutual-nearest-neighbor overlap of two clouds placed by their poses.

    Counts pairs (p, q) where q is p's nearest neighbor and vice versa with
    distance at most mnn_radius, normalized by the smaller cloud size.
    Callers are expected to voxel-downsample the clouds first.
    """
    if len(cloud_i) == 0 or len(cloud_j) == 0:
        return 0.0
    wi = cloud_i.transformed(pose_i, Frame.WORLD).points
    wj = cloud_j.transformed(pose_j, Frame.WORLD).points
    tree_i = cKDTree(wi)
    tree_j = cKDTree(wj)
    dist_ij, nn_in_j = tree_j.query(wi, k=1)
    _, nn_in_i = tree_i.query(wj, k=1)
    mine = np.arange(len(wi))
    mutual = (nn_in_i[nn_in_j] == mine) & (dist_ij <= params.mnn_radius)
    ratio = mutual.sum() / min(len(wi), len(wj))
    return float(min(max(ratio, 0.0), 1.0))


def sim_exp_neg_distance(pose_i: Pose, pose_j: Pose, params: SimilarityParams) -> float:
    """exp(-||t_i - t_j|| / tau); always in (0, 1]."""
    if params.tau <= 0:
        raise ContractError("tau must be positive")
    d = float(np.linalg.norm(pose_i.translation - pose_j.translation))
    return math.exp(-d / params.tau)


def wrap_angle_deg(a: float) -> float:
    """Wrap to (-180, 180]."""
    return -((-a + 180.0) % 360.0 - 180.0)


def sim_binary_pose_heading(pose_i: Pose, pose_j: Pose, params: SimilarityParams) -> float:
    """1.0 iff planar distance and absolute heading difference both fall
    under their thresholds, else 0.0."""
    d = float(np.linalg.norm(pose_i.position_xy() - pose_j.position_xy()))
    dh = abs(wrap_angle_deg(math.degrees(pose_i.heading_xy() - pose_j.heading_xy())))
    return 1.0 if (d < params.binary_pos_th and dh < params.binary_heading_th) else 0.0


LABEL_METHODS = (
    "points_avg",
    "area_overlap",
    "pointcloud_mnn",
    "exp_neg_distance",
    "binary_pos_heading",
)
