"""Geometric preprocessing of RGB/LiDAR frames.

Covers the full raster pipeline: vertical image cropping, point-cloud
field-of-view cropping, single-plane RANSAC ground removal, spherical range
projection, depth back-projection with edge-noise masking, and top-down BEV
rasterization over a metric grid.

Everything here is a pure function of its inputs; RANSAC takes an explicit
seed so repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .types import (
    ContractError,
    DataError,
    DimensionError,
    Frame,
    PointCloud,
    Pose,
    RasterImage,
    RasterKind,
)

MIN_GROUND_POINTS = 50


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with an extrinsic pose mapping camera to LiDAR coords.

    Camera frame convention: x right, y down, z forward (optical axis).
    ``cam_to_lidar`` transforms camera-frame points into the LiDAR frame.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int
    cam_to_lidar: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_width):
            raise DataError(f"cx={self.cx} outside [0, {self.image_width})")
        if not (0 <= self.cy < self.image_height):
            raise DataError(f"cy={self.cy} outside [0, {self.image_height})")

    def crop_vertical(self, keep_height: int) -> "CameraModel":
        """Camera model for the image after removing rows from the top."""
        if not 0 < keep_height <= self.image_height:
            raise ContractError(f"keep_height {keep_height} outside (0, {self.image_height}]")
        removed = self.image_height - keep_height
        return CameraModel(
            self.fx, self.fy, self.cx, self.cy - removed,
            self.image_width, keep_height, self.cam_to_lidar,
        )

    def project_from_lidar(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project LiDAR-frame points; returns ((N, 2) pixel uv, (N,) depth)."""
        cam_pts = self.cam_to_lidar.inverse().transform(points)
        z = cam_pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam_pts[:, 0] / z + self.cx
            v = self.fy * cam_pts[:, 1] / z + self.cy
        return np.column_stack([u, v]), z


@dataclass(frozen=True)
class BevGrid:
    """Metric grid for top-down rasterization. Spans must divide the voxel
    size into an exact integer resolution."""

    x_range: tuple[float, float] = (0.0, 51.2)
    y_range: tuple[float, float] = (-25.6, 25.6)
    z_range: tuple[float, float] = (-5.0, 5.0)
    voxel: float = 0.4

    def __post_init__(self):
        if self.voxel <= 0:
            raise DataError("voxel size must be positive")
        for lo, hi in (self.x_range, self.y_range, self.z_range):
            if hi <= lo:
                raise DataError("grid ranges must be increasing")
        for n, span in (("x", self.x_range), ("y", self.y_range)):
            cells = (span[1] - span[0]) / self.voxel
            if abs(cells - round(cells)) > 1e-9:
                raise DataError(f"{n}-span {span} is not an integer number of voxels")

    @property
    def rows(self) -> int:
        return round((self.x_range[1] - self.x_range[0]) / self.voxel)

    @property
    def cols(self) -> int:
        return round((self.y_range[1] - self.y_range[0]) / self.voxel)


@dataclass(frozen=True)
class RangeProjection:
    """Spherical projection geometry for range images.

    The horizontal field of view is fixed at 90 degrees about the forward
    axis, matching the cropped camera FoV; the vertical span and the raster
    resolution are sensor-dependent and configurable.
    """

    h_fov: tuple[float, float] = (-45.0, 45.0)
    v_fov: tuple[float, float] = (-24.8, 2.0)
    rows: int = 64
    cols: int = 384

    def __post_init__(self):
        if abs((self.h_fov[1] - self.h_fov[0]) - 90.0) > 1e-9:
            raise DataError("horizontal FoV span must be 90 degrees")
        if self.v_fov[1] <= self.v_fov[0]:
            raise DataError("vertical FoV must be increasing")
        if self.rows < 1 or self.cols < 1:
            raise DataError("resolution must be at least 1x1")


def crop_image_vertical(img: RasterImage, keep_height: int) -> RasterImage:
    """Keep the bottom ``keep_height`` rows, discarding the sky side."""
    if keep_height <= 0:
        raise ContractError(f"keep_height must be positive, got {keep_height}")
    if keep_height > img.height:
        raise ContractError(f"keep_height {keep_height} exceeds image height {img.height}")
    start = img.height - keep_height
    return RasterImage(img.values[start:], img.valid_mask[start:], img.kind)


def crop_cloud_to_fov(cloud: PointCloud, cam: CameraModel) -> PointCloud:
    """Retain points that project inside the image bounds with positive depth."""
    if cloud.frame != Frame.LIDAR:
        raise ContractError(f"expected a lidar-frame cloud, got {cloud.frame.value}")
    if len(cloud) == 0:
        return cloud
    uv, depth = cam.project_from_lidar(cloud.points)
    keep = (
        (depth > 0)
        & (uv[:, 0] >= 0) & (uv[:, 0] < cam.image_width)
        & (uv[:, 1] >= 0) & (uv[:, 1] < cam.image_height)
    )
    return cloud.select(keep)


@dataclass(frozen=True)
class GroundRemoval:
    """Result of ground-plane removal. ``plane`` is (a, b, c, d) with a unit
    normal and a*x + b*y + c*z + d = 0; None when no admissible plane fit."""

    cloud: PointCloud
    plane: np.ndarray | None
    removed: int
    found: bool


def remove_ground(
    cloud: PointCloud,
    inlier_tol: float = 0.2,
    max_normal_tilt: float = 15.0,
    iterations: int = 200,
    seed: int = 0,
) -> GroundRemoval:
    """Drop points near the dominant near-horizontal RANSAC plane.

    Clouds below MIN_GROUND_POINTS points pass through unchanged. A plane is
    admissible only when its normal tilts less than ``max_normal_tilt``
    degrees from vertical; if no admissible plane exists the cloud is
    returned unchanged with ``found=False``.
    """
    n = len(cloud)
    if n < MIN_GROUND_POINTS:
        return GroundRemoval(cloud, None, 0, False)
    rng = np.random.default_rng(seed)
    pts = cloud.points
    cos_max_tilt = math.cos(math.radians(max_normal_tilt))
    best_count = 0
    best_plane = None
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        if abs(normal[2]) < cos_max_tilt:
            continue
        d = -float(normal @ p0)
        dist = np.abs(pts @ normal + d)
        count = int((dist <= inlier_tol).sum())
        if count > best_count:
            best_count = count
            best_plane = np.append(normal, d)
    if best_plane is None:
        return GroundRemoval(cloud, None, 0, False)
    dist = np.abs(pts @ best_plane[:3] + best_plane[3])
    keep = dist > inlier_tol
    return GroundRemoval(cloud.select(keep), best_plane, int((~keep).sum()), True)


def project_to_range_image(cloud: PointCloud, proj: RangeProjection | None = None) -> RasterImage:
    """Spherical projection: each pixel holds the range of its nearest point.

    Azimuth is measured about +x (forward) with +y to the left; columns run
    left-of-scene to right-of-scene, rows run top (max elevation) to bottom.
    Pixels receiving no point are invalid.
    """
    if cloud.frame != Frame.LIDAR:
        raise ContractError(f"expected a lidar-frame cloud, got {cloud.frame.value}")
    proj = proj or RangeProjection()
    values = np.zeros((proj.rows, proj.cols))
    valid = np.zeros((proj.rows, proj.cols), dtype=bool)
    if len(cloud) == 0:
        return RasterImage(values, valid, RasterKind.RANGE)
    pts = cloud.points
    rng_dist = np.linalg.norm(pts, axis=1)
    ok = rng_dist > 1e-9
    pts, rng_dist = pts[ok], rng_dist[ok]
    azimuth = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
    elevation = np.degrees(np.arctan2(pts[:, 2], np.hypot(pts[:, 0], pts[:, 1])))
    h_lo, h_hi = proj.h_fov
    v_lo, v_hi = proj.v_fov
    infov = (azimuth >= h_lo) & (azimuth <= h_hi) & (elevation >= v_lo) & (elevation <= v_hi)
    azimuth, elevation, rng_dist = azimuth[infov], elevation[infov], rng_dist[infov]
    col = np.floor((h_hi - azimuth) / (h_hi - h_lo) * proj.cols).astype(int)
    row = np.floor((v_hi - elevation) / (v_hi - v_lo) * proj.rows).astype(int)
    np.clip(col, 0, proj.cols - 1, out=col)
    np.clip(row, 0, proj.rows - 1, out=row)
    # nearest point wins: write in decreasing range so the closest lands last
    order = np.argsort(-rng_dist, kind="stable")
    values[row[order], col[order]] = rng_dist[order]
    valid[row[order], col[order]] = True
    return RasterImage(values, valid, RasterKind.RANGE)


def backproject_depth(depth: RasterImage, cam: CameraModel) -> PointCloud:
    """Lift valid depth pixels to LiDAR-frame 3-D points.

    Pixel (r, c) maps through the pinhole model at integer coordinates
    u=c, v=r; the stored value is the perpendicular (z) depth.
    """
    if depth.kind != RasterKind.DEPTH:
        raise ContractError(f"expected a depth raster, got {depth.kind.value}")
    rows, cols = np.nonzero(depth.valid_mask)
    if rows.size == 0:
        return PointCloud(np.zeros((0, 3)), Frame.LIDAR)
    d = depth.values[rows, cols]
    x = (cols - cam.cx) / cam.fx * d
    y = (rows - cam.cy) / cam.fy * d
    cam_pts = np.column_stack([x, y, d])
    return PointCloud(cam.cam_to_lidar.transform(cam_pts), Frame.LIDAR)


def _sobel_gradient(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized Sobel derivatives in value-units per pixel.

    The raw 3x3 Sobel response is 8x the central difference (smoothing
    weight 4 times derivative scale 2), hence the /8.
    """
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    gx = ndimage.correlate(values, kx, mode="nearest") / 8.0
    gy = ndimage.correlate(values, kx.T, mode="nearest") / 8.0
    return gx, gy


def edge_noise_mask(
    depth: RasterImage,
    method: Literal["sobel", "canny"] = "sobel",
    grad_threshold: float = 0.5,
    dilate: int = 1,
) -> RasterImage:
    """Invalidate depth pixels near strong depth discontinuities.

    Pixels whose Sobel gradient magnitude exceeds ``grad_threshold`` (meters
    per pixel) are cleared, then dilated by ``dilate`` pixels. The canny
    variant additionally walks each edge pixel up to another ``dilate`` steps
    beyond the symmetric band toward its larger-depth side, clearing the
    ambiguous far-side pixels that bleed across object borders. Valid bits
    are only ever cleared, never set.
    """
    if depth.kind != RasterKind.DEPTH:
        raise ContractError(f"expected a depth raster, got {depth.kind.value}")
    if method not in ("sobel", "canny"):
        raise ContractError(f"unknown edge method {method!r}")
    if dilate < 0:
        raise ContractError("dilate must be nonnegative")
    values = np.where(depth.valid_mask, depth.values, 0.0)
    gx, gy = _sobel_gradient(values)
    mag = np.hypot(gx, gy)
    edges = mag > grad_threshold
    cleared = edges.copy()
    if dilate > 0 and edges.any():
        cleared = ndimage.binary_dilation(cleared, iterations=dilate)
    if method == "canny" and edges.any():
        extra = np.zeros_like(edges)
        er, ec = np.nonzero(edges)
        horiz = np.abs(gx[er, ec]) >= np.abs(gy[er, ec])
        dr = np.where(horiz, 0, np.sign(gy[er, ec])).astype(int)
        dc = np.where(horiz, np.sign(gx[er, ec]), 0).astype(int)
        h, w = edges.shape
        for step in range(1, 2 * dilate + 1):
            rr = np.clip(er + step * dr, 0, h - 1)
            cc = np.clip(ec + step * dc, 0, w - 1)
            extra[rr, cc] = True
        cleared |= extra
    new_mask = depth.valid_mask & ~cleared
    return RasterImage(np.where(new_mask, depth.values, 0.0), new_mask, RasterKind.DEPTH)


def rasterize_bev(cloud: PointCloud, grid: BevGrid | None = None) -> RasterImage:
    """Occupancy-count BEV raster: cell (r, c) counts the points with
    r = floor((x - x_min)/voxel), c = floor((y - y_min)/voxel).

    Points outside any of the grid ranges are discarded; zero-count cells
    are invalid. The total over all cells equals the in-range point count.
    """
    if cloud.frame != Frame.LIDAR:
        raise ContractError(f"expected a lidar-frame cloud, got {cloud.frame.value}")
    grid = grid or BevGrid()
    counts = np.zeros((grid.rows, grid.cols))
    if len(cloud):
        pts = cloud.points
        row = np.floor((pts[:, 0] - grid.x_range[0]) / grid.voxel).astype(int)
        col = np.floor((pts[:, 1] - grid.y_range[0]) / grid.voxel).astype(int)
        ok = (
            (row >= 0) & (row < grid.rows)
            & (col >= 0) & (col < grid.cols)
            & (pts[:, 2] >= grid.z_range[0]) & (pts[:, 2] <= grid.z_range[1])
        )
        np.add.at(counts, (row[ok], col[ok]), 1.0)
    return RasterImage(counts, counts > 0, RasterKind.BEV)


def voxel_downsample(cloud: PointCloud, voxel: float = 0.4) -> PointCloud:
    """Keep one representative point (the first seen) per voxel."""
    if voxel <= 0:
        raise ContractError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return cloud.select(np.sort(first))
