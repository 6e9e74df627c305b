import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from rbvpr.simlabel import (
    LABEL_METHODS,
    SampledPointSet,
    SectorSpec,
    SimilarityParams,
    points_average_distance,
    sample_sector_points,
    sim_binary_pose_heading,
    sim_exp_neg_distance,
    sim_pointcloud_mnn,
    sim_points_avg,
    sim_sector_overlap,
    wrap_angle_deg,
)
from rbvpr.types import ContractError, DataError, Frame, PointCloud, Pose

st_seed = st.integers(0, 2**32 - 1)

PARAMS = SimilarityParams()


def random_pose(seed: int, scale: float = 10.0) -> Pose:
    rng = np.random.default_rng(seed)
    rot = Rotation.random(random_state=rng).as_matrix()
    return Pose(rot, rng.normal(scale=scale, size=3))


def pose_xy(x: float, y: float, heading_deg: float = 0.0) -> Pose:
    rot = Rotation.from_euler("z", heading_deg, degrees=True).as_matrix()
    return Pose(rot, np.array([x, y, 0.0]))


def _shifted(pose: Pose, t: np.ndarray) -> Pose:
    """Same pose displaced by a world-frame translation t."""
    return Pose(pose.rotation, pose.translation + t)


# --- sector geometry and sampling ---


def test_sector_spec_validation():
    with pytest.raises(DataError):
        SectorSpec(angle=0.0)
    with pytest.raises(DataError):
        SectorSpec(angle=400.0)
    with pytest.raises(DataError):
        SectorSpec(radius=-1.0)


def test_sector_contains_boundary():
    spec = SectorSpec(angle=90.0, radius=10.0)
    pts = np.array(
        [
            [0.0, 0.0],     # apex
            [10.0, 0.0],    # rim on the bisector
            [10.1, 0.0],    # past the rim
            [1.0, 1.0],     # bearing 45 deg, on the half-angle edge
            [1.0, 1.1],     # bearing beyond the half angle
            [-1.0, 0.0],    # behind the apex
        ]
    )
    assert spec.contains(pts).tolist() == [True, True, False, True, False, False]


def test_sampled_point_set_shape():
    with pytest.raises(DataError):
        SampledPointSet(np.zeros((4, 3)))
    pts = SampledPointSet(np.zeros((4, 2)))
    assert pts.n == 4
    assert pts.as_3d().shape == (4, 3)
    assert_allclose(pts.as_3d()[:, 2], 0.0)


def test_sample_sector_points_deterministic_and_inside():
    spec = SectorSpec()
    a = sample_sector_points(spec, 256, seed=7)
    b = sample_sector_points(spec, 256, seed=7)
    assert a.points.tobytes() == b.points.tobytes()
    assert spec.contains(a.points).all()
    assert not np.array_equal(a.points, sample_sector_points(spec, 256, seed=8).points)
    with pytest.raises(ContractError):
        sample_sector_points(spec, 0)


def test_sample_sector_points_area_uniform_radius():
    # area-uniform sampling over a sector has E[r] = 2R/3
    spec = SectorSpec(radius=10.0)
    pts = sample_sector_points(spec, 20000, seed=0).points
    assert abs(np.hypot(pts[:, 0], pts[:, 1]).mean() - 20.0 / 3.0) < 0.05


# --- average point displacement ---


@given(seed=st_seed)
def test_average_distance_pure_translation(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(seed)
    t = rng.normal(scale=5.0, size=3)
    pts = sample_sector_points(SectorSpec(), 64, seed=0)
    d = points_average_distance(pose, _shifted(pose, t), pts)
    assert abs(d - np.linalg.norm(t)) < 1e-9


@given(seed=st_seed)
def test_average_distance_matches_per_point_oracle(seed):
    pose_i = random_pose(seed)
    pose_j = random_pose(seed + 1)
    pts = sample_sector_points(SectorSpec(), 64, seed=0)
    local = pts.as_3d()
    expected = np.mean(
        [
            np.linalg.norm(
                (pose_i.rotation @ p + pose_i.translation)
                - (pose_j.rotation @ p + pose_j.translation)
            )
            for p in local
        ]
    )
    assert abs(points_average_distance(pose_i, pose_j, pts) - expected) < 1e-12


@given(seed=st_seed)
def test_average_distance_symmetric_and_rigid_invariant(seed):
    pose_i = random_pose(seed)
    pose_j = random_pose(seed + 1)
    g = random_pose(seed + 2)
    pts = sample_sector_points(SectorSpec(), 32, seed=0)
    d = points_average_distance(pose_i, pose_j, pts)
    assert points_average_distance(pose_j, pose_i, pts) == d
    moved = points_average_distance(g.compose(pose_i), g.compose(pose_j), pts)
    assert abs(moved - d) < 1e-9


def test_sim_points_avg_linear_ramp():
    pose = pose_xy(0.0, 0.0)
    pts = sample_sector_points(SectorSpec(), 64, seed=0)
    for d in (0.0, 1.0, 3.75, 7.4):
        sim = sim_points_avg(pose, _shifted(pose, np.array([d, 0.0, 0.0])), pts, PARAMS)
        assert_allclose(sim, (7.5 - d) / 7.5, atol=1e-12)
    far = sim_points_avg(pose, _shifted(pose, np.array([9.0, 0.0, 0.0])), pts, PARAMS)
    assert far == 0.0


def test_sim_points_avg_respects_d_th():
    pose = pose_xy(0.0, 0.0)
    other = _shifted(pose, np.array([6.0, 0.0, 0.0]))
    pts = sample_sector_points(SectorSpec(), 64, seed=0)
    wide = sim_points_avg(pose, other, pts, SimilarityParams(d_th=12.0))
    assert_allclose(wide, 0.5, atol=1e-12)
    assert sim_points_avg(pose, other, pts, SimilarityParams(d_th=6.0)) == 0.0


# --- sector overlap ---


def test_overlap_identical_pose_is_one():
    p = pose_xy(3.0, -2.0, 40.0)
    assert sim_sector_overlap(p, p, mode="raster") == 1.0
    assert sim_sector_overlap(p, p, mode="montecarlo") == 1.0


def test_overlap_disjoint_is_zero():
    a = pose_xy(0.0, 0.0)
    b = pose_xy(25.0, 0.0)
    assert sim_sector_overlap(a, b, mode="raster") == 0.0
    assert sim_sector_overlap(a, b, mode="montecarlo") == 0.0


def test_overlap_rejects_unknown_mode():
    with pytest.raises(ContractError):
        sim_sector_overlap(pose_xy(0, 0), pose_xy(1, 0), mode="exact")


def test_overlap_full_disc_analytic():
    # 360 deg sector is a disc; two discs of radius R with centers d apart
    # intersect in area 2 R^2 acos(d/2R) - (d/2) sqrt(4R^2 - d^2)
    spec = SectorSpec(angle=360.0, radius=10.0)
    a = pose_xy(0.0, 0.0)
    b = pose_xy(10.0, 0.0)
    area = 2 * 100.0 * math.acos(0.5) - 5.0 * math.sqrt(300.0)
    expected = area / (math.pi * 100.0)
    assert abs(sim_sector_overlap(a, b, spec, mode="raster") - expected) < 0.01
    assert abs(sim_sector_overlap(a, b, spec, mode="montecarlo") - expected) < 0.01


@settings(max_examples=25)
@given(seed=st_seed)
def test_overlap_swap_invariance_exact(seed):
    rng = np.random.default_rng(seed)
    a = pose_xy(*rng.uniform(-8, 8, size=2), rng.uniform(-180, 180))
    b = pose_xy(*rng.uniform(-8, 8, size=2), rng.uniform(-180, 180))
    for mode in ("raster", "montecarlo"):
        ij = sim_sector_overlap(a, b, mode=mode, raster_cells=250, mc_samples=4000)
        ji = sim_sector_overlap(b, a, mode=mode, raster_cells=250, mc_samples=4000)
        assert ij == ji


@settings(max_examples=15)
@given(seed=st_seed)
def test_overlap_estimators_agree(seed):
    rng = np.random.default_rng(seed)
    a = pose_xy(*rng.uniform(-6, 6, size=2), rng.uniform(-180, 180))
    b = pose_xy(*rng.uniform(-6, 6, size=2), rng.uniform(-180, 180))
    r = sim_sector_overlap(a, b, mode="raster")
    m = sim_sector_overlap(a, b, mode="montecarlo")
    assert abs(r - m) < 0.01


# --- mutual nearest neighbor overlap ---


def _uniform_cloud(seed: int, n: int = 200) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(-10.0, 10.0, size=(n, 3)), Frame.LIDAR)


def test_mnn_identical_cloud_same_pose():
    cloud = _uniform_cloud(0)
    p = pose_xy(1.0, 2.0, 30.0)
    assert sim_pointcloud_mnn(cloud, cloud, p, p, PARAMS) == 1.0


def test_mnn_empty_cloud():
    empty = PointCloud(np.zeros((0, 3)), Frame.LIDAR)
    p = pose_xy(0.0, 0.0)
    assert sim_pointcloud_mnn(empty, _uniform_cloud(0), p, p, PARAMS) == 0.0


def test_mnn_far_apart_clouds():
    cloud = _uniform_cloud(0)
    sim = sim_pointcloud_mnn(cloud, cloud, pose_xy(0, 0), pose_xy(500, 0), PARAMS)
    assert sim == 0.0


def test_mnn_normalizes_by_smaller_cloud():
    # the small cloud is a subset of the big one, placed identically: every
    # small point has a zero-distance mutual partner
    big = _uniform_cloud(1, n=300)
    small = PointCloud(big.points[:60], Frame.LIDAR)
    p = pose_xy(0.0, 0.0)
    assert sim_pointcloud_mnn(big, small, p, p, PARAMS) == 1.0


@given(seed=st_seed)
def test_mnn_symmetric_and_bounded(seed):
    ci = _uniform_cloud(seed, n=80)
    cj = _uniform_cloud(seed + 1, n=120)
    rng = np.random.default_rng(seed + 2)
    pi = pose_xy(*rng.uniform(-2, 2, size=2), rng.uniform(-180, 180))
    pj = pose_xy(*rng.uniform(-2, 2, size=2), rng.uniform(-180, 180))
    s = sim_pointcloud_mnn(ci, cj, pi, pj, PARAMS)
    assert 0.0 <= s <= 1.0
    assert sim_pointcloud_mnn(cj, ci, pj, pi, PARAMS) == s


# --- remaining scalar similarities ---


def test_exp_neg_distance_values():
    a = pose_xy(0.0, 0.0)
    assert sim_exp_neg_distance(a, a, PARAMS) == 1.0
    b = pose_xy(3.0, 0.0)
    assert_allclose(sim_exp_neg_distance(a, b, PARAMS), math.exp(-1.0), atol=1e-12)
    with pytest.raises(ContractError):
        sim_exp_neg_distance(a, b, replace(PARAMS, tau=0.0))


def test_wrap_angle_deg_branch_cut():
    assert wrap_angle_deg(0.0) == 0.0
    assert wrap_angle_deg(180.0) == 180.0
    assert wrap_angle_deg(-180.0) == 180.0
    assert wrap_angle_deg(190.0) == -170.0
    assert wrap_angle_deg(-190.0) == 170.0
    assert wrap_angle_deg(360.0) == 0.0


def test_binary_pose_heading_thresholds_are_strict():
    a = pose_xy(0.0, 0.0, 0.0)
    assert sim_binary_pose_heading(a, a, PARAMS) == 1.0
    assert sim_binary_pose_heading(a, pose_xy(9.9, 0.0), PARAMS) == 1.0
    assert sim_binary_pose_heading(a, pose_xy(10.0, 0.0), PARAMS) == 0.0
    assert sim_binary_pose_heading(a, pose_xy(0.0, 0.0, 29.9), PARAMS) == 1.0
    assert sim_binary_pose_heading(a, pose_xy(0.0, 0.0, 30.0), PARAMS) == 0.0
    # both gates must pass
    assert sim_binary_pose_heading(a, pose_xy(5.0, 0.0, 40.0), PARAMS) == 0.0


def test_binary_heading_wraps():
    a = pose_xy(0.0, 0.0, 170.0)
    b = pose_xy(1.0, 0.0, -170.0)  # 20 deg apart across the branch cut
    assert sim_binary_pose_heading(a, b, PARAMS) == 1.0


def test_label_method_registry():
    assert LABEL_METHODS == (
        "points_avg",
        "area_overlap",
        "pointcloud_mnn",
        "exp_neg_distance",
        "binary_pos_heading",
    )


@given(seed=st_seed)
def test_pose_methods_in_unit_interval_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = pose_xy(*rng.uniform(-8, 8, size=2), rng.uniform(-180, 180))
    b = pose_xy(*rng.uniform(-8, 8, size=2), rng.uniform(-180, 180))
    pts = sample_sector_points(SectorSpec(), 64, seed=0)
    values = {
        "points_avg": (
            sim_points_avg(a, b, pts, PARAMS),
            sim_points_avg(b, a, pts, PARAMS),
        ),
        "area_overlap": (
            sim_sector_overlap(a, b, raster_cells=200),
            sim_sector_overlap(b, a, raster_cells=200),
        ),
        "exp_neg_distance": (
            sim_exp_neg_distance(a, b, PARAMS),
            sim_exp_neg_distance(b, a, PARAMS),
        ),
        "binary_pos_heading": (
            sim_binary_pose_heading(a, b, PARAMS),
            sim_binary_pose_heading(b, a, PARAMS),
        ),
    }
    for name, (ij, ji) in values.items():
        assert 0.0 <= ij <= 1.0, name
        assert ij == ji, name
