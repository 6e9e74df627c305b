"""Compare the five similarity-label methods on sampled loop pose pairs.

Each method scores the same random pose pairs; the script reports per-method
coverage (fraction of nonzero labels) and the Spearman rank correlation
between methods. The point-cloud method uses one canonical forward-sector
ego cloud for every pose, so its score depends only on relative pose, like
the others.

    python3 scripts/label_method_comparison.py --poses 120 --radius 30
"""

import argparse

import numpy as np
from scipy import stats

from rbvpr.evalharness import loop_trajectory
from rbvpr.simlabel import (
    LABEL_METHODS,
    SectorSpec,
    SimilarityParams,
    sample_sector_points,
    sim_binary_pose_heading,
    sim_exp_neg_distance,
    sim_pointcloud_mnn,
    sim_points_avg,
    sim_sector_overlap,
)
from rbvpr.types import Frame, PointCloud


def canonical_ego_cloud() -> PointCloud:
    # coarse forward-sector grid, z=0: enough structure for mutual matching
    x, y = np.meshgrid(np.arange(1.0, 9.5, 1.0), np.arange(-4.0, 4.5, 1.0))
    pts = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
    return PointCloud(pts, Frame.LIDAR)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--poses", type=int, default=120, help="trajectory length (even)")
    parser.add_argument("--radius", type=float, default=30.0, help="loop radius (m)")
    parser.add_argument("--pairs", type=int, default=400, help="sampled pose pairs")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    poses = loop_trajectory(args.poses, radius=args.radius)
    rng = np.random.default_rng(args.seed)
    params = SimilarityParams()
    pts = sample_sector_points(SectorSpec(), seed=0)
    cloud = canonical_ego_cloud()

    idx = rng.integers(0, len(poses), size=(args.pairs, 2))
    idx = idx[idx[:, 0] != idx[:, 1]]

    columns = {name: np.empty(len(idx)) for name in LABEL_METHODS}
    for row, (i, j) in enumerate(idx):
        a, b = poses[i], poses[j]
        columns["points_avg"][row] = sim_points_avg(a, b, pts, params)
        columns["area_overlap"][row] = sim_sector_overlap(a, b, raster_cells=250)
        columns["pointcloud_mnn"][row] = sim_pointcloud_mnn(cloud, cloud, a, b, params)
        columns["exp_neg_distance"][row] = sim_exp_neg_distance(a, b, params)
        columns["binary_pos_heading"][row] = sim_binary_pose_heading(a, b, params)

    print(f"{len(idx)} pose pairs from a {args.poses}-pose loop, radius {args.radius:g} m\n")
    width = max(len(n) for n in LABEL_METHODS)
    print(f"{'method':<{width}}  mean    std     nonzero")
    for name in LABEL_METHODS:
        v = columns[name]
        print(f"{name:<{width}}  {v.mean():.4f}  {v.std():.4f}  {np.mean(v > 0):.3f}")

    stacked = np.column_stack([columns[n] for n in LABEL_METHODS])
    rho = stats.spearmanr(stacked).statistic

    print("\nSpearman rank correlation:")
    header = "".join(f"{n[:10]:>12}" for n in LABEL_METHODS)
    print(f"{'':<{width}}{header}")
    for i, name in enumerate(LABEL_METHODS):
        cells = "".join(f"{rho[i, j]:>12.3f}" for j in range(len(LABEL_METHODS)))
        print(f"{name:<{width}}{cells}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
