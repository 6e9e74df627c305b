"""Sweep the rank-fusion weights on the synthetic loop scenario.

Generates one seeded descriptor pair (range-modality with heading-correlated
noise, BEV-modality with white noise), then evaluates phase-1-only retrieval
and fused re-ranking across a grid of weight splits. Prints a recall table;
optionally writes it as CSV.

    python3 scripts/fusion_weight_sweep.py --poses 500 --seed 0
"""

import argparse

import numpy as np

from rbvpr.evalharness import (
    AblationCell,
    SyntheticScenario,
    generate_synthetic_descriptors,
    loop_trajectory,
    run_ablation,
    write_reports_csv,
)
from rbvpr.kitti import build_ground_truth
from rbvpr.types import Modality


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--poses", type=int, default=500, help="trajectory length (even)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--k", type=int, default=60, help="re-rank candidate depth")
    parser.add_argument("--t", type=float, default=10.0, help="true-positive distance (m)")
    parser.add_argument("--steps", type=int, default=11, help="number of weight splits")
    parser.add_argument("--out", default=None, help="optional CSV path for the reports")
    args = parser.parse_args(argv)

    scenario = SyntheticScenario(trajectory=loop_trajectory(args.poses), seed=args.seed)
    range_set, bev_set, poses = generate_synthetic_descriptors(scenario)
    db_ids, q_ids = scenario.split()
    half = len(db_ids)
    truth = build_ground_truth(poses[half:], poses[:half], db_ids, t=args.t)

    cells = [AblationCell(rerank=False)]
    for w_bev in np.linspace(0.0, 1.0, args.steps):
        cells.append(
            AblationCell(rerank=True, w_range=round(1.0 - w_bev, 3), w_bev=round(w_bev, 3))
        )

    reports, skipped = run_ablation(
        cells,
        query_range=range_set.subset(q_ids, Modality.RGB),
        db_range=range_set.subset(db_ids),
        truth=truth,
        query_bev=bev_set.subset(q_ids, Modality.CAMERA_BEV),
        db_bev=bev_set.subset(db_ids),
        k=args.k,
    )
    assert not skipped

    width = max(len(r.method) for r in reports)
    print(f"{'method':<{width}}  r@1     r@5     r@1%")
    for rep in reports:
        print(f"{rep.method:<{width}}  {rep.r_at_1:.4f}  {rep.r_at_5:.4f}  {rep.r_at_1pct:.4f}")

    if args.out:
        write_reports_csv(reports, args.out)
        print(f"wrote {len(reports)} rows to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
