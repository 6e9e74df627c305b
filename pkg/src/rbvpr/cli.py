"""Batch pipeline entry point.

Subcommands: preprocess (scans -> rasters), label (pairwise similarity CSV),
retrieve (two-phase ranked lists), evaluate (recall reports), ablate
(configuration grids). Exit codes are a stable contract: 0 success,
1 missing input, 2 bad argument, 3 data inconsistency. Every run writes a
JSON snapshot of its configuration next to its outputs, and a fixed --seed
makes file outputs bit-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import evalharness, geometry, kitti, retrieval, simlabel
from .descio import load_descriptor_set, load_raster, save_raster
from .types import ContractError, DataError, DimensionError, FormatError, Modality, RasterKind

EXIT_OK = 0
EXIT_MISSING_INPUT = 1
EXIT_BAD_ARGUMENT = 2
EXIT_DATA_INCONSISTENCY = 3

GRID_AXES = ("label_method", "loss", "rerank", "w_range", "w_bev", "d_th", "k")


def _write_config_snapshot(args: argparse.Namespace, out_dir: Path) -> None:
    snapshot = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True), encoding="utf-8"
    )


def _load_aligned_sets(args) -> tuple:
    """Load the four descriptor files and check modality id alignment."""
    rgb = load_descriptor_set(args.rgb)
    rng = load_descriptor_set(args.range)
    cam_bev = load_descriptor_set(args.camera_bev, expect_dim=rgb.dim)
    lidar_bev = load_descriptor_set(args.lidar_bev, expect_dim=rng.dim)
    for name, a, b in (("camera_bev", rgb, cam_bev), ("lidar_bev", rng, lidar_bev)):
        b_ids, a_ids = set(b.ids), set(a.ids)
        missing = [i for i in a.ids if i not in b_ids]
        if missing or a.count != b.count:
            first = missing[0] if missing else next(i for i in b.ids if i not in a_ids)
            raise DataError(f"id mismatch against {name} file: {first!r}")
    return rgb, rng, cam_bev, lidar_bev


def cmd_preprocess(args) -> int:
    root = kitti.resolve_data_root(args.data_root)
    manifest = kitti.discover_sequence(root, args.sequence)
    scans = sorted(manifest.velodyne_dir.glob("*.bin"))
    if not scans:
        raise FileNotFoundError(f"no frames found in {manifest.velodyne_dir}")
    cam = kitti.parse_calib(manifest.calib_file).crop_vertical(args.keep_height)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_snapshot(args, out_dir)

    failures = []
    for scan in scans:
        stem = scan.stem
        try:
            cloud = kitti.parse_velodyne(scan)
            fov = geometry.crop_cloud_to_fov(cloud, cam)
            save_raster(geometry.project_to_range_image(fov), out_dir / f"{stem}_range.rast")
            grounded = geometry.remove_ground(fov, seed=args.seed)
            save_raster(geometry.rasterize_bev(grounded.cloud), out_dir / f"{stem}_bev.rast")
            if args.depth_dir:
                depth_path = Path(args.depth_dir) / f"{stem}_depth.rast"
                depth = load_raster(depth_path, kind=RasterKind.DEPTH)
                masked = geometry.edge_noise_mask(depth, method=args.edge_method)
                cam_cloud = geometry.backproject_depth(masked, cam)
                cam_ground = geometry.remove_ground(cam_cloud, seed=args.seed)
                save_raster(
                    geometry.rasterize_bev(cam_ground.cloud), out_dir / f"{stem}_cambev.rast"
                )
        except (OSError, ValueError) as exc:
            failures.append((stem, exc))
            print(f"frame {stem}: {exc}", file=sys.stderr)
    if failures:
        print(f"{len(failures)}/{len(scans)} frames failed", file=sys.stderr)
        return EXIT_MISSING_INPUT
    return EXIT_OK


def cmd_label(args) -> int:
    poses = kitti.parse_poses(args.poses)
    if args.camera_frame:
        poses = [kitti.camera_pose_to_ground(p) for p in poses]
    ids = [f"{i:06d}" for i in range(len(poses))]
    q_idx = _parse_id_list(args.query_ids, len(poses))
    d_idx = _parse_id_list(args.db_ids, len(poses))
    params = simlabel.SimilarityParams(d_th=args.d_th, tau=args.tau)
    pts = simlabel.sample_sector_points(simlabel.SectorSpec(), seed=args.seed)

    clouds = None
    if args.method == "pointcloud_mnn":
        if not args.sequence:
            raise ContractError("pointcloud_mnn needs --sequence and a data root")
        root = kitti.resolve_data_root(args.data_root)
        manifest = kitti.discover_sequence(root, args.sequence)
        clouds = {}
        for i in sorted(set(q_idx) | set(d_idx)):
            scan = manifest.velodyne_dir / f"{i:06d}.bin"
            clouds[i] = geometry.voxel_downsample(kitti.parse_velodyne(scan))

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_snapshot(args, out_dir)
    out_path = out_dir / f"labels_{args.method}.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "db_id", "method", "similarity"])
        for qi in q_idx:
            for di in d_idx:
                sim = _similarity(args.method, poses, qi, di, params, pts, clouds, args.seed)
                writer.writerow([ids[qi], ids[di], args.method, f"{sim:.6f}"])
    print(f"wrote {out_path}")
    return EXIT_OK


def _parse_id_list(spec: str, n: int) -> list[int]:
    if spec == "all":
        return list(range(n))
    try:
        idx = [int(tok) for tok in spec.split(",") if tok]
    except ValueError:
        raise ContractError(f"bad id list {spec!r}") from None
    for i in idx:
        if not 0 <= i < n:
            raise DataError(f"pose index {i} out of range (have {n})")
    return idx


def _similarity(method, poses, qi, di, params, pts, clouds, seed) -> float:
    pi, pj = poses[qi], poses[di]
    if method == "points_avg":
        return simlabel.sim_points_avg(pi, pj, pts, params)
    if method == "area_overlap":
        return simlabel.sim_sector_overlap(pi, pj, seed=seed)
    if method == "pointcloud_mnn":
        return simlabel.sim_pointcloud_mnn(clouds[qi], clouds[di], pi, pj, params)
    if method == "exp_neg_distance":
        return simlabel.sim_exp_neg_distance(pi, pj, params)
    if method == "binary_pos_heading":
        return simlabel.sim_binary_pose_heading(pi, pj, params)
    raise ContractError(f"unknown label method {method!r}")


def _synthetic_inputs(args):
    scenario = evalharness.SyntheticScenario(seed=args.seed)
    range_set, bev_set, poses = evalharness.generate_synthetic_descriptors(scenario)
    db_ids, q_ids = scenario.split()
    half = len(db_ids)
    truth = kitti.build_ground_truth(poses[half:], poses[:half], db_ids, t=args.t)
    return (
        range_set.subset(q_ids, Modality.RGB),
        range_set.subset(db_ids),
        bev_set.subset(q_ids, Modality.CAMERA_BEV),
        bev_set.subset(db_ids),
        truth,
    )


def cmd_retrieve(args) -> int:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_snapshot(args, out_dir)
    params = retrieval.RerankParams(k=args.k, w_range=args.w_range, w_bev=args.w_bev)

    if args.synthetic:
        q_range, db_range, q_bev, db_bev, truth = _synthetic_inputs(args)
        rankings = evalharness.run_retrieval(q_range, db_range, q_bev, db_bev, params)
        phase1 = evalharness.run_retrieval(q_range, db_range, rerank=False)
        reports = [
            evalharness.make_report("phase1", "synthetic", phase1, truth, db_range.count),
            evalharness.make_report(
                "fused", "synthetic", rankings, truth, db_range.count,
                {"k": args.k, "w_range": args.w_range, "w_bev": args.w_bev},
            ),
        ]
        evalharness.write_reports_csv(reports, out_dir / "report.csv")
        evalharness.write_reports_json(reports, out_dir / "report.json")
        for rep in reports:
            print(f"{rep.method}: r@1={rep.r_at_1:.4f} r@5={rep.r_at_5:.4f} r@1%={rep.r_at_1pct:.4f}")
    else:
        for name in ("rgb", "range", "camera_bev", "lidar_bev"):
            if getattr(args, name) is None:
                raise ContractError(f"--{name.replace('_', '-')} is required without --synthetic")
        rgb, rng_set, cam_bev, lidar_bev = _load_aligned_sets(args)
        range_index = retrieval.SearchIndex(rng_set)
        bev_index = retrieval.SearchIndex(lidar_bev)
        rankings = [
            retrieval.retrieve_full(
                qid, rgb.get(qid), cam_bev.get(qid), range_index, bev_index, params
            )
            for qid in rgb.ids
        ]
    retrieval.write_rankings_csv(rankings, out_dir / "rankings.csv")
    print(f"wrote {out_dir / 'rankings.csv'} ({len(rankings)} queries)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rankings = retrieval.read_rankings_csv(args.rankings)
    rankings.sort(key=lambda rl: rl.query_id)
    q_poses = kitti.parse_poses(args.query_poses)
    db_poses = kitti.parse_poses(args.db_poses)
    if args.camera_frame:
        q_poses = [kitti.camera_pose_to_ground(p) for p in q_poses]
        db_poses = [kitti.camera_pose_to_ground(p) for p in db_poses]
    if len(q_poses) != len(rankings):
        raise DataError(
            f"{len(rankings)} ranked queries but {len(q_poses)} query poses"
        )
    if args.db_ids:
        db_ids = Path(args.db_ids).read_text(encoding="utf-8").split()
    else:
        db_ids = [f"{i:06d}" for i in range(len(db_poses))]
    truth = kitti.build_ground_truth(q_poses, db_poses, db_ids, t=args.t)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_snapshot(args, out_dir)
    n_values = [int(tok) for tok in args.n.split(",") if tok]
    for n in n_values:
        print(f"recall@{n}: {evalharness.recall_at_n(rankings, truth, n):.4f}")
    report = evalharness.make_report(
        "evaluate", args.sequence, rankings, truth, len(db_poses),
        {"t": args.t, "pct": args.pct}, pct=args.pct,
    )
    evalharness.write_reports_csv([report], out_dir / "report.csv")
    evalharness.write_reports_json([report], out_dir / "report.json")
    print(f"recall@{args.pct:g}%: {report.r_at_1pct:.4f} over {report.query_count} queries")
    return EXIT_OK


def _parse_grid(spec: str) -> dict[str, list[str]]:
    axes: dict[str, list[str]] = {}
    for clause in spec.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        if "=" not in clause:
            raise ContractError(f"grid clause {clause!r} must look like key=v1,v2")
        key, _, vals = clause.partition("=")
        key = key.strip()
        if key not in GRID_AXES:
            raise ContractError(f"unknown grid axis {key!r}; valid: {', '.join(GRID_AXES)}")
        axes[key] = [v.strip() for v in vals.split(",") if v.strip()]
        if not axes[key]:
            raise ContractError(f"grid axis {key!r} has no values")
    if not axes:
        raise ContractError("empty grid")
    return axes


def _parse_bool(tok: str) -> bool:
    if tok.lower() in ("on", "true", "1", "yes"):
        return True
    if tok.lower() in ("off", "false", "0", "no"):
        return False
    raise ContractError(f"bad boolean {tok!r}")


def cmd_ablate(args) -> int:
    axes = _parse_grid(args.grid)
    if args.synthetic:
        q_range, db_range, q_bev, db_bev, truth = _synthetic_inputs(args)
    else:
        for name in ("rgb", "range", "camera_bev", "lidar_bev"):
            if getattr(args, name) is None:
                raise ContractError(f"--{name.replace('_', '-')} is required without --synthetic")
        rgb, rng_set, cam_bev, lidar_bev = _load_aligned_sets(args)
        q_range, db_range, q_bev, db_bev = rgb, rng_set, cam_bev, lidar_bev
        if not args.query_poses or not args.db_poses:
            raise ContractError("file-mode ablation needs --query-poses and --db-poses")
        q_poses = kitti.parse_poses(args.query_poses)
        db_poses = kitti.parse_poses(args.db_poses)
        if args.camera_frame:
            q_poses = [kitti.camera_pose_to_ground(p) for p in q_poses]
            db_poses = [kitti.camera_pose_to_ground(p) for p in db_poses]
        truth = kitti.build_ground_truth(q_poses, db_poses, list(db_range.ids), t=args.t)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_snapshot(args, out_dir)

    keys = sorted(axes)
    reports = []
    all_skipped = []
    for combo_vals in itertools.product(*(axes[k] for k in keys)):
        combo = dict(zip(keys, combo_vals))
        cell = evalharness.AblationCell(
            label_method=combo.get("label_method", "points_avg"),
            loss=combo.get("loss", "generalized_triplet"),
            rerank=_parse_bool(combo.get("rerank", "on")),
            w_range=float(combo.get("w_range", 0.5)),
            w_bev=float(combo.get("w_bev", 0.5)),
        )
        k = int(combo.get("k", args.k))
        cell_reports, skipped = evalharness.run_ablation(
            [cell], q_range, db_range, truth, q_bev, db_bev, k=k
        )
        all_skipped.extend(skipped)
        for rep in cell_reports:
            if "d_th" in combo:
                rep = replace(
                    rep,
                    method=f"{rep.method}/d_th={combo['d_th']}",
                    params={**rep.params, "d_th": float(combo["d_th"])},
                )
            reports.append(rep)

    evalharness.write_reports_csv(reports, out_dir / "ablation.csv")
    header = f"{'method':<52} {'r@1':>7} {'r@5':>7} {'r@1%':>7} {'queries':>8}"
    print(header)
    print("-" * len(header))
    for rep in reports:
        print(
            f"{rep.method:<52} {rep.r_at_1:>7.4f} {rep.r_at_5:>7.4f} "
            f"{rep.r_at_1pct:>7.4f} {rep.query_count:>8d}"
        )
    for cell, reason in all_skipped:
        print(f"skipped {cell.method_string()}: {reason}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbvpr",
        description="Cross-modal place retrieval: preprocess, label, retrieve, evaluate, ablate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--data-root", default=None, help="dataset root (or RB_DATA_ROOT)")
        p.add_argument("--output-dir", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("preprocess", help="scans -> range and BEV rasters")
    common(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--keep-height", type=int, default=205)
    p.add_argument("--depth-dir", default=None, help="directory of *_depth.rast camera depth maps")
    p.add_argument("--edge-method", choices=("sobel", "canny"), default="sobel")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("label", help="pairwise similarity CSV")
    common(p)
    p.add_argument("--poses", required=True)
    p.add_argument("--method", choices=simlabel.LABEL_METHODS, required=True)
    p.add_argument("--query-ids", default="all", help="comma-separated pose indices or 'all'")
    p.add_argument("--db-ids", default="all")
    p.add_argument("--d-th", type=float, default=7.5)
    p.add_argument("--tau", type=float, default=3.0)
    p.add_argument("--sequence", default=None, help="needed for pointcloud_mnn")
    p.add_argument("--camera-frame", action="store_true", help="poses are camera-frame (KITTI)")
    p.set_defaults(func=cmd_label)

    def retrieval_inputs(p):
        p.add_argument("--synthetic", action="store_true", help="use the built-in scenario")
        p.add_argument("--rgb")
        p.add_argument("--range")
        p.add_argument("--camera-bev", dest="camera_bev")
        p.add_argument("--lidar-bev", dest="lidar_bev")
        p.add_argument("--k", type=int, default=60)
        p.add_argument("--t", type=float, default=10.0)

    p = sub.add_parser("retrieve", help="two-phase ranked lists")
    common(p)
    retrieval_inputs(p)
    p.add_argument("--w-range", type=float, default=0.5)
    p.add_argument("--w-bev", type=float, default=0.5)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("evaluate", help="recall report from ranked lists")
    common(p)
    p.add_argument("--rankings", required=True)
    p.add_argument("--query-poses", required=True)
    p.add_argument("--db-poses", required=True)
    p.add_argument("--db-ids", default=None, help="file of db ids aligned with --db-poses")
    p.add_argument("--camera-frame", action="store_true")
    p.add_argument("--sequence", default="unknown")
    p.add_argument("--t", type=float, default=10.0)
    p.add_argument("--n", default="1,5")
    p.add_argument("--pct", type=float, default=1.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="configuration grid")
    common(p)
    retrieval_inputs(p)
    p.add_argument("--grid", required=True, help="e.g. 'rerank=on,off;w_bev=0.3,0.5'")
    p.add_argument("--query-poses", default=None)
    p.add_argument("--db-poses", default=None)
    p.add_argument("--camera-frame", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGUMENT
    except (FormatError, DataError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_INCONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
