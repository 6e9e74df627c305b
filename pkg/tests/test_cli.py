import csv
import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from rbvpr.cli import main
from rbvpr.descio import save_descriptor_set
from rbvpr.kitti import serialize_poses, serialize_velodyne
from rbvpr.retrieval import RankedEntry, RankedList, write_rankings_csv
from rbvpr.types import DescriptorSet, Frame, Modality, PointCloud, Pose


def pose_at(x: float, y: float = 0.0) -> Pose:
    return Pose(np.eye(3), np.array([x, y, 0.0]))


def write_pose_file(path, xs):
    serialize_poses([pose_at(x) for x in xs], path)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- exit codes ---


def test_unknown_method_exits_2(tmp_path):
    poses = tmp_path / "poses.txt"
    write_pose_file(poses, [0.0])
    with pytest.raises(SystemExit) as exc:
        main(["label", "--output-dir", str(tmp_path / "out"), "--poses", str(poses), "--method", "bogus"])
    assert exc.value.code == 2


def test_missing_pose_file_exits_1(tmp_path):
    code = main(
        [
            "label",
            "--output-dir", str(tmp_path / "out"),
            "--poses", str(tmp_path / "missing.txt"),
            "--method", "points_avg",
        ]
    )
    assert code == 1


def test_malformed_pose_file_exits_3(tmp_path):
    poses = tmp_path / "poses.txt"
    poses.write_text("1 0 0 0 0 1 0 0 0 0 1\n")
    code = main(
        [
            "label",
            "--output-dir", str(tmp_path / "out"),
            "--poses", str(poses),
            "--method", "points_avg",
        ]
    )
    assert code == 3


def test_bad_id_list_exits_2(tmp_path):
    poses = tmp_path / "poses.txt"
    write_pose_file(poses, [0.0, 1.0])
    args = [
        "label",
        "--output-dir", str(tmp_path / "out"),
        "--poses", str(poses),
        "--method", "points_avg",
    ]
    assert main(args + ["--query-ids", "0,x"]) == 2
    assert main(args + ["--query-ids", "0,5"]) == 3  # out of range is a data problem


def test_mnn_without_sequence_exits_2(tmp_path):
    poses = tmp_path / "poses.txt"
    write_pose_file(poses, [0.0])
    code = main(
        [
            "label",
            "--output-dir", str(tmp_path / "out"),
            "--poses", str(poses),
            "--method", "pointcloud_mnn",
        ]
    )
    assert code == 2


def test_retrieve_without_inputs_exits_2(tmp_path):
    assert main(["retrieve", "--output-dir", str(tmp_path / "out")]) == 2


# --- label ---


def test_label_identical_poses_score_one(tmp_path):
    poses = tmp_path / "poses.txt"
    write_pose_file(poses, [0.0, 50.0, 100.0])
    out = tmp_path / "out"
    code = main(
        [
            "label",
            "--output-dir", str(out),
            "--poses", str(poses),
            "--method", "points_avg",
        ]
    )
    assert code == 0
    rows = read_csv(out / "labels_points_avg.csv")
    assert len(rows) == 9
    table = {(r["query_id"], r["db_id"]): float(r["similarity"]) for r in rows}
    for i in range(3):
        fid = f"{i:06d}"
        assert table[(fid, fid)] == 1.0
    # 50 m apart is far beyond the 7.5 m threshold
    assert table[("000000", "000001")] == 0.0
    assert (out / "run_config.json").is_file()


def test_label_methods_rank_pairs_consistently(tmp_path):
    # points_avg and area_overlap are different estimators of the same
    # notion; over poses spread inside the interaction range their pairwise
    # orderings should agree strongly
    poses = tmp_path / "poses.txt"
    xs = [0.0, 1.2, 2.4, 3.6, 4.8, 6.0]
    write_pose_file(poses, xs)
    out = tmp_path / "out"
    for method in ("points_avg", "area_overlap"):
        assert main(
            [
                "label",
                "--output-dir", str(out),
                "--poses", str(poses),
                "--method", method,
            ]
        ) == 0
    a = read_csv(out / "labels_points_avg.csv")
    b = read_csv(out / "labels_area_overlap.csv")
    key = lambda r: (r["query_id"], r["db_id"])
    a.sort(key=key)
    b.sort(key=key)
    assert [key(r) for r in a] == [key(r) for r in b]
    rho = spearmanr(
        [float(r["similarity"]) for r in a], [float(r["similarity"]) for r in b]
    ).statistic
    assert rho > 0.8


# --- retrieve (synthetic scenario) ---


def test_retrieve_synthetic_reports_and_rankings(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["retrieve", "--synthetic", "--output-dir", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "phase1:" in captured and "fused:" in captured
    rows = read_csv(out / "report.csv")
    assert [r["method"] for r in rows] == ["phase1", "fused"]
    by_method = {r["method"]: float(r["r_at_1"]) for r in rows}
    assert by_method["fused"] >= by_method["phase1"]
    rankings = read_csv(out / "rankings.csv")
    # 250 queries, each ranked against the 250-frame database
    assert len(rankings) == 250 * 250
    assert (out / "report.json").is_file()


def test_retrieve_zero_bev_weight_matches_phase1(tmp_path):
    out = tmp_path / "out"
    code = main(
        [
            "retrieve", "--synthetic",
            "--output-dir", str(out),
            "--w-range", "1.0",
            "--w-bev", "0.0",
        ]
    )
    assert code == 0
    rows = {r["method"]: r for r in read_csv(out / "report.csv")}
    for field in ("r_at_1", "r_at_5", "r_at_1pct"):
        assert rows["fused"][field] == rows["phase1"][field]


# --- retrieve (descriptor files) ---


def _write_descriptor_fixture(tmp_path, n_db=10, n_q=3, dim=8):
    rng = np.random.default_rng(0)
    db_ids = [f"{i:06d}" for i in range(n_db)]
    q_ids = [f"{i:06d}" for i in range(n_q)]
    paths = {}
    for name, ids, modality in (
        ("rgb", q_ids, Modality.RGB),
        ("camera_bev", q_ids, Modality.CAMERA_BEV),
        ("range", db_ids, Modality.RANGE),
        ("lidar_bev", db_ids, Modality.LIDAR_BEV),
    ):
        dset = DescriptorSet(ids, rng.normal(size=(len(ids), dim)), modality)
        paths[name] = tmp_path / f"{name}.desc"
        save_descriptor_set(dset, paths[name])
    return paths


def test_retrieve_from_descriptor_files(tmp_path):
    paths = _write_descriptor_fixture(tmp_path)
    out = tmp_path / "out"
    code = main(
        [
            "retrieve",
            "--output-dir", str(out),
            "--rgb", str(paths["rgb"]),
            "--range", str(paths["range"]),
            "--camera-bev", str(paths["camera_bev"]),
            "--lidar-bev", str(paths["lidar_bev"]),
            "--k", "5",
        ]
    )
    assert code == 0
    rows = read_csv(out / "rankings.csv")
    assert len(rows) == 3 * 10
    assert {r["query_id"] for r in rows} == {"000000", "000001", "000002"}


def test_retrieve_mismatched_ids_exits_3(tmp_path):
    paths = _write_descriptor_fixture(tmp_path)
    rng = np.random.default_rng(1)
    bad = DescriptorSet(["zzzzzz"], rng.normal(size=(1, 8)), Modality.CAMERA_BEV)
    save_descriptor_set(bad, paths["camera_bev"])
    code = main(
        [
            "retrieve",
            "--output-dir", str(tmp_path / "out"),
            "--rgb", str(paths["rgb"]),
            "--range", str(paths["range"]),
            "--camera-bev", str(paths["camera_bev"]),
            "--lidar-bev", str(paths["lidar_bev"]),
        ]
    )
    assert code == 3


# --- evaluate ---


def _evaluate_fixture(tmp_path, hits=7, n_queries=10, n_db=20):
    db_xs = [50.0 * i for i in range(n_db)]
    q_xs = [50.0 * i for i in range(n_queries)]
    db_poses, q_poses = tmp_path / "db.txt", tmp_path / "q.txt"
    write_pose_file(db_poses, db_xs)
    write_pose_file(q_poses, q_xs)
    rankings = []
    for i in range(n_queries):
        right = f"{i:06d}"
        wrong = f"{i + 1:06d}"
        order = [right, wrong] if i < hits else [wrong, right]
        rest = [f"{j:06d}" for j in range(n_db) if f"{j:06d}" not in order]
        entries = tuple(
            RankedEntry(db_id, float(-r)) for r, db_id in enumerate(order + rest)
        )
        rankings.append(RankedList(f"q{i:02d}", entries))
    rank_path = tmp_path / "rankings.csv"
    write_rankings_csv(rankings, rank_path)
    return rank_path, q_poses, db_poses


def test_evaluate_recall_fixture(tmp_path, capsys):
    rank_path, q_poses, db_poses = _evaluate_fixture(tmp_path, hits=7)
    out = tmp_path / "out"
    code = main(
        [
            "evaluate",
            "--output-dir", str(out),
            "--rankings", str(rank_path),
            "--query-poses", str(q_poses),
            "--db-poses", str(db_poses),
        ]
    )
    assert code == 0
    captured = capsys.readouterr().out
    assert "recall@1: 0.7000" in captured
    assert "recall@5: 1.0000" in captured
    rows = read_csv(out / "report.csv")
    assert float(rows[0]["r_at_1"]) == 0.7
    assert float(rows[0]["r_at_5"]) == 1.0
    assert int(rows[0]["query_count"]) == 10


def test_evaluate_pose_count_mismatch_exits_3(tmp_path):
    rank_path, q_poses, db_poses = _evaluate_fixture(tmp_path)
    short = tmp_path / "short.txt"
    write_pose_file(short, [0.0, 50.0])
    code = main(
        [
            "evaluate",
            "--output-dir", str(tmp_path / "out"),
            "--rankings", str(rank_path),
            "--query-poses", str(short),
            "--db-poses", str(db_poses),
        ]
    )
    assert code == 3


# --- ablate ---


def test_ablate_unknown_axis_exits_2(tmp_path, capsys):
    code = main(
        [
            "ablate", "--synthetic",
            "--output-dir", str(tmp_path / "out"),
            "--grid", "bogus=1,2",
        ]
    )
    assert code == 2
    assert "label_method" in capsys.readouterr().err


def test_ablate_distance_threshold_grid(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(
        [
            "ablate", "--synthetic",
            "--output-dir", str(out),
            "--grid", "d_th=2.5,5.0,7.5,10.0",
        ]
    )
    assert code == 0
    rows = read_csv(out / "ablation.csv")
    assert len(rows) == 4
    suffixes = sorted(r["method"].rsplit("=", 1)[1] for r in rows)
    assert suffixes == ["10.0", "2.5", "5.0", "7.5"]
    for r in rows:
        assert json.loads(r["params_json"])["d_th"] in (2.5, 5.0, 7.5, 10.0)


def test_ablate_rerank_grid_off_rows_ignore_weights(tmp_path):
    out = tmp_path / "out"
    code = main(
        [
            "ablate", "--synthetic",
            "--output-dir", str(out),
            "--grid", "rerank=on,off;w_bev=0.3,0.5",
        ]
    )
    assert code == 0
    rows = read_csv(out / "ablation.csv")
    assert len(rows) == 4
    off = [r for r in rows if "phase1" in r["method"]]
    assert len(off) == 2
    assert off[0]["r_at_1"] == off[1]["r_at_1"]


# --- preprocess ---


def _kitti_tree(root, n_frames=2, n_points=400):
    seq = root / "sequences" / "04"
    velo = seq / "velodyne"
    velo.mkdir(parents=True)
    rng = np.random.default_rng(7)
    for i in range(n_frames):
        pts = np.column_stack(
            [
                rng.uniform(5.0, 40.0, n_points),     # ahead of the sensor
                rng.uniform(-3.0, 3.0, n_points),
                rng.uniform(-1.5, 0.5, n_points),
            ]
        )
        cloud = PointCloud(pts, Frame.LIDAR, intensity=rng.random(n_points))
        serialize_velodyne(cloud, velo / f"{i:06d}.bin")
    # x-forward lidar -> z-forward camera axis permutation, zero offset
    p2 = "P2: 600 0 613 0 0 600 185 0 0 0 1 0\n"
    tr = "Tr: 0 -1 0 0 0 0 -1 0 1 0 0 0\n"
    (seq / "calib.txt").write_text(p2 + tr)
    (root / "poses").mkdir()
    (root / "poses" / "04.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n" * n_frames)
    return root


def test_preprocess_writes_rasters_and_reruns_identically(tmp_path):
    root = _kitti_tree(tmp_path / "data")
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    for out in (out1, out2):
        code = main(
            [
                "preprocess",
                "--data-root", str(root),
                "--output-dir", str(out),
                "--sequence", "04",
            ]
        )
        assert code == 0
    names = sorted(p.name for p in out1.glob("*.rast"))
    assert names == [
        "000000_bev.rast",
        "000000_range.rast",
        "000001_bev.rast",
        "000001_range.rast",
    ]
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_preprocess_empty_sequence_exits_1(tmp_path):
    root = tmp_path / "data"
    (root / "sequences" / "04" / "velodyne").mkdir(parents=True)
    code = main(
        [
            "preprocess",
            "--data-root", str(root),
            "--output-dir", str(tmp_path / "out"),
            "--sequence", "04",
        ]
    )
    assert code == 1
