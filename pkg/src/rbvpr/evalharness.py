"""Recall metrics, the synthetic descriptor oracle, and ablation drivers.

The synthetic oracle stands in for trained networks: each pose on a
trajectory maps to a smooth base embedding (random Fourier features of
planar position, so descriptor similarity decays with distance), and the
two retrieval modalities perturb that base differently. Range-modality
noise is partly a smooth random field of heading, mimicking the viewpoint
sensitivity of vertical-view descriptors; BEV-modality noise is isotropic
and smaller. A loop revisited in the opposite direction therefore produces
phase-1 mistakes that the BEV phase can correct, which is exactly the
behaviour the two-phase pipeline exists to exploit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import AbstractSet, Iterable, Sequence

import numpy as np

from .kitti import build_ground_truth
from .retrieval import RankedList, RerankParams, SearchIndex, retrieve_full, search
from .simlabel import LABEL_METHODS
from .types import (
    ContractError,
    DataError,
    DescriptorSet,
    Modality,
    Pose,
)

LOSS_NAMES = ("generalized_triplet", "vanilla_triplet", "generalized_contrastive")


@dataclass(frozen=True)
class RecallReport:
    method: str
    sequence: str
    r_at_1: float
    r_at_5: float
    r_at_1pct: float
    query_count: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("r_at_1", "r_at_5", "r_at_1pct"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {v}")
        if self.r_at_1 > self.r_at_5:
            raise DataError("recall@1 cannot exceed recall@5")

    def as_row(self) -> dict:
        return {
            "method": self.method,
            "sequence": self.sequence,
            "r_at_1": self.r_at_1,
            "r_at_5": self.r_at_5,
            "r_at_1pct": self.r_at_1pct,
            "query_count": self.query_count,
            "params_json": json.dumps(self.params, sort_keys=True),
        }


def recall_at_n(
    rankings: Sequence[RankedList],
    truth: Sequence[AbstractSet[str]],
    n: int,
) -> float:
    """Fraction of queries whose top-n contains a relevant id. Queries with
    empty truth sets are excluded from the denominator; all-empty truth
    yields 0.0."""
    if len(rankings) != len(truth):
        raise DataError("rankings and truth must align")
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    hits = 0
    considered = 0
    for rl, relevant in zip(rankings, truth):
        if not relevant:
            continue
        considered += 1
        if any(e.db_id in relevant for e in rl.entries[:n]):
            hits += 1
    return hits / considered if considered else 0.0


def recall_at_percent(
    rankings: Sequence[RankedList],
    truth: Sequence[AbstractSet[str]],
    database_size: int,
    pct: float = 1.0,
) -> float:
    if database_size < 1:
        raise ContractError("database_size must be >= 1")
    n = math.ceil(pct / 100.0 * database_size)
    return recall_at_n(rankings, truth, max(n, 1))


def make_report(
    method: str,
    sequence: str,
    rankings: Sequence[RankedList],
    truth: Sequence[AbstractSet[str]],
    database_size: int,
    params: dict | None = None,
    pct: float = 1.0,
) -> RecallReport:
    considered = sum(1 for s in truth if s)
    return RecallReport(
        method=method,
        sequence=sequence,
        r_at_1=recall_at_n(rankings, truth, 1),
        r_at_5=recall_at_n(rankings, truth, 5),
        r_at_1pct=recall_at_percent(rankings, truth, database_size, pct),
        query_count=considered,
        params=dict(params or {}),
    )


REPORT_FIELDS = ("method", "sequence", "r_at_1", "r_at_5", "r_at_1pct", "query_count", "params_json")


def write_reports_csv(reports: Iterable[RecallReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.as_row())


def write_reports_json(reports: Iterable[RecallReport], path: str | Path) -> None:
    payload = []
    for rep in reports:
        row = rep.as_row()
        row["params"] = rep.params
        del row["params_json"]
        payload.append(row)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


# --- synthetic descriptor oracle ---


def loop_trajectory(n_poses: int = 500, radius: float = 62.0) -> tuple[Pose, ...]:
    """Closed circular loop traversed twice: the first half counterclockwise,
    the second half clockwise and offset by half a step, so every revisit
    sees the same place from the opposite heading."""
    if n_poses < 4 or n_poses % 2:
        raise ContractError("loop trajectory needs an even pose count >= 4")
    half = n_poses // 2
    poses = []
    for lap, reverse in ((0, False), (1, True)):
        for i in range(half):
            frac = (i + 0.5 * lap) / half
            gamma = 2.0 * math.pi * frac
            heading = gamma + (math.pi / 2.0 if not reverse else -math.pi / 2.0)
            rot = np.array(
                [
                    [math.cos(heading), -math.sin(heading), 0.0],
                    [math.sin(heading), math.cos(heading), 0.0],
                    [0.0, 0.0, 1.0],
                ]
            )
            trans = np.array([radius * math.cos(gamma), radius * math.sin(gamma), 0.0])
            poses.append(Pose(rot, trans))
    return tuple(poses)


@dataclass(frozen=True)
class SyntheticScenario:
    """Deterministic stand-in for trained descriptors. Every field is part
    of the generation seed: equal scenarios generate equal descriptor sets."""

    trajectory: tuple[Pose, ...] = field(default_factory=loop_trajectory)
    embed_dim: int = 256
    sigma_range: float = 0.4
    sigma_bev: float = 0.2
    correlation: float = 0.8
    length_scale: float = 80.0
    heading_scale: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not self.trajectory:
            raise ContractError("trajectory must be nonempty")
        if self.embed_dim < 2:
            raise ContractError("embed_dim must be >= 2")
        if not 0.0 <= self.correlation <= 1.0:
            raise ContractError("correlation must lie in [0, 1]")
        if min(self.sigma_range, self.sigma_bev) < 0:
            raise ContractError("noise scales must be nonnegative")
        if min(self.length_scale, self.heading_scale) <= 0:
            raise ContractError("length scales must be positive")

    def frame_ids(self) -> tuple[str, ...]:
        return tuple(f"{i:06d}" for i in range(len(self.trajectory)))

    def split(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        """(database ids, query ids): first half of the trajectory is the
        database pass, second half the query pass."""
        ids = self.frame_ids()
        half = len(ids) // 2
        return ids[:half], ids[half:]


def generate_synthetic_descriptors(
    scenario: SyntheticScenario,
) -> tuple[DescriptorSet, DescriptorSet, tuple[Pose, ...]]:
    """Range-modality and BEV-modality descriptor sets over the trajectory.

    Base embedding: random Fourier features of planar position, giving an
    approximate Gaussian kernel exp(-d^2 / (2 length_scale^2)) between
    poses. Range noise mixes a smooth heading field (weight = correlation)
    with white noise; BEV noise is white. All draws come from one seeded
    generator in a fixed order.
    """
    rng = np.random.default_rng(scenario.seed)
    dim = scenario.embed_dim
    n = len(scenario.trajectory)
    xy = np.array([p.position_xy() for p in scenario.trajectory])
    headings = np.array([p.heading_xy() for p in scenario.trajectory])

    w_pos = rng.normal(0.0, 1.0 / scenario.length_scale, size=(dim, 2))
    b_pos = rng.uniform(0.0, 2.0 * math.pi, size=dim)
    base = math.sqrt(2.0 / dim) * np.cos(xy @ w_pos.T + b_pos)

    # heading enters through its unit vector so the field is 2pi-periodic
    w_head = rng.normal(0.0, 1.0 / scenario.heading_scale, size=(dim, 2))
    b_head = rng.uniform(0.0, 2.0 * math.pi, size=dim)
    hvec = np.stack([np.cos(headings), np.sin(headings)], axis=1)
    head_field = math.sqrt(2.0 / dim) * np.cos(hvec @ w_head.T + b_head)

    white_range = rng.normal(size=(n, dim)) / math.sqrt(dim)
    white_bev = rng.normal(size=(n, dim)) / math.sqrt(dim)

    c = scenario.correlation
    range_rows = base + scenario.sigma_range * (
        c * head_field + math.sqrt(1.0 - c * c) * white_range
    )
    bev_rows = base + scenario.sigma_bev * white_bev

    ids = scenario.frame_ids()
    range_set = DescriptorSet(ids, range_rows.astype(np.float32), Modality.RANGE)
    bev_set = DescriptorSet(ids, bev_rows.astype(np.float32), Modality.LIDAR_BEV)
    return range_set, bev_set, scenario.trajectory


# --- ablation driver ---


@dataclass(frozen=True)
class AblationCell:
    label_method: str = "points_avg"
    loss: str = "generalized_triplet"
    rerank: bool = True
    w_range: float = 0.5
    w_bev: float = 0.5

    def __post_init__(self):
        if self.label_method not in LABEL_METHODS:
            raise ContractError(f"unknown label method {self.label_method!r}")
        if self.loss not in LOSS_NAMES:
            raise ContractError(f"unknown loss {self.loss!r}")

    def method_string(self) -> str:
        tag = f"rerank(w={self.w_range:g},{self.w_bev:g})" if self.rerank else "phase1"
        return f"{self.label_method}/{self.loss}/{tag}"


def run_retrieval(
    query_range: DescriptorSet,
    db_range: DescriptorSet,
    query_bev: DescriptorSet | None = None,
    db_bev: DescriptorSet | None = None,
    params: RerankParams = RerankParams(),
    rerank: bool = True,
) -> list[RankedList]:
    """Rank the full database for every query, optionally fused with BEV."""
    range_index = SearchIndex(db_range)
    bev_index = SearchIndex(db_bev) if db_bev is not None else None
    out = []
    for qid in query_range.ids:
        if rerank:
            if bev_index is None or query_bev is None:
                raise DataError("rerank requested without BEV descriptors")
            out.append(
                retrieve_full(
                    qid, query_range.get(qid), query_bev.get(qid), range_index, bev_index, params
                )
            )
        else:
            out.append(search(range_index, qid, query_range.get(qid), range_index.count))
    return out


def run_ablation(
    cells: Sequence[AblationCell],
    query_range: DescriptorSet,
    db_range: DescriptorSet,
    truth: Sequence[AbstractSet[str]],
    query_bev: DescriptorSet | None = None,
    db_bev: DescriptorSet | None = None,
    k: int = 60,
    sequence: str = "synthetic",
) -> tuple[list[RecallReport], list[tuple[AblationCell, str]]]:
    """One RecallReport per grid cell. Cells whose configuration cannot be
    evaluated with the available descriptor modalities are skipped with a
    reason instead of failing the whole grid."""
    reports: list[RecallReport] = []
    skipped: list[tuple[AblationCell, str]] = []
    for cell in cells:
        if cell.rerank and (query_bev is None or db_bev is None):
            skipped.append((cell, "BEV descriptor modality unavailable"))
            continue
        params = RerankParams(k=k, w_range=cell.w_range, w_bev=cell.w_bev)
        rankings = run_retrieval(
            query_range, db_range, query_bev, db_bev, params, rerank=cell.rerank
        )
        snapshot = {
            "label_method": cell.label_method,
            "loss": cell.loss,
            "rerank": cell.rerank,
            "w_range": cell.w_range,
            "w_bev": cell.w_bev,
            "k": k,
        }
        reports.append(
            make_report(
                cell.method_string(), sequence, rankings, truth, db_range.count, snapshot
            )
        )
    return reports, skipped


def synthetic_two_phase_reports(
    scenario: SyntheticScenario = SyntheticScenario(),
    t: float = 10.0,
    k: int = 60,
    w_range: float = 0.5,
    w_bev: float = 0.5,
) -> tuple[RecallReport, RecallReport]:
    """(phase-1-only report, fused report) on a synthetic scenario, with the
    first trajectory half as database and the second as queries."""
    range_set, bev_set, poses = generate_synthetic_descriptors(scenario)
    db_ids, q_ids = scenario.split()
    half = len(db_ids)
    truth = build_ground_truth(poses[half:], poses[:half], db_ids, t=t)
    cells = [
        AblationCell(rerank=False),
        AblationCell(rerank=True, w_range=w_range, w_bev=w_bev),
    ]
    reports, skipped = run_ablation(
        cells,
        query_range=range_set.subset(q_ids, Modality.RGB),
        db_range=range_set.subset(db_ids),
        truth=truth,
        query_bev=bev_set.subset(q_ids, Modality.CAMERA_BEV),
        db_bev=bev_set.subset(db_ids),
        k=k,
    )
    assert not skipped
    return reports[0], reports[1]
