"""Two-phase retrieval: exact inner-product search over one descriptor
modality followed by rank fusion against a second modality.

Phase 1 ranks the whole database by descriptor similarity. Phase 2 re-ranks
only the top-k candidates: both phases contribute a 1-based rank within the
candidate block and the fused score is their weighted sum (lower is better).
Candidates beyond the block keep their phase-1 order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .types import ContractError, DataError, Descriptor, DescriptorSet, DimensionError


class RankedEntry(NamedTuple):
    db_id: str
    score: float
    r1: int | None = None
    r2: int | None = None
    fused: float | None = None


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[RankedEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        ids = [e.db_id for e in entries]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate db ids in ranking for query {self.query_id!r}")
        scores = [e.score for e in entries]
        for i in range(1, len(scores)):
            if scores[i] > scores[i - 1]:
                raise ContractError(
                    f"scores must be nonincreasing, violated at position {i} "
                    f"({scores[i - 1]} -> {scores[i]})"
                )
        object.__setattr__(self, "entries", entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(e.db_id for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RerankParams:
    k: int = 60
    w_range: float = 0.5
    w_bev: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")
        if self.w_range < 0 or self.w_bev < 0:
            raise ContractError("fusion weights must be nonnegative")
        if self.w_range + self.w_bev <= 0:
            raise ContractError("at least one fusion weight must be positive")


class SearchIndex:
    """Immutable flat index over a DescriptorSet. Search is an exact scan;
    no approximation, no quantization."""

    def __init__(self, dset: DescriptorSet):
        self._dset = dset
        self._data64 = dset.data.astype(np.float64)
        self._ids = np.array(dset.ids)
        self._pos = {fid: i for i, fid in enumerate(dset.ids)}

    @property
    def dim(self) -> int:
        return self._dset.dim

    @property
    def count(self) -> int:
        return self._dset.count

    @property
    def ids(self) -> tuple[str, ...]:
        return self._dset.ids

    def descriptor(self, db_id: str) -> np.ndarray:
        return self._data64[self._pos[db_id]]

    def search(self, query: Descriptor | np.ndarray, top_n: int) -> tuple[RankedEntry, ...]:
        """Top-n entries by descending inner product, ties broken by
        ascending db id. top_n beyond the database size returns everything."""
        vec = query.vector if isinstance(query, Descriptor) else np.asarray(query)
        vec = vec.astype(np.float64)
        if vec.shape != (self.dim,):
            raise DimensionError(f"query dim {vec.shape} does not match index dim {self.dim}")
        if self.count == 0:
            return ()
        scores = self._data64 @ vec
        order = np.lexsort((self._ids, -scores))[: min(top_n, self.count)]
        return tuple(RankedEntry(str(self._ids[i]), float(scores[i])) for i in order)


def search(index: SearchIndex, query_id: str, query: Descriptor | np.ndarray, top_n: int) -> RankedList:
    return RankedList(query_id, index.search(query, top_n))


def rerank(
    phase1: RankedList,
    bev_query: Descriptor | np.ndarray,
    bev_db: SearchIndex,
    params: RerankParams = RerankParams(),
) -> RankedList:
    """Fuse phase-1 ranks with BEV ranks over the top-k candidate block.

    fused = w_range * r1 + w_bev * r2 with 1-based in-block ranks; ascending
    fused orders the block, ties fall back to r1. The tail past k is appended
    unchanged. Output ids are always a permutation of the input ids.
    """
    if len(phase1) == 0:
        raise ContractError("rerank requires a nonempty phase-1 list")
    m = min(params.k, len(phase1))
    block = phase1.entries[:m]
    tail = phase1.entries[m:]

    qvec = bev_query.vector if isinstance(bev_query, Descriptor) else np.asarray(bev_query)
    qvec = qvec.astype(np.float64)
    cand = np.empty((m, bev_db.dim))
    for i, e in enumerate(block):
        try:
            cand[i] = bev_db.descriptor(e.db_id)
        except KeyError:
            raise DataError(
                f"candidate {e.db_id!r} from phase 1 is missing from the BEV database"
            ) from None
    bev_scores = cand @ qvec

    r1 = np.arange(1, m + 1)
    # phase-2 rank: descending BEV score, ties resolved by phase-1 rank
    bev_order = np.lexsort((r1, -bev_scores))
    r2 = np.empty(m, dtype=int)
    r2[bev_order] = np.arange(1, m + 1)

    fused = params.w_range * r1 + params.w_bev * r2
    final = np.lexsort((r1, fused))

    entries = [
        RankedEntry(block[i].db_id, -float(fused[i]), int(r1[i]), int(r2[i]), float(fused[i]))
        for i in final
    ]
    # tail scores sit strictly below every block score (-fused >= -(w1+w2)*m)
    floor = (params.w_range + params.w_bev) * m
    entries.extend(
        RankedEntry(e.db_id, -floor - j - 1.0) for j, e in enumerate(tail)
    )
    return RankedList(phase1.query_id, tuple(entries))


def retrieve_full(
    query_id: str,
    rgb_query: Descriptor | np.ndarray,
    bev_query: Descriptor | np.ndarray,
    range_index: SearchIndex,
    bev_index: SearchIndex,
    params: RerankParams = RerankParams(),
) -> RankedList:
    """search over the range index, then rerank against the BEV index.
    The output is a permutation of the full phase-1 ranking."""
    if set(range_index.ids) != set(bev_index.ids):
        raise DataError("range and BEV databases must cover the same id set")
    phase1 = search(range_index, query_id, rgb_query, range_index.count)
    return rerank(phase1, bev_query, bev_index, params)


def write_rankings_csv(rankings: Iterable[RankedList], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "rank", "db_id", "fused_score", "r1", "r2"])
        for rl in rankings:
            for rank, e in enumerate(rl.entries, start=1):
                writer.writerow(
                    [
                        rl.query_id,
                        rank,
                        e.db_id,
                        "" if e.fused is None else f"{e.fused:.6g}",
                        "" if e.r1 is None else e.r1,
                        "" if e.r2 is None else e.r2,
                    ]
                )


def read_rankings_csv(path: str | Path) -> list[RankedList]:
    """Inverse of write_rankings_csv up to score reconstruction: ranked
    order is preserved; synthetic scores are re-derived from row order."""
    by_query: dict[str, list[tuple[int, str, float | None, int | None, int | None]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            fused = float(row["fused_score"]) if row["fused_score"] else None
            r1 = int(row["r1"]) if row["r1"] else None
            r2 = int(row["r2"]) if row["r2"] else None
            by_query.setdefault(row["query_id"], []).append(
                (int(row["rank"]), row["db_id"], fused, r1, r2)
            )
    out = []
    for qid, rows in by_query.items():
        rows.sort(key=lambda r: r[0])
        entries = tuple(
            RankedEntry(db_id, -float(rank), r1, r2, fused)
            for rank, db_id, fused, r1, r2 in rows
        )
        out.append(RankedList(qid, entries))
    return out
