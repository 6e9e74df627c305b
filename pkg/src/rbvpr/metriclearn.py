"""Supervision math for descriptor learning.

The central piece is the generalized triplet loss, a hinge whose margin
scales with the similarity gap between the relative positive and relative
negative sample. With binary similarities (1, 0) it degenerates exactly to
the vanilla triplet loss. Analytic gradients and a central-difference
checker are included; no autodiff framework is assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .types import ContractError, DataError, DimensionError


class KinkProximityError(RuntimeError):
    """The evaluation point sits too close to a hinge kink for finite
    differences to be meaningful."""


@dataclass(frozen=True)
class EmbeddingBatch:
    vectors: np.ndarray
    frame_ids: tuple[str, ...]

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float64, order="C")
        if vecs.ndim != 2 or vecs.shape[0] < 1:
            raise DimensionError(f"vectors must be (B, d) with B >= 1, got {vecs.shape}")
        if not np.isfinite(vecs).all():
            raise DataError("embedding batch contains non-finite values")
        ids = tuple(self.frame_ids)
        if len(ids) != vecs.shape[0]:
            raise DimensionError("frame_ids length must match batch size")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "frame_ids", ids)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class TripletSpec:
    """Relative triplet: sim(anchor, rel_pos) must exceed sim(anchor, rel_neg)."""

    anchor: int
    rel_pos: int
    rel_neg: int
    sim_arp: float
    sim_arn: float

    def __post_init__(self):
        if len({self.anchor, self.rel_pos, self.rel_neg}) != 3:
            raise ContractError("triplet indices must be distinct")
        if not self.sim_arp > self.sim_arn:
            raise ContractError(
                f"sim_arp ({self.sim_arp}) must exceed sim_arn ({self.sim_arn})"
            )


@dataclass(frozen=True)
class LossParams:
    alpha_base: float = 0.6
    fixed_margin: float = 0.6
    gcl_margin: float = 1.0

    def __post_init__(self):
        if self.alpha_base < 0:
            raise DataError("alpha_base must be nonnegative")


def pairwise_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def generalized_triplet_prehinge(
    spec: TripletSpec, batch: EmbeddingBatch, params: LossParams
) -> float:
    """The pre-hinge value D(a,rp) - D(a,rn) + alpha*(sim_arp - sim_arn)."""
    v = batch.vectors
    d_rp = pairwise_distance(v[spec.anchor], v[spec.rel_pos])
    d_rn = pairwise_distance(v[spec.anchor], v[spec.rel_neg])
    return d_rp - d_rn + params.alpha_base * (spec.sim_arp - spec.sim_arn)


def generalized_triplet_loss(
    spec: TripletSpec, batch: EmbeddingBatch, params: LossParams
) -> float:
    """Hinge with an adaptive margin alpha_base * (sim_arp - sim_arn)."""
    return max(generalized_triplet_prehinge(spec, batch, params), 0.0)


def generalized_triplet_grad(
    spec: TripletSpec, batch: EmbeddingBatch, params: LossParams
) -> np.ndarray:
    """Gradient of the generalized triplet loss w.r.t. every batch vector.

    Subgradient 0 is used at the hinge kink and whenever an anchor-pair
    distance vanishes.
    """
    grad = np.zeros_like(batch.vectors)
    if generalized_triplet_prehinge(spec, batch, params) <= 0:
        return grad
    v = batch.vectors
    a, rp, rn = spec.anchor, spec.rel_pos, spec.rel_neg
    d_rp = pairwise_distance(v[a], v[rp])
    d_rn = pairwise_distance(v[a], v[rn])
    if d_rp > 0:
        u = (v[a] - v[rp]) / d_rp
        grad[a] += u
        grad[rp] -= u
    if d_rn > 0:
        u = (v[a] - v[rn]) / d_rn
        grad[a] -= u
        grad[rn] += u
    return grad


def vanilla_triplet_loss(
    anchor: np.ndarray, pos: np.ndarray, neg: np.ndarray, margin: float
) -> float:
    return max(pairwise_distance(anchor, pos) - pairwise_distance(anchor, neg) + margin, 0.0)


def generalized_contrastive_loss(
    a: np.ndarray, b: np.ndarray, sim: float, params: LossParams
) -> float:
    """Continuous-label contrastive loss: the attractive and repulsive terms
    are blended by the similarity instead of a binary label."""
    d = pairwise_distance(a, b)
    attract = sim * d * d / 2.0
    repel = (1.0 - sim) * max(0.0, params.gcl_margin - d) ** 2 / 2.0
    return attract + repel


def generalized_contrastive_grad(
    a: np.ndarray, b: np.ndarray, sim: float, params: LossParams
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the contrastive loss w.r.t. both endpoints."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = pairwise_distance(a, b)
    ga = sim * (a - b)
    if 0 < d < params.gcl_margin:
        ga -= (1.0 - sim) * (params.gcl_margin - d) * (a - b) / d
    return ga, -ga


def mine_relative_triplets(
    batch: EmbeddingBatch,
    sims: Callable[[int, int], float],
    min_gap: float = 0.01,
) -> list[TripletSpec]:
    """Enumerate every ordered triple (a, x1, x2) of distinct batch indices
    whose similarity gap sim(a,x1) - sim(a,x2) exceeds min_gap.

    Output order is lexicographic over (a, x1, x2), so repeated runs on the
    same batch are identical. Antisymmetry holds by construction: emitting
    (a, x1, x2) excludes (a, x2, x1).
    """
    if batch.size < 3:
        raise ContractError(f"mining needs a batch of at least 3, got {batch.size}")
    if min_gap < 0:
        raise ContractError("min_gap must be nonnegative")
    out: list[TripletSpec] = []
    n = batch.size
    for a in range(n):
        sa = [sims(a, x) if x != a else 0.0 for x in range(n)]
        for x1 in range(n):
            if x1 == a:
                continue
            for x2 in range(n):
                if x2 == a or x2 == x1:
                    continue
                if sa[x1] - sa[x2] > min_gap:
                    out.append(TripletSpec(a, x1, x2, sa[x1], sa[x2]))
    return out


def gem_pool(features: np.ndarray, p: float) -> np.ndarray:
    """Generalized-mean pooling of an (H, W, C) map into a C-vector.

    Values are clamped at zero first; per channel the result is
    (mean(v^p))^(1/p), computed against the channel max for stability at
    large p. p=1 is the arithmetic mean, p -> inf approaches the max.
    """
    if p < 1:
        raise ContractError(f"GeM exponent must be >= 1, got {p}")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3:
        raise DimensionError(f"features must be (H, W, C), got {feats.shape}")
    feats = np.maximum(feats, 0.0)
    flat = feats.reshape(-1, feats.shape[2])
    peak = flat.max(axis=0)
    out = np.zeros(feats.shape[2])
    nz = peak > 0
    if nz.any():
        scaled = flat[:, nz] / peak[nz]
        out[nz] = peak[nz] * np.mean(scaled**p, axis=0) ** (1.0 / p)
    return out


def finite_difference_check(
    loss: Callable[[np.ndarray], float],
    batch: EmbeddingBatch,
    analytic_grad: Callable[[np.ndarray], np.ndarray],
    eps: float = 1e-5,
    kink_margin: float | None = None,
) -> float:
    """Max relative error between central differences and the analytic
    gradient over every embedding coordinate.

    ``kink_margin`` is the loss's pre-hinge value at the evaluation point;
    when given and within 10*eps of zero the check is skipped by raising
    KinkProximityError, since the two-sided difference would straddle the
    kink.
    """
    if kink_margin is not None and abs(kink_margin) <= 10.0 * eps:
        raise KinkProximityError(
            f"pre-hinge value {kink_margin:.3e} is within 10*eps={10 * eps:.3e} of the kink"
        )
    x = np.array(batch.vectors, dtype=np.float64)
    g = np.asarray(analytic_grad(x), dtype=np.float64)
    if g.shape != x.shape:
        raise DimensionError(f"gradient shape {g.shape} != batch shape {x.shape}")
    worst = 0.0
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        hi = loss(x)
        x[idx] = orig - eps
        lo = loss(x)
        x[idx] = orig
        fd = (hi - lo) / (2.0 * eps)
        denom = max(abs(fd), abs(g[idx]))
        if denom < 1e-8:
            err = abs(fd - g[idx])
        else:
            err = abs(fd - g[idx]) / denom
        worst = max(worst, err)
        it.iternext()
    return worst
