"""Stage 1 correspondence: symmetric Lowe ratio test.

A candidate pair (f_i, g_j) survives only if the best/second-best distance
ratio is at most lambda_ratio in BOTH directions and the two directional
matches select each other. Distances are Hamming for binary descriptors and
Euclidean for real ones; the ratio is always evaluated in float arithmetic.
Matching is exhaustive, which keeps results deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KindMismatch, TooFewCandidates
from .features import FeatureSet


@dataclass(frozen=True)
class MatchConfig:
    lambda_ratio: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.lambda_ratio < 1.0):
            raise ValueError("lambda_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    d1: float
    d2: float


def _check_kinds(F: FeatureSet, G: FeatureSet):
    if F.kind != G.kind:
        raise KindMismatch(f"{F.kind} vs {G.kind}")
    if F.descriptors.shape[1] != G.descriptors.shape[1]:
        raise KindMismatch("descriptor lengths differ")


def distance_matrix(F: FeatureSet, G: FeatureSet) -> np.ndarray:
    """(|F|, |G|) pairwise descriptor distances as float."""
    _check_kinds(F, G)
    if F.kind == "binary":
        # pack bytes into uint64 words so the popcount runs 8x fewer ops
        a = np.ascontiguousarray(F.descriptors)
        b = np.ascontiguousarray(G.descriptors)
        pad = (-a.shape[1]) % 8
        if pad:
            a = np.pad(a, ((0, 0), (0, pad)))
            b = np.pad(b, ((0, 0), (0, pad)))
        aw = a.view(np.uint64)
        bw = b.view(np.uint64)
        bits = np.bitwise_count(aw[:, None, :] ^ bw[None, :, :])
        return bits.sum(axis=2, dtype=np.int64).astype(float)
    diff = F.descriptors[:, None, :] - G.descriptors[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _two_smallest(row):
    j1 = int(np.argmin(row))
    d1 = row[j1]
    rest = row.copy()
    rest[j1] = np.inf
    j2 = int(np.argmin(rest))
    return j1, float(d1), j2, float(row[j2])


def knn2(query, fs: FeatureSet):
    """Two nearest neighbors of one descriptor: (j1, d1, j2, d2), d1 <= d2."""
    if len(fs) < 2:
        raise TooFewCandidates("need at least 2 candidate descriptors")
    q = np.asarray(query)
    if fs.kind == "binary":
        if q.dtype != np.uint8 or q.shape != (fs.descriptors.shape[1],):
            raise KindMismatch("query does not match binary descriptor shape")
        dists = np.bitwise_count(fs.descriptors ^ q).sum(axis=1).astype(float)
    else:
        if q.shape != (fs.descriptors.shape[1],):
            raise KindMismatch("query does not match real descriptor shape")
        dists = np.linalg.norm(fs.descriptors - q, axis=1)
    return _two_smallest(dists)


def _directional(dist, lambda_ratio):
    """Best match per row passing the ratio test. Returns dict row -> (col, d1, d2)."""
    out = {}
    n, m = dist.shape
    if m < 2:  # the ratio needs a second neighbor, so nothing can pass
        return out
    j1 = np.argmin(dist, axis=1)
    d1 = dist[np.arange(n), j1]
    masked = dist.copy()
    masked[np.arange(n), j1] = np.inf
    j2 = np.argmin(masked, axis=1)
    d2 = masked[np.arange(n), j2]
    # d2 == 0 means duplicate descriptors: maximally ambiguous, reject
    ok = (d2 > 0) & (d1 <= lambda_ratio * d2)
    for i in np.nonzero(ok)[0]:
        out[int(i)] = (int(j1[i]), float(d1[i]), float(d2[i]))
    return out


def ratio_match(F: FeatureSet, G: FeatureSet, cfg: MatchConfig = MatchConfig()):
    """Directional F -> G matches passing the ratio test."""
    dist = distance_matrix(F, G)
    fwd = _directional(dist, cfg.lambda_ratio)
    return [Match(i, j, d1, d2) for i, (j, d1, d2) in sorted(fwd.items())]


def symmetric_ratio_match(F: FeatureSet, G: FeatureSet, cfg: MatchConfig = MatchConfig()):
    """Mutual-best matches passing the ratio test in both directions.

    The result is one-to-one on both index sets by construction.
    """
    dist = distance_matrix(F, G)
    fwd = _directional(dist, cfg.lambda_ratio)
    bwd = _directional(dist.T, cfg.lambda_ratio)
    matches = []
    for i, (j, d1, d2) in sorted(fwd.items()):
        back = bwd.get(j)
        if back is not None and back[0] == i:
            matches.append(Match(i, j, d1, d2))
    return matches
