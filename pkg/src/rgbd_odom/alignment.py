"""Stage 2: absolute-orientation alignment and RANSAC over 3D correspondences.

umeyama_align solves the rigid absolute-orientation problem (SVD of the
cross-covariance with determinant-sign correction, scale fixed at 1).
ransac_align samples correspondence triplets for a fixed iteration budget,
scores by inlier count under lambda_inlier, then refines: refit on the
inlier set, shrink the threshold to min(3 * stddev(residuals), lambda), and
repeat until the inlier set is stable or the round budget runs out. The
returned transform maps frame-b points into frame-a coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    NoConsensus,
    TooFewInliers,
)
from .geometry import RigidTransform

LAMBDA_FLOOR = 1e-4  # meters; keeps a zero-variance inlier set from collapsing the threshold


@dataclass
class CorrespondenceSet:
    """Paired 3D points (meters) with optional per-point noise sigmas."""

    points_a: np.ndarray  # (n, 3)
    points_b: np.ndarray  # (n, 3)
    sigmas_a: Optional[np.ndarray] = None  # (n, 3)
    sigmas_b: Optional[np.ndarray] = None
    match_indices: Optional[np.ndarray] = None  # (n, 2) rows (index_a, index_b)

    def __post_init__(self):
        self.points_a = np.asarray(self.points_a, dtype=float).reshape(-1, 3)
        self.points_b = np.asarray(self.points_b, dtype=float).reshape(-1, 3)
        if self.points_a.shape != self.points_b.shape:
            raise ValueError("point lists must have equal length")
        if not (np.isfinite(self.points_a).all() and np.isfinite(self.points_b).all()):
            raise ValueError("points must be finite")

    def __len__(self):
        return self.points_a.shape[0]

    def subset(self, idx) -> "CorrespondenceSet":
        idx = np.asarray(idx)
        return CorrespondenceSet(
            self.points_a[idx],
            self.points_b[idx],
            None if self.sigmas_a is None else self.sigmas_a[idx],
            None if self.sigmas_b is None else self.sigmas_b[idx],
            None if self.match_indices is None else self.match_indices[idx],
        )


@dataclass(frozen=True)
class RansacConfig:
    lambda_inlier: float = 0.05  # meters
    max_iterations: int = 200
    refine: bool = True
    max_refine_rounds: int = 3
    min_triangle_area: float = 1e-6  # m^2; smaller triplets are skipped as degenerate
    min_inliers: int = 5
    seed: int = 0
    return_triplet_model: bool = False  # skip the inlier refit, return the raw best triplet fit

    def __post_init__(self):
        if self.lambda_inlier <= 0:
            raise ValueError("lambda_inlier must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class AlignmentResult:
    transform: RigidTransform
    inlier_indices: np.ndarray
    inlier_residuals: np.ndarray  # meters, against the returned transform
    iterations: int
    refined_threshold: float
    trace: list = field(default_factory=list)  # (iteration, triplet, inlier count, rms) when traced


def umeyama_align(P, Q) -> RigidTransform:
    """Least-squares rigid (R, t) minimizing sum ||p_i - (R q_i + t)||^2.

    Maps Q onto P. Scale is fixed at 1; the SVD determinant-sign correction
    rules out reflections.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    if P.shape != Q.shape or P.shape[0] < 3:
        raise InsufficientCorrespondences("need at least 3 paired points")
    mu_p = P.mean(axis=0)
    mu_q = Q.mean(axis=0)
    H = (P - mu_p).T @ (Q - mu_q) / P.shape[0]
    U, S, Vt = np.linalg.svd(H)
    # rank < 2 leaves the rotation unconstrained about >= 1 axis
    if S[1] <= max(1e-12, 1e-9 * S[0]):
        raise DegenerateConfiguration("cross-covariance rank < 2 (collinear points)")
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    t = mu_p - R @ mu_q
    return RigidTransform(R, t)


def residual_distances(corr: CorrespondenceSet, T: RigidTransform) -> np.ndarray:
    return np.linalg.norm(corr.points_a - T.apply(corr.points_b), axis=1)


def count_inliers(corr: CorrespondenceSet, T: RigidTransform, lam: float):
    """Indices and residuals of pairs with ||p_a - T p_b|| strictly < lam."""
    if lam <= 0:
        raise ValueError("inlier threshold must be positive")
    res = residual_distances(corr, T)
    idx = np.nonzero(res < lam)[0]
    return idx, res[idx]


def refine_threshold(residuals, lam_current: float) -> float:
    """lambda_hat = min(3 * sigma_inliers, lambda_current), clamped to
    LAMBDA_FLOOR.

    sigma_inliers is the N-1-normalized RMS of the residual distances about
    zero. Residual distances are non-negative with positive mean, so a
    3-sigma band around their mean would repeatedly truncate the tail of a
    genuinely noisy inlier population and collapse the consensus set; the
    about-zero spread gives the shrink rule a stable fixed point.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size < 2:
        raise TooFewInliers("threshold refinement needs >= 2 residuals")
    sigma = float(np.sqrt(np.sum(residuals**2) / (residuals.size - 1)))
    return max(min(3.0 * sigma, lam_current), LAMBDA_FLOOR)


def _cross_rows(u, v):
    return np.stack(
        [
            u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1],
            u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2],
            u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0],
        ],
        axis=-1,
    )


def _triangle_areas(tri_points) -> np.ndarray:
    """(m, 3, 3) stacked triangles -> (m,) areas."""
    c = _cross_rows(tri_points[:, 1] - tri_points[:, 0], tri_points[:, 2] - tri_points[:, 0])
    return 0.5 * np.linalg.norm(c, axis=-1)


def batched_rigid_align(P, Q):
    """Umeyama solution for stacks of paired clouds.

    P, Q: (m, n, 3). Returns (R (m, 3, 3), t (m, 3), ok (m,)) where ok is
    False for degenerate (rank < 2 cross-covariance) configurations.
    """
    mu_p = P.mean(axis=1)
    mu_q = Q.mean(axis=1)
    Pc = P - mu_p[:, None, :]
    Qc = Q - mu_q[:, None, :]
    H = np.einsum("mni,mnj->mij", Pc, Qc) / P.shape[1]
    U, S, Vt = np.linalg.svd(H)
    ok = S[:, 1] > np.maximum(1e-12, 1e-9 * S[:, 0])
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    U = U.copy()
    U[:, :, 2] *= d[:, None]
    R = U @ Vt
    t = mu_p - np.einsum("mij,mj->mi", R, mu_q)
    return R, t, ok


def ransac_align(
    corr: CorrespondenceSet, cfg: RansacConfig = RansacConfig(), collect_trace=False
) -> AlignmentResult:
    """Robust alignment of corresponding clouds.

    Evaluates exactly cfg.max_iterations triplet hypotheses (fixed budget,
    no adaptive exit, so results are deterministic under the seed), keeps
    the best by (inlier count, lower RMS, earlier iteration), then
    optionally refines threshold and model on the consensus set. The
    hypothesis sweep is evaluated in one vectorized batch.
    """
    n = len(corr)
    if n < 3:
        raise InsufficientCorrespondences(f"{n} correspondences, need >= 3")
    rng = np.random.default_rng(cfg.seed)
    m = cfg.max_iterations

    # 3 smallest of n uniform keys per row = uniform distinct triplet
    keys = rng.random((m, n))
    triplets = np.argpartition(keys, 2, axis=1)[:, :3]

    pa3 = corr.points_a[triplets]
    pb3 = corr.points_b[triplets]
    valid = (_triangle_areas(pa3) >= cfg.min_triangle_area) & (
        _triangle_areas(pb3) >= cfg.min_triangle_area
    )
    R, t, ok = batched_rigid_align(pa3, pb3)
    valid &= ok

    # residuals of every correspondence under every hypothesis
    moved = np.einsum("mij,nj->mni", R, corr.points_b) + t[:, None, :]
    res_all = np.linalg.norm(corr.points_a[None, :, :] - moved, axis=2)
    inlier_mask = res_all < cfg.lambda_inlier
    counts = np.where(valid, inlier_mask.sum(axis=1), -1)
    with np.errstate(invalid="ignore"):
        sq = np.where(inlier_mask, res_all**2, 0.0).sum(axis=1)
        rms = np.sqrt(np.divide(sq, counts, out=np.full(m, np.inf), where=counts > 0))
    rms[counts <= 0] = np.inf

    trace = []
    if collect_trace:
        for it in range(m):
            if valid[it]:
                trace.append(
                    (it, tuple(int(i) for i in triplets[it]), int(counts[it]), float(rms[it]))
                )

    # best by count desc, rms asc, iteration asc
    order = np.lexsort((np.arange(m), rms, -counts))
    best_it = order[0]
    if counts[best_it] < cfg.min_inliers:
        raise NoConsensus(
            f"best model has {max(int(counts[best_it]), 0)} inliers, need {cfg.min_inliers}"
        )

    T = RigidTransform(R[best_it], t[best_it])
    idx = np.nonzero(inlier_mask[best_it])[0]
    res = res_all[best_it, idx]
    lam_hat = cfg.lambda_inlier

    if not cfg.return_triplet_model:
        T = umeyama_align(corr.points_a[idx], corr.points_b[idx])
        if cfg.refine:
            prev_idx = idx
            for _ in range(cfg.max_refine_rounds):
                _, cur_res = count_inliers(corr, T, lam_hat)
                try:
                    lam_hat = refine_threshold(cur_res, lam_hat)
                except TooFewInliers:
                    break
                new_idx, _ = count_inliers(corr, T, lam_hat)
                if new_idx.size < 3:
                    break
                T = umeyama_align(corr.points_a[new_idx], corr.points_b[new_idx])
                if new_idx.size == prev_idx.size and (new_idx == prev_idx).all():
                    prev_idx = new_idx
                    break
                prev_idx = new_idx
        # final consensus against the final model so stored residuals obey lam_hat
        idx, res = count_inliers(corr, T, lam_hat)
        if idx.size >= 3:
            pass
        else:  # refinement collapsed; fall back to the pre-refinement consensus
            lam_hat = cfg.lambda_inlier
            idx, res = count_inliers(corr, T, lam_hat)

    if idx.size < cfg.min_inliers:
        raise NoConsensus(f"refined model keeps {idx.size} inliers, need {cfg.min_inliers}")

    return AlignmentResult(
        transform=T,
        inlier_indices=idx,
        inlier_residuals=res,
        iterations=cfg.max_iterations,
        refined_threshold=lam_hat,
        trace=trace,
    )
