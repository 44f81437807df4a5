"""Least-squares rigid alignment and the sampled-hypothesis motion estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllSamplesDegenerate, DegenerateGeometry, EmptyCorrespondences, InsufficientCorrespondences
from .geometry import Pose
from .matching import Correspondences3D, sample_indices

REFIT_ROUNDS = 10  # inlier-set refinement passes after selection
DEGENERATE_SV = 1e-12


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 200  # N
    sample_size: int = 3  # s
    error_threshold: float = 0.05  # e_t, meters
    refit: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.max_iterations < 1 or self.sample_size < 3 or not self.error_threshold > 0:
            raise ValueError(f"invalid RansacParams {self}")


@dataclass(frozen=True, eq=False)
class MotionHypothesis:
    transform: Pose
    rms_error: float
    low_confidence: bool = False
    inliers: int = 0  # correspondences with residual <= e_t under transform
    evaluated: int = 0  # hypotheses scored, including refits


def umeyama(src, dst, allow_degenerate: bool = False) -> Pose:
    """Rigid transform T minimizing sum ||T(src_i) - dst_i||^2 (no scale).

    With ``allow_degenerate`` a collinear configuration returns one of the
    (non-unique) minimizers instead of raising; trajectory alignment needs
    this when an estimate has collapsed onto a line.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst) or len(src) < 3:
        raise DegenerateGeometry(f"need >= 3 paired points, got {len(src)} / {len(dst)}")
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    H = (src - ms).T @ (dst - md)
    U, S, Vt = np.linalg.svd(H)
    if not allow_degenerate and S[1] < DEGENERATE_SV * max(1.0, S[0]):
        raise DegenerateGeometry("points are collinear (rank-deficient cross-covariance)")
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T)) or 1.0])
    R = V @ D @ U.T
    return Pose(R, md - R @ ms)


def residuals(src, dst, T: Pose) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    return np.linalg.norm(src @ T.rotation.T + T.translation - dst, axis=1)


def transformation_rms(src, dst, T: Pose) -> float:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0:
        raise EmptyCorrespondences("no correspondences to score")
    r = residuals(src, dst, T)
    return float(np.sqrt(np.mean(r * r)))


def estimate_rigid_motion(corr: Correspondences3D, params: RansacParams | None = None,
                          seed: int | None = None) -> MotionHypothesis:
    """Best of N minimal-sample hypotheses by RMS over all correspondences.

    Attempt a draws its sample from a counter-based stream (seed, a), so the
    candidate sequence for N+1 extends the one for N. With refit enabled the
    selected hypothesis is then refit on its inliers, repeated until that
    inlier set stops changing; the returned rms is always the
    all-correspondence RMS of the returned pose.
    """
    p = params or RansacParams()
    seed = p.seed if seed is None else seed
    src, dst = np.asarray(corr.src, dtype=np.float64), np.asarray(corr.dst, dtype=np.float64)
    n = len(src)
    if n < p.sample_size:
        raise InsufficientCorrespondences(f"{n} correspondences, need {p.sample_size}")
    best_T, best_e = None, np.inf
    fitted = 0
    evaluated = 0
    for attempt in range(10 * p.max_iterations):
        if fitted >= p.max_iterations:
            break
        idx = sample_indices(seed, attempt, n, p.sample_size)
        try:
            T = umeyama(src[idx], dst[idx])
        except DegenerateGeometry:
            continue
        fitted += 1
        evaluated += 1
        e = transformation_rms(src, dst, T)
        if e < best_e:
            best_T, best_e = T, e
    if best_T is None:
        raise AllSamplesDegenerate(f"no non-degenerate sample in {10 * p.max_iterations} attempts")
    if p.refit:
        # The inlier gate starts wide enough (twice the median residual) to
        # rescue a selected hypothesis biased by gross outliers, and tightens
        # to e_t as the refits converge.
        inl = None
        for _ in range(REFIT_ROUNDS):
            r = residuals(src, dst, best_T)
            new = r <= max(p.error_threshold, 2.0 * float(np.median(r)))
            if new.sum() < 3 or (inl is not None and np.array_equal(new, inl)):
                break
            try:
                Tr = umeyama(src[new], dst[new])
            except DegenerateGeometry:
                break
            evaluated += 1
            best_T, inl = Tr, new
        best_e = transformation_rms(src, dst, best_T)
    n_in = int((residuals(src, dst, best_T) <= p.error_threshold).sum())
    return MotionHypothesis(best_T, best_e, best_e > p.error_threshold, n_in, evaluated)
