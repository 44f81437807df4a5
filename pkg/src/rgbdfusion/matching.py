"""Descriptor matching, homography outlier rejection and 3D lifting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset_io import Frame
from .descriptors import DescriptorSet
from .errors import DegenerateConfiguration, InsufficientMatches
from .keypoints import Keypoints


@dataclass(eq=False)
class MatchSet:
    idx_prev: np.ndarray
    idx_curr: np.ndarray
    distance: np.ndarray
    stage: str = "raw"  # raw | filtered

    def __len__(self):
        return len(self.idx_prev)

    def __iter__(self):
        return zip(self.idx_prev.tolist(), self.idx_curr.tolist(), self.distance.tolist())

    def pairs(self) -> set:
        return set(zip(self.idx_prev.tolist(), self.idx_curr.tolist()))

    def subset(self, mask, stage=None) -> "MatchSet":
        return MatchSet(self.idx_prev[mask], self.idx_curr[mask], self.distance[mask], stage or self.stage)

    @staticmethod
    def empty(stage="raw") -> "MatchSet":
        z = np.zeros(0, dtype=np.int64)
        return MatchSet(z, z.copy(), np.zeros(0, dtype=np.int32), stage)


@dataclass(eq=False)
class Correspondences3D:
    src: np.ndarray  # (N, 3) prev-frame camera coordinates
    dst: np.ndarray  # (N, 3) curr-frame camera coordinates
    match_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dropped: int = 0

    def __len__(self):
        return len(self.src)


def match_bruteforce(f_prev: DescriptorSet, f_curr: DescriptorSet) -> MatchSet:
    """Mutual nearest neighbours in Hamming space over valid descriptors.

    Ties resolve to the lowest index on the searched side.
    """
    vp = np.flatnonzero(f_prev.valid)
    vc = np.flatnonzero(f_curr.valid)
    if not len(vp) or not len(vc):
        return MatchSet.empty()
    D = kernels.hamming_matrix(np.ascontiguousarray(f_prev.words[vp]), np.ascontiguousarray(f_curr.words[vc]))
    fwd = np.argmin(D, axis=1)
    bwd = np.argmin(D, axis=0)
    rows = np.arange(len(vp))
    keep = bwd[fwd] == rows
    r = rows[keep]
    c = fwd[keep]
    return MatchSet(vp[r].astype(np.int64), vc[c].astype(np.int64), D[r, c].astype(np.int32), "raw")


def _normalize(pts: np.ndarray):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return (pts - c) * s, T


def homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized direct linear transform; H maps src to dst, h33 = 1."""
    a, Ta = _normalize(np.asarray(src, dtype=np.float64))
    b, Tb = _normalize(np.asarray(dst, dtype=np.float64))
    n = len(a)
    A = np.zeros((2 * n, 9))
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    A[0::2, 0], A[0::2, 1], A[0::2, 2] = -x, -y, -1
    A[0::2, 6], A[0::2, 7], A[0::2, 8] = u * x, u * y, u
    A[1::2, 3], A[1::2, 4], A[1::2, 5] = -x, -y, -1
    A[1::2, 6], A[1::2, 7], A[1::2, 8] = v * x, v * y, v
    _, _, Vt = np.linalg.svd(A)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateConfiguration("homography with h33 = 0")
    return H / H[2, 2]


def reprojection_errors(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ph = np.c_[src, np.ones(len(src))] @ H.T
    w = ph[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = ph[:, :2] / w[:, None]
        err = np.linalg.norm(proj - dst, axis=1)
    err[~np.isfinite(err) | (np.abs(w) < 1e-12)] = np.inf
    return err


def _collinear(p: np.ndarray, eps: float = 1e-6) -> bool:
    # any three of the four sample points (nearly) on a line
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        e1, e2 = p[j] - p[i], p[k] - p[i]
        scale = max(np.dot(e1, e1), np.dot(e2, e2), 1e-300)
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) <= eps * scale:
            return True
    return False


def sample_indices(seed: int, attempt: int, n: int, k: int) -> np.ndarray:
    """k distinct indices in [0, n) for one attempt, from a counter-based stream
    keyed by the seed, so attempt a always draws the same sample."""
    g = np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF, counter=int(attempt)))
    return g.choice(n, size=k, replace=False)


def ransac_homography_filter(matches: MatchSet, kps_prev: Keypoints, kps_curr: Keypoints,
                             reproj_threshold: float = 3.0, iterations: int = 500,
                             seed: int = 42) -> tuple[MatchSet, np.ndarray]:
    n = len(matches)
    if n < 4:
        raise InsufficientMatches(f"{n} matches, homography needs 4")
    src = kps_prev.uv[matches.idx_prev]
    dst = kps_curr.uv[matches.idx_curr]
    best = None  # (count, total_err, H)
    for it in range(iterations):
        idx = sample_indices(seed, it, n, 4)
        if _collinear(src[idx]) or _collinear(dst[idx]):
            continue
        try:
            H = homography_dlt(src[idx], dst[idx])
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            continue
        if abs(np.linalg.det(H)) <= 1e-12:
            continue
        err = reprojection_errors(H, src, dst)
        inl = err <= reproj_threshold
        cnt = int(inl.sum())
        tot = float(err[inl].sum())
        if best is None or cnt > best[0] or (cnt == best[0] and tot < best[1]):
            best = (cnt, tot, H)
    if best is None:
        raise DegenerateConfiguration(f"all {iterations} homography samples were degenerate")
    H = best[2]
    inl = reprojection_errors(H, src, dst) <= reproj_threshold
    if inl.sum() >= 4:
        try:
            Hr = homography_dlt(src[inl], dst[inl])
            inl_r = reprojection_errors(Hr, src, dst) <= reproj_threshold
            if abs(np.linalg.det(Hr)) > 1e-12 and inl_r.sum() >= inl.sum():
                H, inl = Hr, inl_r
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            pass
    return matches.subset(inl, "filtered"), H


def lift_to_3d(matches: MatchSet, kps_prev: Keypoints, kps_curr: Keypoints, frame_prev: Frame, frame_curr: Frame,
               depth_prev: np.ndarray | None = None, depth_curr: np.ndarray | None = None) -> Correspondences3D:
    """Back-project both ends of each match with the depth at the rounded pixel.

    ``depth_prev`` / ``depth_curr`` override the frames' raw depth (the
    pipeline passes bilateral-filtered maps). Pairs with an invalid depth on
    either side are dropped and counted.
    """
    dp = frame_prev.depth if depth_prev is None else depth_prev
    dc = frame_curr.depth if depth_curr is None else depth_curr

    def lift(kps, idx, depth, intr):
        uv = kps.uv[idx]
        h, w = depth.shape
        ui = np.clip(np.floor(uv[:, 0] + 0.5).astype(np.int64), 0, w - 1)
        vi = np.clip(np.floor(uv[:, 1] + 0.5).astype(np.int64), 0, h - 1)
        z = depth[vi, ui]
        pts = np.stack([(uv[:, 0] - intr.cx) * z / intr.fx, (uv[:, 1] - intr.cy) * z / intr.fy, z], axis=1)
        return pts, z > 0

    a, oka = lift(kps_prev, matches.idx_prev, dp, frame_prev.intrinsics)
    b, okb = lift(kps_curr, matches.idx_curr, dc, frame_curr.intrinsics)
    ok = oka & okb
    return Correspondences3D(a[ok], b[ok], np.flatnonzero(ok), int((~ok).sum()))
