"""TSDF volume: integration, raycast surface prediction, point-to-plane ICP
against the prediction, and volume re-anchoring as the camera travels."""
from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .errors import InsufficientOverlap
from .geometry import Intrinsics, Pose, backproject_depth
from .preprocess import NormalMap, compute_normals

log = logging.getLogger(__name__)


class IllConditionedWarning(UserWarning):
    """The ICP normal equations are close to singular (e.g. planar scene)."""


@dataclass
class VolumeParams:
    resolution: int = 256
    voxel_size: float = 3.0 / 256
    trunc_voxels: float = 4.0  # mu = trunc_voxels * voxel_size
    max_weight: float = 128.0  # W_alpha
    shift_threshold: float = 0.75  # meters


class TsdfVolume:
    """Dense voxel grid indexed [x, y, z]; voxel (i, j, k) sits at
    origin + (i, j, k) * voxel_size. Weight 0 marks unobserved voxels."""

    def __init__(self, resolution=256, voxel_size=3.0 / 256, origin=(0.0, 0.0, 0.0),
                 trunc: float | None = None, max_weight: float = 128.0):
        res = (resolution,) * 3 if np.isscalar(resolution) else tuple(int(r) for r in resolution)
        if min(res) < 2 or not voxel_size > 0:
            raise ValueError("volume needs >= 2 voxels per axis and a positive voxel size")
        self.resolution = res
        self.voxel_size = float(voxel_size)
        self.origin = np.array(origin, dtype=np.float64).reshape(3)
        self.trunc = 4.0 * self.voxel_size if trunc is None else float(trunc)
        self.max_weight = float(max_weight)
        self.tsdf = np.ones(res, dtype=np.float32)
        self.weight = np.zeros(res, dtype=np.float32)

    @classmethod
    def centered_at(cls, center, params: VolumeParams | None = None) -> "TsdfVolume":
        p = params or VolumeParams()
        half = (p.resolution - 1) / 2.0 * p.voxel_size
        return cls(p.resolution, p.voxel_size, np.asarray(center, dtype=np.float64) - half,
                   p.trunc_voxels * p.voxel_size, p.max_weight)

    @property
    def center(self) -> np.ndarray:
        return self.origin + (np.array(self.resolution) - 1) / 2.0 * self.voxel_size

    @property
    def observed(self) -> np.ndarray:
        return self.weight > 0

    def voxel_positions(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.resolution[axis]) * self.voxel_size

    def write_sdf(self, sdf_fn, weight: float = 1.0, band: float | None = None):
        """Fill the grid from an analytic signed distance function (meters,
        positive outside). Voxels with |sdf| > band stay unobserved when a
        band is given."""
        X, Y, Z = np.meshgrid(*(self.voxel_positions(a) for a in range(3)), indexing="ij", copy=False)
        for i in range(self.resolution[0]):
            d = np.asarray(sdf_fn(X[i], Y[i], Z[i]), dtype=np.float64)
            self.tsdf[i] = np.clip(d / self.trunc, -1.0, 1.0)
            self.weight[i] = weight if band is None else np.where(np.abs(d) <= band, weight, 0.0)

    def copy(self) -> "TsdfVolume":
        v = TsdfVolume(self.resolution, self.voxel_size, self.origin, self.trunc, self.max_weight)
        v.tsdf[...] = self.tsdf
        v.weight[...] = self.weight
        return v

    # flat binary dump: int32 resolution[3], float32 voxel_size, float32 origin[3],
    # float32 mu, then (tsdf, weight) float32 pairs with x varying fastest
    def dump(self, path):
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3i", *self.resolution))
            fh.write(struct.pack("<f3ff", self.voxel_size, *self.origin, self.trunc))
            inter = np.stack([self.tsdf, self.weight], axis=-1).transpose(2, 1, 0, 3)
            fh.write(np.ascontiguousarray(inter, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path, max_weight: float = 128.0) -> "TsdfVolume":
        with open(path, "rb") as fh:
            res = struct.unpack("<3i", fh.read(12))
            vs, ox, oy, oz, mu = struct.unpack("<f3ff", fh.read(20))
            data = np.frombuffer(fh.read(), dtype="<f4")
        vol = cls(res, vs, (ox, oy, oz), mu, max_weight)
        data = data.reshape(res[2], res[1], res[0], 2).transpose(2, 1, 0, 3)
        vol.tsdf[...] = data[..., 0]
        vol.weight[...] = data[..., 1]
        return vol


@dataclass(eq=False)
class SurfacePrediction:
    """Per-pixel predicted surface in world coordinates."""

    points: np.ndarray  # (H, W, 3)
    normals: np.ndarray  # (H, W, 3), unit, pointing toward free space
    valid: np.ndarray  # (H, W)
    pose: Pose  # camera-to-world pose the prediction was rendered from
    intrinsics: Intrinsics

    def depth(self) -> np.ndarray:
        """Predicted camera-frame depth, 0 where invalid."""
        inv = self.pose.inverse()
        z = self.points @ inv.rotation[2] + inv.translation[2]
        return np.where(self.valid, z, 0.0)


@dataclass
class WorldModel:
    """Append-only store of surface points that left the volume."""

    chunks: list = field(default_factory=list)

    def append(self, pts: np.ndarray):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        if len(pts):
            self.chunks.append(pts)

    @property
    def points(self) -> np.ndarray:
        return np.concatenate(self.chunks) if self.chunks else np.zeros((0, 3))

    def __len__(self):
        return sum(len(c) for c in self.chunks)


def integrate(vol: TsdfVolume, depth: np.ndarray, intr: Intrinsics, camera_pose: Pose, weight: float = 1.0,
              blend_max: float | None = None):
    """Fuse one depth map (meters) seen from ``camera_pose`` (camera-to-world).

    Depth is sampled bilinearly at a voxel's projection when its four
    neighbouring pixels agree within ``blend_max`` (default mu), else at the
    nearest pixel; nearest-only sampling leaves a staircase on slanted surfaces.
    """
    if not weight > 0:
        return
    inv = camera_pose.inverse()
    blend = vol.trunc if blend_max is None else float(blend_max)
    kernels.tsdf_integrate(vol.tsdf, vol.weight, vol.origin, vol.voxel_size, vol.trunc, vol.max_weight,
                           np.ascontiguousarray(depth, dtype=np.float64), intr.fx, intr.fy, intr.cx, intr.cy,
                           np.ascontiguousarray(inv.rotation), np.ascontiguousarray(inv.translation), float(weight),
                           blend)


def raycast(vol: TsdfVolume, camera_pose: Pose, intr: Intrinsics, near: float = 0.1, far: float = 20.0,
            min_incidence_cos: float = 0.03) -> SurfacePrediction:
    pts, nrm, ok = kernels.tsdf_raycast(
        vol.tsdf, vol.weight, vol.origin, vol.voxel_size, vol.trunc,
        np.ascontiguousarray(camera_pose.rotation), np.ascontiguousarray(camera_pose.translation),
        intr.fx, intr.fy, intr.cx, intr.cy, intr.height, intr.width, near, far)
    # a ray that only grazes the surface (beyond ~88 deg) has an ill-conditioned
    # crossing; drop it rather than report a range that may be off by voxels
    if min_incidence_cos > 0 and ok.any():
        d = pts[ok] - camera_pose.translation
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        graze = -np.einsum("ij,ij->i", d, nrm[ok]) < min_incidence_cos
        if graze.any():
            idx = np.flatnonzero(ok)[graze]
            ok.flat[idx] = False
            pts.reshape(-1, 3)[idx] = 0.0
            nrm.reshape(-1, 3)[idx] = 0.0
    return SurfacePrediction(pts, nrm, ok, camera_pose, intr)


# ICP --------------------------------------------------------------------


@dataclass
class IcpParams:
    strides: tuple = (4, 2, 1)  # coarse to fine
    iterations: tuple = (4, 5, 10)
    dist_thresh: float = 0.10  # meters
    angle_thresh: float = 20.0  # degrees
    min_fitness: float = 0.1
    min_pairs: int = 100
    eig_cutoff: float = 1e-4  # relative; smaller eigen-directions are left unchanged
    condition_warn: float = 1e6
    max_backtracks: int = 6


@dataclass(eq=False)
class IcpResult:
    pose: Pose
    fitness: float
    inliers: int
    residuals: list  # per level: inlier mean squared residual after each accepted iterate
    condition: float  # largest condition number seen

    def __iter__(self):
        yield self.pose
        yield self.fitness


def twist_to_pose(xi) -> Pose:
    """Small left-multiplied update: rotation exp(omega), translation v."""
    xi = np.asarray(xi, dtype=np.float64)
    return Pose(Rotation.from_rotvec(xi[:3]).as_matrix(), xi[3:])


def _solve_truncated(A: np.ndarray, b: np.ndarray, cutoff: float):
    lam, V = np.linalg.eigh(A)
    lmax = lam[-1]
    if not lmax > 0:
        return np.zeros(6), math.inf
    keep = lam > cutoff * lmax
    cond = lmax / lam[0] if lam[0] > 0 else math.inf
    coef = (V[:, keep].T @ b) / lam[keep]
    return -(V[:, keep] @ coef), cond


def _source_level(src_pts_full, src_nrm: NormalMap, depth, stride):
    pts = src_pts_full[::stride, ::stride]
    ok = (depth[::stride, ::stride] > 0) & src_nrm.valid[::stride, ::stride]
    return np.ascontiguousarray(pts[ok]), np.ascontiguousarray(src_nrm.normals[::stride, ::stride][ok])


def icp_point_to_plane(depth: np.ndarray, intr: Intrinsics, target: SurfacePrediction, initial_guess: Pose,
                       params: IcpParams | None = None, normals: NormalMap | None = None) -> IcpResult:
    """Refine the source camera-to-world pose against a surface prediction.

    Each step solves the 6x6 normal equations of the linearized residual
    n_t . (T(p_s) - p_t) and is accepted only if it does not raise the inlier
    mean squared residual; otherwise it is halved, and the level ends when no
    shortened step helps.
    """
    p = params or IcpParams()
    if int(target.valid.sum()) < p.min_pairs:
        raise InsufficientOverlap(f"target has {int(target.valid.sum())} valid points")
    if normals is None:
        normals = compute_normals(depth, intr)
    full = backproject_depth(depth, intr)
    ti = target.intrinsics
    tinv = target.pose.inverse()
    Rt, tt = np.ascontiguousarray(tinv.rotation), np.ascontiguousarray(tinv.translation)
    tp, tn, tv = target.points, target.normals, target.valid
    cos_t = math.cos(math.radians(p.angle_thresh))

    def reduce(sp, sn, T):
        return kernels.icp_reduce(sp, sn, np.ascontiguousarray(T.rotation), np.ascontiguousarray(T.translation),
                                  tp, tn, tv, Rt, tt, ti.fx, ti.fy, ti.cx, ti.cy, p.dist_thresh, cos_t)

    T = initial_guess
    history = []
    worst_cond = 0.0
    sp = sn = None
    stats = None
    for stride, iters in zip(p.strides, p.iterations):
        sp, sn = _source_level(full, normals, depth, stride)
        stats = reduce(sp, sn, T)
        level = []
        if stats[3] < 6:
            history.append(level)
            continue
        level.append(stats[2] / stats[3])
        for _ in range(iters):
            A, b, sr2, cnt = stats
            xi, cond = _solve_truncated(A, b, p.eig_cutoff)
            worst_cond = max(worst_cond, cond)
            cur = sr2 / cnt
            accepted = False
            for _bt in range(p.max_backtracks):
                Tn = twist_to_pose(xi) @ T
                st = reduce(sp, sn, Tn)
                if st[3] >= min(p.min_pairs, cnt) and st[2] / st[3] <= cur:
                    T, stats, accepted = Tn, st, True
                    break
                xi = 0.5 * xi
            if not accepted:
                break
            level.append(stats[2] / stats[3])
            if np.linalg.norm(xi) < 1e-10:
                break
        history.append(level)
    if worst_cond > p.condition_warn:
        msg = f"ICP normal equations ill-conditioned (condition number {worst_cond:.3g})"
        log.warning(msg)
        warnings.warn(msg, IllConditionedWarning, stacklevel=2)
    count = int(stats[3]) if stats is not None else 0
    n_src = len(sp) if sp is not None else 0
    fitness = count / n_src if n_src else 0.0
    if fitness < p.min_fitness or count < p.min_pairs:
        raise InsufficientOverlap(f"fitness {fitness:.3f} with {count} pairs")
    return IcpResult(T, fitness, count, history, worst_cond)


# volume shifting ----------------------------------------------------------


def zero_crossings(tsdf: np.ndarray, weight: np.ndarray, origin, voxel_size: float, mask: np.ndarray | None = None) -> np.ndarray:
    """World positions of + to - (or - to +) sign changes along grid edges
    between observed voxels; with ``mask``, only edges whose lower voxel is
    in the mask."""
    out = []
    obs = weight > 0
    origin = np.asarray(origin, dtype=np.float64)
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        fa, fb = tsdf[tuple(a)], tsdf[tuple(b)]
        sel = obs[tuple(a)] & obs[tuple(b)] & ((fa > 0) != (fb > 0))
        if mask is not None:
            sel &= mask[tuple(a)]
        idx = np.argwhere(sel)
        if not len(idx):
            continue
        va = fa[sel].astype(np.float64)
        vb = fb[sel].astype(np.float64)
        frac = va / (va - vb)
        pos = origin + idx * voxel_size
        pos[:, axis] += frac * voxel_size
        out.append(pos)
    return np.concatenate(out) if out else np.zeros((0, 3))


def shift_volume(vol: TsdfVolume, camera_pose: Pose, shift_threshold: float, world: WorldModel) -> np.ndarray:
    """Re-center the volume on the camera once it strays past the threshold.

    Returns the integer voxel shift applied (zeros for a no-op).
    """
    cam = camera_pose.translation
    if np.linalg.norm(cam - vol.center) <= shift_threshold:
        return np.zeros(3, dtype=np.int64)
    s = np.rint((cam - vol.center) / vol.voxel_size).astype(np.int64)
    res = np.array(vol.resolution)
    s = np.clip(s, -res, res)
    if not s.any():
        return s
    exiting = np.zeros(vol.resolution, dtype=bool)
    for axis in range(3):
        sl = [slice(None)] * 3
        if s[axis] > 0:
            sl[axis] = slice(0, s[axis])
        elif s[axis] < 0:
            sl[axis] = slice(res[axis] + s[axis], None)
        else:
            continue
        exiting[tuple(sl)] = True
    world.append(zero_crossings(vol.tsdf, vol.weight, vol.origin, vol.voxel_size, exiting))
    new_t = np.ones_like(vol.tsdf)
    new_w = np.zeros_like(vol.weight)
    src, dst = [], []
    for axis in range(3):
        k = s[axis]
        src.append(slice(max(k, 0), res[axis] + min(k, 0)))
        dst.append(slice(max(-k, 0), res[axis] - max(k, 0)))
    new_t[tuple(dst)] = vol.tsdf[tuple(src)]
    new_w[tuple(dst)] = vol.weight[tuple(src)]
    vol.tsdf, vol.weight = new_t, new_w
    vol.origin = vol.origin + s * vol.voxel_size
    log.info("volume shifted by %s voxels, world model now %d points", s.tolist(), len(world))
    return s
