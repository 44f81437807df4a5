"""Depth smoothing, normal maps and spherical range images."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import Intrinsics, Pose, backproject_depth


@dataclass
class PreprocessParams:
    sigma_space: float = 4.5  # pixels
    sigma_range: float = 0.03  # meters
    max_depth_jump: float = 0.1  # meters; larger neighbor gaps void a normal
    angular_res: float = math.radians(0.5)


@dataclass(eq=False)
class NormalMap:
    normals: np.ndarray  # (H, W, 3), zeros where invalid
    valid: np.ndarray  # (H, W) bool


@dataclass(eq=False)
class RangeImage:
    """Spherical projection of a depth map, minimum range kept per cell.

    Cell (r, c) covers azimuth [theta0 + c*res, theta0 + (c+1)*res) and
    elevation [phi0 + r*res, ...), with azimuth = atan2(x, z) and
    elevation = atan2(y, hypot(x, z)) in the sensor frame.
    """

    ranges: np.ndarray  # (rows, cols), 0 = no return
    points: np.ndarray  # (rows, cols, 3) sensor-frame point of the kept return
    source_pixel: np.ndarray  # (rows, cols, 2) int (u, v) of the kept return, -1 if none
    angular_res: float
    theta0: float
    phi0: float
    sensor_pose: Pose = field(default_factory=Pose.identity)

    @property
    def valid(self) -> np.ndarray:
        return self.ranges > 0

    def cell_of(self, direction) -> tuple[int, int]:
        x, y, z = direction
        theta = math.atan2(x, z)
        phi = math.atan2(y, math.hypot(x, z))
        return (int(math.floor((phi - self.phi0) / self.angular_res)),
                int(math.floor((theta - self.theta0) / self.angular_res)))


def bilateral_filter(depth: np.ndarray, sigma_space: float = 4.5, sigma_range: float = 0.03) -> np.ndarray:
    """Edge-preserving smoothing of a depth map (meters, 0 = invalid).

    Window radius is ceil(3 * sigma_space). Neighbors further than
    3 * sigma_range in depth get zero weight, so depth edges survive.
    """
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    radius = int(math.ceil(3.0 * sigma_space))
    return kernels.bilateral_filter(depth, float(sigma_space), float(sigma_range), radius)


def compute_normals(depth: np.ndarray, intr: Intrinsics, max_depth_jump: float = 0.1) -> NormalMap:
    pts = backproject_depth(depth, intr)
    h, w = depth.shape
    normals = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return NormalMap(normals, valid)
    d = depth
    c = d[1:-1, 1:-1]
    left, right = d[1:-1, :-2], d[1:-1, 2:]
    up, down = d[:-2, 1:-1], d[2:, 1:-1]
    ok = (c > 0) & (left > 0) & (right > 0) & (up > 0) & (down > 0)
    for nb in (left, right, up, down):
        ok &= np.abs(nb - c) <= max_depth_jump
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    ok &= norm > 1e-15
    n = n / np.where(ok, norm, 1.0)[..., None]
    facing = np.einsum("ijk,ijk->ij", n, pts[1:-1, 1:-1])
    n = np.where((facing > 0)[..., None], -n, n)
    ok &= facing != 0
    normals[1:-1, 1:-1] = np.where(ok[..., None], n, 0.0)
    valid[1:-1, 1:-1] = ok
    return NormalMap(normals, valid)


def _angular_extent(intr: Intrinsics):
    th_lo = math.atan((-0.5 - intr.cx) / intr.fx)
    th_hi = math.atan((intr.width - 0.5 - intr.cx) / intr.fx)
    ph_lo = math.atan((-0.5 - intr.cy) / intr.fy)
    ph_hi = math.atan((intr.height - 0.5 - intr.cy) / intr.fy)
    return th_lo, th_hi, ph_lo, ph_hi


def to_range_image(depth: np.ndarray, intr: Intrinsics, angular_res: float = math.radians(0.5)) -> RangeImage:
    th_lo, th_hi, ph_lo, ph_hi = _angular_extent(intr)
    cols = int(math.ceil((th_hi - th_lo) / angular_res))
    rows = int(math.ceil((ph_hi - ph_lo) / angular_res))
    ranges = np.zeros((rows, cols))
    points = np.zeros((rows, cols, 3))
    source = np.full((rows, cols, 2), -1, dtype=np.int64)
    vs, us = np.nonzero(depth > 0)
    if len(vs):
        pts = backproject_depth(depth, intr)[vs, us]
        rng = np.linalg.norm(pts, axis=1)
        theta = np.arctan2(pts[:, 0], pts[:, 2])
        phi = np.arctan2(pts[:, 1], np.hypot(pts[:, 0], pts[:, 2]))
        c = np.clip(np.floor((theta - th_lo) / angular_res).astype(np.int64), 0, cols - 1)
        r = np.clip(np.floor((phi - ph_lo) / angular_res).astype(np.int64), 0, rows - 1)
        cell = r * cols + c
        order = np.lexsort((np.arange(len(cell)), rng, cell))
        first = np.ones(len(order), dtype=bool)
        first[1:] = cell[order][1:] != cell[order][:-1]
        win = order[first]
        rr, cc = r[win], c[win]
        ranges[rr, cc] = rng[win]
        points[rr, cc] = pts[win]
        source[rr, cc, 0] = us[win]
        source[rr, cc, 1] = vs[win]
    return RangeImage(ranges, points, source, angular_res, th_lo, ph_lo)
