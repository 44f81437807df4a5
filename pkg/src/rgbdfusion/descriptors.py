"""Binary appearance+shape descriptors around keypoints.

Each descriptor is 256 pairwise tests on a patch of 48x48 pattern units,
where one unit is scaled so the patch spans about 0.1 m on the surface and
the pattern is rotated to the dominant gradient orientation. A bit is set if
the first sample is darker than the second, or if the two surface normals
differ markedly and the first sample is closer to the camera (convexity).
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .dataset_io import Frame
from .keypoints import Keypoints, to_gray
from .preprocess import NormalMap

N_BITS = 256
PATTERN_SEED = 0x5EED_B2A9
PATCH_SIZE = 48


def _make_pattern(n_bits: int = N_BITS, patch_size: int = PATCH_SIZE, seed: int = PATTERN_SEED) -> np.ndarray:
    # isotropic gaussian pairs, sigma = S/5, kept inside the patch
    rng = random.Random(seed)
    sigma = patch_size / 5.0
    lim = patch_size / 2 - 1
    pairs = [[max(-lim, min(lim, rng.gauss(0.0, sigma))) for _ in range(4)] for _ in range(n_bits)]
    return np.array(pairs, dtype=np.float64)  # columns x1, y1, x2, y2


PATTERN = _make_pattern()
PATTERN.setflags(write=False)


@dataclass
class DescriptorParams:
    patch_size: int = PATCH_SIZE  # pattern units
    patch_extent: float = 0.1  # meters spanned by the patch at the keypoint depth
    normal_threshold: float = 0.5  # on ||n1 - n2||^2
    min_valid_fraction: float = 0.5
    smoothing_sigma: float = 2.0
    orientation_bins: int = 36


class BinaryDescriptor(NamedTuple):
    bits: np.ndarray  # (32,) uint8, bit i of the string is bit (i % 8) of byte i // 8
    keypoint_index: int
    valid: bool


class DescriptorSet:
    """Descriptors aligned 1:1 with a keypoint list."""

    def __init__(self, bits: np.ndarray, valid: np.ndarray, angle: np.ndarray | None = None):
        self.bits = np.ascontiguousarray(bits, dtype=np.uint8).reshape(-1, N_BITS // 8)
        self.valid = np.asarray(valid, dtype=bool).reshape(len(self.bits))
        self.angle = np.zeros(len(self.bits)) if angle is None else np.asarray(angle, dtype=np.float64)

    def __len__(self):
        return len(self.bits)

    def __getitem__(self, i) -> BinaryDescriptor:
        return BinaryDescriptor(self.bits[i], int(i), bool(self.valid[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def words(self) -> np.ndarray:
        """(N, 4) uint64 view, word 0 holds bits 0..63."""
        return self.bits.view("<u8")

    def bit_array(self) -> np.ndarray:
        return np.unpackbits(self.bits, axis=1, bitorder="little").astype(bool)

    @staticmethod
    def from_bit_array(b, valid=None) -> "DescriptorSet":
        b = np.asarray(b, dtype=bool).reshape(-1, N_BITS)
        v = np.ones(len(b), dtype=bool) if valid is None else valid
        return DescriptorSet(np.packbits(b, axis=1, bitorder="little"), v)


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    ax, ay = x - x0, y - y0
    return ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x0 + 1])
            + ay * ((1 - ax) * img[y0 + 1, x0] + ax * img[y0 + 1, x0 + 1]))


def dominant_orientation(gx: np.ndarray, gy: np.ndarray, u: float, v: float, radius: float, bins: int = 36) -> float:
    """Peak of a magnitude-weighted gradient orientation histogram in a disc,
    refined by a parabola through the peak and its neighbors."""
    h, w = gx.shape
    r = int(math.ceil(radius))
    x0, x1 = max(0, int(round(u)) - r), min(w, int(round(u)) + r + 1)
    y0, y1 = max(0, int(round(v)) - r), min(h, int(round(v)) + r + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d2 = (xx - u) ** 2 + (yy - v) ** 2
    inside = d2 <= radius * radius
    ex, ey = gx[y0:y1, x0:x1][inside], gy[y0:y1, x0:x1][inside]
    mag = np.hypot(ex, ey) * np.exp(-d2[inside] / (2 * (radius / 2) ** 2))
    if not mag.size or mag.sum() <= 0:
        return 0.0
    ang = np.arctan2(ey, ex) % (2 * math.pi)
    binw = 2 * math.pi / bins
    idx = np.minimum((ang / binw).astype(np.int64), bins - 1)
    hist = np.bincount(idx, weights=mag, minlength=bins)
    # light circular smoothing so a peak split across two bins still wins
    hist = (np.roll(hist, 1) + 2 * hist + np.roll(hist, -1)) / 4
    k = int(np.argmax(hist))
    lm, l0, lp = hist[k - 1], hist[k], hist[(k + 1) % bins]
    den = lm - 2 * l0 + lp
    off = 0.5 * (lm - lp) / den if den != 0 else 0.0
    return ((k + 0.5 + off) * binw) % (2 * math.pi)


def compute_descriptors(frame: Frame, normals: NormalMap, kps: Keypoints,
                        params: DescriptorParams | None = None, depth: np.ndarray | None = None) -> DescriptorSet:
    """Descriptors for every keypoint; ``depth`` overrides the frame's raw depth
    (pass the filtered map used for the normals)."""
    p = params or DescriptorParams()
    depth = frame.depth if depth is None else depth
    n = len(kps)
    bits = np.zeros((n, N_BITS // 8), dtype=np.uint8)
    valid = np.zeros(n, dtype=bool)
    angles = np.zeros(n)
    if n == 0:
        return DescriptorSet(bits, valid, angles)
    intr = frame.intrinsics
    h, w = depth.shape
    gray = ndimage.gaussian_filter(to_gray(frame.rgb), p.smoothing_sigma, mode="nearest")
    gy, gx = np.gradient(gray)
    pattern = PATTERN if p.patch_size == PATCH_SIZE else _make_pattern(patch_size=p.patch_size)
    half = p.patch_size / 2.0
    for i in range(n):
        u, v = kps.uv[i]
        ui, vi = int(math.floor(u + 0.5)), int(math.floor(v + 0.5))
        if not (0 <= ui < w and 0 <= vi < h) or depth[vi, ui] <= 0:
            continue
        s = (intr.fx * p.patch_extent / depth[vi, ui]) / p.patch_size
        theta = dominant_orientation(gx, gy, u, v, half * s, p.orientation_bins)
        angles[i] = theta
        c, sn = math.cos(theta), math.sin(theta)
        px = np.concatenate([pattern[:, 0], pattern[:, 2]]) * s
        py = np.concatenate([pattern[:, 1], pattern[:, 3]]) * s
        xs = u + c * px - sn * py
        ys = v + sn * px + c * py
        if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
            continue
        xi = np.floor(xs + 0.5).astype(np.int64)
        yi = np.floor(ys + 0.5).astype(np.int64)
        d = depth[yi, xi]
        if np.count_nonzero(d > 0) < p.min_valid_fraction * len(d):
            continue
        inten = _bilinear(gray, xs, ys)
        nv = normals.valid[yi, xi]
        nm = normals.normals[yi, xi]
        m = N_BITS
        i1, i2 = inten[:m], inten[m:]
        d1, d2 = d[:m], d[m:]
        geo_ok = nv[:m] & nv[m:] & (d1 > 0) & (d2 > 0)
        ndiff = np.sum((nm[:m] - nm[m:]) ** 2, axis=1)
        b = (i1 < i2) | (geo_ok & (ndiff > p.normal_threshold) & (d1 < d2))
        bits[i] = np.packbits(b, bitorder="little")
        valid[i] = True
    return DescriptorSet(bits, valid, angles)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two packed 32-byte descriptors."""
    return int(np.unpackbits(np.bitwise_xor(np.asarray(a, np.uint8), np.asarray(b, np.uint8))).sum())
