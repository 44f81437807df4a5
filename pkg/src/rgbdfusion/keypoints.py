"""Salient point detection on the color image and on the range image.

The color detector is a center-surround (difference of boxes) scale-space
extremum detector evaluated with integral images. The shape detector scores
range-image cells by how many independent directions of surface change meet
inside a support sphere, once for surface normals and once for
occlusion-border directions; corners score high, planes and straight edges
score zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import kernels
from .preprocess import RangeImage

COLOR, SHAPE = 0, 1
_SOURCE_NAMES = {COLOR: "color", SHAPE: "shape"}


class Keypoint(NamedTuple):
    u: float
    v: float
    response: float
    source: str


class Keypoints:
    """Struct-of-arrays keypoint list; indexing yields :class:`Keypoint`."""

    def __init__(self, uv=None, response=None, source=None, scale=None):
        self.uv = np.zeros((0, 2)) if uv is None else np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        n = len(self.uv)
        self.response = np.zeros(n) if response is None else np.asarray(response, dtype=np.float64).reshape(n)
        self.source = np.zeros(n, dtype=np.int8) if source is None else np.asarray(source, dtype=np.int8).reshape(n)
        self.scale = np.ones(n) if scale is None else np.asarray(scale, dtype=np.float64).reshape(n)

    def __len__(self):
        return len(self.uv)

    def __getitem__(self, i) -> Keypoint:
        return Keypoint(float(self.uv[i, 0]), float(self.uv[i, 1]), float(self.response[i]),
                        _SOURCE_NAMES[int(self.source[i])])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "Keypoints":
        return Keypoints(self.uv[idx], self.response[idx], self.source[idx], self.scale[idx])

    @staticmethod
    def concat(*sets: "Keypoints") -> "Keypoints":
        return Keypoints(np.concatenate([s.uv for s in sets]), np.concatenate([s.response for s in sets]),
                         np.concatenate([s.source for s in sets]), np.concatenate([s.scale for s in sets]))


@dataclass
class ColorDetectorParams:
    scales: tuple = (1, 2, 3, 4, 5, 6, 8, 10, 12)  # inner box half sizes
    response_threshold: float = 30.0  # gray levels, 0-255 image
    edge_ratio: float = 10.0
    max_keypoints: int = 1000  # 0 = unlimited


@dataclass
class ShapeDetectorParams:
    border_threshold: float = 0.2  # meters
    support_radius: float = 0.25  # meters
    interest_threshold: float = 0.04
    nms_radius: int = 3  # cells
    max_window: int = 15  # cells
    min_samples: int = 10
    min_border_samples: int = 5
    min_incidence_cos: float = 0.2  # caps the area weight of grazing cells at 5x
    refine: bool = True  # move each keypoint to its corner tip within the nms window
    max_keypoints: int = 500


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def integral_image(img: np.ndarray) -> np.ndarray:
    S = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    S[1:, 1:] = img.cumsum(0).cumsum(1)
    return S


def _box_sums(S: np.ndarray, r: int, margin: int) -> np.ndarray:
    """Sum of the (2r+1)^2 box centered at every pixel of the interior region
    [margin, H - margin) x [margin, W - margin)."""
    h, w = S.shape[0] - 1, S.shape[1] - 1
    y0, y1 = margin - r, h - margin - r
    x0, x1 = margin - r, w - margin - r
    k = 2 * r + 1
    return (S[y0 + k:y1 + k, x0 + k:x1 + k] - S[y0:y1, x0 + k:x1 + k]
            - S[y0 + k:y1 + k, x0:x1] + S[y0:y1, x0:x1])


def center_surround_responses(gray: np.ndarray, scales) -> tuple[np.ndarray, int]:
    """Mean(inner box) - mean(surrounding annulus) at every scale.

    Inner box half size n, outer box half size 2n. Returns (responses with
    shape (len(scales), H, W), margin); values within ``margin`` pixels of
    the border are zero.
    """
    h, w = gray.shape
    margin = 2 * max(scales)
    out = np.zeros((len(scales), h, w))
    if h <= 2 * margin or w <= 2 * margin:
        return out, margin
    S = integral_image(gray)
    for i, n in enumerate(scales):
        inner = _box_sums(S, n, margin)
        outer = _box_sums(S, 2 * n, margin)
        a_in = (2 * n + 1) ** 2
        a_out = (4 * n + 1) ** 2 - a_in
        out[i, margin:h - margin, margin:w - margin] = inner / a_in - (outer - inner) / a_out
    return out, margin


def _strict_extrema(L: np.ndarray) -> np.ndarray:
    """3x3x3 scale-space extrema. Ties are broken by position: a sample must
    beat the neighbours before it in (scale, y, x) order and at least equal
    the ones after it, so a flat-topped extremum yields one point, not none."""
    before = np.zeros(27, dtype=bool)
    before[:13] = True
    before = before.reshape(3, 3, 3)
    after = np.zeros(27, dtype=bool)
    after[14:] = True
    after = after.reshape(3, 3, 3)
    hi = {}
    lo = {}
    for name, fp in (("b", before), ("a", after)):
        hi[name] = ndimage.maximum_filter(L, footprint=fp, mode="constant", cval=np.inf)
        lo[name] = ndimage.minimum_filter(L, footprint=fp, mode="constant", cval=-np.inf)
    return ((L > hi["b"]) & (L >= hi["a"])) | ((L < lo["b"]) & (L <= lo["a"]))


def _harris_ok(L2: np.ndarray, y: int, x: int, r: int, ratio: float) -> bool:
    h, w = L2.shape
    win = L2[max(0, y - r - 1):min(h, y + r + 2), max(0, x - r - 1):min(w, x + r + 2)]
    gy, gx = np.gradient(win)
    gx, gy = gx[1:-1, 1:-1], gy[1:-1, 1:-1]
    a, b, c = (gx * gx).sum(), (gx * gy).sum(), (gy * gy).sum()
    det = a * c - b * b
    if det <= 0:
        return False
    return (a + c) ** 2 / det < (ratio + 1) ** 2 / ratio


def _parabolic(lm, l0, lp):
    den = lm - 2 * l0 + lp
    if den == 0:
        return 0.0
    return float(np.clip(0.5 * (lm - lp) / den, -0.5, 0.5))


def detect_color_keypoints(rgb: np.ndarray, params: ColorDetectorParams | None = None) -> Keypoints:
    p = params or ColorDetectorParams()
    gray = to_gray(rgb)
    scales = tuple(p.scales)
    L, margin = center_surround_responses(gray, scales)
    h, w = gray.shape
    cand = _strict_extrema(L) & (np.abs(L) >= p.response_threshold)
    cand[0] = cand[-1] = False
    cand[:, :margin + 1] = cand[:, h - margin - 1:] = False
    cand[:, :, :margin + 1] = cand[:, :, w - margin - 1:] = False
    ss, ys, xs = np.nonzero(cand)
    uv, resp, scl = [], [], []
    for s, y, x in zip(ss, ys, xs):
        n = scales[s]
        if not _harris_ok(L[s], y, x, n, p.edge_ratio):
            continue
        Ls = L[s]
        dx = _parabolic(Ls[y, x - 1], Ls[y, x], Ls[y, x + 1])
        dy = _parabolic(Ls[y - 1, x], Ls[y, x], Ls[y + 1, x])
        uv.append((x + dx, y + dy))
        resp.append(abs(Ls[y, x]))
        scl.append(n)
    kps = Keypoints(np.array(uv).reshape(-1, 2), resp, np.full(len(uv), COLOR), scl)
    return _strongest(kps, p.max_keypoints)


def _strongest(kps: Keypoints, limit: int) -> Keypoints:
    order = np.lexsort((kps.uv[:, 0], kps.uv[:, 1], -kps.response))
    if limit:
        order = order[:limit]
    return kps.subset(order)


def range_image_normals(ri: RangeImage, max_jump: float):
    P, ok = ri.points, ri.valid
    rows, cols = ok.shape
    normals = np.zeros((rows, cols, 3))
    nvalid = np.zeros((rows, cols), dtype=bool)
    if rows < 3 or cols < 3:
        return normals, nvalid
    R = ri.ranges
    c = R[1:-1, 1:-1]
    good = ok[1:-1, 1:-1].copy()
    for sl in ((slice(1, -1), slice(2, None)), (slice(1, -1), slice(None, -2)),
               (slice(2, None), slice(1, -1)), (slice(None, -2), slice(1, -1))):
        good &= ok[sl] & (np.abs(R[sl] - c) <= max_jump)
    n = np.cross(P[1:-1, 2:] - P[1:-1, :-2], P[2:, 1:-1] - P[:-2, 1:-1])
    nn = np.linalg.norm(n, axis=-1)
    good &= nn > 1e-15
    n = n / np.where(good, nn, 1.0)[..., None]
    flip = np.einsum("ijk,ijk->ij", n, P[1:-1, 1:-1]) > 0
    n[flip] *= -1
    normals[1:-1, 1:-1] = np.where(good[..., None], n, 0.0)
    nvalid[1:-1, 1:-1] = good
    return normals, nvalid


def range_image_borders(ri: RangeImage, threshold: float, smooth: int = 2, jump_ratio: float = 3.0):
    """Foreground cells next to a range jump, with a unit 3D direction that
    points from the cell's ray toward the occluded side.

    A step toward a neighbour counts as a jump when it exceeds ``threshold``
    and is ``jump_ratio`` times the range step on the cell's opposite side,
    so a surface receding smoothly at a grazing angle (a far floor, whose
    range steps all grow together) is not taken for a border. The raw jump
    vectors are then averaged over the border cells of a (2 smooth + 1)^2
    neighbourhood that lie within ``threshold`` in range, giving a
    pixel-stepped silhouette one consistent direction.
    """
    P, ok, R = ri.points, ri.valid, ri.ranges
    rows, cols = ok.shape
    dirs = np.zeros((rows, cols, 3))
    unit = np.where(ok[..., None], P / np.where(ok, R, 1.0)[..., None], 0.0)
    Rp = np.pad(np.where(ok, R, np.nan), 1, constant_values=np.nan)
    okp = np.pad(ok, 1)
    up = np.pad(unit, ((1, 1), (1, 1), (0, 0)))
    centre = (slice(1, rows + 1), slice(1, cols + 1))
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        fwd = (slice(1 + dr, rows + 1 + dr), slice(1 + dc, cols + 1 + dc))
        back = (slice(1 - dr, rows + 1 - dr), slice(1 - dc, cols + 1 - dc))
        step = Rp[fwd] - R
        prev = np.where(okp[back], np.abs(R - Rp[back]), 0.0)
        with np.errstate(invalid="ignore"):
            jump = ok & okp[fwd] & (step > threshold) & (step > jump_ratio * prev)
        dirs += np.where(jump[..., None], up[fwd] - up[centre], 0.0)
    nrm = np.linalg.norm(dirs, axis=-1)
    is_border = nrm > 1e-12
    dirs /= np.where(is_border, nrm, 1.0)[..., None]
    if smooth > 0:
        acc = np.zeros_like(dirs)
        Dp = np.pad(dirs, ((smooth, smooth), (smooth, smooth), (0, 0)))
        Bp = np.pad(is_border, smooth)
        Rq = np.pad(np.where(ok, R, np.inf), smooth, constant_values=np.inf)
        for dr in range(-smooth, smooth + 1):
            for dc in range(-smooth, smooth + 1):
                sl = (slice(smooth + dr, smooth + dr + rows), slice(smooth + dc, smooth + dc + cols))
                near = Bp[sl] & (np.abs(Rq[sl] - R) <= threshold)
                acc += np.where(near[..., None], Dp[sl], 0.0)
        nrm = np.linalg.norm(acc, axis=-1)
        is_border &= nrm > 1e-12
        dirs = np.where(is_border[..., None], acc / np.where(is_border, nrm, 1.0)[..., None], 0.0)
    return dirs, is_border


def _interest_parts(ri: RangeImage, p: ShapeDetectorParams):
    P = np.ascontiguousarray(ri.points)
    rng = ri.ranges
    R = float(p.support_radius)
    normals, nvalid = range_image_normals(ri, p.border_threshold)
    safe = np.where(ri.valid, rng, 1.0)
    cos = np.abs(np.einsum("ijk,ijk->ij", normals, P)) / safe
    area = np.where(nvalid, rng * rng / np.maximum(cos, p.min_incidence_cos), 0.0)
    surface = kernels.shape_interest(
        P, ri.valid, normals, nvalid, area,
        R, float(ri.angular_res), int(p.max_window), int(p.min_samples), 1)
    bdirs, is_border = range_image_borders(ri, p.border_threshold)
    if is_border.any():
        border = kernels.shape_interest(
            P, is_border, bdirs, is_border, np.where(is_border, rng, 0.0),
            R, float(ri.angular_res), int(p.max_window), int(p.min_border_samples), 2)
    else:
        border = np.zeros_like(surface)
    return surface, border, (normals, nvalid), (bdirs, is_border)


def shape_interest_map(ri: RangeImage, params: ShapeDetectorParams | None = None) -> np.ndarray:
    """Per-cell interest: the larger of a surface score and a border score.

    Surface score: middle eigenvalue of the covariance of the surface normals
    within support_radius, each weighted by the area its cell covers
    (range^2 / cos of incidence), so faces seen at grazing angles count as
    much as their true size. It is zero on planes and on two-face creases,
    and largest where three faces meet equally.

    Border score (border cells only): largest eigenvalue of the covariance of
    the border directions within support_radius, weighted by the edge length
    a cell covers (range). It is zero along a straight silhouette and largest
    where two silhouette edges meet.
    """
    p = params or ShapeDetectorParams()
    if not ri.valid.any():
        return np.zeros(ri.ranges.shape)
    surface, border, _, _ = _interest_parts(ri, p)
    return np.maximum(surface, border)


def detect_shape_keypoints(ri: RangeImage, params: ShapeDetectorParams | None = None) -> Keypoints:
    p = params or ShapeDetectorParams()
    if not ri.valid.any():
        return Keypoints()
    surface, border, nrm, bdr = _interest_parts(ri, p)
    interest = np.maximum(surface, border)
    rows, cols = interest.shape
    cand = np.nonzero((interest >= p.interest_threshold) & ri.valid)
    if not len(cand[0]):
        return Keypoints()
    score = interest[cand]
    order = np.lexsort((cand[1], cand[0], -score))
    taken = np.zeros((rows, cols), dtype=bool)
    keep = []
    k = p.nms_radius
    for o in order:
        r, c = cand[0][o], cand[1][o]
        if taken[max(0, r - k):r + k + 1, max(0, c - k):c + k + 1].any():
            continue
        taken[r, c] = True
        keep.append((r, c))
        if p.max_keypoints and len(keep) >= p.max_keypoints:
            break
    rr = np.array([r for r, _ in keep])
    cc = np.array([c for _, c in keep])
    resp = interest[rr, cc]
    if p.refine:
        for i, (r, c) in enumerate(keep):
            if border[r, c] >= surface[r, c]:
                rr[i], cc[i] = _extremal_cell(ri, r, c, k, *bdr, rays=True)
            else:
                rr[i], cc[i] = _extremal_cell(ri, r, c, k, *nrm, rays=False)
    uv = ri.source_pixel[rr, cc].astype(np.float64)
    return Keypoints(uv, resp, np.full(len(keep), SHAPE))


def _extremal_cell(ri, r, c, k, dirs, dvalid, rays):
    """Move a keypoint to the tip of the corner it sits on.

    The support-radius score stays nearly flat over a few cells around a
    corner (the contributing faces or silhouette edges remain balanced), so
    the peak cell is refined to the cell of the window that sticks out
    furthest along the window's mean direction: the mean normal for surface
    corners, the mean border direction (compared on unit rays) for
    silhouette corners. A polyhedral corner is exactly that extreme point.
    Surface windows that bend toward the mean normal (concave corners) take
    the minimum instead. Ties go to the first cell in row-major order.
    """
    r0, c0 = max(0, r - k), max(0, c - k)
    win = (slice(r0, r + k + 1), slice(c0, c + k + 1))
    ok = dvalid[win] & ri.valid[win]
    if ok.sum() < 3:
        return r, c
    D = dirs[win][ok]
    m = D.sum(axis=0)
    nm = np.linalg.norm(m)
    if nm < 1e-9:
        return r, c
    m /= nm
    P = ri.points[win][ok]
    if rays:
        P = P / np.linalg.norm(P, axis=1, keepdims=True)
        h = P @ m
    else:
        h = P @ m
        # convex when the window's points lie behind each other's tangent
        # planes on average, measured against the window centroid
        if np.mean(np.einsum("ij,ij->i", P.mean(axis=0) - P, D)) > 0:
            h = -h
    j = int(np.argmax(h))
    idx = np.flatnonzero(ok.ravel())[j]
    w = ok.shape[1]
    return r0 + idx // w, c0 + idx % w


def union_keypoints(a: Keypoints, b: Keypoints, dedup_radius: float = 3.0) -> Keypoints:
    """Merge two keypoint lists from one frame; near-duplicates (closer than
    ``dedup_radius`` pixels) collapse to the stronger one. Sorted by response
    descending, ties broken by position so the result is order independent."""
    allk = Keypoints.concat(a, b)
    if not len(allk):
        return allk
    order = np.lexsort((allk.source, allk.uv[:, 0], allk.uv[:, 1], -allk.response))
    uv = allk.uv
    kept: list[int] = []
    r2 = dedup_radius * dedup_radius
    # bucket grid keeps the duplicate search local
    cell = max(dedup_radius, 1e-9)
    grid: dict[tuple[int, int], list[int]] = {}
    for i in order:
        gx, gy = int(math.floor(uv[i, 0] / cell)), int(math.floor(uv[i, 1] / cell))
        dup = False
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                for j in grid.get((gx + ox, gy + oy), ()):
                    if (uv[i, 0] - uv[j, 0]) ** 2 + (uv[i, 1] - uv[j, 1]) ** 2 < r2:
                        dup = True
                        break
                if dup:
                    break
            if dup:
                break
        if dup:
            continue
        kept.append(i)
        grid.setdefault((gx, gy), []).append(i)
    return allk.subset(np.array(kept, dtype=np.intp))
