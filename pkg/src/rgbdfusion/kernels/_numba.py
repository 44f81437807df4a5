"""Loop kernels compiled with numba. Signatures mirror ``_numpy``."""
import math
import os

import numpy as np
from numba import config, njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    # skip the TBB probe: older system TBB builds only produce a warning
    config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

REFINE_ITERS = 6  # false-position steps on a raycast crossing


@njit(cache=True, parallel=True)
def bilateral_filter(depth, sigma_space, sigma_range, radius):
    h, w = depth.shape
    out = np.zeros_like(depth)
    inv_s = 0.5 / (sigma_space * sigma_space)
    inv_r = 0.5 / (sigma_range * sigma_range)
    cutoff = 3.0 * sigma_range
    size = 2 * radius + 1
    spatial = np.empty((size, size))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            spatial[dy + radius, dx + radius] = math.exp(-(dx * dx + dy * dy) * inv_s)
    for y in prange(h):
        for x in range(w):
            d0 = depth[y, x]
            if d0 <= 0.0:
                continue
            acc = 0.0
            norm = 0.0
            for dy in range(-radius, radius + 1):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-radius, radius + 1):
                    xx = x + dx
                    if xx < 0 or xx >= w:
                        continue
                    d = depth[yy, xx]
                    if d <= 0.0:
                        continue
                    diff = d - d0
                    if abs(diff) > cutoff:
                        continue
                    wt = spatial[dy + radius, dx + radius] * math.exp(-diff * diff * inv_r)
                    acc += wt * d
                    norm += wt
            out[y, x] = acc / norm
    return out


@njit(cache=True, parallel=True)
def tsdf_integrate(tsdf, weight, origin, voxel_size, trunc, max_weight,
                   depth, fx, fy, cx, cy, R, t, w_new, blend_max):
    # R, t map world -> camera
    nx, ny, nz = tsdf.shape
    h, w = depth.shape
    for i in prange(nx):
        px = origin[0] + i * voxel_size
        for j in range(ny):
            py = origin[1] + j * voxel_size
            bx = R[0, 0] * px + R[0, 1] * py + t[0]
            by = R[1, 0] * px + R[1, 1] * py + t[1]
            bz = R[2, 0] * px + R[2, 1] * py + t[2]
            for k in range(nz):
                pz = origin[2] + k * voxel_size
                zc = bz + R[2, 2] * pz
                if zc <= 1e-6:
                    continue
                xc = bx + R[0, 2] * pz
                yc = by + R[1, 2] * pz
                fu = fx * xc / zc + cx
                fv = fy * yc / zc + cy
                u = math.floor(fu + 0.5)
                v = math.floor(fv + 0.5)
                if u < 0 or u >= w or v < 0 or v >= h:
                    continue
                d = depth[int(v), int(u)]
                if d <= 0.0:
                    continue
                # bilinear (inverse) depth when the 2x2 neighbourhood is one surface
                u0 = int(math.floor(fu))
                v0 = int(math.floor(fv))
                if u0 >= 0 and v0 >= 0 and u0 + 1 < w and v0 + 1 < h:
                    d00 = depth[v0, u0]
                    d01 = depth[v0, u0 + 1]
                    d10 = depth[v0 + 1, u0]
                    d11 = depth[v0 + 1, u0 + 1]
                    lo = min(min(d00, d01), min(d10, d11))
                    hi = max(max(d00, d01), max(d10, d11))
                    if lo > 0.0 and hi - lo <= blend_max:
                        a = fu - u0
                        b = fv - v0
                        # inverse depth is affine in (u, v) on a plane
                        d = 1.0 / ((1 - b) * ((1 - a) / d00 + a / d01) + b * ((1 - a) / d10 + a / d11))
                sdf = d - zc
                if sdf < -trunc:
                    continue
                # rounded to storage precision first, so equal-weight averages commute
                f = np.float64(np.float32(min(1.0, sdf / trunc)))
                wo = np.float64(weight[i, j, k])
                tsdf[i, j, k] = (tsdf[i, j, k] * wo + f * w_new) / (wo + w_new)
                weight[i, j, k] = min(wo + w_new, max_weight)


@njit(cache=True, inline="always")
def _trilinear(tsdf, weight, origin, inv_vs, x, y, z):
    nx, ny, nz = tsdf.shape
    gx = (x - origin[0]) * inv_vs
    gy = (y - origin[1]) * inv_vs
    gz = (z - origin[2]) * inv_vs
    i = int(math.floor(gx))
    j = int(math.floor(gy))
    k = int(math.floor(gz))
    if i < 0 or j < 0 or k < 0 or i >= nx - 1 or j >= ny - 1 or k >= nz - 1:
        return 0.0, False
    fx = gx - i
    fy = gy - j
    fz = gz - k
    val = 0.0
    for di in range(2):
        wx = fx if di else 1.0 - fx
        for dj in range(2):
            wy = fy if dj else 1.0 - fy
            for dk in range(2):
                if weight[i + di, j + dj, k + dk] <= 0.0:
                    return 0.0, False
                wz = fz if dk else 1.0 - fz
                val += wx * wy * wz * tsdf[i + di, j + dj, k + dk]
    return val, True


@njit(cache=True, inline="always")
def _nearest(tsdf, weight, origin, inv_vs, x, y, z):
    # cheap pre-test: (observed, saturated-positive) of the closest voxel
    nx, ny, nz = tsdf.shape
    i = int(math.floor((x - origin[0]) * inv_vs + 0.5))
    j = int(math.floor((y - origin[1]) * inv_vs + 0.5))
    k = int(math.floor((z - origin[2]) * inv_vs + 0.5))
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return False, False
    if weight[i, j, k] <= 0.0:
        return False, False
    return True, tsdf[i, j, k] >= 1.0


@njit(cache=True, parallel=True)
def tsdf_raycast(tsdf, weight, origin, voxel_size, trunc, R, t,
                 fx, fy, cx, cy, height, width, near, far):
    # R, t map camera -> world
    points = np.zeros((height, width, 3))
    normals = np.zeros((height, width, 3))
    valid = np.zeros((height, width), dtype=np.bool_)
    nx, ny, nz = tsdf.shape
    inv_vs = 1.0 / voxel_size
    step = 0.5 * trunc
    lo0 = origin[0]
    lo1 = origin[1]
    lo2 = origin[2]
    hi0 = origin[0] + (nx - 1) * voxel_size
    hi1 = origin[1] + (ny - 1) * voxel_size
    hi2 = origin[2] + (nz - 1) * voxel_size
    for v in prange(height):
        for u in range(width):
            rx = (u - cx) / fx
            ry = (v - cy) / fy
            rn = math.sqrt(rx * rx + ry * ry + 1.0)
            d0 = (R[0, 0] * rx + R[0, 1] * ry + R[0, 2]) / rn
            d1 = (R[1, 0] * rx + R[1, 1] * ry + R[1, 2]) / rn
            d2 = (R[2, 0] * rx + R[2, 1] * ry + R[2, 2]) / rn
            t0 = near
            t1 = far
            ok_box = True
            for a in range(3):
                o = t[a]
                d = d0 if a == 0 else (d1 if a == 1 else d2)
                lo = lo0 if a == 0 else (lo1 if a == 1 else lo2)
                hi = hi0 if a == 0 else (hi1 if a == 1 else hi2)
                if abs(d) < 1e-12:
                    if o < lo or o > hi:
                        ok_box = False
                    continue
                ta = (lo - o) / d
                tb = (hi - o) / d
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
            if not ok_box or t0 >= t1:
                continue
            prev_ok = False
            prev_f = 0.0
            prev_t = 0.0
            prev_exact = True
            tt = t0
            hit = False
            t_hit = 0.0
            while tt <= t1:
                px = t[0] + tt * d0
                py = t[1] + tt * d1
                pz = t[2] + tt * d2
                observed, saturated = _nearest(tsdf, weight, origin, inv_vs, px, py, pz)
                if not observed:
                    prev_ok = False
                    tt += step
                    continue
                if saturated:
                    f = 1.0
                    ok = True
                    exact = False
                else:
                    f, ok = _trilinear(tsdf, weight, origin, inv_vs, px, py, pz)
                    exact = True
                if ok and prev_ok:
                    if prev_f > 0.0 and f < 0.0:
                        fa = prev_f
                        ta_ = prev_t
                        if not prev_exact:
                            fa, oka = _trilinear(tsdf, weight, origin, inv_vs,
                                                 t[0] + ta_ * d0, t[1] + ta_ * d1, t[2] + ta_ * d2)
                            if not oka or fa <= 0.0:
                                fa = prev_f
                        fb = f
                        tb_ = tt
                        ts = ta_ + (tb_ - ta_) * fa / (fa - fb)
                        # false position on the trilinear field, keeping the bracket
                        for _it in range(REFINE_ITERS):
                            fs, oks = _trilinear(tsdf, weight, origin, inv_vs,
                                                 t[0] + ts * d0, t[1] + ts * d1, t[2] + ts * d2)
                            if not oks or fs == 0.0:
                                break
                            if fs > 0.0:
                                ta_ = ts
                                fa = fs
                            else:
                                tb_ = ts
                                fb = fs
                            ts = ta_ + (tb_ - ta_) * fa / (fa - fb)
                        hit = True
                        t_hit = ts
                        break
                    if prev_f < 0.0 and f > 0.0:
                        break
                prev_ok = ok
                prev_f = f
                prev_t = tt
                prev_exact = exact
                tt += step
            if not hit:
                continue
            px = t[0] + t_hit * d0
            py = t[1] + t_hit * d1
            pz = t[2] + t_hit * d2
            h_ = voxel_size
            fxp, o1 = _trilinear(tsdf, weight, origin, inv_vs, px + h_, py, pz)
            fxm, o2 = _trilinear(tsdf, weight, origin, inv_vs, px - h_, py, pz)
            fyp, o3 = _trilinear(tsdf, weight, origin, inv_vs, px, py + h_, pz)
            fym, o4 = _trilinear(tsdf, weight, origin, inv_vs, px, py - h_, pz)
            fzp, o5 = _trilinear(tsdf, weight, origin, inv_vs, px, py, pz + h_)
            fzm, o6 = _trilinear(tsdf, weight, origin, inv_vs, px, py, pz - h_)
            if not (o1 and o2 and o3 and o4 and o5 and o6):
                continue
            gx = fxp - fxm
            gy = fyp - fym
            gz = fzp - fzm
            gn = math.sqrt(gx * gx + gy * gy + gz * gz)
            if gn < 1e-12:
                continue
            points[v, u, 0] = px
            points[v, u, 1] = py
            points[v, u, 2] = pz
            normals[v, u, 0] = gx / gn
            normals[v, u, 1] = gy / gn
            normals[v, u, 2] = gz / gn
            valid[v, u] = True
    return points, normals, valid


@njit(cache=True)
def mc_edge_triangles(tsdf, observed, iso, tri_table, tri_count, edge_offsets):
    """Triangles as triples of global edge ids (3 * linear_voxel + axis)."""
    nx, ny, nz = tsdf.shape
    n_cubes_x = nx - 1
    cube_idx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint8)
    total = 0
    for i in range(n_cubes_x):
        for j in range(ny - 1):
            for k in range(nz - 1):
                if not (observed[i, j, k] and observed[i + 1, j, k] and observed[i + 1, j + 1, k]
                        and observed[i, j + 1, k] and observed[i, j, k + 1] and observed[i + 1, j, k + 1]
                        and observed[i + 1, j + 1, k + 1] and observed[i, j + 1, k + 1]):
                    continue
                idx = 0
                if tsdf[i, j, k] < iso:
                    idx |= 1
                if tsdf[i + 1, j, k] < iso:
                    idx |= 2
                if tsdf[i + 1, j + 1, k] < iso:
                    idx |= 4
                if tsdf[i, j + 1, k] < iso:
                    idx |= 8
                if tsdf[i, j, k + 1] < iso:
                    idx |= 16
                if tsdf[i + 1, j, k + 1] < iso:
                    idx |= 32
                if tsdf[i + 1, j + 1, k + 1] < iso:
                    idx |= 64
                if tsdf[i, j + 1, k + 1] < iso:
                    idx |= 128
                cube_idx[i, j, k] = idx
                total += tri_count[idx]
    out = np.empty((total, 3), dtype=np.int64)
    n = 0
    for i in range(n_cubes_x):
        for j in range(ny - 1):
            for k in range(nz - 1):
                idx = cube_idx[i, j, k]
                for tri in range(tri_count[idx]):
                    for c in range(3):
                        e = tri_table[idx, 3 * tri + c]
                        ii = i + edge_offsets[e, 0]
                        jj = j + edge_offsets[e, 1]
                        kk = k + edge_offsets[e, 2]
                        out[n, c] = 3 * ((ii * ny + jj) * nz + kk) + edge_offsets[e, 3]
                    n += 1
    return out


@njit(cache=True, inline="always")
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True, parallel=True)
def hamming_matrix(a, b):
    # a, b: (N, words) uint64
    n, m = a.shape[0], b.shape[0]
    words = a.shape[1]
    out = np.empty((n, m), dtype=np.int32)
    for i in prange(n):
        for j in range(m):
            s = 0
            for w in range(words):
                s += _popcount64(a[i, w] ^ b[j, w])
            out[i, j] = s
    return out


@njit(cache=True)
def _sym3_eigenvalue(a00, a01, a02, a11, a12, a22, which):
    # closed-form eigenvalues of a symmetric 3x3 matrix; which 0/1/2 = ascending
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    q = (a00 + a11 + a22) / 3.0
    if p1 <= 1e-30:
        e = sorted([a00, a11, a22])
        return e[which]
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b00 = (a00 - q) / p
    b11 = (a11 - q) / p
    b22 = (a22 - q) / p
    b01 = a01 / p
    b02 = a02 / p
    b12 = a12 / p
    detb = (b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02)
            + b02 * (b01 * b12 - b11 * b02))
    r = min(1.0, max(-1.0, detb / 2.0))
    phi = math.acos(r) / 3.0
    e_hi = q + 2.0 * p * math.cos(phi)
    e_lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    if which == 2:
        return e_hi
    if which == 0:
        return e_lo
    return 3.0 * q - e_hi - e_lo


@njit(cache=True, parallel=True)
def shape_interest(points, valid, dirs, dir_valid, cell_weight,
                   support_radius, angular_res, max_window, min_samples, which):
    rows, cols = valid.shape
    out = np.zeros((rows, cols))
    r2max = support_radius * support_radius
    for r in prange(rows):
        for c in range(cols):
            if not valid[r, c]:
                continue
            px = points[r, c, 0]
            py = points[r, c, 1]
            pz = points[r, c, 2]
            rng = math.sqrt(px * px + py * py + pz * pz)
            win = min(max_window, int(math.ceil(support_radius / (rng * angular_res))))
            sw = 0.0
            m0 = 0.0
            m1 = 0.0
            m2 = 0.0
            s00 = 0.0
            s01 = 0.0
            s02 = 0.0
            s11 = 0.0
            s12 = 0.0
            s22 = 0.0
            ns = 0
            for dr in range(-win, win + 1):
                rr = r + dr
                if rr < 0 or rr >= rows:
                    continue
                for dc in range(-win, win + 1):
                    cc = c + dc
                    if cc < 0 or cc >= cols or not valid[rr, cc] or not dir_valid[rr, cc]:
                        continue
                    ex = points[rr, cc, 0] - px
                    ey = points[rr, cc, 1] - py
                    ez = points[rr, cc, 2] - pz
                    dist2 = ex * ex + ey * ey + ez * ez
                    if dist2 > r2max:
                        continue
                    wt = (1.0 - math.sqrt(dist2) / support_radius) * cell_weight[rr, cc]
                    a = dirs[rr, cc, 0]
                    b = dirs[rr, cc, 1]
                    g = dirs[rr, cc, 2]
                    sw += wt
                    m0 += wt * a
                    m1 += wt * b
                    m2 += wt * g
                    s00 += wt * a * a
                    s01 += wt * a * b
                    s02 += wt * a * g
                    s11 += wt * b * b
                    s12 += wt * b * g
                    s22 += wt * g * g
                    ns += 1
            if ns < min_samples or sw <= 0.0:
                continue
            m0 /= sw
            m1 /= sw
            m2 /= sw
            out[r, c] = max(0.0, _sym3_eigenvalue(
                s00 / sw - m0 * m0, s01 / sw - m0 * m1, s02 / sw - m0 * m2,
                s11 / sw - m1 * m1, s12 / sw - m1 * m2, s22 / sw - m2 * m2, which))
    return out


@njit(cache=True)
def icp_reduce(src_pts, src_nrm, R, t, tgt_pts, tgt_nrm, tgt_valid, Rt, tt,
               fx, fy, cx, cy, dist_thresh, cos_thresh):
    """Point-to-plane normal equations under projective association.

    (R, t): source camera -> world; (Rt, tt): world -> target camera.
    Returns (JtJ, Jtr, sum r^2, inlier count).
    """
    h, w = tgt_valid.shape
    A = np.zeros((6, 6))
    b = np.zeros(6)
    sr2 = 0.0
    count = 0
    J = np.empty(6)
    d2max = dist_thresh * dist_thresh
    for i in range(src_pts.shape[0]):
        sx, sy, sz = src_pts[i, 0], src_pts[i, 1], src_pts[i, 2]
        qx = R[0, 0] * sx + R[0, 1] * sy + R[0, 2] * sz + t[0]
        qy = R[1, 0] * sx + R[1, 1] * sy + R[1, 2] * sz + t[1]
        qz = R[2, 0] * sx + R[2, 1] * sy + R[2, 2] * sz + t[2]
        zc = Rt[2, 0] * qx + Rt[2, 1] * qy + Rt[2, 2] * qz + tt[2]
        if zc <= 1e-6:
            continue
        xc = Rt[0, 0] * qx + Rt[0, 1] * qy + Rt[0, 2] * qz + tt[0]
        yc = Rt[1, 0] * qx + Rt[1, 1] * qy + Rt[1, 2] * qz + tt[1]
        u = math.floor(fx * xc / zc + cx + 0.5)
        v = math.floor(fy * yc / zc + cy + 0.5)
        if u < 0 or u >= w or v < 0 or v >= h:
            continue
        ui = int(u)
        vi = int(v)
        if not tgt_valid[vi, ui]:
            continue
        dx = qx - tgt_pts[vi, ui, 0]
        dy = qy - tgt_pts[vi, ui, 1]
        dz = qz - tgt_pts[vi, ui, 2]
        if dx * dx + dy * dy + dz * dz > d2max:
            continue
        nx_, ny_, nz_ = tgt_nrm[vi, ui, 0], tgt_nrm[vi, ui, 1], tgt_nrm[vi, ui, 2]
        snx = R[0, 0] * src_nrm[i, 0] + R[0, 1] * src_nrm[i, 1] + R[0, 2] * src_nrm[i, 2]
        sny = R[1, 0] * src_nrm[i, 0] + R[1, 1] * src_nrm[i, 1] + R[1, 2] * src_nrm[i, 2]
        snz = R[2, 0] * src_nrm[i, 0] + R[2, 1] * src_nrm[i, 1] + R[2, 2] * src_nrm[i, 2]
        if snx * nx_ + sny * ny_ + snz * nz_ < cos_thresh:
            continue
        r = nx_ * dx + ny_ * dy + nz_ * dz
        J[0] = qy * nz_ - qz * ny_
        J[1] = qz * nx_ - qx * nz_
        J[2] = qx * ny_ - qy * nx_
        J[3] = nx_
        J[4] = ny_
        J[5] = nz_
        for a in range(6):
            b[a] += J[a] * r
            for c in range(a, 6):
                A[a, c] += J[a] * J[c]
        sr2 += r * r
        count += 1
    for a in range(6):
        for c in range(a):
            A[a, c] = A[c, a]
    return A, b, sr2, count
