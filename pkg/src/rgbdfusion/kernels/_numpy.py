"""Vectorized numpy versions of the hot kernels (fallback path)."""
import numpy as np

REFINE_ITERS = 6  # false-position steps on a raycast crossing


def bilateral_filter(depth, sigma_space, sigma_range, radius):
    h, w = depth.shape
    pad = np.pad(depth, radius, mode="constant", constant_values=0.0)
    valid0 = depth > 0
    acc = np.zeros_like(depth)
    norm = np.zeros_like(depth)
    cutoff = 3.0 * sigma_range
    inv_r = 0.5 / (sigma_range * sigma_range)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            d = pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            diff = d - depth
            ok = (d > 0) & (np.abs(diff) <= cutoff)
            wt = np.exp(-(dx * dx + dy * dy) * (0.5 / (sigma_space * sigma_space))) * np.exp(-diff * diff * inv_r)
            wt = np.where(ok, wt, 0.0)
            acc += wt * d
            norm += wt
    out = np.zeros_like(depth)
    out[valid0] = acc[valid0] / norm[valid0]
    return out


def tsdf_integrate(tsdf, weight, origin, voxel_size, trunc, max_weight,
                   depth, fx, fy, cx, cy, R, t, w_new, blend_max):
    nx, ny, nz = tsdf.shape
    h, w = depth.shape
    py = origin[1] + np.arange(ny) * voxel_size
    pz = origin[2] + np.arange(nz) * voxel_size
    PY, PZ = np.meshgrid(py, pz, indexing="ij")
    for i in range(nx):
        px = origin[0] + i * voxel_size
        bx = R[0, 0] * px + R[0, 1] * PY + t[0]
        by = R[1, 0] * px + R[1, 1] * PY + t[1]
        bz = R[2, 0] * px + R[2, 1] * PY + t[2]
        zc = bz + R[2, 2] * PZ
        front = zc > 1e-6
        zs = np.where(front, zc, 1.0)
        xc = bx + R[0, 2] * PZ
        yc = by + R[1, 2] * PZ
        fu = fx * xc / zs + cx
        fv = fy * yc / zs + cy
        u = np.floor(fu + 0.5)
        v = np.floor(fv + 0.5)
        inside = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
        if not inside.any():
            continue
        jj, kk = np.nonzero(inside)
        d = depth[v[jj, kk].astype(np.intp), u[jj, kk].astype(np.intp)]
        # bilinear (inverse) depth when the 2x2 neighbourhood is one surface
        fu, fv = fu[jj, kk], fv[jj, kk]
        u0, v0 = np.floor(fu).astype(np.intp), np.floor(fv).astype(np.intp)
        box = (u0 >= 0) & (v0 >= 0) & (u0 + 1 < w) & (v0 + 1 < h)
        u0c, v0c = np.where(box, u0, 0), np.where(box, v0, 0)
        d00, d01 = depth[v0c, u0c], depth[v0c, u0c + 1]
        d10, d11 = depth[v0c + 1, u0c], depth[v0c + 1, u0c + 1]
        lo = np.minimum(np.minimum(d00, d01), np.minimum(d10, d11))
        hi = np.maximum(np.maximum(d00, d01), np.maximum(d10, d11))
        blend = box & (d > 0) & (lo > 0) & (hi - lo <= blend_max)
        a, b = fu - u0, fv - v0
        # inverse depth is affine in (u, v) on a plane
        with np.errstate(divide="ignore"):
            inv = (1 - b) * ((1 - a) / d00 + a / d01) + b * ((1 - a) / d10 + a / d11)
            d = np.where(blend, 1.0 / np.where(blend, inv, 1.0), d)
        sdf = d - zc[jj, kk]
        keep = (d > 0) & (sdf >= -trunc)
        jj, kk, sdf = jj[keep], kk[keep], sdf[keep]
        f = np.minimum(1.0, sdf / trunc).astype(np.float32).astype(np.float64)
        wo = weight[i, jj, kk].astype(np.float64)
        tsdf[i, jj, kk] = (tsdf[i, jj, kk] * wo + f * w_new) / (wo + w_new)
        weight[i, jj, kk] = np.minimum(wo + w_new, max_weight)


def _trilinear(tsdf, weight, origin, inv_vs, p):
    nx, ny, nz = tsdf.shape
    g = (p - origin) * inv_vs
    i0 = np.floor(g).astype(np.intp)
    ok = np.all(i0 >= 0, axis=1) & (i0[:, 0] < nx - 1) & (i0[:, 1] < ny - 1) & (i0[:, 2] < nz - 1)
    i0 = np.where(ok[:, None], i0, 0)
    fr = g - i0
    val = np.zeros(len(p))
    for di in range(2):
        wx = fr[:, 0] if di else 1.0 - fr[:, 0]
        for dj in range(2):
            wy = fr[:, 1] if dj else 1.0 - fr[:, 1]
            for dk in range(2):
                wz = fr[:, 2] if dk else 1.0 - fr[:, 2]
                ii, jj, kk = i0[:, 0] + di, i0[:, 1] + dj, i0[:, 2] + dk
                ok &= weight[ii, jj, kk] > 0
                val += wx * wy * wz * tsdf[ii, jj, kk]
    return np.where(ok, val, 0.0), ok


def _nearest(tsdf, weight, origin, inv_vs, p):
    n = np.array(tsdf.shape)
    idx = np.floor((p - origin) * inv_vs + 0.5).astype(np.intp)
    inb = np.all((idx >= 0) & (idx < n), axis=1)
    idx = np.where(inb[:, None], idx, 0)
    observed = inb & (weight[idx[:, 0], idx[:, 1], idx[:, 2]] > 0)
    saturated = observed & (tsdf[idx[:, 0], idx[:, 1], idx[:, 2]] >= 1.0)
    return observed, saturated


def tsdf_raycast(tsdf, weight, origin, voxel_size, trunc, R, t,
                 fx, fy, cx, cy, height, width, near, far):
    nx, ny, nz = tsdf.shape
    inv_vs = 1.0 / voxel_size
    step = 0.5 * trunc
    u = np.arange(width, dtype=np.float64)
    v = np.arange(height, dtype=np.float64)
    U, V = np.meshgrid(u, v)
    rx = ((U - cx) / fx).ravel()
    ry = ((V - cy) / fy).ravel()
    rn = np.sqrt(rx * rx + ry * ry + 1.0)
    dirs = np.stack([
        (R[0, 0] * rx + R[0, 1] * ry + R[0, 2]) / rn,
        (R[1, 0] * rx + R[1, 1] * ry + R[1, 2]) / rn,
        (R[2, 0] * rx + R[2, 1] * ry + R[2, 2]) / rn,
    ], axis=1)
    n = len(rx)
    lo = np.asarray(origin, dtype=np.float64)
    hi = lo + (np.array([nx, ny, nz]) - 1) * voxel_size
    t0 = np.full(n, float(near))
    t1 = np.full(n, float(far))
    ok_box = np.ones(n, dtype=bool)
    for a in range(3):
        d = dirs[:, a]
        par = np.abs(d) < 1e-12
        ok_box &= ~(par & ((t[a] < lo[a]) | (t[a] > hi[a])))
        ds = np.where(par, 1.0, d)
        ta = (lo[a] - t[a]) / ds
        tb = (hi[a] - t[a]) / ds
        tmin = np.where(par, -np.inf, np.minimum(ta, tb))
        tmax = np.where(par, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
    active = np.nonzero(ok_box & (t0 < t1))[0]
    tt = t0[active].copy()
    tend = t1[active]
    prev_ok = np.zeros(len(active), dtype=bool)
    prev_f = np.zeros(len(active))
    prev_t = np.zeros(len(active))
    prev_exact = np.ones(len(active), dtype=bool)
    t_hit = np.full(n, np.nan)
    origin_t = np.asarray(t, dtype=np.float64)
    while len(active):
        live = tt <= tend
        if not live.all():
            active, tt, tend = active[live], tt[live], tend[live]
            prev_ok, prev_f, prev_t, prev_exact = prev_ok[live], prev_f[live], prev_t[live], prev_exact[live]
            if not len(active):
                break
        p = origin_t + tt[:, None] * dirs[active]
        observed, saturated = _nearest(tsdf, weight, lo, inv_vs, p)
        f = np.ones(len(active))
        ok = observed.copy()
        exact = np.zeros(len(active), dtype=bool)
        need = observed & ~saturated
        if need.any():
            fv, okv = _trilinear(tsdf, weight, lo, inv_vs, p[need])
            f[need] = fv
            ok[need] = okv
            exact[need] = True
        crossing = ok & prev_ok & (prev_f > 0) & (f < 0)
        backside = ok & prev_ok & (prev_f < 0) & (f > 0)
        if crossing.any():
            ci = np.nonzero(crossing)[0]
            rays = active[ci]
            fa = prev_f[ci].copy()
            ta_ = prev_t[ci]
            redo = ~prev_exact[ci]
            if redo.any():
                pa = origin_t + ta_[redo, None] * dirs[rays[redo]]
                fv, okv = _trilinear(tsdf, weight, lo, inv_vs, pa)
                good = okv & (fv > 0)
                tmp = fa[redo]
                tmp[good] = fv[good]
                fa[redo] = tmp
            fb = f[ci]
            tb_ = tt[ci]
            ts = ta_ + (tb_ - ta_) * fa / (fa - fb)
            # false position on the trilinear field, keeping the bracket
            ta_, tb_ = ta_.copy(), tb_.copy()
            go = np.ones(len(ci), dtype=bool)
            for _it in range(REFINE_ITERS):
                ps = origin_t + ts[:, None] * dirs[rays]
                fs, oks = _trilinear(tsdf, weight, lo, inv_vs, ps)
                go &= oks & (fs != 0)
                pos = go & (fs > 0)
                neg = go & (fs < 0)
                ta_ = np.where(pos, ts, ta_)
                fa = np.where(pos, fs, fa)
                tb_ = np.where(neg, ts, tb_)
                fb = np.where(neg, fs, fb)
                ts = np.where(go, ta_ + (tb_ - ta_) * fa / np.where(go, fa - fb, 1.0), ts)
            t_hit[rays] = ts
        stop = crossing | backside
        keep = ~stop
        prev_ok = ok[keep]
        prev_f = f[keep]
        prev_t = tt[keep]
        prev_exact = exact[keep]
        active, tt, tend = active[keep], tt[keep] + step, tend[keep]

    points = np.zeros((n, 3))
    normals = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)
    hit = np.nonzero(~np.isnan(t_hit))[0]
    if len(hit):
        p = origin_t + t_hit[hit, None] * dirs[hit]
        grad = np.zeros((len(hit), 3))
        good = np.ones(len(hit), dtype=bool)
        for a in range(3):
            off = np.zeros(3)
            off[a] = voxel_size
            fp, okp = _trilinear(tsdf, weight, lo, inv_vs, p + off)
            fm, okm = _trilinear(tsdf, weight, lo, inv_vs, p - off)
            grad[:, a] = fp - fm
            good &= okp & okm
        gn = np.linalg.norm(grad, axis=1)
        good &= gn >= 1e-12
        hit, p, grad, gn = hit[good], p[good], grad[good], gn[good]
        points[hit] = p
        normals[hit] = grad / gn[:, None]
        valid[hit] = True
    return (points.reshape(height, width, 3), normals.reshape(height, width, 3),
            valid.reshape(height, width))


def mc_edge_triangles(tsdf, observed, iso, tri_table, tri_count, edge_offsets):
    nx, ny, nz = tsdf.shape
    corners = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))
    idx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint8)
    allobs = np.ones((nx - 1, ny - 1, nz - 1), dtype=bool)
    for bit, (a, b, c) in enumerate(corners):
        sl = (slice(a, nx - 1 + a), slice(b, ny - 1 + b), slice(c, nz - 1 + c))
        idx |= ((tsdf[sl] < iso).astype(np.uint8) << bit)
        allobs &= observed[sl]
    idx[~allobs] = 0
    cubes = np.flatnonzero(tri_count[idx] > 0)
    if not len(cubes):
        return np.empty((0, 3), dtype=np.int64)
    ci, cj, ck = np.unravel_index(cubes, idx.shape)
    cidx = idx.ravel()[cubes]
    counts = tri_count[cidx]
    rep = np.repeat(np.arange(len(cubes)), counts)
    # triangle number within its cube
    starts = np.cumsum(counts) - counts
    tri_no = np.arange(len(rep)) - np.repeat(starts, counts)
    out = np.empty((len(rep), 3), dtype=np.int64)
    for c in range(3):
        e = tri_table[cidx[rep], 3 * tri_no + c]
        ii = ci[rep] + edge_offsets[e, 0]
        jj = cj[rep] + edge_offsets[e, 1]
        kk = ck[rep] + edge_offsets[e, 2]
        out[:, c] = 3 * ((ii * ny + jj) * nz + kk) + edge_offsets[e, 3]
    return out


def hamming_matrix(a, b, chunk=256):
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int32)
    for s in range(0, a.shape[0], chunk):
        x = a[s:s + chunk, None, :] ^ b[None, :, :]
        out[s:s + chunk] = np.bitwise_count(x).sum(axis=-1, dtype=np.int32)
    return out


def shape_interest(points, valid, dirs, dir_valid, cell_weight,
                   support_radius, angular_res, max_window, min_samples, which):
    """Per cell, the ``which``-th smallest eigenvalue of the weighted
    covariance of the unit directions found within ``support_radius``."""
    rows, cols = valid.shape
    rng = np.linalg.norm(points, axis=-1)
    win = np.zeros((rows, cols), dtype=np.intp)
    win[valid] = np.minimum(max_window, np.ceil(support_radius / (rng[valid] * angular_res))).astype(np.intp)
    pw = max_window
    P = np.pad(points, ((pw, pw), (pw, pw), (0, 0)))
    Vd = np.pad(valid & dir_valid, pw)
    D = np.pad(dirs, ((pw, pw), (pw, pw), (0, 0)))
    Wc = np.pad(cell_weight, pw)
    sw = np.zeros((rows, cols))
    m = np.zeros((rows, cols, 3))
    S = np.zeros((rows, cols, 3, 3))
    ns = np.zeros((rows, cols), dtype=np.intp)
    for dr in range(-pw, pw + 1):
        for dc in range(-pw, pw + 1):
            sl = (slice(pw + dr, pw + dr + rows), slice(pw + dc, pw + dc + cols))
            inwin = valid & Vd[sl] & (win >= max(abs(dr), abs(dc)))
            if not inwin.any():
                continue
            diff = P[sl] - points
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            inwin &= dist <= support_radius
            ww = np.where(inwin, (1.0 - dist / support_radius) * Wc[sl], 0.0)
            d = D[sl]
            sw += ww
            m += ww[..., None] * d
            S += ww[..., None, None] * d[..., :, None] * d[..., None, :]
            ns += inwin
    out = np.zeros((rows, cols))
    ok = valid & (ns >= min_samples) & (sw > 0)
    if ok.any():
        mm = m[ok] / sw[ok][:, None]
        C = S[ok] / sw[ok][:, None, None] - mm[:, :, None] * mm[:, None, :]
        out[ok] = np.maximum(0.0, np.linalg.eigvalsh(C)[:, which])
    return out


def icp_reduce(src_pts, src_nrm, R, t, tgt_pts, tgt_nrm, tgt_valid, Rt, tt,
               fx, fy, cx, cy, dist_thresh, cos_thresh):
    h, w = tgt_valid.shape
    q = src_pts @ R.T + t
    c = q @ Rt.T + tt
    front = c[:, 2] > 1e-6
    zs = np.where(front, c[:, 2], 1.0)
    u = np.floor(fx * c[:, 0] / zs + cx + 0.5)
    v = np.floor(fy * c[:, 1] / zs + cy + 0.5)
    ok = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    idx = np.nonzero(ok)[0]
    ui = u[idx].astype(np.intp)
    vi = v[idx].astype(np.intp)
    keep = tgt_valid[vi, ui]
    idx, ui, vi = idx[keep], ui[keep], vi[keep]
    q = q[idx]
    diff = q - tgt_pts[vi, ui]
    nt = tgt_nrm[vi, ui]
    ns = src_nrm[idx] @ R.T
    keep = (np.einsum("ij,ij->i", diff, diff) <= dist_thresh * dist_thresh) & \
           (np.einsum("ij,ij->i", ns, nt) >= cos_thresh)
    q, diff, nt = q[keep], diff[keep], nt[keep]
    r = np.einsum("ij,ij->i", nt, diff)
    J = np.concatenate([np.cross(q, nt), nt], axis=1)
    return J.T @ J, J.T @ r, float(r @ r), int(len(r))
