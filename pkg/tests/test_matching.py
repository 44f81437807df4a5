import numpy as np
import pytest

from rgbdfusion.dataset_io import Frame
from rgbdfusion.descriptors import DescriptorSet
from rgbdfusion.errors import InsufficientMatches
from rgbdfusion.geometry import Intrinsics
from rgbdfusion.keypoints import Keypoints
from rgbdfusion.matching import MatchSet, lift_to_3d, match_bruteforce, ransac_homography_filter


def _random_desc(rng, n):
    return DescriptorSet(rng.integers(0, 256, (n, 32), dtype=np.uint8), np.ones(n, dtype=bool))


def _reference_match(a: DescriptorSet, b: DescriptorSet):
    # independent exhaustive cross-check matcher, one pair at a time
    def hd(x, y):
        return sum(bin(int(p) ^ int(q)).count("1") for p, q in zip(x, y))

    ia = [i for i in range(len(a)) if a.valid[i]]
    ib = [j for j in range(len(b)) if b.valid[j]]
    D = {(i, j): hd(a.bits[i], b.bits[j]) for i in ia for j in ib}
    out = []
    for i in ia:
        j = min(ib, key=lambda jj: (D[i, jj], jj))
        i_back = min(ia, key=lambda ii: (D[ii, j], ii))
        if i_back == i:
            out.append((i, j, D[i, j]))
    return out


def test_identical_lists_match_identically(rng):
    d = _random_desc(rng, 40)
    m = match_bruteforce(d, d)
    assert m.idx_prev.tolist() == list(range(40)) and m.idx_curr.tolist() == list(range(40))
    assert np.all(m.distance == 0) and m.stage == "raw"


def test_complement_matches_at_full_distance(rng):
    a = _random_desc(rng, 1)
    b = DescriptorSet(~a.bits, np.ones(1, dtype=bool))
    m = match_bruteforce(a, b)
    assert list(m) == [(0, 0, 256)]


def test_random_sets_match_exhaustive_reference(rng):
    a, b = _random_desc(rng, 50), _random_desc(rng, 50)
    a.valid[[3, 17]] = False
    b.valid[[0, 44]] = False
    assert [tuple(x) for x in match_bruteforce(a, b)] == _reference_match(a, b)


def test_ties_resolve_to_lowest_index():
    x = np.zeros((1, 32), dtype=np.uint8)
    a = DescriptorSet(x, np.ones(1, dtype=bool))
    b = DescriptorSet(np.repeat(x, 3, axis=0), np.ones(3, dtype=bool))
    assert list(match_bruteforce(a, b)) == [(0, 0, 0)]


def test_cross_check_is_symmetric(rng):
    # low-entropy descriptors to provoke ties
    a = DescriptorSet(rng.integers(0, 4, (60, 32), dtype=np.uint8), np.ones(60, dtype=bool))
    b = DescriptorSet(rng.integers(0, 4, (70, 32), dtype=np.uint8), np.ones(70, dtype=bool))
    ab = match_bruteforce(a, b).pairs()
    ba = {(j, i) for i, j in match_bruteforce(b, a).pairs()}
    assert ab == ba


def test_empty_side_gives_empty_matches(rng):
    a = _random_desc(rng, 5)
    b = DescriptorSet(np.zeros((0, 32), dtype=np.uint8), np.zeros(0, dtype=bool))
    assert len(match_bruteforce(a, b)) == 0


def _homography_setup(rng, n, H):
    src = rng.uniform(20, 620, (n, 2))
    ph = np.c_[src, np.ones(n)] @ H.T
    dst = ph[:, :2] / ph[:, 2:]
    idx = np.arange(n)
    return Keypoints(src), Keypoints(dst), MatchSet(idx, idx.copy(), np.zeros(n, dtype=np.int32))


H_TRUE = np.array([[1.02, 0.03, 5.0], [-0.02, 0.98, -3.0], [1e-5, -2e-5, 1.0]])


def test_exact_homography_is_recovered(rng):
    kp, kc, m = _homography_setup(rng, 80, H_TRUE)
    out, H = ransac_homography_filter(m, kp, kc)
    assert len(out) == 80 and out.stage == "filtered"
    assert np.allclose(H, H_TRUE, atol=1e-6, rtol=0)


def test_planted_outliers_are_rejected(rng):
    n = 200
    kp, kc, m = _homography_setup(rng, n, H_TRUE)
    out_idx = rng.choice(n, 60, replace=False)
    kc.uv[out_idx] = rng.uniform(0, 640, (60, 2))
    # a uniform point can land within tolerance by chance; those are inliers
    ph = np.c_[kp.uv, np.ones(n)] @ H_TRUE.T
    true_err = np.linalg.norm(ph[:, :2] / ph[:, 2:] - kc.uv, axis=1)
    planted = np.zeros(n, dtype=bool)
    planted[out_idx] = true_err[out_idx] > 3.0
    out, H = ransac_homography_filter(m, kp, kc, reproj_threshold=3.0, seed=7)
    kept = np.zeros(n, dtype=bool)
    kept[out.idx_prev] = True
    assert not np.any(kept & planted)
    inl = ~planted
    assert kept[inl].mean() >= 0.95
    # subset of input, and H maps every kept point within the threshold
    assert out.pairs() <= m.pairs()
    ph = np.c_[kp.uv[out.idx_prev], np.ones(len(out))] @ H.T
    assert np.all(np.linalg.norm(ph[:, :2] / ph[:, 2:] - kc.uv[out.idx_curr], axis=1) <= 3.0)


def test_three_matches_are_insufficient(rng):
    kp, kc, m = _homography_setup(rng, 3, H_TRUE)
    with pytest.raises(InsufficientMatches):
        ransac_homography_filter(m, kp, kc)


def test_ransac_is_reproducible(rng):
    kp, kc, m = _homography_setup(rng, 100, H_TRUE)
    kc.uv[:30] = rng.uniform(0, 640, (30, 2))
    a, Ha = ransac_homography_filter(m, kp, kc, seed=3)
    b, Hb = ransac_homography_filter(m, kp, kc, seed=3)
    assert np.array_equal(a.idx_prev, b.idx_prev) and np.array_equal(Ha, Hb)


def _frames(dp, dc, intr):
    rgb = np.zeros(dp.shape + (3,), dtype=np.uint8)
    return Frame(0.0, rgb, dp, intr), Frame(0.1, rgb, dc, intr)


def test_lift_principal_point():
    intr = Intrinsics(500, 500, 10, 8, 20, 16)
    fp, fc = _frames(np.ones((16, 20)), np.ones((16, 20)), intr)
    k = Keypoints([[10.0, 8.0]])
    c = lift_to_3d(MatchSet(np.array([0]), np.array([0]), np.array([0])), k, k, fp, fc)
    assert np.array_equal(c.src, [[0, 0, 1]]) and np.array_equal(c.dst, [[0, 0, 1]]) and c.dropped == 0


def test_lift_drops_invalid_depth():
    intr = Intrinsics(500, 500, 10, 8, 20, 16)
    dc = np.ones((16, 20))
    dc[8, 12] = 0.0
    fp, fc = _frames(np.ones((16, 20)), dc, intr)
    kp = Keypoints([[10.0, 8.0], [11.0, 8.0]])
    kc = Keypoints([[12.0, 8.0], [13.0, 8.0]])
    c = lift_to_3d(MatchSet(np.array([0, 1]), np.array([0, 1]), np.array([0, 0])), kp, kc, fp, fc)
    assert len(c) == 1 and c.dropped == 1 and c.match_index.tolist() == [1]


def test_lift_matches_back_projection_oracle(rng):
    intr = Intrinsics(520.0, 515.0, 319.5, 239.5, 640, 480)
    dp = rng.uniform(0.5, 4.0, (480, 640))
    dc = rng.uniform(0.5, 4.0, (480, 640))
    fp, fc = _frames(dp, dc, intr)
    kp = Keypoints(rng.uniform(0, 639.4, (100, 2)) * [1, 0.75])
    kc = Keypoints(rng.uniform(0, 639.4, (100, 2)) * [1, 0.75])
    idx = np.arange(100)
    c = lift_to_3d(MatchSet(idx, idx[::-1].copy(), np.zeros(100, dtype=np.int32)), kp, kc, fp, fc)
    assert len(c) == 100
    for i in range(100):
        for uv, depth, got in ((kp.uv[i], dp, c.src[i]), (kc.uv[99 - i], dc, c.dst[i])):
            u, v = int(np.floor(uv[0] + 0.5)), int(np.floor(uv[1] + 0.5))
            z = depth[v, u]
            ref = [(uv[0] - intr.cx) * z / intr.fx, (uv[1] - intr.cy) * z / intr.fy, z]
            assert np.array_equal(got, ref)
    assert np.all(c.src[:, 2] > 0) and np.all(c.dst[:, 2] > 0)
