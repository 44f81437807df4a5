import hashlib

import numpy as np
from scipy.spatial.transform import Rotation

from rgbdfusion import descriptors as D
from rgbdfusion import preprocess, synth
from rgbdfusion.dataset_io import Frame
from rgbdfusion.geometry import Intrinsics, Pose, project_points
from rgbdfusion.keypoints import Keypoints, detect_color_keypoints

INTR = Intrinsics()


def _frame(scene, pose):
    rgb, depth = synth.render_frame(scene, pose, INTR)
    return Frame(0.0, rgb, depth, INTR)


def _describe(f, kps):
    return D.compute_descriptors(f, preprocess.compute_normals(f.depth, INTR), kps)


def _hd(a, b):
    return np.unpackbits(a ^ b, axis=1).sum(axis=1).astype(np.int64)


def test_self_distance_is_zero():
    f = _frame(synth.flat_wall(), Pose.identity())
    d = _describe(f, detect_color_keypoints(f.rgb))
    assert d.valid.sum() > 20
    for x in d:
        assert D.hamming(x.bits, x.bits) == 0


def test_identical_renders_give_identical_descriptors():
    pose = Pose.look_at((0.1, -0.1, 0.0), (0.0, 0.0, 1.2))
    f1, f2 = _frame(synth.flat_wall(), pose), _frame(synth.flat_wall(), pose)
    k = detect_color_keypoints(f1.rgb)
    d1, d2 = _describe(f1, k), _describe(f2, k)
    assert np.array_equal(d1.bits, d2.bits) and np.array_equal(d1.valid, d2.valid)


def test_in_plane_rotation_keeps_true_pairs_close():
    # the camera rolls 30 degrees about its optical axis; each keypoint of the
    # first view is carried to the second through the known geometry
    scene = synth.flat_wall()
    p1 = Pose.identity()
    p2 = Pose(Rotation.from_euler("z", 30, degrees=True).as_matrix(), np.zeros(3))
    f1, f2 = _frame(scene, p1), _frame(scene, p2)
    k1 = detect_color_keypoints(f1.rgb)
    z = f1.depth[np.round(k1.uv[:, 1]).astype(int), np.round(k1.uv[:, 0]).astype(int)]
    P = np.c_[(k1.uv[:, 0] - INTR.cx) / INTR.fx, (k1.uv[:, 1] - INTR.cy) / INTR.fy, np.ones(len(k1))] * z[:, None]
    uv2, _ = project_points(p2.inverse().apply(p1.apply(P)), INTR)
    d1, d2 = _describe(f1, k1), _describe(f2, Keypoints(uv2, k1.response))
    v = d1.valid & d2.valid
    assert v.sum() >= 50
    a, b = d1.bits[v], d2.bits[v]
    true = _hd(a, b).mean()
    rand = np.mean([_hd(a, np.roll(b, s, axis=0)).mean() for s in (3, 7, 11)])
    assert rand - true >= 40, (true, rand)


def test_unrelated_descriptors_are_near_half_length():
    # unstructured (white noise) patches: bits behave like fair coins
    rng = np.random.default_rng(1)
    sets = []
    for seed in (1, 2):
        r = np.random.default_rng(seed)
        f = Frame(0.0, r.integers(0, 256, (INTR.height, INTR.width, 3), dtype=np.uint8),
                  np.full((INTR.height, INTR.width), 1.5), INTR)
        uv = np.c_[rng.uniform(60, 580, 1200), rng.uniform(60, 420, 1200)]
        sets.append(_describe(f, Keypoints(uv, np.ones(1200))))
    assert sets[0].valid.all() and sets[1].valid.all()
    hd = _hd(sets[0].bits, sets[1].bits)
    assert len(hd) >= 1000
    assert abs(hd.mean() - 128) <= 20


def test_pattern_is_a_fixed_constant():
    assert D.PATTERN.shape == (256, 4)
    assert hashlib.sha256(D.PATTERN.tobytes()).hexdigest() == \
        "ad48057de7af10178b8f785a5a46204e73090b58a3fb72011bc53ac2d10b4b01"
    assert np.array_equal(D._make_pattern(), D.PATTERN)
    assert np.all(np.abs(D.PATTERN) <= D.PATCH_SIZE / 2)


def test_bit_zero_is_the_first_test():
    b = np.zeros((1, 256), dtype=bool)
    b[0, 0] = True
    ds = D.DescriptorSet.from_bit_array(b)
    assert ds.bits[0, 0] == 1 and ds.bits[0, 1:].sum() == 0
    assert ds.words[0, 0] == 1
    b[0, :] = False
    b[0, 255] = True
    ds = D.DescriptorSet.from_bit_array(b)
    assert ds.bits[0, 31] == 0x80 and ds.words[0, 3] == 1 << 63
    assert np.array_equal(ds.bit_array(), b)


def test_descriptor_bit_matches_its_pair_test():
    # flat wall: the geometry test never fires, so bit i is exactly the
    # intensity comparison of pair i, rotated and scaled about the keypoint
    from scipy import ndimage

    f = _frame(synth.flat_wall(), Pose.identity())
    k = detect_color_keypoints(f.rgb).subset(np.arange(5))
    d = _describe(f, k)
    gray = ndimage.gaussian_filter(D.to_gray(f.rgb), 2.0, mode="nearest")
    for i in range(len(k)):
        u, v = k.uv[i]
        s = INTR.fx * 0.1 / f.depth[int(round(v)), int(round(u))] / D.PATCH_SIZE
        c, sn = np.cos(d.angle[i]), np.sin(d.angle[i])
        x1, y1, x2, y2 = (D.PATTERN * s).T
        i1 = D._bilinear(gray, u + c * x1 - sn * y1, v + sn * x1 + c * y1)
        i2 = D._bilinear(gray, u + c * x2 - sn * y2, v + sn * x2 + c * y2)
        assert np.array_equal(d.bit_array()[i], i1 < i2)


def test_missing_depth_makes_descriptor_invalid():
    f = _frame(synth.flat_wall(), Pose.identity())
    k = detect_color_keypoints(f.rgb)
    depth = f.depth.copy()
    depth[:, : INTR.width // 2] = 0.0
    f0 = Frame(0.0, f.rgb, depth, INTR)
    d = D.compute_descriptors(f0, preprocess.compute_normals(depth, INTR), k)
    left = k.uv[:, 0] < INTR.width // 2 - 1
    assert left.any() and not d.valid[left].any()
    assert d.valid[~left & (k.uv[:, 0] > INTR.width // 2 + 60)].all()
