"""The numba kernels and their numpy fallbacks must agree."""
import contextlib
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import SMALL
from rgbdfusion import fusion, kernels, meshing, preprocess, synth
from rgbdfusion.descriptors import DescriptorSet
from rgbdfusion.geometry import Pose
from rgbdfusion.keypoints import shape_interest_map
from rgbdfusion.matching import match_bruteforce

NAMES = ("bilateral_filter", "tsdf_integrate", "tsdf_raycast", "mc_edge_triangles", "hamming_matrix",
         "shape_interest", "icp_reduce")


@contextlib.contextmanager
def backend(name):
    mod = kernels.load_backend(name)
    saved = {n: getattr(kernels, n) for n in NAMES}
    try:
        for n in NAMES:
            setattr(kernels, n, getattr(mod, n))
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def both(fn):
    out = []
    for name in ("numba", "numpy"):
        with backend(name):
            out.append(fn())
    return out


@pytest.fixture(scope="module")
def frame():
    scene = synth.plane_sphere_box()
    pose = Pose.look_at((0.1, -0.2, 0.0), (0.0, 0.1, 1.7))
    _, depth = synth.render_frame(scene, pose, SMALL)
    noisy = np.where(depth > 0, depth + np.random.default_rng(0).normal(0, 0.003, depth.shape), 0.0)
    return scene, pose, noisy


def test_backends_expose_the_same_kernels():
    a, b = kernels.load_backend("numba"), kernels.load_backend("numpy")
    for n in NAMES:
        assert callable(getattr(a, n)) and callable(getattr(b, n))
    with pytest.raises(ValueError):
        kernels.load_backend("cuda")


def test_env_flag_selects_numpy():
    code = "import rgbdfusion.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, RGBDFUSION_DISABLE_NUMBA="1")
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.stdout.strip() == "numpy"
    env["RGBDFUSION_DISABLE_NUMBA"] = "0"
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.stdout.strip() == "numba"


def test_bilateral_filter_agrees(frame):
    _, _, d = frame
    a, b = both(lambda: preprocess.bilateral_filter(d))
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def _fused(pose, depth):
    vol = fusion.TsdfVolume.centered_at((0, 0, 1.5), fusion.VolumeParams(resolution=96, voxel_size=0.03))
    fusion.integrate(vol, depth, SMALL, pose)
    fusion.integrate(vol, depth, SMALL, Pose.from_rotvec((0.01, 0.02, 0), (0.02, 0, 0)) @ pose)
    return vol


def test_integrate_agrees(frame):
    _, pose, d = frame
    a, b = both(lambda: _fused(pose, d))
    assert np.array_equal(a.weight, b.weight)
    assert np.allclose(a.tsdf, b.tsdf, rtol=0, atol=1e-6)


def test_raycast_agrees(frame):
    _, pose, d = frame
    vol = _fused(pose, d)
    a, b = both(lambda: fusion.raycast(vol, pose, SMALL))
    assert np.mean(a.valid == b.valid) > 0.999
    m = a.valid & b.valid
    assert np.allclose(a.points[m], b.points[m], atol=1e-9)
    assert np.allclose(a.normals[m], b.normals[m], atol=1e-9)


def test_marching_cubes_agrees(frame):
    _, pose, d = frame
    vol = _fused(pose, d)
    a, b = both(lambda: meshing.marching_cubes(vol))
    assert a.n_faces > 1000
    assert np.array_equal(a.faces, b.faces) and np.array_equal(a.vertices, b.vertices)


def test_hamming_matrix_agrees():
    rng = np.random.default_rng(1)
    da = DescriptorSet(rng.integers(0, 256, (300, 32), dtype=np.uint8), np.ones(300, dtype=bool))
    db = DescriptorSet(rng.integers(0, 256, (280, 32), dtype=np.uint8), np.ones(280, dtype=bool))
    a, b = both(lambda: kernels.hamming_matrix(da.words, db.words))
    assert np.array_equal(a, b)
    ma, mb = both(lambda: match_bruteforce(da, db))
    assert list(ma) == list(mb)


def test_shape_interest_agrees(frame):
    _, _, d = frame
    ri = preprocess.to_range_image(d, SMALL)
    a, b = both(lambda: shape_interest_map(ri))
    assert a.max() > 0
    assert np.allclose(a, b, rtol=0, atol=1e-9)


def test_icp_agrees(frame):
    scene, pose, d = frame
    target = synth.render_prediction(scene, pose, SMALL)
    init = Pose.from_rotvec((0.02, -0.01, 0.03), (0.01, 0.02, -0.01)) @ pose
    a, b = both(lambda: fusion.icp_point_to_plane(d, SMALL, target, init))
    assert np.allclose(a.pose.as_matrix(), b.pose.as_matrix(), atol=1e-9)
    assert a.inliers == b.inliers
