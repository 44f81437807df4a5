"""Time every hot kernel on the numba backend against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--resolution 128]

The first numba call per kernel includes JIT compilation (or a cache load);
it runs once as warm-up and is not timed.
"""
import argparse
import time

import numpy as np

from rgbdfusion import kernels, synth
from rgbdfusion.descriptors import DescriptorSet
from rgbdfusion.fusion import TsdfVolume, VolumeParams, icp_point_to_plane, integrate, raycast
from rgbdfusion.geometry import Intrinsics, Pose
from rgbdfusion.keypoints import shape_interest_map
from rgbdfusion.matching import match_bruteforce
from rgbdfusion.meshing import marching_cubes
from rgbdfusion.preprocess import bilateral_filter, to_range_image

NAMES = ("bilateral_filter", "tsdf_integrate", "tsdf_raycast", "mc_edge_triangles", "hamming_matrix",
         "shape_interest", "icp_reduce")


def use_backend(name):
    mod = kernels.load_backend(name)
    for n in NAMES:
        setattr(kernels, n, getattr(mod, n))


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


def make_cases(res, intr):
    scene = synth.plane_sphere_box()
    pose = Pose.look_at((0.1, -0.2, 0.0), (0.0, 0.1, 1.7))
    _, depth = synth.render_frame(scene, pose, intr)
    depth = np.where(depth > 0, depth + np.random.default_rng(0).normal(0, 0.002, depth.shape), 0.0)
    params = VolumeParams(resolution=res, voxel_size=3.0 / res)
    vol = TsdfVolume.centered_at((0, 0, 1.5), params)
    integrate(vol, depth, intr, pose)
    target = synth.render_prediction(scene, pose, intr)
    init = Pose.from_rotvec((0.02, -0.01, 0.03), (0.01, 0.02, -0.01)) @ pose
    ri = to_range_image(depth, intr)
    rng = np.random.default_rng(1)
    da = DescriptorSet(rng.integers(0, 256, (800, 32), dtype=np.uint8), np.ones(800, dtype=bool))
    db = DescriptorSet(rng.integers(0, 256, (800, 32), dtype=np.uint8), np.ones(800, dtype=bool))

    def fuse():
        v = TsdfVolume.centered_at((0, 0, 1.5), params)
        integrate(v, depth, intr, pose)

    return {
        "bilateral_filter": lambda: bilateral_filter(depth),
        "tsdf_integrate": fuse,
        "tsdf_raycast": lambda: raycast(vol, pose, intr),
        "marching_cubes": lambda: marching_cubes(vol, with_normals=False),
        "hamming_match": lambda: match_bruteforce(da, db),
        "shape_interest": lambda: shape_interest_map(ri),
        "icp": lambda: icp_point_to_plane(depth, intr, target, init),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--resolution", type=int, default=128, help="voxels per axis")
    ap.add_argument("--width", type=int, default=320)
    args = ap.parse_args(argv)
    s = args.width / 640
    intr = Intrinsics(525 * s, 525 * s, 319.5 * s, 239.5 * s, args.width, int(round(480 * s)))
    cases = make_cases(args.resolution, intr)
    results = {}
    for backend in ("numba", "numpy"):
        use_backend(backend)
        for name, fn in cases.items():
            fn()  # warm-up / JIT
            results[name, backend] = best_of(fn, args.repeat)
    print(f"volume {args.resolution}^3, image {intr.width}x{intr.height}, best of {args.repeat}")
    print(f"{'kernel':18s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name in cases:
        a, b = results[name, "numba"], results[name, "numpy"]
        print(f"{name:18s} {1e3 * a:11.2f} {1e3 * b:11.2f} {b / a:8.1f}x")
    return results


if __name__ == "__main__":
    main()
