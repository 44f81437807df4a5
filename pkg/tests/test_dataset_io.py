import math

import numpy as np
import pytest

from rgbdfusion.dataset_io import (IngestConfig, Trajectory, associate_timestamps, load_ground_truth, load_sequence,
                                   read_depth, write_depth, write_rgb, write_trajectory)
from rgbdfusion.errors import MissingIndexFile, NonUnitQuaternion, ParseError, UnreadableImage
from rgbdfusion.geometry import Intrinsics, Pose, rotation_angle

from conftest import random_pose

TINY = Intrinsics(10.0, 10.0, 3.5, 2.5, 8, 6)


def make_sequence(root, rgb_times, depth_times, comment=True):
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(exist_ok=True)
    rgb_lines = ["# color images", "# file: synthetic"] if comment else []
    depth_lines = ["# depth maps"] if comment else []
    for i, t in enumerate(rgb_times):
        write_rgb(root / "rgb" / f"{t:.6f}.png", np.full((6, 8, 3), i, dtype=np.uint8))
        rgb_lines.append(f"{t:.6f} rgb/{t:.6f}.png")
    for i, t in enumerate(depth_times):
        write_depth(root / "depth" / f"{t:.6f}.png", np.full((6, 8), 1.0 + i), 5000.0)
        depth_lines.append(f"{t:.6f} depth/{t:.6f}.png")
    (root / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (root / "depth.txt").write_text("\n".join(depth_lines) + "\n\n")
    return root


def test_association_within_tolerance(tmp_path):
    seq = load_sequence(make_sequence(tmp_path, [1.000], [1.010]), IngestConfig(TINY, 0.02))
    frames = list(seq)
    assert len(frames) == 1 and seq.skipped == 0
    assert frames[0].timestamp == 1.0
    assert frames[0].rgb.shape == (6, 8, 3) and frames[0].depth.shape == (6, 8)


def test_association_outside_tolerance_skips(tmp_path):
    seq = load_sequence(make_sequence(tmp_path, [1.000], [1.100]), IngestConfig(TINY, 0.02))
    assert len(list(seq)) == 0 and seq.skipped == 1


def test_association_partial_and_no_reuse(tmp_path):
    seq = load_sequence(make_sequence(tmp_path, [1.0, 1.005, 2.0], [1.001, 3.0]), IngestConfig(TINY, 0.02))
    assert len(seq) == 1 and seq.skipped == 2
    assert seq.entries[0][0] == 1.0


def test_depth_scale_conversion(tmp_path):
    from PIL import Image
    raw = np.array([[5000, 0], [65535, 2500]], dtype=np.uint16)
    Image.fromarray(raw).save(tmp_path / "d.png")
    d = read_depth(tmp_path / "d.png", 5000.0)
    assert d[0, 0] == 1.0 and d[0, 1] == 0.0 and d[1, 1] == 0.5
    assert d[1, 0] == pytest.approx(13.107)


def test_depth_write_read_roundtrip(tmp_path):
    d = np.array([[0.0, 1.2345], [3.0, 0.0002]])
    write_depth(tmp_path / "x.png", d, 5000.0)
    back = read_depth(tmp_path / "x.png", 5000.0)
    assert np.abs(back - d).max() <= 0.5 / 5000


def test_missing_index_and_unreadable_image(tmp_path):
    with pytest.raises(MissingIndexFile):
        load_sequence(tmp_path)
    root = make_sequence(tmp_path, [1.0], [1.0])
    (root / "rgb" / "1.000000.png").write_bytes(b"not a png")
    with pytest.raises(UnreadableImage):
        list(load_sequence(root, IngestConfig(TINY)))


def test_bad_index_line(tmp_path):
    root = make_sequence(tmp_path, [1.0], [1.0])
    (root / "rgb.txt").write_text("abc rgb/1.000000.png\n")
    with pytest.raises(ParseError) as ei:
        load_sequence(root)
    assert ei.value.line_number == 1


def test_associate_timestamps_greedy_closest_first():
    # 2.0 is closer to 2.004 than 1.99 is, so 1.99 finds nothing left
    pairs = associate_timestamps([1.99, 2.0], [2.004], 0.02)
    assert pairs == [(1, 0)]


def test_ground_truth_examples(tmp_path):
    f = tmp_path / "gt.txt"
    f.write_text("# ground truth\n0.0 0 0 0 0 0 0 1\n1.0 1 2 3 0 0 0 1\n")
    tr = load_ground_truth(f)
    assert len(tr) == 2
    assert np.array_equal(tr.poses[0].rotation, np.eye(3)) and np.array_equal(tr.poses[0].translation, [0, 0, 0])
    assert np.array_equal(tr.poses[1].translation, [1, 2, 3])


def test_ground_truth_errors(tmp_path):
    f = tmp_path / "gt.txt"
    f.write_text("0.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0\n")
    with pytest.raises(ParseError) as ei:
        load_ground_truth(f)
    assert ei.value.line_number == 2
    f.write_text("0.0 0 0 0 0 0 0 1.01\n")
    with pytest.raises(NonUnitQuaternion):
        load_ground_truth(f)
    f.write_text("0.0 0 0 0 0 0 0 1.0005\n")
    tr = load_ground_truth(f)
    assert np.abs(tr.poses[0].rotation - np.eye(3)).max() < 1e-12
    with pytest.raises(MissingIndexFile):
        load_ground_truth(tmp_path / "nope.txt")


def test_trajectory_write_examples(tmp_path):
    f = tmp_path / "t.txt"
    write_trajectory(Trajectory(), f)
    assert f.read_text() == ""
    write_trajectory(Trajectory([0.0], [Pose.identity()]), f)
    vals = [float(x) for x in f.read_text().split()]
    assert vals == [0, 0, 0, 0, 0, 0, 0, 1]
    assert len(f.read_text().split()[0].split(".")[1]) >= 4


def test_trajectory_roundtrip_100(tmp_path, rng):
    poses = [random_pose(rng, max_t=20) for _ in range(100)]
    ts = np.cumsum(rng.uniform(0.01, 0.05, 100)) + 1.3e9
    f = tmp_path / "t.txt"
    write_trajectory(Trajectory(ts, poses), f)
    back = load_ground_truth(f)
    assert np.abs(back.timestamps - ts).max() < 1e-5
    for a, b in zip(poses, back.poses):
        assert np.linalg.norm(a.translation - b.translation) < 1e-6
        assert rotation_angle(a.rotation.T @ b.rotation) < 1e-6
    # load -> write -> load is idempotent to I/O precision
    g = tmp_path / "t2.txt"
    write_trajectory(back, g)
    a = np.loadtxt(f)
    b = np.loadtxt(g)
    assert np.abs(a - b).max() <= 2e-9


def test_trajectory_rejects_non_increasing():
    with pytest.raises(ValueError):
        Trajectory([1.0, 1.0], [Pose(), Pose()])
    tr = Trajectory([1.0], [Pose()])
    with pytest.raises(ValueError):
        tr.append(0.5, Pose())
