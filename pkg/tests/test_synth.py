import numpy as np
import pytest

from conftest import SMALL, random_pose
from rgbdfusion import synth
from rgbdfusion.dataset_io import IngestConfig, Trajectory, load_ground_truth, load_sequence
from rgbdfusion.errors import ConfigError
from rgbdfusion.geometry import Pose, pixel_rays


def test_plane_depth_is_exact():
    s = synth.Scene().add("plane", synth.Texture("solid"), normal=(0, 0, -1.0), offset=-1.2)
    _, depth = synth.render_frame(s, Pose.identity(), SMALL)
    assert np.allclose(depth, 1.2, rtol=0, atol=1e-14)


def test_sphere_depth_matches_closed_form(rng):
    c, r = np.array([0.1, -0.05, 1.5]), 0.4
    s = synth.Scene().add("sphere", synth.Texture("solid"), center=tuple(c), radius=r)
    pose = random_pose(rng, 0.1, 0.1)
    _, depth = synth.render_frame(s, pose, SMALL)
    # closed form in the camera frame: |t * ray - c_cam| = r, nearest root
    cc = pose.inverse().apply(c[None])[0]
    rays = pixel_rays(SMALL)
    a = np.sum(rays * rays, axis=-1)
    b = rays @ cc
    disc = b * b - a * (cc @ cc - r * r)
    hit = disc >= 0
    t = (b - np.sqrt(np.where(hit, disc, 0))) / a
    ref = np.where(hit, t * rays[..., 2], 0.0)
    assert hit.sum() > 1000 and np.array_equal(depth > 0, hit)
    assert np.max(np.abs(depth - ref)) < 1e-12


def test_sequence_round_trip(tmp_path):
    traj = synth.orbit_trajectory(5)
    out = synth.render_synthetic_sequence(synth.flat_wall(), traj, tmp_path / "s", SMALL)
    back = load_ground_truth(out / "groundtruth.txt")
    assert np.allclose(back.timestamps, traj.timestamps, atol=1e-6)
    for p, q in zip(back.poses, traj.poses):
        assert np.allclose(p.as_matrix(), q.as_matrix(), atol=1e-8)
    frames = list(load_sequence(out, IngestConfig(SMALL)))
    assert len(frames) == 5
    _, depth = synth.render_frame(synth.flat_wall(), traj.poses[2], SMALL)
    # depth survives the 16-bit PNG at 1/5000 m steps
    assert np.array_equal(frames[2].depth, np.round(depth * 5000) / 5000)


def test_depth_noise_is_seeded(tmp_path):
    traj = Trajectory([0.0], [Pose.identity()])
    a = synth.render_synthetic_sequence(synth.flat_wall(), traj, tmp_path / "a", SMALL, depth_noise=0.01, seed=4)
    b = synth.render_synthetic_sequence(synth.flat_wall(), traj, tmp_path / "b", SMALL, depth_noise=0.01, seed=4)
    assert (a / "depth" / "0.000000.png").read_bytes() == (b / "depth" / "0.000000.png").read_bytes()


def test_parse_scene():
    s = synth.parse_scene(
        "light 0 1 0\nambient 0.3\n"
        "room min=-1,-1,-1 max=1,1,1 texture=noise scale=0.2 seed=5\n"
        "box min=0,0,0 max=0.5,0.5,0.5 color=255,0,0\n")
    assert s.light == (0.0, 1.0, 0.0) and s.ambient == 0.3
    assert [p.kind for p in s.primitives] == ["room", "box"]
    assert s.primitives[0].texture.kind == "noise" and s.primitives[0].texture.seed == 5
    assert s.primitives[1].texture.color == (255, 0, 0)
    for bad in ("cone center=0,0,0\n", "sphere center=0,0,0\n", "plane normal=0,0,1 offset=abc\n"):
        with pytest.raises(ConfigError):
            synth.parse_scene(bad)


def test_room_is_seen_from_inside():
    _, depth = synth.render_frame(synth.textured_room(), Pose.identity(), SMALL)
    assert np.all(depth > 0) and depth.max() <= 1.2 * np.sqrt(3) + 1e-9
