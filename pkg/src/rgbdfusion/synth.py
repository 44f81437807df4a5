"""Analytic RGB-D renderer for test fixtures.

Scenes are lists of primitives (plane, sphere, box, room = box seen from
inside) with solid 3D textures (value noise, checker, flat color). Depth is
the exact ray intersection (camera z), color is texture * lambertian shading
under one directional light. Sequences are written in the TUM layout with
exact ground truth.

Scene file format, one primitive per line, ``#`` comments::

    light -0.3 1 0.5
    ambient 0.45
    plane normal=0,-1,0 offset=-1 texture=noise scale=0.08 seed=3
    sphere center=0,0,2 radius=0.4 texture=checker size=0.1
    box min=-0.2,0.2,1.6 max=0.2,0.6,2.0 texture=solid color=200,80,40
    room min=-1.5,-1.5,-1.5 max=1.5,1.5,1.5 texture=noise
"""
from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import Trajectory, write_depth, write_rgb, write_trajectory
from .errors import ConfigError
from .fusion import SurfacePrediction
from .geometry import Intrinsics, Pose, pixel_rays


def _hash3(ix, iy, iz, seed: int) -> np.ndarray:
    """Integer lattice hash -> uniform [0, 1)."""
    # seeds mix in as an array so the wrapping uint64 multiply stays silent
    sd = np.full(np.shape(ix), seed, dtype=np.uint64)
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
         ^ sd * np.uint64(0x27D4EB2F165667C5))
    h ^= h >> np.uint64(31)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(29)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(32)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(p: np.ndarray, scale: float, seed: int = 0, octaves: int = 4) -> np.ndarray:
    """Multi-octave trilinear value noise in [0, 1] at points p (..., 3)."""
    total = np.zeros(p.shape[:-1])
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        g = p / (scale / (2 ** o))
        i0 = np.floor(g).astype(np.int64)
        f = g - i0
        f = f * f * (3 - 2 * f)
        acc = np.zeros(p.shape[:-1])
        for dx in (0, 1):
            wx = f[..., 0] if dx else 1 - f[..., 0]
            for dy in (0, 1):
                wy = f[..., 1] if dy else 1 - f[..., 1]
                for dz in (0, 1):
                    wz = f[..., 2] if dz else 1 - f[..., 2]
                    acc += wx * wy * wz * _hash3(i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz, seed + 7919 * o)
        total += amp * acc
        norm += amp
        amp *= 0.5
    return total / norm


@dataclass
class Texture:
    kind: str = "solid"  # solid | checker | noise
    color: tuple = (180, 180, 180)
    color2: tuple = (40, 40, 40)
    size: float = 0.1  # checker cell edge, meters
    scale: float = 0.08  # noise base wavelength, meters
    seed: int = 0
    octaves: int = 4
    contrast: float = 1.6

    def albedo(self, p: np.ndarray) -> np.ndarray:
        c1 = np.asarray(self.color, dtype=np.float64) / 255.0
        c2 = np.asarray(self.color2, dtype=np.float64) / 255.0
        if self.kind == "solid":
            return np.broadcast_to(c1, p.shape).copy()
        if self.kind == "checker":
            k = np.floor(p / self.size).astype(np.int64).sum(axis=-1) & 1
            return np.where(k[..., None] == 0, c1, c2)
        if self.kind == "noise":
            n = value_noise(p, self.scale, self.seed, self.octaves)
            n = np.clip(0.5 + self.contrast * (n - 0.5), 0.0, 1.0)
            return c2 + (c1 - c2) * n[..., None]
        raise ConfigError(f"unknown texture kind {self.kind!r}")


@dataclass
class Primitive:
    kind: str  # plane | sphere | box | room
    params: dict
    texture: Texture = field(default_factory=Texture)

    def intersect(self, o: np.ndarray, d: np.ndarray):
        """Ray parameter (inf on miss) and unit normal facing the ray."""
        n = len(d)
        t = np.full(n, np.inf)
        nrm = np.zeros((n, 3))
        if self.kind == "plane":
            pn = np.asarray(self.params["normal"], dtype=np.float64)
            pn = pn / np.linalg.norm(pn)
            off = float(self.params["offset"])
            den = d @ pn
            with np.errstate(divide="ignore", invalid="ignore"):
                tt = (off - o @ pn) / den
            hit = (np.abs(den) > 1e-12) & (tt > 1e-9)
            t[hit] = tt[hit]
            nrm[:] = pn
            nrm[den > 0] = -pn
        elif self.kind == "sphere":
            c = np.asarray(self.params["center"], dtype=np.float64)
            r = float(self.params["radius"])
            oc = o - c
            b = d @ oc
            cc = oc @ oc - r * r
            disc = b * b - cc
            hit = disc >= 0
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t0 = -b - sq
            t1 = -b + sq
            tt = np.where(t0 > 1e-9, t0, t1)
            hit &= tt > 1e-9
            t[hit] = tt[hit]
            p = o + tt[:, None] * d
            nrm = (p - c) / r
            inside = cc < 0
            if inside:
                nrm = -nrm
        elif self.kind in ("box", "room"):
            lo = np.asarray(self.params["min"], dtype=np.float64)
            hi = np.asarray(self.params["max"], dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                ta = (lo - o) * inv
                tb = (hi - o) * inv
            ta = np.where(np.isnan(ta), -np.inf, ta)
            tb = np.where(np.isnan(tb), np.inf, tb)
            tmin = np.minimum(ta, tb)
            tmax = np.maximum(ta, tb)
            t_in = tmin.max(axis=1)
            t_out = tmax.min(axis=1)
            if self.kind == "box":
                tt, ax = t_in, tmin.argmax(axis=1)
                hit = (t_in <= t_out) & (t_in > 1e-9)
            else:
                tt, ax = t_out, tmax.argmin(axis=1)
                hit = (t_in <= t_out) & (t_out > 1e-9)
            t[hit] = tt[hit]
            rows = np.arange(n)
            nrm[rows, ax] = -np.sign(d[rows, ax])
        else:
            raise ConfigError(f"unknown primitive {self.kind!r}")
        return t, nrm


@dataclass
class Scene:
    primitives: list = field(default_factory=list)
    light: tuple = (-0.3, 1.0, 0.5)  # direction the light travels (world)
    ambient: float = 0.45
    intrinsics: Intrinsics | None = None

    def add(self, kind, texture=None, **params) -> "Scene":
        self.primitives.append(Primitive(kind, params, texture or Texture()))
        return self


def _vec(s: str) -> tuple:
    return tuple(float(x) for x in s.split(","))


_TEX_KEYS = {"texture", "color", "color2", "size", "scale", "seed", "octaves", "contrast"}


def parse_scene(text: str) -> Scene:
    scene = Scene()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = shlex.split(line)
        kind, rest = tok[0], tok[1:]
        try:
            if kind == "light":
                scene.light = tuple(float(x) for x in rest)
                continue
            if kind == "ambient":
                scene.ambient = float(rest[0])
                continue
            kv = dict(item.split("=", 1) for item in rest)
            if kind == "intrinsics":
                scene.intrinsics = Intrinsics(**{k: (int(v) if k in ("width", "height") else float(v)) for k, v in kv.items()})
                continue
            tex = Texture(kind=kv.pop("texture", "solid"))
            for k in list(kv):
                if k in _TEX_KEYS:
                    v = kv.pop(k)
                    if k in ("color", "color2"):
                        setattr(tex, k, tuple(int(float(x)) for x in v.split(",")))
                    elif k in ("seed", "octaves"):
                        setattr(tex, k, int(v))
                    else:
                        setattr(tex, k, float(v))
            params = {k: (_vec(v) if "," in v else float(v)) for k, v in kv.items()}
            required = {"plane": {"normal", "offset"}, "sphere": {"center", "radius"},
                        "box": {"min", "max"}, "room": {"min", "max"}}
            if kind not in required:
                raise ConfigError(f"unknown primitive {kind!r}")
            missing = required[kind] - params.keys()
            if missing:
                raise ConfigError(f"{kind} needs {sorted(missing)}")
            scene.primitives.append(Primitive(kind, params, tex))
        except (ValueError, IndexError, TypeError) as exc:
            raise ConfigError(f"scene line {lineno}: {exc}") from None
    return scene


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def _trace(scene: Scene, pose: Pose, intr: Intrinsics):
    rays = pixel_rays(intr).reshape(-1, 3)
    zc = rays[:, 2].copy()
    norm = np.linalg.norm(rays, axis=1)
    d = (rays / norm[:, None]) @ pose.rotation.T
    o = pose.translation
    best = np.full(len(d), np.inf)
    nrm = np.zeros((len(d), 3))
    which = np.full(len(d), -1)
    for i, prim in enumerate(scene.primitives):
        t, n = prim.intersect(o, d)
        closer = t < best
        best[closer] = t[closer]
        nrm[closer] = n[closer]
        which[closer] = i
    hit = np.isfinite(best)
    depth = np.zeros(len(d))
    depth[hit] = best[hit] * zc[hit] / norm[hit]
    p = o + np.where(hit, best, 0.0)[:, None] * d
    return depth, p, nrm, which, hit


def render_frame(scene: Scene, pose: Pose, intr: Intrinsics):
    """(rgb uint8 (H, W, 3), depth float64 meters (H, W)) seen from ``pose``."""
    depth, p, nrm, which, _ = _trace(scene, pose, intr)
    rgb = np.zeros((len(depth), 3))
    light = -np.asarray(scene.light, dtype=np.float64)
    light /= np.linalg.norm(light)
    shade = scene.ambient + (1 - scene.ambient) * np.clip(nrm @ light, 0.0, 1.0)
    for i, prim in enumerate(scene.primitives):
        m = which == i
        if m.any():
            rgb[m] = prim.texture.albedo(p[m]) * shade[m, None]
    rgb = np.clip(np.round(rgb * 255), 0, 255).astype(np.uint8)
    return rgb.reshape(intr.height, intr.width, 3), depth.reshape(intr.height, intr.width)


def render_prediction(scene: Scene, pose: Pose, intr: Intrinsics) -> SurfacePrediction:
    """Exact surface prediction (world points and normals by ray intersection),
    a drop-in ICP target in place of a raycast of a fused volume."""
    _, p, nrm, _, hit = _trace(scene, pose, intr)
    shape = (intr.height, intr.width)
    return SurfacePrediction(np.where(hit[:, None], p, 0.0).reshape(*shape, 3),
                             nrm.reshape(*shape, 3), hit.reshape(shape), pose, intr)


def render_synthetic_sequence(scene: Scene, trajectory: Trajectory, out_dir, intr: Intrinsics | None = None,
                              depth_noise: float = 0.0, seed: int = 0) -> Path:
    """Write rgb/, depth/, rgb.txt, depth.txt and groundtruth.txt."""
    intr = intr or scene.intrinsics or Intrinsics()
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rgb_lines = ["# color images", "# timestamp filename"]
    depth_lines = ["# depth maps", "# timestamp filename"]
    for t, pose in trajectory:
        rgb, depth = render_frame(scene, pose, intr)
        if depth_noise > 0:
            depth = np.where(depth > 0, depth + rng.normal(0, depth_noise, depth.shape), 0.0)
        name = f"{t:.6f}.png"
        write_rgb(out / "rgb" / name, rgb)
        write_depth(out / "depth" / name, depth, intr.depth_scale)
        rgb_lines.append(f"{t:.6f} rgb/{name}")
        depth_lines.append(f"{t:.6f} depth/{name}")
    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    write_trajectory(trajectory, out / "groundtruth.txt")
    return out


# ready-made fixtures --------------------------------------------------------


def textured_room(half: float = 1.2, seed: int = 0) -> Scene:
    """Box room (y down, floor at +half) with furniture in front of the +z wall."""
    s = Scene(light=(0.2, 0.6, 1.0), ambient=0.55)
    s.add("room", Texture("noise", (250, 240, 225), (10, 15, 30), scale=0.15, seed=seed, contrast=3.0),
          min=(-half, -half, -half), max=(half, half, half))
    s.add("box", Texture("noise", (250, 150, 80), (20, 10, 5), scale=0.08, seed=seed + 1, contrast=3.0),
          min=(-0.85, 0.2, 0.55), max=(-0.3, half, 1.0))
    s.add("sphere", Texture("noise", (120, 220, 250), (5, 20, 50), scale=0.06, seed=seed + 2, contrast=3.0),
          center=(0.35, -0.15, 0.85), radius=0.3)
    s.add("box", Texture("noise", (230, 240, 110), (30, 30, 5), scale=0.07, seed=seed + 3, contrast=3.0),
          min=(0.15, 0.75, 0.35), max=(0.85, half, 0.75))
    return s


def flat_wall(z: float = 1.2, seed: int = 0) -> Scene:
    s = Scene(light=(0.2, 0.6, 1.0), ambient=0.55)
    s.add("plane", Texture("noise", (250, 240, 225), (10, 15, 30), scale=0.1, seed=seed, contrast=3.0),
          normal=(0.0, 0.0, -1.0), offset=-z)
    return s


def plane_sphere_box(seed: int = 0) -> Scene:
    """Geometry-rich fixture for ICP: floor + back wall + sphere + box."""
    s = Scene()
    s.add("plane", Texture("noise", seed=seed), normal=(0.0, -1.0, 0.0), offset=-0.5)
    s.add("plane", Texture("noise", seed=seed + 1), normal=(0.0, 0.0, -1.0), offset=-2.6)
    s.add("sphere", Texture("checker"), center=(-0.35, 0.1, 1.8), radius=0.35)
    s.add("box", Texture("noise", seed=seed + 2), min=(0.15, 0.0, 1.4), max=(0.65, 0.5, 1.9))
    return s


def sphere_scene(radius: float = 0.5) -> Scene:
    return Scene().add("sphere", Texture("noise", scale=0.1), center=(0.0, 0.0, 0.0), radius=radius)


def orbit_trajectory(n: int = 50, rate: float = 30.0, radius: float = 0.15, yaw_sweep: float = math.radians(20),
                     height: float = 0.0) -> Trajectory:
    """Camera circling the room center while sweeping its heading."""
    ts, poses = [], []
    for k in range(n):
        a = 2 * math.pi * k / n
        eye = np.array([radius * math.sin(a), height, -radius * math.cos(a)])
        yaw = yaw_sweep * math.sin(a)
        fwd = np.array([math.sin(yaw), 0.0, math.cos(yaw)])
        poses.append(Pose.look_at(eye, eye + fwd))
        ts.append(k / rate)
    return Trajectory(ts, poses)


def fibonacci_views(n: int = 20, distance: float = 1.5, target=(0.0, 0.0, 0.0)) -> list:
    target = np.asarray(target, dtype=np.float64)
    out = []
    ga = math.pi * (3 - math.sqrt(5))
    for i in range(n):
        y = 1 - 2 * (i + 0.5) / n
        r = math.sqrt(1 - y * y)
        d = np.array([r * math.cos(ga * i), y, r * math.sin(ga * i)])
        up = (0.0, -1.0, 0.0) if abs(y) < 0.95 else (1.0, 0.0, 0.0)
        out.append(Pose.look_at(target + distance * d, target, up))
    return out
