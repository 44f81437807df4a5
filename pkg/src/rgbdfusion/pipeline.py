"""Frame loop: visual odometry seeds ICP against the TSDF prediction, depth is
fused at the refined pose, and a mesh is extracted at the end."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dataset_io import Frame, IngestConfig, Trajectory, load_sequence
from .descriptors import DescriptorParams, compute_descriptors
from .errors import ConfigError, DatasetError, EstimationError, InsufficientOverlap
from .fusion import IcpParams, TsdfVolume, VolumeParams, WorldModel, icp_point_to_plane, integrate, raycast, shift_volume, zero_crossings
from .geometry import Intrinsics, Pose, compose, invert
from .keypoints import ColorDetectorParams, ShapeDetectorParams, detect_color_keypoints, detect_shape_keypoints, union_keypoints
from .matching import lift_to_3d, match_bruteforce, ransac_homography_filter
from .meshing import TriangleMesh, marching_cubes
from .preprocess import PreprocessParams, bilateral_filter, compute_normals, to_range_image
from .rigid_motion import RansacParams, estimate_rigid_motion

log = logging.getLogger(__name__)

MODES = ("combined", "vo_only", "icp_only")


@dataclass
class HomographyParams:
    reproj_threshold: float = 3.0  # pixels
    iterations: int = 500


@dataclass
class MotionParams:
    max_iterations: int = 200
    sample_size: int = 3
    error_threshold: float = 0.05
    refit: bool = True
    # a low-confidence hypothesis (rms > error_threshold) is still used as the
    # ICP starting point when this fraction of correspondences fits within
    # error_threshold; 1.0 restores the strict rule
    min_inlier_fraction: float = 0.5


@dataclass
class CameraParams:
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    depth_scale: float = 5000.0


@dataclass
class UnionParams:
    dedup_radius: float = 3.0


@dataclass
class PipelineConfig:
    mode: str = "combined"
    seed: int = 42
    max_time_diff: float = 0.02
    max_frames: int = 0  # 0 = all
    camera: CameraParams = field(default_factory=CameraParams)
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    color: ColorDetectorParams = field(default_factory=ColorDetectorParams)
    shape: ShapeDetectorParams = field(default_factory=ShapeDetectorParams)
    union: UnionParams = field(default_factory=UnionParams)
    descriptor: DescriptorParams = field(default_factory=DescriptorParams)
    homography: HomographyParams = field(default_factory=HomographyParams)
    motion: MotionParams = field(default_factory=MotionParams)
    icp: IcpParams = field(default_factory=IcpParams)
    volume: VolumeParams = field(default_factory=VolumeParams)

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(**dataclasses.asdict(self.camera))

    def validate(self) -> "PipelineConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        try:
            self.intrinsics
            RansacParams(self.motion.max_iterations, self.motion.sample_size, self.motion.error_threshold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if len(self.icp.strides) != len(self.icp.iterations):
            raise ConfigError("icp.strides and icp.iterations must have equal length")
        if self.volume.resolution < 2 or not self.volume.voxel_size > 0:
            raise ConfigError("volume.resolution >= 2 and volume.voxel_size > 0 required")
        return self

    def set(self, key: str, value) -> None:
        """Assign a dotted key from a string (or typed) value."""
        section, _, name = key.rpartition(".")
        obj = self
        if section:
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            obj = getattr(self, section)
        valid = {f.name: f for f in dataclasses.fields(obj)}
        if name not in valid or (not section and name in _SECTIONS):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(obj, name)
        setattr(obj, name, _coerce(key, value, current))

    def items(self):
        """(dotted key, value) for every tunable."""
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in dataclasses.fields(v):
                    yield f"{f.name}.{g.name}", getattr(v, g.name)
            else:
                yield f.name, v


_SECTIONS = {f.name for f in dataclasses.fields(PipelineConfig) if f.name not in
             ("mode", "seed", "max_time_diff", "max_frames")}


def _coerce(key, value, current):
    if not isinstance(value, str):
        return value
    s = value.strip()
    try:
        if isinstance(current, bool):
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(current, int):
            return int(s)
        if isinstance(current, float):
            return float(s)
        if isinstance(current, tuple):
            kind = type(current[0]) if current else float
            return tuple(kind(x) for x in s.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return s


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg.validate()


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_config(text, cfg)
    for k, v in (overrides or {}).items():
        cfg.set(k, v)
    return cfg.validate()


def config_text(cfg: PipelineConfig | None = None) -> str:
    return "\n".join(f"{k} = {','.join(map(str, v)) if isinstance(v, tuple) else v}"
                     for k, v in (cfg or PipelineConfig()).items()) + "\n"


LOG_FIELDS = ("frame", "timestamp", "path", "keypoints", "raw_matches", "filtered_matches", "correspondences",
              "vo_rms", "vo_inliers", "icp_fitness", "icp_condition", "fallback", "t_pre", "t_vo", "t_icp", "t_fuse")


@dataclass(eq=False)
class RunArtifacts:
    trajectory: Trajectory
    mesh: TriangleMesh
    log: list  # one dict per frame, keys LOG_FIELDS
    world: WorldModel
    volume: TsdfVolume
    skipped_frames: int = 0

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for row in self.log:
                w.writerow(row)

    def world_points(self) -> np.ndarray:
        """Exited surface points plus the current volume's zero crossings."""
        v = self.volume
        return np.concatenate([self.world.points, zero_crossings(v.tsdf, v.weight, v.origin, v.voxel_size)])


@dataclass(eq=False)
class _FrameFeatures:
    frame: Frame
    depth: np.ndarray  # filtered
    kps: object = None
    desc: object = None


def _features(cfg: PipelineConfig, f: _FrameFeatures, normals):
    kc = detect_color_keypoints(f.frame.rgb, cfg.color)
    ri = to_range_image(f.depth, f.frame.intrinsics, cfg.preprocess.angular_res)
    ks = detect_shape_keypoints(ri, cfg.shape)
    f.kps = union_keypoints(kc, ks, cfg.union.dedup_radius)
    f.desc = compute_descriptors(f.frame, normals, f.kps, cfg.descriptor, depth=f.depth)


def _visual_odometry(cfg: PipelineConfig, prev: _FrameFeatures, cur: _FrameFeatures, row: dict):
    """T mapping prev-camera points into the current camera, or None."""
    m = match_bruteforce(prev.desc, cur.desc)
    row["raw_matches"] = len(m)
    filt, _ = ransac_homography_filter(m, prev.kps, cur.kps, cfg.homography.reproj_threshold,
                                       cfg.homography.iterations, cfg.seed)
    row["filtered_matches"] = len(filt)
    corr = lift_to_3d(filt, prev.kps, cur.kps, prev.frame, cur.frame, prev.depth, cur.depth)
    row["correspondences"] = len(corr)
    mp = cfg.motion
    hyp = estimate_rigid_motion(corr, RansacParams(mp.max_iterations, mp.sample_size, mp.error_threshold, mp.refit),
                                seed=cfg.seed)
    row["vo_rms"] = hyp.rms_error
    row["vo_inliers"] = hyp.inliers
    if hyp.low_confidence and hyp.inliers < mp.min_inlier_fraction * len(corr):
        row["fallback"] = "vo-low-confidence"
        return None
    return hyp.transform


def run_pipeline(config: PipelineConfig, sequence_dir, progress=None) -> RunArtifacts:
    cfg = config.validate()
    intr = cfg.intrinsics
    seq = load_sequence(sequence_dir, IngestConfig(intr, cfg.max_time_diff))
    use_vo = cfg.mode in ("combined", "vo_only")
    use_icp = cfg.mode in ("combined", "icp_only")
    traj = Trajectory()
    rows = []
    world = WorldModel()
    vol = None
    prev = None
    C = Pose.identity()
    log.info("run: mode=%s seed=%d kernels=%s frames=%d", cfg.mode, cfg.seed, kernels.BACKEND, len(seq))
    for k, frame in enumerate(seq):
        if cfg.max_frames and k >= cfg.max_frames:
            break
        row = dict.fromkeys(LOG_FIELDS, "")
        row.update(frame=k, timestamp=f"{frame.timestamp:.6f}")
        t0 = time.perf_counter()
        pp = cfg.preprocess
        depth = bilateral_filter(frame.depth, pp.sigma_space, pp.sigma_range)
        normals = compute_normals(depth, intr, pp.max_depth_jump)
        cur = _FrameFeatures(frame, depth)
        t1 = time.perf_counter()
        if use_vo:
            _features(cfg, cur, normals)
            row["keypoints"] = len(cur.kps)
        t2 = time.perf_counter()
        weight = 1.0
        if k == 0:
            C = Pose.identity()
            vol = TsdfVolume.centered_at(C.translation, cfg.volume)
            row["path"] = "init"
        else:
            C_prev = C
            vo_pose = None
            if use_vo:
                try:
                    T = _visual_odometry(cfg, prev, cur, row)
                except EstimationError as exc:
                    T = None
                    row["fallback"] = f"vo-failed:{type(exc).__name__}"
                if T is not None:
                    vo_pose = compose(C_prev, invert(T))
            t2 = time.perf_counter()
            if not use_icp:
                if vo_pose is not None:
                    C, row["path"] = vo_pose, "vo"
                else:
                    C, row["path"], weight = C_prev, "skipped", 0.0
            else:
                guess = vo_pose if vo_pose is not None else C_prev
                try:
                    pred = raycast(vol, C_prev, intr)
                    res = icp_point_to_plane(depth, intr, pred, guess, cfg.icp, normals)
                    C = res.pose
                    row["icp_fitness"] = f"{res.fitness:.6f}"
                    row["icp_condition"] = f"{res.condition:.3g}"
                    if cfg.mode == "icp_only":
                        row["path"] = "icp"
                    else:
                        row["path"] = "vo+icp" if vo_pose is not None else "icp-fallback"
                except InsufficientOverlap as exc:
                    row["fallback"] = (row["fallback"] + ";" if row["fallback"] else "") + f"icp-failed:{exc}"
                    if vo_pose is not None:
                        C, row["path"] = vo_pose, "vo-fallback"
                    else:
                        C, row["path"], weight = C_prev, "skipped", 0.0
        t3 = time.perf_counter()
        integrate(vol, depth, intr, C, weight)
        shift_volume(vol, C, cfg.volume.shift_threshold, world)
        t4 = time.perf_counter()
        row.update(t_pre=f"{t1 - t0:.4f}", t_vo=f"{t2 - t1:.4f}", t_icp=f"{t3 - t2:.4f}", t_fuse=f"{t4 - t3:.4f}")
        traj.append(frame.timestamp, C)
        rows.append(row)
        if row["fallback"]:
            log.info("frame %d: %s (%s)", k, row["path"], row["fallback"])
        if progress:
            progress(k, row)
        prev = cur
    if vol is None:
        raise DatasetError(f"sequence {sequence_dir} has no associated frames")
    mesh = marching_cubes(vol)
    return RunArtifacts(traj, mesh, rows, world, vol, seq.skipped)
