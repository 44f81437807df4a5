"""TUM RGB-D benchmark I/O: sequence index files, images and trajectories."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import MissingIndexFile, NonUnitQuaternion, ParseError, UnreadableImage
from .geometry import Intrinsics, Pose

log = logging.getLogger(__name__)

QUAT_NORM_TOL = 1e-3


@dataclass
class IngestConfig:
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    max_time_diff: float = 0.02


@dataclass(eq=False)
class Frame:
    timestamp: float
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64 meters, 0 = invalid
    intrinsics: Intrinsics

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape:
            raise ValueError(f"rgb {self.rgb.shape[:2]} and depth {self.depth.shape} sizes differ")
        if np.any(self.depth < 0) or not np.all(np.isfinite(self.depth)):
            raise ValueError("depth must be finite and non-negative")


class Trajectory:
    """Timestamped camera-to-world poses with strictly increasing times."""

    def __init__(self, timestamps=(), poses=()):
        self.timestamps = np.asarray(timestamps, dtype=np.float64).reshape(-1)
        self.poses = list(poses)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    def __getitem__(self, i):
        return self.timestamps[i], self.poses[i]

    def append(self, timestamp: float, pose: Pose) -> None:
        if len(self.timestamps) and timestamp <= self.timestamps[-1]:
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.timestamps = np.append(self.timestamps, float(timestamp))
        self.poses.append(pose)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)


def read_index(path: Path) -> list[tuple[float, str]]:
    """Parse a "timestamp filename" list, skipping '#' comments and blanks."""
    if not path.is_file():
        raise MissingIndexFile(f"missing index file {path}")
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ParseError(path, lineno, "expected 'timestamp filename'")
            try:
                entries.append((float(parts[0]), parts[1]))
            except ValueError:
                raise ParseError(path, lineno, f"bad timestamp {parts[0]!r}") from None
    return entries


def associate_timestamps(first, second, max_diff: float) -> list[tuple[int, int]]:
    """Greedy closest-first pairing; every index is used at most once.

    Returns (i, j) index pairs sorted by ``first[i]``.
    """
    a = np.asarray(first, dtype=np.float64)
    b = np.asarray(second, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        return []
    candidates = []
    order_b = np.argsort(b)
    sorted_b = b[order_b]
    for i, t in enumerate(a):
        lo = np.searchsorted(sorted_b, t - max_diff, side="left")
        hi = np.searchsorted(sorted_b, t + max_diff, side="right")
        for k in range(lo, hi):
            d = abs(sorted_b[k] - t)
            if d <= max_diff:
                candidates.append((d, i, int(order_b[k])))
    candidates.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort(key=lambda ij: a[ij[0]])
    return pairs


def read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise UnreadableImage(path, str(exc)) from None


def read_depth(path: Path, depth_scale: float) -> np.ndarray:
    """16-bit depth PNG -> meters (float64); raw 0 stays 0 (invalid)."""
    try:
        with Image.open(path) as im:
            raw = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise UnreadableImage(path, str(exc)) from None
    if raw.ndim != 2:
        raise UnreadableImage(path, "depth image must be single channel")
    return raw.astype(np.float64) / depth_scale


def write_depth(path: Path, depth: np.ndarray, depth_scale: float) -> None:
    raw = np.clip(np.round(depth * depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def write_rgb(path: Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


class Sequence:
    """Lazily loaded RGB-D sequence in the TUM directory layout.

    Association happens on construction, so ``skipped`` (rgb entries without
    a depth partner within ``max_time_diff``) is known before iterating.
    """

    def __init__(self, directory, config: IngestConfig | None = None):
        self.directory = Path(directory)
        self.config = config or IngestConfig()
        rgb = read_index(self.directory / "rgb.txt")
        depth = read_index(self.directory / "depth.txt")
        pairs = associate_timestamps([t for t, _ in rgb], [t for t, _ in depth], self.config.max_time_diff)
        self.entries = [(rgb[i][0], rgb[i][1], depth[j][1]) for i, j in pairs]
        self.skipped = len(rgb) - len(pairs)
        if self.skipped:
            log.info("%s: skipped %d rgb frames without a depth match", self.directory, self.skipped)

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[Frame]:
        intr = self.config.intrinsics
        for t, rgb_name, depth_name in self.entries:
            rgb = read_rgb(self.directory / rgb_name)
            depth = read_depth(self.directory / depth_name, intr.depth_scale)
            yield Frame(t, rgb, depth, intr)


def load_sequence(directory, config: IngestConfig | None = None) -> Sequence:
    return Sequence(directory, config)


def load_ground_truth(path) -> Trajectory:
    """Read "timestamp tx ty tz qx qy qz qw" lines into a Trajectory."""
    path = Path(path)
    stamps, poses = [], []
    try:
        fh = open(path)
    except OSError as exc:
        raise MissingIndexFile(f"cannot open trajectory {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 8:
                raise ParseError(path, lineno, f"expected 8 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(path, lineno, "non-numeric field") from None
            q = np.array(vals[4:8])
            norm = np.linalg.norm(q)
            if abs(norm - 1.0) > QUAT_NORM_TOL:
                raise NonUnitQuaternion(path, lineno, f"quaternion norm {norm:.6f}")
            stamps.append(vals[0])
            poses.append(Pose.from_quaternion(q / norm, vals[1:4]))
    order = np.argsort(stamps, kind="stable")
    try:
        return Trajectory(np.asarray(stamps)[order], [poses[i] for i in order])
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        for t, pose in traj:
            tx, ty, tz = pose.translation
            qx, qy, qz, qw = pose.as_quaternion()
            fh.write(f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n")
