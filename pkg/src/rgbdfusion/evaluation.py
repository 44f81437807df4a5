"""Absolute trajectory error and relative pose error with summary statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .dataset_io import Trajectory, associate_timestamps
from .errors import InsufficientPairs, NoAssociations, SpanTooShort
from .geometry import Pose, compose, invert, rotation_angle
from .rigid_motion import umeyama

STATS = ("std", "median", "rms", "mean", "max")


@dataclass(frozen=True)
class ErrorSummary:
    std: float
    median: float
    rms: float
    mean: float
    max: float

    @classmethod
    def of(cls, errors) -> "ErrorSummary":
        e = np.asarray(errors, dtype=np.float64)
        if not len(e):
            raise InsufficientPairs("no errors to summarize")
        mean = float(e.mean())
        # scaled so squaring tiny (or huge) errors cannot under/overflow
        top = float(np.max(np.abs(e)))
        scale = top if top > 0 else 1.0
        rms = scale * float(np.sqrt(np.mean((e / scale) ** 2)))
        std = scale * float(np.sqrt(np.mean(((e - mean) / scale) ** 2)))
        return cls(std=std, median=float(np.median(e)), rms=rms, mean=mean, max=float(e.max()))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class AteResult:
    errors: np.ndarray
    summary: ErrorSummary
    timestamps: np.ndarray
    alignment: Pose

    def __iter__(self):
        yield self.errors
        yield self.summary


@dataclass(eq=False)
class RpeResult:
    translational: np.ndarray  # meters
    rotational: np.ndarray  # degrees
    trans_summary: ErrorSummary
    rot_summary: ErrorSummary
    timestamps: np.ndarray  # start time of each pair

    def __iter__(self):
        yield self.translational
        yield self.rotational
        yield self.trans_summary
        yield self.rot_summary


def associate(est: Trajectory, gt: Trajectory, max_diff: float = 0.02) -> list[tuple[int, int]]:
    if not len(est) or not len(gt):
        raise NoAssociations("empty trajectory")
    pairs = associate_timestamps(est.timestamps, gt.timestamps, max_diff)
    if not pairs:
        raise NoAssociations(f"no timestamps within {max_diff} s")
    return pairs


def absolute_trajectory_error(est: Trajectory, gt: Trajectory, max_diff: float = 0.02) -> AteResult:
    pairs = associate(est, gt, max_diff)
    if len(pairs) < 3:
        raise InsufficientPairs(f"{len(pairs)} associated poses, ATE needs 3")
    ie = [i for i, _ in pairs]
    ig = [j for _, j in pairs]
    pe = est.positions[ie]
    pg = gt.positions[ig]
    S = umeyama(pe, pg, allow_degenerate=True)
    err = np.linalg.norm(pg - (pe @ S.rotation.T + S.translation), axis=1)
    return AteResult(err, ErrorSummary.of(err), est.timestamps[ie], S)


def relative_pose_error(est: Trajectory, gt: Trajectory, delta: float = 1.0, max_diff: float = 0.02) -> RpeResult:
    pairs = associate(est, gt, max_diff)
    ie = np.array([i for i, _ in pairs])
    ig = np.array([j for _, j in pairs])
    t = est.timestamps[ie]
    if t[-1] - t[0] < delta - max_diff:
        raise SpanTooShort(f"trajectory spans {t[-1] - t[0]:.3f} s < delta {delta} s")
    te, rr, ts = [], [], []
    for a in range(len(pairs)):
        target = t[a] + delta
        b = int(np.searchsorted(t, target))
        cand = [c for c in (b - 1, b) if 0 <= c < len(t) and c != a]
        if not cand:
            continue
        b = min(cand, key=lambda c: (abs(t[c] - target), c))
        if abs(t[b] - target) > max_diff:
            continue
        g0, g1 = gt.poses[ig[a]], gt.poses[ig[b]]
        e0, e1 = est.poses[ie[a]], est.poses[ie[b]]
        E = compose(invert(compose(invert(g0), g1)), compose(invert(e0), e1))
        te.append(float(np.linalg.norm(E.translation)))
        rr.append(math.degrees(rotation_angle(E.rotation)))
        ts.append(t[a])
    if not te:
        raise SpanTooShort(f"no pose pairs {delta} s apart")
    te, rr = np.array(te), np.array(rr)
    return RpeResult(te, rr, ErrorSummary.of(te), ErrorSummary.of(rr), np.array(ts))


def emit_report(summaries: dict, path, per_pair: dict | None = None, per_pair_path=None) -> None:
    """Summary CSV (metric, statistic, value) and optional per-pair CSV
    (metric, timestamp, error).

    ``summaries`` maps metric name (e.g. "ATE [m]") to ErrorSummary;
    ``per_pair`` maps metric name to (timestamps, errors).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "statistic", "value"])
        for metric, s in summaries.items():
            for stat in STATS:
                w.writerow([metric, stat, repr(float(getattr(s, stat)))])
    if per_pair:
        if per_pair_path is None:
            p = Path(path)
            per_pair_path = p.with_name(p.stem + "_pairs" + p.suffix)
        with open(per_pair_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "timestamp", "error"])
            for metric, (ts, errs) in per_pair.items():
                for t, e in zip(ts, errs):
                    w.writerow([metric, f"{t:.6f}", repr(float(e))])


def read_report(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["metric"], {})[row["statistic"]] = float(row["value"])
    return {m: ErrorSummary(**v) for m, v in out.items()}


def evaluate(est: Trajectory, gt: Trajectory, delta: float = 1.0, max_diff: float = 0.02):
    """ATE and RPE together, as (summaries, per_pair) ready for emit_report."""
    ate = absolute_trajectory_error(est, gt, max_diff)
    summaries = {"ATE [m]": ate.summary}
    per_pair = {"ATE [m]": (ate.timestamps, ate.errors)}
    try:
        rpe = relative_pose_error(est, gt, delta, max_diff)
    except SpanTooShort:
        rpe = None
    if rpe is not None:
        summaries["RPE [m]"] = rpe.trans_summary
        summaries["RPE [deg]"] = rpe.rot_summary
        per_pair["RPE [m]"] = (rpe.timestamps, rpe.translational)
        per_pair["RPE [deg]"] = (rpe.timestamps, rpe.rotational)
    return summaries, per_pair
