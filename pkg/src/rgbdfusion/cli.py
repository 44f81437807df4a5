"""Command line entry point: reconstruct, evaluate, synth.

Exit codes: 0 success, 1 usage error, 2 dataset error, 3 internal error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import traceback

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATASET, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("rgbdfusion")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rgbdfusion", description="RGB-D odometry, TSDF fusion and trajectory evaluation")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("reconstruct", help="track a TUM-layout sequence and fuse a mesh")
    r.add_argument("sequence_dir")
    r.add_argument("--config", help="flat key=value config file")
    r.add_argument("--mode", choices=("combined", "vo_only", "icp_only"))
    r.add_argument("--seed", type=int)
    r.add_argument("--mesh", help="output PLY path")
    r.add_argument("--binary-ply", action="store_true", help="write binary little-endian PLY")
    r.add_argument("--traj", help="output trajectory (TUM format)")
    r.add_argument("--log", help="per-frame CSV log")
    r.add_argument("--world-points", help="write exited + current surface points as a PLY point cloud")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    r.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    e = sub.add_parser("evaluate", help="ATE / RPE of an estimate against ground truth")
    e.add_argument("est")
    e.add_argument("gt")
    e.add_argument("--delta", type=float, default=1.0, help="RPE pose pair spacing in seconds")
    e.add_argument("--max-diff", type=float, default=0.02)
    e.add_argument("--report", help="summary CSV; per-pair CSV goes next to it with a _pairs suffix")

    s = sub.add_parser("synth", help="render an analytic scene along a trajectory")
    s.add_argument("scene")
    s.add_argument("trajectory")
    s.add_argument("out_dir")
    s.add_argument("--depth-noise", type=float, default=0.0, help="gaussian depth noise sigma (m)")
    s.add_argument("--seed", type=int, default=0)
    return p


def _reconstruct(args) -> int:
    from .dataset_io import write_trajectory
    from .meshing import TriangleMesh, export_ply
    from .pipeline import config_text, load_config, run_pipeline

    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise _UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.mode:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    if args.print_config:
        sys.stdout.write(config_text(cfg))
        return EXIT_OK
    art = run_pipeline(cfg, args.sequence_dir)
    if args.traj:
        write_trajectory(art.trajectory, args.traj)
    if args.mesh:
        export_ply(art.mesh, args.mesh, binary=args.binary_ply)
    if args.log:
        art.write_log(args.log)
    if args.world_points:
        export_ply(TriangleMesh(art.world_points(), np.zeros((0, 3), dtype=np.int64)), args.world_points)
    paths = {}
    for row in art.log:
        paths[row["path"]] = paths.get(row["path"], 0) + 1
    print(f"frames {len(art.trajectory)} (skipped at association: {art.skipped_frames}); "
          f"paths {paths}; mesh {art.mesh.n_vertices} vertices / {art.mesh.n_faces} faces")
    return EXIT_OK


def _evaluate(args) -> int:
    from .dataset_io import load_ground_truth
    from .evaluation import STATS, emit_report, evaluate

    est = load_ground_truth(args.est)
    gt = load_ground_truth(args.gt)
    summaries, per_pair = evaluate(est, gt, args.delta, args.max_diff)
    print("metric," + ",".join(STATS))
    for m, s in summaries.items():
        print(m + "," + ",".join(f"{getattr(s, k):.6f}" for k in STATS))
    if args.report:
        emit_report(summaries, args.report, per_pair)
    return EXIT_OK


def _synth(args) -> int:
    from .dataset_io import load_ground_truth
    from .synth import load_scene, render_synthetic_sequence

    scene = load_scene(args.scene)
    traj = load_ground_truth(args.trajectory)
    out = render_synthetic_sequence(scene, traj, args.out_dir, depth_noise=args.depth_noise, seed=args.seed)
    print(f"wrote {len(traj)} frames to {out}")
    return EXIT_OK


class _UsageError(Exception):
    pass


def main(argv=None) -> int:
    from .errors import ConfigError, DatasetError, EvaluationError

    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"reconstruct": _reconstruct, "evaluate": _evaluate, "synth": _synth}[args.command]
    try:
        return handler(args)
    except (_UsageError, ConfigError) as exc:
        print(f"rgbdfusion: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, EvaluationError, FileNotFoundError) as exc:
        print(f"rgbdfusion: dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except Exception:  # noqa: BLE001 - last-resort boundary of the CLI
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
