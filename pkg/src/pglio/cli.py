"""``pg-lio`` command line: simulate datasets, run odometry, evaluate trajectories, export plot data."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("pglio")

USAGE, RUNTIME = 2, 1


class UsageError(Exception):
    pass


def _existing(path, kind):
    p = Path(path)
    ok = p.is_dir() if kind == "directory" else p.is_file()
    if not ok:
        raise UsageError(f"{kind} not found: {p}")
    return p


def cmd_simulate(args):
    from .simulator import SCENARIOS, generate_dataset
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    out = generate_dataset(args.scenario, args.seed, args.out, duration=args.duration)
    print(f"wrote {args.scenario} (seed {args.seed}) to {out}")
    return 0


def cmd_run(args):
    from .config import Config, ConfigError, read_config
    from .geometric import dump_map_xyz
    from .pipeline import Odometry, diagnostics_line
    from .sensor_io import read_imu, read_scan, write_trajectory

    scan_dir = _existing(args.scans, "directory")
    imu_path = _existing(args.imu, "file")
    if args.config is not None:
        try:
            cfg = read_config(_existing(args.config, "file"))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    else:
        cfg = Config()
    if args.no_photometric and args.no_geometric:
        log.warning("both factor types disabled; running on IMU only")
    paths = sorted(scan_dir.glob("*.pgls"))
    if not paths:
        raise UsageError(f"no .pgls scans in {scan_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    odo = Odometry(cfg, use_photometric=not args.no_photometric,
                   use_geometric=not args.no_geometric)
    odo.add_imu(read_imu(imu_path))
    traj = []
    with open(out / "diagnostics.jsonl", "w") as diag_fh:
        for k, path in enumerate(paths):
            x, diag = odo.process_scan(read_scan(path))
            diag["scan"] = path.name
            diag_fh.write(diagnostics_line(diag) + "\n")
            if x is not None:
                traj.append((x.stamp, x.pose))
            if args.verbose and k % 50 == 0:
                print(f"{path.name}: {diag.get('status')} {diag.get('total_ms', 0.0):.0f} ms",
                      file=sys.stderr)
    write_trajectory(out / "trajectory.tum", traj)
    if args.map:
        dump_map_xyz(out / "map.xyz", odo.gmap)
    print(f"{len(traj)} poses written to {out / 'trajectory.tum'}")
    return 0


def cmd_evaluate(args):
    from .evaluation import evaluate
    from .sensor_io import read_trajectory
    est = read_trajectory(_existing(args.est, "file"))
    ref = read_trajectory(_existing(args.ref, "file"))
    m = evaluate(est, ref, tol=args.tolerance, delta=args.delta)
    if args.json:
        print(json.dumps(m.as_dict(), sort_keys=True))
    else:
        print(f"ATE RMSE  {m.ate_rmse:.4f} m  ({m.matched} poses)")
        print(f"RE        {m.re_percent:.3f} %  ({m.segments} segments of {args.delta:g} m)")
    return 0


def cmd_bias_curve(args):
    import numpy as np
    from .photometric import analytic_bias
    from .sensor_io import BeamIntrinsics
    if args.width < 2 or args.near <= 0 or args.far <= args.near:
        raise UsageError("need width >= 2 and 0 < near < far")
    K = BeamIntrinsics(np.array([np.deg2rad(args.elevation)]), np.array([np.deg2rad(args.theta_a)]),
                       args.width, args.offset, np.pi / 2)
    r = np.geomspace(args.near, args.far, args.samples)
    b = analytic_bias(r, K, rows=np.zeros(len(r), dtype=int), col=args.width // 4)
    # range-independent part the plain projection could absorb as a per-ring offset
    b_inf = K.cols * K.azimuth_offset[0] / (2 * np.pi)
    lines = ["range_m,bias_px,bias_minus_asymptote_px"]
    lines += [f"{ri:.6f},{bi:.6f},{bi - b_inf:.6f}" for ri, bi in zip(r, b)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"{len(r)} samples written to {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="pg-lio", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--duration", type=float, default=None, help="truncate the scenario (s)")
    sp.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("run", help="run odometry over a scan directory")
    rp.add_argument("--scans", required=True)
    rp.add_argument("--imu", required=True)
    rp.add_argument("--config", default=None)
    rp.add_argument("--out", required=True)
    rp.add_argument("--map", action="store_true", help="also write map.xyz")
    rp.add_argument("--no-photometric", action="store_true")
    rp.add_argument("--no-geometric", action="store_true")
    rp.set_defaults(func=cmd_run)

    ep = sub.add_parser("evaluate", help="ATE and relative error against a reference")
    ep.add_argument("--est", required=True)
    ep.add_argument("--ref", required=True)
    ep.add_argument("--delta", type=float, default=10.0, help="segment length for RE (m)")
    ep.add_argument("--tolerance", type=float, default=0.01, help="stamp association (s)")
    ep.add_argument("--json", action="store_true", help="machine-readable output")
    ep.set_defaults(func=cmd_evaluate)

    bp = sub.add_parser("bias-curve", help="export the column-bias vs range curve as CSV")
    bp.add_argument("--out", required=True)
    bp.add_argument("--theta-a", type=float, default=11.0, help="beam azimuth offset (deg)")
    bp.add_argument("--offset", type=float, default=0.02767, help="beam origin offset (m)")
    bp.add_argument("--elevation", type=float, default=30.0, help="beam elevation (deg)")
    bp.add_argument("--width", type=int, default=1024, help="image columns")
    bp.add_argument("--near", type=float, default=0.3)
    bp.add_argument("--far", type=float, default=20.0)
    bp.add_argument("--samples", type=int, default=200)
    bp.set_defaults(func=cmd_bias_curve)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pg-lio: error: {exc}", file=sys.stderr)
        return USAGE
    except Exception as exc:  # runtime failures map to exit code 1
        log.debug("failure", exc_info=True)
        print(f"pg-lio: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME


if __name__ == "__main__":
    sys.exit(main())
