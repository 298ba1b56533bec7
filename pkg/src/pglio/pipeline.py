"""Per-scan odometry pipeline tying the subsystems to the sliding window."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometric as geo
from . import photometric as pho
from .config import Config
from .geometry import GravityDir, NavState, Pose, rot_x, rot_y, rot_z
from .inertial import (ImuNoise, imu_segments, initialize_static, preintegrate,
                       propagate_sequence)
from .sensor_io import ImuSample, LidarScan
from .smoother import FactorWindow

log = logging.getLogger(__name__)


def extrinsics_from_config(cfg: Config) -> Pose:
    R = rot_z(cfg["ext.yaw"]) @ rot_y(cfg["ext.pitch"]) @ rot_x(cfg["ext.roll"])
    return Pose(R, np.array([cfg["ext.x"], cfg["ext.y"], cfg["ext.z"]]))


class _Timer:
    def __init__(self):
        self.ms = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.ms[name] = timer.ms.get(name, 0.0) + 1e3 * (time.perf_counter() - self.t)

        return _Ctx()


@dataclass
class Odometry:
    """Stateful LiDAR-inertial odometry; feed IMU samples, then scans in time order."""

    cfg: Config = field(default_factory=Config)
    use_photometric: bool = True
    use_geometric: bool = True
    gravity_init: GravityDir | None = None

    def __post_init__(self):
        c = self.cfg
        self.noise = ImuNoise.from_config(c)
        self.T_IL = extrinsics_from_config(c)
        self.window = FactorWindow.from_config(c)
        self.gmap = geo.VoxelGeoMap.from_config(c)
        self.features: list[pho.PatchFeature] = []
        self.stamps = np.zeros(0)
        self.gyro = np.zeros((0, 3))
        self.accel = np.zeros((0, 3))
        self.initialized = False
        self.scan_count = 0
        self.gravity = c["imu.gravity"]

    # -- inputs --
    def add_imu(self, samples):
        samples = list(samples)
        if not samples:
            return
        st = np.array([s.stamp for s in samples], dtype=float)
        if self.stamps.size and st[0] <= self.stamps[-1]:
            raise ValueError(f"IMU stamp {st[0]} not after {self.stamps[-1]}")
        self.stamps = np.r_[self.stamps, st]
        self.gyro = np.vstack([self.gyro, [s.gyro for s in samples]])
        self.accel = np.vstack([self.accel, [s.accel for s in samples]])

    @property
    def gravity_dir(self) -> GravityDir:
        return self.window.gravity_dir

    def state(self) -> NavState:
        return self.window.state()

    # -- stages --
    def _propagate(self, x0, g, scan):
        times = np.r_[scan.column_times, scan.end_time]
        states = propagate_sequence(x0, g, self.stamps, self.gyro, self.accel, times, self.gravity)
        return [s.pose for s in states[:-1]], states[-1]

    def _initialize(self, scan, timer):
        c = self.cfg
        with timer.stage("init"):
            x0, g = initialize_static(self.stamps, self.gyro, self.accel, c["imu.init_duration_s"],
                                      self.gravity, c["imu.static_gyro_std"])
            if self.gravity_init is not None:
                g = self.gravity_init
        with timer.stage("propagate"):
            col_poses, x_e = self._propagate(x0, g, scan) if scan.start_time >= x0.stamp else \
                ([x0.pose] * scan.shape[1], x0.replace(stamp=scan.end_time))
        sig = {k: c[f"prior.{k}"] for k in ("rot", "pos", "vel", "accel_bias", "gyro_bias", "gravity")}
        self.window.initialize(x_e.replace(stamp=scan.end_time), g, sig)
        with timer.stage("deskew"):
            p_I, table = geo.deskew(scan, col_poses, x_e.pose, self.T_IL)
        pts = p_I[scan.valid]
        self.gmap.insert(x_e.pose.apply(pts))
        self.gmap.insertion_poses.append(x_e.pose)
        self.initialized = True
        diag = {"status": "initialized"}
        if self.use_photometric:
            with timer.stage("geometric"):
                sub, _ = self._subsample(p_I)
                loc = self._localizability(sub, x_e.pose)
            with timer.stage("photometric"):
                img = self._image(scan)
                self._extract(img, loc, p_I, x_e.pose, table)
            diag["degenerate"] = int(loc.degenerate.sum()) if loc is not None else 0
        return x_e, diag

    def _subsample(self, p_I):
        c = self.cfg
        return geo.subsample(p_I.reshape(-1, 3), c["geo.voxel_size"], c["geo.voxel_max_points"],
                             c["geo.min_point_dist"], c["geo.stride"])

    def _localizability(self, pts_I, pose):
        c = self.cfg
        ok, n, q = geo.associate(pts_I, pose, self.gmap, c["geo.d1"], c["geo.d2"])
        if ok.sum() < 3:
            return None
        _, J = geo.point_to_plane(pts_I[ok], n, q, pose)
        return geo.analyze_localizability(J, c["geo.sigma"], c["geo.degeneracy_threshold"])

    def _image(self, scan):
        c = self.cfg
        img = pho.build_image(scan)
        return pho.filter_image(img, c["photo.filter_kv"], c["photo.filter_kh"],
                                c["photo.brightness_window"], c["photo.gauss_sigma"])

    def _extract(self, img, loc, p_I, pose, table):
        c = self.cfg
        if loc is None or not loc.degenerate.any():
            return 0
        budget = c["photo.max_features"] - len(self.features)
        per_dir = min(c["photo.features_per_direction"], budget // max(int(loc.degenerate.sum()), 1))
        if per_dir <= 0:
            return 0
        exclude = None
        if self.features:
            frame = pho.FrameData(img, pho.BiasLUT.zeros(img.intrinsics), table, self.T_IL)
            centers = np.array([f.points_W[len(f.points_W) // 2] for f in self.features])
            u, v, *_ = pho.project_features(centers, pose, frame)
            exclude = np.zeros(img.shape, dtype=bool)
            r = c["photo.nms_radius"]
            H, W = img.shape
            for uu, vv in zip(u, v):
                if np.isfinite(uu) and -r <= vv < H + r:
                    rows = slice(max(int(vv) - r, 0), min(int(vv) + r + 1, H))
                    cols = np.mod(np.arange(int(uu) - r, int(uu) + r + 1), W)
                    exclude[rows, cols] = True
        new = pho.extract_candidates(img, per_dir, loc, p_I, pose, table, self.T_IL,
                                     ref_image=self.scan_count, patch_size=c["photo.patch_size"],
                                     nms_radius=c["photo.nms_radius"],
                                     min_gradient=c["photo.min_gradient"],
                                     max_depth_spread=c["photo.max_depth_spread"],
                                     eps=c["photo.min_sigma"], exclude=exclude)
        self.features.extend(new)
        return len(new)

    # -- main entry --
    def process_scan(self, scan: LidarScan):
        """Estimate the IMU pose at the scan end.  Returns ``(NavState | None, diagnostics)``."""
        c = self.cfg
        timer = _Timer()
        diag = {"stamp": scan.end_time}
        t_wall = time.perf_counter()
        if not self.initialized:
            if self.stamps.size == 0 or scan.end_time < self.stamps[0] + c["imu.init_duration_s"] - 1e-9:
                diag.update(status="waiting")
                return None, diag
            x, d = self._initialize(scan, timer)
            diag.update(d)
            diag.update(stage_ms=timer.ms, features=len(self.features),
                        total_ms=1e3 * (time.perf_counter() - t_wall))
            self.scan_count += 1
            return x, diag

        win = self.window
        x_prev = win.state()
        g = win.gravity_dir
        if scan.end_time <= x_prev.stamp:
            raise ValueError(f"scan end {scan.end_time} not after last state {x_prev.stamp}")
        with timer.stage("propagate"):
            col_poses, x_pred = self._propagate(x_prev, g, scan)
            segs = imu_segments(self.stamps, self.gyro, self.accel, x_prev.stamp, scan.end_time)
            pim = preintegrate(segs, x_prev.accel_bias, x_prev.gyro_bias, self.noise)
        with timer.stage("deskew"):
            p_I, table = geo.deskew(scan, col_poses, x_pred.pose, self.T_IL)
        key = win.next_key
        factors = []
        with timer.stage("geometric"):
            sub, _ = self._subsample(p_I)
            gfac = geo.GeometricFactor.from_config(key, sub, self.gmap, c)
            try:
                ncorr = gfac.associate(x_pred.pose)
            except geo.DegenerateScanError as exc:
                log.warning("scan %.3f: %s; geometric factor skipped", scan.end_time, exc)
                gfac, ncorr = None, 0
            loc = geo.analyze_localizability(gfac.jacobian(x_pred.pose), c["geo.sigma"],
                                             c["geo.degeneracy_threshold"]) if gfac else None
            if gfac is not None and self.use_geometric:
                factors.append(gfac)
        pfac = None
        with timer.stage("photometric"):
            if self.use_photometric:
                img = self._image(scan)
                lut = pho.build_bias_lut(scan)
                frame = pho.FrameData(img, lut, table, self.T_IL, c["photo.shutter_iters"])
                if self.features:
                    pfac = pho.PhotometricFactor.from_config(key, self.features, frame, c)
                    dropped = pfac.screen(x_pred.pose)
                    self._drop(dropped)
                    if pfac.count:
                        factors.append(pfac)
                    else:
                        pfac = None
        win.add_scan(x_pred, pim, factors)
        with timer.stage("optimize"):
            report = win.optimize()
        x = win.state()
        bias_ok = bool(np.linalg.norm(x.accel_bias) <= c["imu.max_accel_bias"]
                       and np.linalg.norm(x.gyro_bias) <= c["imu.max_gyro_bias"])
        if not bias_ok:
            log.warning("%.3f: bias estimate beyond sanity bound (|ba| %.3f, |bg| %.4f)",
                        scan.end_time, np.linalg.norm(x.accel_bias), np.linalg.norm(x.gyro_bias))
        if gfac is not None and not c["opt.refresh_all"]:
            gfac.freeze()
        with timer.stage("photometric"):
            if self.use_photometric:
                if pfac is not None:
                    self._drop(pfac.screen(x.pose))
                if gfac is not None:
                    loc = geo.analyze_localizability(gfac.jacobian(x.pose), c["geo.sigma"],
                                                     c["geo.degeneracy_threshold"])
                n_new = self._extract(img, loc, p_I, x.pose, table)
                diag["new_features"] = n_new
        with timer.stage("marginalize"):
            win.marginalize()
        with timer.stage("map"):
            updated = geo.maybe_update_map(self.gmap, x.pose, p_I[scan.valid],
                                           c["map.update_dist_m"], c["map.update_angle_deg"])
        self.scan_count += 1
        diag.update(status="ok", cost=report.final_cost, initial_cost=report.initial_cost,
                    iterations=report.iterations, termination=report.reason,
                    correspondences=ncorr,
                    degenerate=int(loc.degenerate.sum()) if loc is not None else -1,
                    features=len(self.features),
                    photometric_inliers=pfac.count if pfac is not None else 0,
                    map_updated=bool(updated), window=len(win), bias_ok=bias_ok, stage_ms=timer.ms,
                    total_ms=1e3 * (time.perf_counter() - t_wall))
        return x, diag

    def _drop(self, dropped):
        if not dropped:
            return
        ids = {f.id for f in dropped}
        for f in dropped:
            f.alive = False
        self.features = [f for f in self.features if f.id not in ids]


def diagnostics_line(diag):
    def conv(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))
    return json.dumps(diag, default=conv, sort_keys=True)


def run_sequence(scans, imu: list[ImuSample], cfg: Config | None = None, use_photometric=True,
                 use_geometric=True, on_scan=None):
    """Run the pipeline over an iterable of scans; returns a list of ``(stamp, Pose)``."""
    odo = Odometry(cfg or Config(), use_photometric, use_geometric)
    odo.add_imu(imu)
    out = []
    for scan in scans:
        x, diag = odo.process_scan(scan)
        if on_scan is not None:
            on_scan(diag)
        if x is not None:
            out.append((x.stamp, x.pose))
    return out, odo
