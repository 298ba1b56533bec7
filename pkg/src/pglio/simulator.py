"""Deterministic synthetic LiDAR + IMU data with exact ground truth.

Scenes are analytic (an infinite cylinder or an axis-aligned box) so ranges
and normals have closed forms.  Trajectories are sums of smooth scalar
channels with analytic derivatives.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import GRAVITY, NavState, Pose, log_so3, rot_x, rot_y, rot_z
from .inertial import ImuNoise
from .sensor_io import (MAX_RANGE, MIN_RANGE, BeamIntrinsics, ImuSample, LidarScan,
                        format_tum_line, write_imu, write_scan)

SCAN_PERIOD = 0.1
IMU_RATE = 200.0


def default_intrinsics(rows=32, cols=512, fov=np.pi / 2, theta_a=np.deg2rad(11.0),
                       origin_offset=0.02767):
    alt = np.where(np.arange(rows) % 2 == 0, theta_a, -theta_a)
    return BeamIntrinsics.uniform(rows, cols, fov, alt, origin_offset)


# -- textures ---------------------------------------------------------------

class Texture:
    """Band-limited random albedo pattern on a 2D surface parameterization, values in [0, 1]."""

    def __init__(self, seed=0, extent=(-20.0, 140.0), period=None, cell=0.05, blur=0.12,
                 bands=((1.3, 0.4, 0.15), (0.45, 2.1, 0.1))):
        rng = np.random.default_rng(seed)
        self.a0, self.cell = extent[0], cell
        na = int(np.ceil((extent[1] - extent[0]) / cell)) + 1
        self.period = period
        nb = int(round(period / cell)) if period else na
        self.b0 = 0.0 if period else extent[0]
        noise = rng.standard_normal((na, nb))
        mode = ("nearest", "wrap") if period else "nearest"
        g = ndimage.gaussian_filter(noise, blur / cell, mode=mode)
        g /= g.std()
        self.grid = 0.5 + 0.22 * g
        self.bands = bands
        self.phases = rng.uniform(0, 2 * np.pi, len(bands))

    def __call__(self, a, b):
        ia = (np.asarray(a) - self.a0) / self.cell
        ib = np.asarray(b) / self.cell if self.period else (np.asarray(b) - self.b0) / self.cell
        if self.period:
            ib = np.mod(ib, self.grid.shape[1])
        val = ndimage.map_coordinates(self.grid, [ia.ravel(), ib.ravel()], order=1,
                                      mode="nearest").reshape(np.shape(a))
        for (ka, kb, amp), ph in zip(self.bands, self.phases):
            val = val + amp * np.sin(ka * np.asarray(a) + kb * np.asarray(b) + ph)
        return np.clip(val, 0.0, 1.0)


# -- scenes -----------------------------------------------------------------

@dataclass
class TunnelScene:
    """Infinite cylinder about the x axis, viewed from inside.

    Murals cover ``mural_len`` of every ``section`` meters along the axis;
    the rest is plain.  ``texture=None`` makes the whole tunnel plain.
    """

    radius: float = 4.0
    texture: Texture | None = None
    section: float = 10.0
    mural_len: float = 7.0
    plain_albedo: float = 0.5
    r0: float = 20.0

    def cast(self, o, d):
        oy, oz, dy, dz = o[:, 1], o[:, 2], d[:, 1], d[:, 2]
        A = dy * dy + dz * dz
        B = 2.0 * (oy * dy + oz * dz)
        C = oy * oy + oz * oz - self.radius**2
        disc = B * B - 4.0 * A * C
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (-B + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * A)
        t = np.where((A > 1e-15) & (disc >= 0.0) & (t > 0.0), t, np.inf)
        hit = o + d * np.where(np.isfinite(t), t, 0.0)[:, None]
        n = -np.stack([np.zeros_like(t), hit[:, 1], hit[:, 2]], axis=1) / self.radius
        return t, n, self.albedo(hit)

    def albedo(self, p):
        alb = np.full(len(p), self.plain_albedo)
        if self.texture is not None:
            x = p[:, 0]
            mural = np.mod(x, self.section) < self.mural_len
            arc = self.radius * np.arctan2(p[:, 2], p[:, 1])
            tex = self.texture(x[mural], arc[mural])
            alb[mural] = 0.15 + 0.8 * tex
        return alb

    def range_closed_form(self, o, d):
        return self.cast(o, d)[0]


@dataclass
class RoomScene:
    """Axis-aligned box viewed from inside, each face textured independently."""

    lo: tuple = (-5.0, -4.0, -1.5)
    hi: tuple = (5.0, 4.0, 2.0)
    texture: Texture | None = None
    plain_albedo: float = 0.5
    r0: float = 20.0

    def cast(self, o, d):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(d > 0, hi, lo)
            ts = (bound - o) / d
        ts = np.where(np.abs(d) > 1e-15, ts, np.inf)
        axis = np.argmin(ts, axis=1)
        t = ts[np.arange(len(ts)), axis]
        t = np.where(t > 0.0, t, np.inf)
        n = np.zeros_like(o)
        n[np.arange(len(o)), axis] = -np.sign(d[np.arange(len(o)), axis])
        hit = o + d * np.where(np.isfinite(t), t, 0.0)[:, None]
        face = axis * 2 + (d[np.arange(len(o)), axis] > 0)
        return t, n, self.albedo(hit, face)

    def albedo(self, p, face):
        alb = np.full(len(p), self.plain_albedo)
        if self.texture is None:
            return alb
        uv_axes = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
        for f in range(6):
            m = face == f
            if not m.any():
                continue
            i, j = uv_axes[f // 2]
            alb[m] = 0.15 + 0.8 * self.texture(p[m, i] + 9.7 * f, p[m, j] + 5.3 * f)
        return alb


# -- trajectories -----------------------------------------------------------

def smoothstep(tau):
    """Quintic 0->1 ramp and its first two derivatives (C2 at both ends)."""
    t = np.clip(tau, 0.0, 1.0)
    inside = (tau > 0.0) & (tau < 1.0)
    s = t**3 * (10 - 15 * t + 6 * t * t)
    ds = np.where(inside, 30 * t * t * (1 - t) ** 2, 0.0)
    dds = np.where(inside, 60 * t * (1 - t) * (1 - 2 * t), 0.0)
    return s, ds, dds


def _ramp_integral(tau):
    """Integral of the quintic ramp from 0 to ``tau``."""
    t = np.clip(tau, 0.0, 1.0)
    S = t**6 - 3 * t**5 + 2.5 * t**4
    return S + np.maximum(tau - 1.0, 0.0)


class Channel:
    """Scalar function of time with exact first and second derivatives."""

    def __call__(self, t):
        raise NotImplementedError

    def __add__(self, other):
        return _Sum(self, other)


class Const(Channel):
    def __init__(self, c=0.0):
        self.c = c

    def __call__(self, t):
        z = np.zeros_like(t)
        return z + self.c, z, z


class Linear(Channel):
    def __init__(self, c0=0.0, rate=0.0):
        self.c0, self.rate = c0, rate

    def __call__(self, t):
        return self.c0 + self.rate * t, np.full_like(t, self.rate), np.zeros_like(t)


class Quadratic(Channel):
    def __init__(self, c0=0.0, rate=0.0, accel=0.0):
        self.c0, self.rate, self.accel = c0, rate, accel

    def __call__(self, t):
        return (self.c0 + self.rate * t + 0.5 * self.accel * t * t, self.rate + self.accel * t,
                np.full_like(t, self.accel))


class RampedSine(Channel):
    """``amp * sin(omega (t - t_on) + phase) - amp sin(phase)`` faded in over ``ramp`` seconds."""

    def __init__(self, amp, omega, phase=0.0, t_on=0.0, ramp=2.0):
        self.amp, self.omega, self.phase, self.t_on, self.ramp = amp, omega, phase, t_on, ramp

    def __call__(self, t):
        e, de, dde = smoothstep((t - self.t_on) / self.ramp)
        de, dde = de / self.ramp, dde / self.ramp**2
        arg = self.omega * (t - self.t_on) + self.phase
        f = self.amp * (np.sin(arg) - np.sin(self.phase))
        df = self.amp * self.omega * np.cos(arg)
        ddf = -self.amp * self.omega**2 * np.sin(arg)
        return e * f, de * f + e * df, dde * f + 2 * de * df + e * ddf


class Transit(Channel):
    """Rest, smooth acceleration to ``v_max``, cruise, smooth stop."""

    def __init__(self, v_max, t_start, accel_time, cruise_time):
        self.v, self.t1, self.ta = v_max, t_start, accel_time
        self.t2 = t_start + accel_time + cruise_time

    @property
    def t_end(self):
        return self.t2 + self.ta

    @property
    def distance(self):
        return self.v * (self.t2 - self.t1)

    def __call__(self, t):
        a1, a2 = (t - self.t1) / self.ta, (t - self.t2) / self.ta
        x = self.v * self.ta * (_ramp_integral(a1) - _ramp_integral(a2))
        s1, ds1, _ = smoothstep(a1)
        s2, ds2, _ = smoothstep(a2)
        return x, self.v * (s1 - s2), self.v * (ds1 - ds2) / self.ta


class _Sum(Channel):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, t):
        return tuple(x + y for x, y in zip(self.a(t), self.b(t)))


@dataclass
class TrajectoryModel:
    """Pose of the IMU frame in the world: position channels and ZYX Euler channels."""

    x: Channel = field(default_factory=Const)
    y: Channel = field(default_factory=Const)
    z: Channel = field(default_factory=Const)
    yaw: Channel = field(default_factory=Const)
    pitch: Channel = field(default_factory=Const)
    roll: Channel = field(default_factory=Const)
    duration: float = 10.0

    def sample(self, t):
        """Positions, velocities, accelerations ``(N, 3)`` and rotations ``(N, 3, 3)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        px, py, pz = self.x(t), self.y(t), self.z(t)
        p = np.stack([px[0], py[0], pz[0]], axis=1)
        v = np.stack([px[1], py[1], pz[1]], axis=1)
        a = np.stack([px[2], py[2], pz[2]], axis=1)
        ya, pi, ro = self.yaw(t)[0], self.pitch(t)[0], self.roll(t)[0]
        cy, sy, cp, sp, cr, sr = np.cos(ya), np.sin(ya), np.cos(pi), np.sin(pi), np.cos(ro), np.sin(ro)
        R = np.empty((len(t), 3, 3))
        R[:, 0, 0] = cy * cp
        R[:, 0, 1] = cy * sp * sr - sy * cr
        R[:, 0, 2] = cy * sp * cr + sy * sr
        R[:, 1, 0] = sy * cp
        R[:, 1, 1] = sy * sp * sr + cy * cr
        R[:, 1, 2] = sy * sp * cr - cy * sr
        R[:, 2, 0] = -sp
        R[:, 2, 1] = cp * sr
        R[:, 2, 2] = cp * cr
        return p, v, a, R

    def pose(self, t) -> Pose:
        p, _, _, R = self.sample(t)
        return Pose(R[0], p[0])

    def nav_state(self, t, accel_bias=np.zeros(3), gyro_bias=np.zeros(3)) -> NavState:
        p, v, _, R = self.sample(t)
        return NavState(Pose(R[0], p[0]), v[0], np.asarray(accel_bias, float),
                        np.asarray(gyro_bias, float), float(t))

    def angular_velocity(self, t):
        """Body-frame angular rate ``(N, 3)`` from the Euler-angle rates."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ya, dya, _ = self.yaw(t)
        pi, dpi, _ = self.pitch(t)
        ro, dro, _ = self.roll(t)
        return np.stack([dro - dya * np.sin(pi),
                         dpi * np.cos(ro) + dya * np.cos(pi) * np.sin(ro),
                         -dpi * np.sin(ro) + dya * np.cos(pi) * np.cos(ro)], axis=1)


def static_trajectory(duration=10.0, position=(0.0, 0.0, 0.0), yaw=0.0):
    return TrajectoryModel(Const(position[0]), Const(position[1]), Const(position[2]),
                           Const(yaw), duration=duration)


def constant_velocity(velocity=(1.0, 0.0, 0.0), duration=10.0, position=(0.0, 0.0, 0.0)):
    return TrajectoryModel(*(Linear(p, v) for p, v in zip(position, velocity)), duration=duration)


def constant_acceleration(accel=(0.5, -0.3, 0.2), velocity=(1.0, 0.5, 0.0), duration=10.0,
                          attitude_amp=0.3, attitude_period=3.0):
    """Quadratic position under oscillating attitude.

    Interval-mean IMU samples integrate to this trajectory exactly, which makes it
    the oracle for preintegration residuals at ground truth.
    """
    w = 2 * np.pi / attitude_period
    pos = [Quadratic(0.0, v, a) for v, a in zip(velocity, accel)]
    return TrajectoryModel(*pos, RampedSine(attitude_amp, w, 0.3, 0.0, 0.5),
                           RampedSine(0.5 * attitude_amp, 1.3 * w, 1.0, 0.0, 0.5),
                           RampedSine(0.5 * attitude_amp, 1.7 * w, 2.0, 0.0, 0.5),
                           duration=duration)


def figure_eight(duration=60.0, t_on=1.0, ax=2.5, ay=1.5, az=0.3, period=15.0, yaw_amp=0.8,
                 tilt_amp=0.14, ramp=3.0):
    w = 2 * np.pi / period
    return TrajectoryModel(
        RampedSine(ax, w, 0.0, t_on, ramp), RampedSine(ay, 2 * w, 0.0, t_on, ramp),
        RampedSine(az, 3 * w, 0.5, t_on, ramp), RampedSine(yaw_amp, w, 1.0, t_on, ramp),
        RampedSine(tilt_amp, 1.7 * w, 0.3, t_on, ramp), RampedSine(tilt_amp, 2.3 * w, 2.0, t_on, ramp),
        duration=duration)


def tunnel_transit(v_max=10.8, distance=100.0, t_on=1.0, accel_time=3.0, lateral=0.3,
                   heading=np.deg2rad(1.0), tilt=np.deg2rad(2.0), settle=1.0):
    cruise = max(distance / v_max - accel_time, 0.0)
    tr = Transit(v_max, t_on, accel_time, cruise)
    end = tr.t_end + settle
    ramp = 2.0
    return TrajectoryModel(
        tr, RampedSine(lateral, 2 * np.pi / 6.0, 0.0, t_on, ramp),
        RampedSine(0.15, 2 * np.pi / 4.3, 0.7, t_on, ramp),
        RampedSine(heading, 2 * np.pi / 5.0, 0.4, t_on, ramp),
        RampedSine(tilt, 2 * np.pi / 3.1, 1.1, t_on, ramp),
        RampedSine(tilt, 2 * np.pi / 2.7, 2.3, t_on, ramp), duration=end)


# -- sensors ----------------------------------------------------------------

def simulate_scan(scene, trajectory: TrajectoryModel, intrinsics: BeamIntrinsics, t_start,
                  T_IL: Pose = Pose(), period=SCAN_PERIOD, range_noise=0.01,
                  intensity_noise=0.02, seed=0) -> LidarScan:
    """Ray-cast one rolling-shutter revolution starting at ``t_start``."""
    K = intrinsics
    H, W = K.shape
    offsets = np.arange(W) * period / W
    p, _, _, R = trajectory.sample(t_start + offsets)
    R_WL = R @ T_IL.rotation
    t_WL = p + R @ T_IL.translation
    th_e = K.encoder_angles()                                    # (W,)
    phi, th_a = K.elevation[:, None], K.azimuth_offset[:, None]
    o_L = np.stack([K.origin_offset * np.cos(th_e), K.origin_offset * np.sin(th_e),
                    np.zeros(W)], axis=1)                         # (W, 3)
    az = th_e[None, :] + th_a
    d_L = np.stack([np.cos(az) * np.cos(phi), np.sin(az) * np.cos(phi),
                    np.broadcast_to(np.sin(phi), az.shape)], axis=-1)  # (H, W, 3)
    o_W = np.einsum("wij,wj->wi", R_WL, o_L) + t_WL
    d_W = np.einsum("wij,hwj->hwi", R_WL, d_L)
    o_all = np.broadcast_to(o_W, (H, W, 3)).reshape(-1, 3)
    d_all = d_W.reshape(-1, 3)
    t, n, albedo = scene.cast(o_all, d_all)
    cos_inc = np.abs(np.einsum("ni,ni->n", n, d_all))
    valid = np.isfinite(t) & (t <= MAX_RANGE) & (t >= MIN_RANGE)
    rng = np.random.default_rng(seed)
    rn = rng.standard_normal(t.shape)
    inn = rng.standard_normal(t.shape)
    r = np.where(valid, t, 0.0)
    inten = np.where(valid, albedo * cos_inc / (1.0 + r / scene.r0) ** 2, 0.0)
    if range_noise > 0:
        r = np.where(valid, np.clip(r + range_noise * rn, MIN_RANGE, MAX_RANGE), 0.0)
    if intensity_noise > 0:
        inten = np.where(valid, np.maximum(inten + intensity_noise * inn, 0.0), 0.0)
    return LidarScan(K, float(t_start), float(t_start + period), r.reshape(H, W),
                     inten.reshape(H, W), offsets)


def simulate_imu(trajectory: TrajectoryModel, g_hat=(0.0, 0.0, -1.0), accel_bias=np.zeros(3),
                 gyro_bias=np.zeros(3), noise: ImuNoise | None = None, rate=IMU_RATE, t0=0.0,
                 t1=None, gravity=GRAVITY, seed=0, accel_bias_rate=np.zeros(3)):
    """IMU samples consistent with zero-order-hold integration of the trajectory.

    Sample ``k`` holds the mean body rate and specific force over
    ``[t_k, t_k+1]``: ``Log(R_k^T R_k+1) / dt`` and
    ``R_k^T ((v_k+1 - v_k) / dt - g g_hat)``.  Biases (plus an optional linear
    accelerometer drift ``accel_bias_rate``) and white noise are added on top;
    ``noise=None`` gives exact samples.
    """
    t1 = trajectory.duration if t1 is None else t1
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    stamps = t0 + np.arange(n) / rate
    dt = 1.0 / rate
    p, v, _, R = trajectory.sample(np.r_[stamps, stamps[-1] + dt])
    gv = gravity * np.asarray(g_hat, dtype=float)
    rel = np.einsum("nji,njk->nik", R[:-1], R[1:])
    gyro = np.array([log_so3(M) for M in rel]) / dt
    acc_w = (v[1:] - v[:-1]) / dt - gv
    accel = np.einsum("nji,nj->ni", R[:-1], acc_w)
    ba = np.asarray(accel_bias, float) + np.outer(stamps - t0, accel_bias_rate)
    gyro = gyro + np.asarray(gyro_bias, float)
    accel = accel + ba
    if noise is not None:
        rng = np.random.default_rng(seed)
        sq = np.sqrt(rate)
        gw = np.cumsum(rng.standard_normal((n, 3)), axis=0) * noise.gyro_walk / sq
        aw = np.cumsum(rng.standard_normal((n, 3)), axis=0) * noise.accel_walk / sq
        gyro = gyro + gw + noise.gyro_noise * sq * rng.standard_normal((n, 3))
        accel = accel + aw + noise.accel_noise * sq * rng.standard_normal((n, 3))
    return [ImuSample(float(s), g, a) for s, g, a in zip(stamps, gyro, accel)]


# -- datasets ---------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    scene: object
    trajectory: TrajectoryModel
    noise: ImuNoise
    accel_bias: np.ndarray
    gyro_bias: np.ndarray
    accel_bias_rate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    estimator_accel_walk: float | None = None
    description: str = ""


EXTRINSICS = dict(x=0.05, y=0.0, z=0.08, roll=0.0, pitch=0.0, yaw=0.0)
NOISE = ImuNoise(1.7e-4, 2e-3, 1e-5, 1e-4)


def extrinsics_pose(ext=EXTRINSICS) -> Pose:
    return Pose(rot_z(ext["yaw"]) @ rot_y(ext["pitch"]) @ rot_x(ext["roll"]),
                np.array([ext["x"], ext["y"], ext["z"]]))


def _scenario(name, seed):
    ba = np.array([0.02, -0.01, 0.03])
    bg = np.array([0.002, -0.001, 0.0015])
    if name == "room-slow":
        return Scenario(name, RoomScene(texture=Texture(seed + 11, extent=(-30, 30))),
                        figure_eight(20.0, period=20.0, ax=1.5, ay=1.0, yaw_amp=0.5), NOISE, ba, bg,
                        description="box room, slow figure-eight")
    if name == "room-dynamic":
        return Scenario(name, RoomScene(texture=Texture(seed + 11, extent=(-30, 30))),
                        figure_eight(61.0), NOISE, ba, bg,
                        description="box room, 60 s figure-eight")
    if name in ("tunnel-textured", "tunnel-plain"):
        tex = Texture(seed + 7, extent=(-60, 160), period=2 * np.pi * 4.0) \
            if name == "tunnel-textured" else None
        return Scenario(name, TunnelScene(texture=tex), tunnel_transit(3.0, 30.0, accel_time=2.0),
                        NOISE, ba, bg, description="8 m tunnel, 30 m at 3 m/s")
    if name == "tunnel-transit-fast":
        tex = Texture(seed + 7, extent=(-60, 160), period=2 * np.pi * 4.0)
        # unmodelled accelerometer drift along the axis: harmless when the axis is
        # observed, fatal for dead reckoning along it
        return Scenario(name, TunnelScene(texture=tex), tunnel_transit(10.8, 100.0), NOISE, ba, bg,
                        accel_bias_rate=np.array([0.04, 0.0, 0.0]), estimator_accel_walk=0.05,
                        description="8 m textured tunnel, 100 m at up to 10.8 m/s")
    raise KeyError(name)


SCENARIOS = ("room-slow", "room-dynamic", "tunnel-textured", "tunnel-plain", "tunnel-transit-fast")


def make_scenario(name, seed=0) -> Scenario:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return _scenario(name, seed)


def config_text(scn: Scenario):
    walk = scn.estimator_accel_walk or scn.noise.accel_walk
    lines = [f"# generated for scenario {scn.name}",
             f"imu.gyro_noise = {scn.noise.gyro_noise}", f"imu.accel_noise = {scn.noise.accel_noise}",
             f"imu.gyro_walk = {scn.noise.gyro_walk}", f"imu.accel_walk = {walk}"]
    lines += [f"ext.{k} = {v}" for k, v in EXTRINSICS.items()]
    return "\n".join(lines) + "\n"


def generate_dataset(name, seed, out_dir, intrinsics=None, duration=None):
    """Write ``scans/*.pgls``, ``imu.csv``, ``groundtruth.tum``, ``config.cfg`` and ``meta.json``."""
    scn = make_scenario(name, seed)
    K = intrinsics or default_intrinsics()
    T_IL = extrinsics_pose()
    traj = scn.trajectory
    T = traj.duration if duration is None else min(duration, traj.duration)
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    imu = simulate_imu(traj, accel_bias=scn.accel_bias, gyro_bias=scn.gyro_bias, noise=scn.noise,
                       t1=T + SCAN_PERIOD, seed=seed, accel_bias_rate=scn.accel_bias_rate)
    write_imu(out / "imu.csv", imu)
    n_scans = int(np.floor(T / SCAN_PERIOD + 1e-9))
    gt = []
    for k in range(n_scans):
        t0 = round(k * SCAN_PERIOD, 9)
        scan = simulate_scan(scn.scene, traj, K, t0, T_IL, seed=seed * 100003 + k)
        write_scan(out / "scans" / f"{k:06d}.pgls", scan)
        gt.append(format_tum_line(scan.end_time, traj.pose(scan.end_time)))
    (out / "groundtruth.tum").write_text("".join(line + "\n" for line in gt))
    (out / "config.cfg").write_text(config_text(scn))
    meta = dict(scenario=name, seed=int(seed), scans=n_scans, duration=T,
                description=scn.description, gravity_world=[0.0, 0.0, -1.0],
                accel_bias=scn.accel_bias.tolist(), gyro_bias=scn.gyro_bias.tolist(),
                accel_bias_rate=scn.accel_bias_rate.tolist())
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out


__all__ = ["Texture", "TunnelScene", "RoomScene", "TrajectoryModel", "simulate_scan", "simulate_imu",
           "generate_dataset", "make_scenario", "SCENARIOS", "default_intrinsics", "figure_eight",
           "tunnel_transit", "static_trajectory", "constant_velocity", "constant_acceleration", "extrinsics_pose", "config_text",
           "Scenario"]
