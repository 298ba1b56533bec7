import json

import numpy as np
import pytest

from pglio import geometric as geo
from pglio import photometric as pho
from pglio.geometry import GRAVITY, GravityDir, Pose, rot_y
from pglio.inertial import initialize_static, propagate_sequence
from pglio.sensor_io import BeamIntrinsics, read_imu, read_scan, read_trajectory
from pglio.simulator import (NOISE, SCAN_PERIOD, SCENARIOS, RoomScene, Texture, TunnelScene,
                             constant_velocity, default_intrinsics, extrinsics_pose, figure_eight,
                             generate_dataset, make_scenario, simulate_imu, simulate_scan,
                             static_trajectory)

F32 = 4e-7  # relative precision of the stored float32 ranges


def unit_rows(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1)[:, None]


# -- scenes --

def test_tunnel_rings_from_axis():
    # spin axis along the tunnel axis: every ring is a cone of constant range
    K = BeamIntrinsics.uniform(16, 128, vertical_fov=np.deg2rad(60))
    scene = TunnelScene(radius=4.0)
    scan = simulate_scan(scene, static_trajectory(1.0), K, 0.0, Pose(rot_y(-np.pi / 2), np.zeros(3)),
                         range_noise=0.0, intensity_noise=0.0)
    expected = 4.0 / np.cos(K.elevation)[:, None]
    assert scan.valid.all()
    assert np.abs(scan.range / expected - 1).max() < F32


def test_tunnel_cast_matches_closed_form(rng):
    scene = TunnelScene(radius=4.0)
    o = np.column_stack([rng.uniform(-50, 50, 500), rng.uniform(-2, 2, (500, 2))])
    d = unit_rows(rng, 500)
    t, n, alb = scene.cast(o, d)
    # |o_yz + t d_yz| = R solved by hand
    a = d[:, 1] ** 2 + d[:, 2] ** 2
    b = o[:, 1] * d[:, 1] + o[:, 2] * d[:, 2]
    c = o[:, 1] ** 2 + o[:, 2] ** 2 - 16.0
    t_ref = (-b + np.sqrt(b * b - a * c)) / a
    assert np.abs(t - t_ref).max() < 1e-9
    hit = o + t[:, None] * d
    assert np.abs(np.hypot(hit[:, 1], hit[:, 2]) - 4.0).max() < 1e-9
    assert np.all((alb >= 0) & (alb <= 1))


def test_tunnel_axis_ray_misses():
    t, _, _ = TunnelScene().cast(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]))
    assert np.isinf(t[0])


def test_room_cast_matches_closed_form(rng):
    lo, hi = np.array([-5.0, -4.0, -1.5]), np.array([5.0, 4.0, 2.0])
    scene = RoomScene(tuple(lo), tuple(hi), texture=Texture(0, extent=(-30, 30)))
    o = rng.uniform(lo + 0.5, hi - 0.5, (500, 3))
    d = unit_rows(rng, 500)
    t, n, alb = scene.cast(o, d)
    # brute force: smallest positive slab distance over the six faces
    ts = []
    for ax in range(3):
        for bound in (lo[ax], hi[ax]):
            with np.errstate(divide="ignore"):
                s = (bound - o[:, ax]) / d[:, ax]
            ts.append(np.where(s > 0, s, np.inf))
    t_ref = np.min(ts, axis=0)
    assert np.abs(t - t_ref).max() < 1e-9
    hit = o + t[:, None] * d
    assert np.all(hit >= lo - 1e-9) and np.all(hit <= hi + 1e-9)
    assert np.all(np.einsum("ni,ni->n", n, d) < 0)
    assert np.all((alb >= 0) & (alb <= 1))


def test_texture_bounded():
    tex = Texture(3, extent=(-10, 10), period=5.0)
    a, b = np.meshgrid(np.linspace(-10, 10, 200), np.linspace(-20, 20, 200))
    v = tex(a, b)
    assert v.min() >= 0 and v.max() <= 1 and v.std() > 0.05
    # the noise grid wraps around the periodic coordinate
    grid = Texture(3, extent=(-10, 10), period=5.0, bands=())
    assert np.allclose(grid(a, b + 5.0), grid(a, b), atol=1e-9)


def test_scan_deterministic():
    scn = make_scenario("room-slow", 0)
    K = default_intrinsics()
    a = simulate_scan(scn.scene, scn.trajectory, K, 2.0, extrinsics_pose(), seed=5)
    b = simulate_scan(scn.scene, scn.trajectory, K, 2.0, extrinsics_pose(), seed=5)
    c = simulate_scan(scn.scene, scn.trajectory, K, 2.0, extrinsics_pose(), seed=6)
    assert np.array_equal(a.range, b.range) and np.array_equal(a.intensity, b.intensity)
    assert not np.array_equal(a.range, c.range)


def test_scan_lut_reproduces_analytic_bias():
    K = default_intrinsics()  # alternating +-11 deg azimuth offsets, 0.02767 m beam origin
    scan = simulate_scan(TunnelScene(), static_trajectory(1.0), K, 0.0, Pose(),
                         range_noise=0.0, intensity_noise=0.0)
    lut = pho.build_bias_lut(scan)
    H, W = K.shape
    rows, cols = np.nonzero(scan.valid)
    ref = np.array([pho.analytic_bias(scan.range[i, c], K, [i], col=c)[0]
                    for i, c in zip(rows[::7], cols[::7])])
    assert np.abs(lut.bias[rows[::7], cols[::7]] - ref).max() < 1e-6


def test_scan_round_trip_through_projection():
    K = default_intrinsics()
    scan = simulate_scan(RoomScene(), static_trajectory(1.0), K, 0.0, Pose(),
                         range_noise=0.0, intensity_noise=0.0)
    u, v = pho.project_n(scan.points(), K, pho.build_bias_lut(scan))
    H, W = K.shape
    du = (u - np.arange(W)[None, :] + W / 2) % W - W / 2
    assert np.abs(du).max() < 0.01
    assert np.abs(v - np.arange(H)[:, None]).max() < 0.05


def test_rolling_shutter_deskew():
    # every deskewed point of a moving sensor lands on the room surface
    lo, hi = np.array([-5.0, -4.0, -1.5]), np.array([5.0, 4.0, 2.0])
    scene = RoomScene(tuple(lo), tuple(hi))
    traj = figure_eight(10.0, t_on=0.0, ramp=0.5)
    K = default_intrinsics()
    T_IL = extrinsics_pose()
    t0 = 3.0
    scan = simulate_scan(scene, traj, K, t0, T_IL, range_noise=0.0, intensity_noise=0.0)
    col_poses = [traj.pose(t) for t in scan.column_times]
    end = traj.pose(scan.end_time)
    p_I, _ = geo.deskew(scan, col_poses, end, T_IL)
    p_W = end.apply(p_I[scan.valid])
    face_dist = np.min(np.abs(np.concatenate([p_W - lo, hi - p_W], axis=1)), axis=1)
    assert face_dist.max() < 1e-4
    # ignoring the motion misplaces points by centimetres
    p_I0, _ = geo.deskew(scan, [end] * K.cols, end, T_IL)
    q_W = end.apply(p_I0[scan.valid])
    naive = np.min(np.abs(np.concatenate([q_W - lo, hi - q_W], axis=1)), axis=1)
    assert naive.max() > 0.01


# -- IMU --

def test_static_imu_reads_gravity():
    traj = static_trajectory(2.0, yaw=0.3)
    imu = simulate_imu(traj, t1=1.0)
    R = traj.pose(0.0).rotation
    for s in imu:
        assert np.abs(s.gyro).max() < 1e-15
        assert np.allclose(s.accel, -R.T @ (GRAVITY * np.array([0.0, 0.0, -1.0])), atol=1e-12)


def test_imu_biases_added():
    imu = simulate_imu(static_trajectory(2.0), accel_bias=[0.1, 0, 0], gyro_bias=[0, 0.01, 0],
                       t1=0.5)
    assert np.allclose([s.accel[0] for s in imu], 0.1)
    assert np.allclose([s.gyro[1] for s in imu], 0.01)


def test_imu_deterministic():
    traj = figure_eight(5.0)
    a = simulate_imu(traj, noise=NOISE, seed=3)
    b = simulate_imu(traj, noise=NOISE, seed=3)
    assert all(np.array_equal(x.accel, y.accel) and np.array_equal(x.gyro, y.gyro)
               for x, y in zip(a, b))


def test_propagation_reproduces_trajectory():
    traj = figure_eight(12.0, t_on=1.0)
    imu = simulate_imu(traj, rate=400.0, t1=11.5)
    st = np.array([s.stamp for s in imu])
    gy = np.array([s.gyro for s in imu])
    ac = np.array([s.accel for s in imu])
    q = np.linspace(1.0, 11.0, 21)
    states = propagate_sequence(traj.nav_state(1.0), GravityDir(np.array([0.0, 0.0, -1.0])),
                                st, gy, ac, q)
    err = [np.linalg.norm(x.pose.translation - traj.pose(t).translation) for x, t in zip(states, q)]
    assert max(err) < 1e-5


def test_static_init_recovers_injected_bias():
    rng = np.random.default_rng(11)
    errs = []
    for seed in range(40):
        bg = rng.normal(size=3) * 0.01
        imu = simulate_imu(static_trajectory(1.0), gyro_bias=bg, noise=NOISE, t1=0.6, seed=seed)
        st = np.array([s.stamp for s in imu])
        x0, _ = initialize_static(st, [s.gyro for s in imu], [s.accel for s in imu], 0.5)
        n = np.count_nonzero(st <= st[0] + 0.5 + 1e-9)
        sigma = NOISE.gyro_noise * np.sqrt(200.0) / np.sqrt(n)
        errs.append((x0.gyro_bias - bg) / sigma)
    errs = np.abs(np.concatenate(errs))
    assert errs.max() < 4.0 and np.mean(errs < 3.0) > 0.98


# -- scenarios and datasets --

def test_scenario_list():
    assert set(SCENARIOS) == {"room-slow", "room-dynamic", "tunnel-textured", "tunnel-plain",
                              "tunnel-transit-fast"}
    for name in SCENARIOS:
        assert make_scenario(name).name == name
    with pytest.raises(KeyError, match="unknown scenario"):
        make_scenario("cave")


def test_transit_reaches_top_speed():
    scn = make_scenario("tunnel-transit-fast")
    t = np.linspace(0, scn.trajectory.duration, 2000)
    _, v, _, _ = scn.trajectory.sample(t)
    assert v[:, 0].max() == pytest.approx(10.8, rel=1e-6)
    p_end = scn.trajectory.pose(scn.trajectory.duration).translation
    assert p_end[0] == pytest.approx(100.0, rel=1e-6)


def test_generate_dataset(tmp_path):
    out = generate_dataset("room-slow", 4, tmp_path / "a", duration=0.5)
    scans = sorted((out / "scans").glob("*.pgls"))
    assert len(scans) == 5
    gt = read_trajectory(out / "groundtruth.tum")
    assert len(gt) == 5
    scn = make_scenario("room-slow", 4)
    for path, (stamp, pose) in zip(scans, gt):
        s = read_scan(path)
        assert stamp == pytest.approx(s.end_time, abs=1e-9)
        ref = scn.trajectory.pose(s.end_time)
        assert np.abs(pose.translation - ref.translation).max() < 1e-6
    imu = read_imu(out / "imu.csv")
    assert imu[0].stamp == 0.0 and imu[-1].stamp >= 0.5
    meta = json.loads((out / "meta.json").read_text())
    assert meta["scans"] == 5 and meta["scenario"] == "room-slow"
    again = generate_dataset("room-slow", 4, tmp_path / "b", duration=0.5)
    for f in ["imu.csv", "groundtruth.tum", "config.cfg", "scans/000003.pgls"]:
        assert (out / f).read_bytes() == (again / f).read_bytes()


def test_constant_velocity_imu_is_gravity_only():
    traj = constant_velocity((1.0, 0.5, 0.0), 3.0)
    imu = simulate_imu(traj, t1=2.0)
    assert np.allclose([s.accel for s in imu], [0.0, 0.0, GRAVITY], atol=1e-9)
    assert SCAN_PERIOD == 0.1
