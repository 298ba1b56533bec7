import numpy as np
import pytest

from pglio import smoother as sm
from pglio.config import Config
from pglio.geometry import GravityDir, NavState, Pose, retract_state
from pglio.inertial import ImuNoise, imu_segments, preintegrate
from pglio.pipeline import Odometry
from pglio.simulator import (NOISE, SCAN_PERIOD, RoomScene, Texture, default_intrinsics,
                             extrinsics_pose, make_scenario, simulate_imu, simulate_scan,
                             static_trajectory)

DOWN = GravityDir(np.array([0.0, 0.0, -1.0]))


def at_rest(stamp=0.0):
    return NavState(Pose(), np.zeros(3), np.zeros(3), np.zeros(3), stamp)


def static_imu(t1, rate=200.0):
    imu = simulate_imu(static_trajectory(t1 + 0.1), t1=t1)
    st = np.array([s.stamp for s in imu])
    return st, np.array([s.gyro for s in imu]), np.array([s.accel for s in imu])


def pim_between(imu, t0, t1):
    st, gy, ac = imu
    return preintegrate(imu_segments(st, gy, ac, t0, t1), np.zeros(3), np.zeros(3), ImuNoise())


def window_with(n_states, length=2.0, spacing=SCAN_PERIOD, seed=0):
    """Window of ``n_states`` static states linked by IMU factors, estimates perturbed."""
    rng = np.random.default_rng(seed)
    imu = static_imu(n_states * spacing + 0.2)
    win = sm.FactorWindow(length)
    win.initialize(at_rest(0.0), DOWN)
    for k in range(1, n_states):
        x = retract_state(at_rest(k * spacing), rng.normal(size=15) * 1e-3)
        win.add_scan(x, pim_between(imu, (k - 1) * spacing, k * spacing))
    return win


# -- window bookkeeping --

def test_first_scan_adds_one_imu_factor():
    win = window_with(1)
    assert len(win) == 1
    imu = static_imu(0.3)
    win.add_scan(at_rest(0.1), pim_between(imu, 0.0, 0.1), [])
    assert len(win) == 2
    kinds = [f.kind for f in win.factors]
    assert kinds.count("imu") == 1 and kinds.count("bias") == 1
    imu_f = next(f for f in win.factors if f.kind == "imu")
    assert imu_f.keys == (0, 1, sm.GRAVITY_KEY)


def test_non_monotone_stamp_rejected():
    win = window_with(3)
    with pytest.raises(sm.WindowError):
        win.add_scan(at_rest(0.2), None)
    with pytest.raises(sm.WindowError):
        win.add_scan(at_rest(0.1), None)


def test_factor_on_unknown_variable_rejected():
    win = window_with(2)
    with pytest.raises(sm.WindowError):
        win.add_factor(sm.PriorFactor(99, np.zeros(3), np.eye(3)))


def test_prior_only_window_unchanged():
    win = window_with(1)
    before = win.state()
    report = win.optimize()
    assert report.final_cost == 0.0
    after = win.state()
    assert np.array_equal(before.pose.matrix(), after.pose.matrix())
    assert np.array_equal(before.velocity, after.velocity)


def test_no_factors_no_change():
    vals = {"a": np.array([1.0, 2.0])}
    out, report = sm.levenberg_marquardt(vals, [])
    assert out["a"] is vals["a"] and report.iterations == 0


def test_cost_non_increasing():
    win = window_with(12, seed=3)
    report = win.optimize()
    assert report.accepted >= 1
    assert np.all(np.diff(report.costs) <= 0)
    assert report.final_cost < report.initial_cost


def test_optimize_recovers_static_truth():
    win = window_with(12, seed=4)
    win.opt.update(max_iters=30)
    win.optimize()
    for x in win.states():
        assert np.linalg.norm(x.pose.translation) < 1e-3
        assert np.rad2deg(np.linalg.norm(sm.local(at_rest(), x)[:3])) < 0.01


def test_factor_order_does_not_matter():
    a = window_with(10, seed=5)
    b = window_with(10, seed=5)
    rng = np.random.default_rng(0)
    b.factors = [b.factors[i] for i in rng.permutation(len(b.factors))]
    a.optimize()
    b.optimize()
    for xa, xb in zip(a.states(), b.states()):
        assert np.abs(sm.local(xa, xb)).max() < 1e-12


def test_window_size_bounded():
    win = window_with(1, length=0.5)
    imu = static_imu(4.0)
    bound = int(np.ceil(0.5 / SCAN_PERIOD)) + 1
    for k in range(1, 35):
        win.add_scan(at_rest(k * SCAN_PERIOD), pim_between(imu, (k - 1) * SCAN_PERIOD,
                                                           k * SCAN_PERIOD))
        win.optimize()
        win.marginalize()
        assert len(win) <= bound
        assert set(win.values) == set(win.order) | {sm.GRAVITY_KEY}
        for f in win.factors:
            assert all(k in win.values for k in f.keys)
    marg = [f for f in win.factors if f.kind == "marginal"]
    assert len(marg) == 1
    assert np.linalg.eigvalsh(marg[0].H).min() >= -1e-9 * np.abs(marg[0].H).max()
    assert np.allclose(marg[0].H, marg[0].H.T)


def test_short_window_not_marginalized():
    win = window_with(5, length=2.0)
    assert win.marginalize() == []
    assert len(win) == 5


# -- linear-Gaussian oracles --

def test_marginal_equals_composed_factor(rng):
    m0 = rng.normal(size=3)
    A = rng.normal(size=(3, 3))
    P0 = A @ A.T + np.eye(3)
    B = rng.normal(size=(3, 3))
    Q = B @ B.T + 0.5 * np.eye(3)
    z = rng.normal(size=3)
    values = {"x0": m0 + 0.3, "x1": m0 + z - 0.2}
    prior = sm.PriorFactor("x0", m0, P0)
    step = sm.LinearFactor(("x0", "x1"), [-np.eye(3), np.eye(3)], z, Q)
    marg = sm.schur_marginalize(values, [prior, step], {"x0"})
    assert marg.keys == ("x1",)
    # the quadratic over x1 must be N(m0 + z, P0 + Q)
    assert np.abs(marg.H - np.linalg.inv(P0 + Q)).max() < 1e-6
    mean = values["x1"] - np.linalg.solve(marg.H, marg.b)
    assert np.abs(mean - (m0 + z)).max() < 1e-6
    assert marg.cost({"x1": m0 + z}) == pytest.approx(0.0, abs=1e-9)


def _linear_chain(rng, n, dim=2):
    """Random-walk chain with absolute measurements on every variable."""
    truth = np.cumsum(rng.normal(size=(n, dim)), axis=0)
    factors = {k: [] for k in range(n)}
    factors[0].append(sm.PriorFactor(0, truth[0] + 0.1 * rng.normal(size=dim), 0.1 * np.eye(dim)))
    for k in range(1, n):
        z = truth[k] - truth[k - 1] + 0.05 * rng.normal(size=dim)
        factors[k].append(sm.LinearFactor((k - 1, k), [-np.eye(dim), np.eye(dim)], z,
                                          0.01 * np.eye(dim)))
    for k in range(n):
        if k % 3 == 0:
            z = truth[k] + 0.2 * rng.normal(size=dim)
            factors[k].append(sm.LinearFactor((k,), [np.eye(dim)], z, 0.04 * np.eye(dim)))
    return truth, factors


def test_fixed_lag_matches_batch(rng):
    n, lag = 30, 4
    truth, factors = _linear_chain(rng, n)
    opts = dict(max_iters=50, min_step=1e-14, min_rel_decrease=0.0, lambda_init=1e-14)
    values, active = {}, []
    for k in range(n):
        values[k] = np.zeros(2)
        active.extend(factors[k])
        values, _ = sm.levenberg_marquardt(values, active, **opts)
        drop = [j for j in values if j <= k - lag]
        if drop:
            touching = [f for f in active if set(f.keys) & set(drop)]
            active = [f for f in active if not set(f.keys) & set(drop)]
            active.append(sm.schur_marginalize(values, touching, set(drop)))
            for j in drop:
                del values[j]
    everything = [f for k in range(n) for f in factors[k]]
    batch, _ = sm.levenberg_marquardt({k: np.zeros(2) for k in range(n)}, everything, **opts)
    assert np.abs(values[n - 1] - batch[n - 1]).max() < 1e-9


def test_marginal_prior_is_psd(rng):
    truth, factors = _linear_chain(rng, 6, dim=3)
    vals = {k: truth[k] for k in range(6)}
    every = [f for k in range(6) for f in factors[k]]
    marg = sm.schur_marginalize(vals, every, {0, 1, 2})
    assert np.linalg.eigvalsh(marg.H).min() >= -1e-12


# -- per-scan pipeline --

def _run(scene, traj, n_scans, t_first=0.5, K=None, photometric=True, seed=0, noise=NOISE,
         range_noise=0.01, cfg=None, gyro_bias=np.zeros(3)):
    K = K or default_intrinsics()
    T_IL = extrinsics_pose()
    odo = Odometry(cfg or Config(), use_photometric=photometric)
    imu = simulate_imu(traj, noise=noise, t1=t_first + (n_scans + 1) * SCAN_PERIOD, seed=seed,
                       gyro_bias=gyro_bias)
    odo.add_imu(imu)
    out = []
    for k in range(n_scans):
        t0 = round(t_first + k * SCAN_PERIOD, 9)
        x, diag = sm.process_scan(odo, simulate_scan(scene, traj, K, t0, T_IL,
                                                  range_noise=range_noise, seed=seed + k))
        out.append((x, diag))
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stationary_drift_below_1mm(seed):
    # exact ranges: with 1 cm range noise a single scan registers to +-2 mm,
    # which would swamp the estimator drift this checks
    traj = static_trajectory(3.0)
    res = _run(RoomScene(texture=Texture(1, extent=(-30, 30))), traj, 11, seed=seed,
               range_noise=0.0)
    x0 = res[0][0]
    assert res[0][1]["status"] == "initialized"
    for x, diag in res[1:]:
        assert diag["status"] == "ok"
        assert np.linalg.norm(x.pose.translation - x0.pose.translation) < 1e-3


def test_room_needs_no_features():
    scn = make_scenario("room-slow", 0)
    res = _run(scn.scene, scn.trajectory, 8, t_first=1.0)
    for x, diag in res[1:]:
        assert diag["degenerate"] == 0 and diag["features"] == 0
        gt = scn.trajectory.pose(diag["stamp"])
        assert np.linalg.norm(x.pose.translation - gt.translation) < 0.02


def test_tunnel_extracts_features_along_axis():
    scn = make_scenario("tunnel-textured", 0)
    res = _run(scn.scene, scn.trajectory, 6, t_first=0.5)
    for x, diag in res[1:]:
        assert diag["degenerate"] == 1
        assert diag["features"] > 0


def test_bias_bound_flagged(caplog):
    scn = make_scenario("room-slow", 0)
    bg = np.array([0.006, -0.008, 0.0])  # |bg| = 0.01 rad/s
    res = _run(scn.scene, scn.trajectory, 6, t_first=1.0, cfg=Config({"imu.max_gyro_bias": 0.005}),
               gyro_bias=bg)
    assert [d["status"] for _, d in res[1:]] == ["ok"] * 5
    assert not any(d["bias_ok"] for _, d in res[1:])
    assert "beyond sanity bound" in caplog.text
    res = _run(scn.scene, scn.trajectory, 6, t_first=1.0, gyro_bias=bg)
    assert all(d["bias_ok"] for _, d in res[1:])
