import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pglio.config import Config, ConfigError, parse_config, read_config
from pglio.geometry import Pose, exp_so3, rot_z
from pglio.sensor_io import (BeamIntrinsics, FormatError, ImuSample, LidarScan, ValidationError,
                             format_tum_line, parse_imu, read_imu, read_scan, read_trajectory,
                             write_imu, write_scan, write_trajectory)


def make_scan(rng, H=4, W=8):
    K = BeamIntrinsics.uniform(H, W, azimuth_offset=0.1, origin_offset=0.02)
    r = rng.uniform(0.5, 30.0, (H, W))
    r[0, 0] = 0.0
    return LidarScan(K, 1.0, 1.1, r, rng.uniform(0, 1, (H, W)))


def test_minimal_scan_round_trip(tmp_path):
    K = BeamIntrinsics([0.0], [0.0], 1)
    s = LidarScan(K, 0.0, 0.1, [[5.0]], [[0.5]])
    write_scan(tmp_path / "a.pgls", s)
    t = read_scan(tmp_path / "a.pgls")
    assert t.shape == (1, 1) and t.range[0, 0] == np.float32(5.0)


def test_scan_round_trip_bit_identical(tmp_path, rng):
    s = make_scan(rng)
    write_scan(tmp_path / "a.pgls", s)
    t = read_scan(tmp_path / "a.pgls")
    write_scan(tmp_path / "b.pgls", t)
    assert (tmp_path / "a.pgls").read_bytes() == (tmp_path / "b.pgls").read_bytes()
    assert np.array_equal(t.range, s.range) and np.array_equal(t.intensity, s.intensity)
    assert t.intrinsics == s.intrinsics
    assert np.array_equal(t.column_offset, s.column_offset)


def test_layout_header(tmp_path, rng):
    s = make_scan(rng, 2, 3)
    write_scan(tmp_path / "a.pgls", s)
    buf = (tmp_path / "a.pgls").read_bytes()
    assert buf[:4] == b"PGLS"
    assert np.frombuffer(buf[4:16], "<u4").tolist() == [1, 2, 3]
    assert len(buf) == 4 + 12 + 32 + 2 * 16 + 3 * 8 + 2 * 3 * 8


def test_truncated_names_missing_bytes(tmp_path, rng):
    write_scan(tmp_path / "a.pgls", make_scan(rng))
    buf = (tmp_path / "a.pgls").read_bytes()
    (tmp_path / "t.pgls").write_bytes(buf[:-5])
    with pytest.raises(FormatError, match="5 missing"):
        read_scan(tmp_path / "t.pgls")


def test_bad_magic_and_version(tmp_path, rng):
    write_scan(tmp_path / "a.pgls", make_scan(rng))
    buf = bytearray((tmp_path / "a.pgls").read_bytes())
    (tmp_path / "m.pgls").write_bytes(b"XXXX" + bytes(buf[4:]))
    with pytest.raises(FormatError, match="magic"):
        read_scan(tmp_path / "m.pgls")
    buf[4] = 2
    (tmp_path / "v.pgls").write_bytes(bytes(buf))
    with pytest.raises(FormatError, match="version"):
        read_scan(tmp_path / "v.pgls")


def test_validation_names_cell():
    K = BeamIntrinsics.uniform(2, 2)
    r = np.full((2, 2), 5.0)
    r[1, 0] = 0.05
    with pytest.raises(ValidationError, match=r"\(1, 0\)"):
        LidarScan(K, 0.0, 0.1, r, np.ones((2, 2)))
    with pytest.raises(ValidationError, match="column 1"):
        LidarScan(K, 0.0, 0.1, np.full((2, 2), 5.0), np.ones((2, 2)), [0.05, 0.01])


def test_intrinsics_validation():
    with pytest.raises(ValidationError, match="monotonic"):
        BeamIntrinsics([0.1, 0.2, 0.15], [0, 0, 0], 4)
    with pytest.raises(ValidationError, match="azimuth"):
        BeamIntrinsics([0.1, 0.2], [0, 0.4], 4)
    with pytest.raises(ValidationError):
        BeamIntrinsics([0.1], [0.0], 4, origin_offset=-1.0)


def test_imu_parsing(tmp_path):
    assert len(parse_imu(["0.0,0,0,0,0,0,9.81"])) == 1
    with pytest.raises(ValidationError, match=":3:"):
        parse_imu(["# t,...", "0.1,0,0,0,0,0,9.81", "0.05,0,0,0,0,0,9.81"])
    with pytest.raises(FormatError):
        parse_imu(["0.1,0,0,x,0,0,9.81"])
    with pytest.raises(FormatError):
        parse_imu(["0.1,0,0,0,0,9.81"])


def test_imu_100hz_half_second(tmp_path):
    samples = [ImuSample(k / 100.0, np.zeros(3), np.array([0, 0, 9.81])) for k in range(200)]
    write_imu(tmp_path / "imu.csv", samples)
    back = read_imu(tmp_path / "imu.csv")
    assert sum(1 for s in back if s.stamp < 0.5 - 1e-12) == 50
    assert all(a.stamp == b.stamp for a, b in zip(samples, back))


def test_tum_lines():
    assert format_tum_line(0.0, Pose()) == "0.000000000 0 0 0 0 0 0 1"
    f = format_tum_line(1.0, Pose(rot_z(np.pi))).split()
    assert abs(abs(float(f[6])) - 1.0) < 1e-9


@given(seed=st.integers(0, 2**31))
def test_tum_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    states = [(0.1 * k, Pose(exp_so3(rng.normal(size=3)), rng.uniform(-50, 50, 3)))
              for k in range(5)]
    path = tmp_path_factory.mktemp("tum") / "t.tum"
    write_trajectory(path, states)
    back = read_trajectory(path)
    for (t0, p0), (t1, p1) in zip(states, back):
        assert abs(t0 - t1) < 1e-9
        # 9 significant digits on translations up to 50 m
        assert np.abs(p0.translation - p1.translation).max() < 1e-7 * 50
        assert np.abs(p0.rotation - p1.rotation).max() < 1e-8


def test_config_defaults_and_overrides(tmp_path):
    (tmp_path / "e.cfg").write_text("")
    assert read_config(tmp_path / "e.cfg") == Config()
    c = parse_config("map.update_dist_m = 2.0  # meters\n")
    assert c["map.update_dist_m"] == 2.0
    assert parse_config("opt.refresh_all = true")["opt.refresh_all"] is True


@pytest.mark.parametrize("text, msg", [
    ("window.length_s = -1", "outside valid range"),
    ("nope.key = 1", "unknown"),
    ("geo.sigma = abc", "cannot parse"),
    ("geo.stride = 1.5", "integer"),
    ("geo.sigma 0.1", "key = value"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_config_error_location():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("geo.sigma = 0.1\nwindow.length_s = inf\n", "x.cfg")
