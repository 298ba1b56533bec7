"""Flat ``section.key = value`` configuration with validated defaults."""
from __future__ import annotations

import math
from pathlib import Path

INF = math.inf

# key: (default, lower, upper, lower_inclusive)
_SPEC = {
    # inertial
    "imu.gravity": (9.81, 9.0, 10.5, True),
    "imu.gyro_noise": (1.7e-4, 0.0, INF, False),
    "imu.accel_noise": (2e-3, 0.0, INF, False),
    "imu.gyro_walk": (1e-5, 0.0, INF, False),
    "imu.accel_walk": (1e-4, 0.0, INF, False),
    "imu.init_duration_s": (0.5, 0.0, 60.0, False),
    "imu.static_gyro_std": (0.05, 0.0, INF, False),
    "imu.max_accel_bias": (1.0, 0.0, INF, False),
    "imu.max_gyro_bias": (0.2, 0.0, INF, False),
    # lidar-in-imu extrinsics, meters / radians (roll, pitch, yaw about x, y, z)
    "ext.x": (0.05, -10.0, 10.0, True),
    "ext.y": (0.0, -10.0, 10.0, True),
    "ext.z": (0.08, -10.0, 10.0, True),
    "ext.roll": (0.0, -math.pi, math.pi, True),
    "ext.pitch": (0.0, -math.pi, math.pi, True),
    "ext.yaw": (0.0, -math.pi, math.pi, True),
    # initial prior sigmas
    "prior.rot": (1e-6, 0.0, INF, False),
    "prior.pos": (1e-6, 0.0, INF, False),
    "prior.vel": (0.01, 0.0, INF, False),
    "prior.accel_bias": (0.1, 0.0, INF, False),
    "prior.gyro_bias": (1e-3, 0.0, INF, False),
    "prior.gravity": (0.1, 0.0, INF, False),
    # geometric subsystem
    "geo.stride": (4, 1, 64, True),
    "geo.voxel_size": (0.5, 0.0, INF, False),
    "geo.voxel_max_points": (20, 1, 10000, True),
    "geo.min_point_dist": (0.1, 0.0, INF, True),
    "geo.d1": (1.0, 0.0, INF, False),
    "geo.d2": (0.1, 0.0, INF, False),
    "geo.sigma": (0.05, 0.0, INF, False),
    "geo.huber": (0.1, 0.0, INF, False),
    "geo.min_correspondences": (10, 0, 1e9, True),
    "geo.degeneracy_threshold": (10.0, 0.0, INF, True),
    "map.update_dist_m": (2.0, 0.0, INF, False),
    "map.update_angle_deg": (30.0, 0.0, 180.0, False),
    # photometric subsystem
    "photo.patch_size": (5, 3, 15, True),
    "photo.sigma": (0.1, 0.0, INF, False),
    "photo.huber": (0.5, 0.0, INF, False),
    "photo.ncc_min": (0.5, -1.0, 1.0, True),
    "photo.occlusion_m": (0.3, 0.0, INF, False),
    "photo.min_sigma": (1e-6, 0.0, INF, False),
    "photo.nms_radius": (7, 0, 100, True),
    "photo.max_depth_spread": (0.5, 0.0, INF, False),
    "photo.min_gradient": (0.05, 0.0, INF, True),
    "photo.features_per_direction": (20, 0, 10000, True),
    "photo.max_features": (120, 0, 100000, True),
    "photo.filter_kv": (9, 1, 1001, True),
    "photo.filter_kh": (101, 1, 10001, True),
    "photo.brightness_window": (64, 1, 10001, True),
    "photo.gauss_sigma": (0.85, 0.0, INF, False),
    "photo.shutter_iters": (1, 0, 10, True),
    # optimizer / window
    "opt.max_iters": (8, 1, 1000, True),
    "opt.min_step": (1e-6, 0.0, INF, True),
    "opt.min_rel_decrease": (1e-9, 0.0, INF, True),
    "opt.lambda_init": (1e-4, 0.0, INF, False),
    "opt.refresh_all": (False, None, None, True),
    "window.length_s": (2.0, 0.0, INF, False),
}

DEFAULTS = {k: v[0] for k, v in _SPEC.items()}


class ConfigError(ValueError):
    pass


def _coerce(key, raw):
    default, lo, hi, lo_incl = _SPEC[key]
    if isinstance(default, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse {raw!r} as bool")
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as number") from None
    if isinstance(default, int):
        if value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        value = int(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    below = value < lo if lo_incl else value <= lo
    if below or value > hi:
        bracket = "[" if lo_incl else "("
        raise ConfigError(f"{key}: {value} outside valid range {bracket}{lo}, {hi}]")
    return value


class Config:
    """Immutable mapping of every tunable; unknown keys are rejected."""

    def __init__(self, values=None, **overrides):
        merged = dict(DEFAULTS)
        for source in (values or {}), {k.replace("__", "."): v for k, v in overrides.items()}:
            for key, raw in source.items():
                if key not in _SPEC:
                    raise ConfigError(f"unknown config key {key!r}")
                merged[key] = _coerce(key, raw)
        self._values = merged

    def __getitem__(self, key):
        return self._values[key]

    def __contains__(self, key):
        return key in self._values

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values

    def items(self):
        return self._values.items()

    def replace(self, **values):
        merged = dict(self._values)
        merged.update(values)
        return Config(merged)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in sorted(self._values.items()))

    def __repr__(self):
        changed = {k: v for k, v in self._values.items() if v != DEFAULTS[k]}
        return f"Config({changed})"


def parse_config(text, source="<string>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            if key not in _SPEC:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return Config(values)


def read_config(path):
    path = Path(path)
    return parse_config(path.read_text(), str(path))
