"""Scan, IMU, trajectory file formats and the sensor value types.

``PGLS`` scan layout (little-endian)::

    magic  'PGLS'          4 bytes
    u32    version (=1)
    u32    H, u32 W
    f64    start_time, end_time, beam origin offset n, vertical fov
    H  x  (f64 elevation, f64 azimuth offset)
    W  x   f64 column time offset from start
    H*W x (f32 range_m, f32 intensity)    row-major, ring by ring
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose, quat_from_rot, rot_from_quat

MAGIC = b"PGLS"
VERSION = 1
MIN_RANGE, MAX_RANGE = 0.1, 500.0
MAX_AZIMUTH_OFFSET = 0.35

_HEADER = struct.Struct("<4sIIIdddd")
_CELL = np.dtype([("range", "<f4"), ("intensity", "<f4")])


class FormatError(ValueError):
    """File does not follow the expected layout."""


class ValidationError(ValueError):
    """File parsed but its contents violate an invariant."""


@dataclass(frozen=True)
class BeamIntrinsics:
    elevation: np.ndarray       # (H,) radians, one per ring
    azimuth_offset: np.ndarray  # (H,) radians
    cols: int
    origin_offset: float = 0.0  # n, meters
    vertical_fov: float = np.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "elevation", np.asarray(self.elevation, dtype=float).reshape(-1))
        object.__setattr__(self, "azimuth_offset",
                           np.asarray(self.azimuth_offset, dtype=float).reshape(-1))
        self.validate()

    @property
    def rows(self):
        return self.elevation.size

    @property
    def shape(self):
        return self.rows, self.cols

    def validate(self):
        H, W = self.rows, self.cols
        if H < 1 or W < 1:
            raise ValidationError(f"intrinsics: need H, W >= 1, got {H}x{W}")
        if self.azimuth_offset.shape != (H,):
            raise ValidationError("intrinsics: azimuth_offset must have one value per ring")
        if H > 1:
            d = np.diff(self.elevation)
            if not (np.all(d > 0) or np.all(d < 0)):
                bad = int(np.flatnonzero(np.sign(d) != np.sign(d[0]))[0]) + 1 if np.any(d) else 1
                raise ValidationError(f"intrinsics: elevation not strictly monotonic at ring {bad}")
        big = np.flatnonzero(np.abs(self.azimuth_offset) > MAX_AZIMUTH_OFFSET)
        if big.size:
            raise ValidationError(f"intrinsics: |azimuth_offset| > {MAX_AZIMUTH_OFFSET} at ring {big[0]}")
        if not (self.origin_offset >= 0.0):
            raise ValidationError("intrinsics: beam origin offset n must be >= 0")
        if not (self.vertical_fov > 0.0):
            raise ValidationError("intrinsics: vertical fov must be positive")

    def encoder_angles(self):
        """Encoder angle of every column, consistent with the image projection."""
        c = np.arange(self.cols, dtype=float)
        return np.pi - 2.0 * np.pi * c / self.cols

    @classmethod
    def uniform(cls, rows=32, cols=512, vertical_fov=np.pi / 2, azimuth_offset=0.0,
                origin_offset=0.0):
        """Rings at the centres of ``rows`` equal elevation bands spanning the fov, top first."""
        step = vertical_fov / rows
        elevation = vertical_fov / 2 - (np.arange(rows) + 0.5) * step
        offs = np.broadcast_to(np.asarray(azimuth_offset, dtype=float), (rows,)).copy()
        return cls(elevation, offs, cols, origin_offset, vertical_fov)

    def __eq__(self, other):
        return (isinstance(other, BeamIntrinsics) and self.cols == other.cols
                and np.array_equal(self.elevation, other.elevation)
                and np.array_equal(self.azimuth_offset, other.azimuth_offset)
                and self.origin_offset == other.origin_offset
                and self.vertical_fov == other.vertical_fov)


@dataclass(frozen=True, eq=False)
class LidarScan:
    intrinsics: BeamIntrinsics
    start_time: float
    end_time: float
    range: np.ndarray         # (H, W) meters, 0 = invalid
    intensity: np.ndarray     # (H, W)
    column_offset: np.ndarray = None  # (W,) seconds from start_time; uniform when omitted

    def __post_init__(self):
        if self.column_offset is None:
            W = self.intrinsics.cols
            object.__setattr__(self, "column_offset",
                               np.arange(W) * (self.end_time - self.start_time) / W)
        object.__setattr__(self, "range", np.asarray(self.range, dtype=np.float32))
        object.__setattr__(self, "intensity", np.asarray(self.intensity, dtype=np.float32))
        object.__setattr__(self, "column_offset", np.asarray(self.column_offset, dtype=float))
        self.validate()

    @property
    def shape(self):
        return self.intrinsics.shape

    @property
    def valid(self):
        return self.range > 0.0

    @property
    def column_times(self):
        return self.start_time + self.column_offset

    def validate(self):
        H, W = self.intrinsics.shape
        for name in ("range", "intensity"):
            if getattr(self, name).shape != (H, W):
                raise ValidationError(f"scan: {name} shape {getattr(self, name).shape} != {(H, W)}")
        if self.column_offset.shape != (W,):
            raise ValidationError("scan: need one time offset per column")
        if not (np.isfinite(self.start_time) and np.isfinite(self.end_time)
                and self.end_time >= self.start_time):
            raise ValidationError("scan: start/end times invalid")
        off = self.column_offset
        bad = np.flatnonzero(~np.isfinite(off) | (off < 0) | (off > self.end_time - self.start_time))
        if bad.size:
            raise ValidationError(f"scan: column {bad[0]} time offset out of [0, end-start]")
        dec = np.flatnonzero(np.diff(off) < 0)
        if dec.size:
            raise ValidationError(f"scan: column {dec[0] + 1} time offset decreases")
        r = self.range
        bad = np.argwhere(~np.isfinite(r) | ((r != 0) & ((r < MIN_RANGE) | (r > MAX_RANGE))))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(f"scan: cell ({i}, {j}) range {r[i, j]} outside [{MIN_RANGE}, {MAX_RANGE}]")
        bad = np.argwhere(~np.isfinite(self.intensity) | (self.intensity < 0))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(f"scan: cell ({i}, {j}) intensity invalid")

    def points(self):
        """Cartesian points in the LiDAR frame at each cell's firing time, ``(H, W, 3)``."""
        return beam_points(self.range.astype(float), self.intrinsics)


def beam_points(rng, intrinsics: BeamIntrinsics, cols=None, rows=None):
    """Cartesian points for ranges ``rng``.

    With ``rows`` and ``cols`` omitted ``rng`` is a full ``(H, W)`` image; with
    ``cols`` only, its columns are those indices; with both, every element of
    ``rng`` is the cell ``(rows, cols)``.
    """
    rng = np.asarray(rng, dtype=float)
    K = intrinsics
    theta_e = K.encoder_angles() if cols is None else \
        np.pi - 2.0 * np.pi * np.asarray(cols, dtype=float) / K.cols
    if rows is None:
        phi = K.elevation[:, None]
        theta_a = K.azimuth_offset[:, None]
        theta_e = np.broadcast_to(theta_e[None, :] if theta_e.ndim == 1 else theta_e, rng.shape)
    else:
        rows = np.asarray(rows)
        phi, theta_a = K.elevation[rows], K.azimuth_offset[rows]
    n = K.origin_offset
    az = theta_e + theta_a
    out = np.empty(rng.shape + (3,))
    out[..., 0] = rng * np.cos(az) * np.cos(phi) + n * np.cos(theta_e)
    out[..., 1] = rng * np.sin(az) * np.cos(phi) + n * np.sin(theta_e)
    out[..., 2] = rng * np.sin(phi)
    return out


@dataclass(frozen=True)
class ImuSample:
    stamp: float
    gyro: np.ndarray
    accel: np.ndarray


def write_scan(path, scan: LidarScan):
    K = scan.intrinsics
    H, W = K.shape
    head = _HEADER.pack(MAGIC, VERSION, H, W, scan.start_time, scan.end_time,
                        K.origin_offset, K.vertical_fov)
    beams = np.column_stack([K.elevation, K.azimuth_offset]).astype("<f8")
    cells = np.empty((H, W), dtype=_CELL)
    cells["range"] = scan.range
    cells["intensity"] = scan.intensity
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(beams.tobytes())
        fh.write(scan.column_offset.astype("<f8").tobytes())
        fh.write(cells.tobytes())


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise FormatError(f"truncated file: {what} needs {n} bytes at offset {pos}, "
                          f"{len(buf) - pos} available ({pos + n - len(buf)} missing)")
    return buf[pos:pos + n], pos + n


def read_scan(path) -> LidarScan:
    buf = Path(path).read_bytes()
    raw, pos = _take(buf, 0, _HEADER.size, "header")
    magic, version, H, W, t0, t1, n, fov = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    raw, pos = _take(buf, pos, 16 * H, "beam table")
    beams = np.frombuffer(raw, dtype="<f8").reshape(H, 2)
    raw, pos = _take(buf, pos, 8 * W, "column offsets")
    offsets = np.frombuffer(raw, dtype="<f8").copy()
    raw, pos = _take(buf, pos, _CELL.itemsize * H * W, "cells")
    cells = np.frombuffer(raw, dtype=_CELL).reshape(H, W)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    intr = BeamIntrinsics(beams[:, 0].copy(), beams[:, 1].copy(), W, n, fov)
    return LidarScan(intr, t0, t1, cells["range"].copy(), cells["intensity"].copy(), offsets)


def parse_imu(lines, source="<imu>"):
    out = []
    last = -np.inf
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise FormatError(f"{source}:{lineno}: expected 7 fields, got {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric field") from None
        if not all(np.isfinite(vals)):
            raise ValidationError(f"{source}:{lineno}: non-finite value")
        if vals[0] <= last:
            raise ValidationError(f"{source}:{lineno}: stamp {vals[0]} not after {last}")
        last = vals[0]
        out.append(ImuSample(vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
    return out


def read_imu(path):
    with open(path) as fh:
        return parse_imu(fh, str(path))


def write_imu(path, samples):
    with open(path, "w") as fh:
        fh.write("# t,gx,gy,gz,ax,ay,az\n")
        for s in samples:
            vals = (s.stamp, *s.gyro, *s.accel)
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def imu_arrays(samples):
    """Stack samples into ``(stamps, gyro, accel)`` arrays."""
    t = np.array([s.stamp for s in samples], dtype=float)
    g = np.array([s.gyro for s in samples], dtype=float).reshape(-1, 3)
    a = np.array([s.accel for s in samples], dtype=float).reshape(-1, 3)
    return t, g, a


def _fmt(x):
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


def format_tum_line(stamp, pose: Pose):
    q = quat_from_rot(pose.rotation)
    vals = [*pose.translation, *q]
    return f"{stamp:.9f} " + " ".join(_fmt(v) for v in vals)


def write_trajectory(path, states):
    with open(path, "w") as fh:
        for stamp, pose in states:
            fh.write(format_tum_line(stamp, pose) + "\n")


def read_trajectory(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            f = line.split()
            if len(f) != 8:
                raise FormatError(f"{path}:{lineno}: expected 8 fields")
            try:
                v = [float(x) for x in f]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
            out.append((v[0], Pose(rot_from_quat(v[4:8]), v[1:4])))
    return out
