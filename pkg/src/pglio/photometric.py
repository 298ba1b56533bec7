"""Intensity images, the beam-aware projection model and the NCC patch factor."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Pose, skew
from .kernels import bilinear_sample
from .sensor_io import BeamIntrinsics, LidarScan, beam_points


class DegeneratePatchError(ValueError):
    """Patch intensities have (near) zero variance."""


class ProjectionError(ValueError):
    pass


# -- images -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IntensityImage:
    intensity: np.ndarray  # (H, W) float
    mask: np.ndarray       # (H, W) bool
    range: np.ndarray      # (H, W) meters
    intrinsics: BeamIntrinsics
    stamp: float = 0.0

    @property
    def shape(self):
        return self.intensity.shape

    def replace(self, **kw):
        d = dict(intensity=self.intensity, mask=self.mask, range=self.range,
                 intrinsics=self.intrinsics, stamp=self.stamp)
        d.update(kw)
        return IntensityImage(**d)


def build_image(scan: LidarScan) -> IntensityImage:
    mask = scan.valid.copy()
    img = np.where(mask, scan.intensity.astype(float), 0.0)
    return IntensityImage(img, mask, scan.range.astype(float), scan.intrinsics, scan.end_time)


_MODES = ("constant", "wrap")  # rows clipped, columns wrap around the 360 deg image


def _masked(fn, img, mask):
    m = mask.astype(float)
    num = fn(img * m)
    den = fn(m)
    out = np.zeros_like(img)
    np.divide(num, den, out=out, where=den > 1e-12)
    return out


def _box(size):
    def fn(a):
        return ndimage.uniform_filter(a, size=size, mode=_MODES, cval=0.0)
    return fn


def filter_image(img: IntensityImage, kv=9, kh=101, window=64, sigma=0.85) -> IntensityImage:
    """Line-artifact removal, exposure normalization and 3x3 Gaussian smoothing."""
    H, W = img.shape
    I, M = img.intensity, img.mask
    # per-ring line signal: vertical highpass then horizontal lowpass
    hp = np.where(M, I - _masked(_box((kv, 1)), I, M), 0.0)
    line = _masked(_box((1, min(kh, W))), hp, M)
    I1 = np.where(M, I - line, 0.0)
    # brightness map
    bmap = _masked(_box((min(window, 2 * H + 1), min(window, W))), I1, M)
    mean = I1[M].mean() if M.any() else 0.0
    I2 = np.zeros_like(I1)
    ok = M & (np.abs(bmap) > 1e-9)
    I2[ok] = I1[ok] / bmap[ok] * mean
    M2 = ok
    # 3x3 gaussian
    def gauss(a):
        return ndimage.gaussian_filter(a, sigma, mode=_MODES, cval=0.0, truncate=1.0 / sigma)
    I3 = np.where(M2, _masked(gauss, I2, M2), 0.0)
    return img.replace(intensity=I3, mask=M2)


def dump_pgm(path, img: IntensityImage):
    v = img.intensity
    hi = v[img.mask].max() if img.mask.any() else 1.0
    data = np.clip(v / max(hi, 1e-12) * 255.0, 0, 255).astype(np.uint8)
    H, W = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode())
        fh.write(data.tobytes())


# -- projection -------------------------------------------------------------

def _focal(K: BeamIntrinsics):
    W, H = K.cols, K.rows
    return -W / (2 * np.pi), -H / K.vertical_fov, W / 2.0, H / 2.0


def project(p, K: BeamIntrinsics):
    """Spherical projection with beam-origin offset; ``u`` wrapped into ``[0, W)``."""
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    if np.any(rho == 0.0):
        raise ProjectionError("azimuth undefined for a point on the spin axis")
    fx, fy, cx, cy = _focal(K)
    L = rho - K.origin_offset
    R = np.sqrt(L * L + z * z)
    u = np.mod(fx * np.arctan2(y, x) + cx, K.cols)
    v = fy * np.arcsin(np.clip(z / R, -1.0, 1.0)) + cy
    return u, v


def elevation_of(p, K: BeamIntrinsics):
    p = np.asarray(p, dtype=float)
    L = np.hypot(p[..., 0], p[..., 1]) - K.origin_offset
    return np.arctan2(p[..., 2], L)


def ring_coordinate(phi, K: BeamIntrinsics):
    """Fractional ring index of elevation ``phi`` and ``d index / d phi``.

    Piecewise linear through the ring elevations, extrapolated past the ends.
    """
    el = K.elevation
    phi = np.asarray(phi, dtype=float)
    if el.size == 1:
        fy = -K.rows / K.vertical_fov
        return fy * (phi - el[0]), np.full_like(phi, fy)
    asc = el[0] < el[-1]
    e = el if asc else el[::-1]
    idx = np.arange(el.size, dtype=float) if asc else np.arange(el.size, dtype=float)[::-1]
    seg = np.clip(np.searchsorted(e, phi) - 1, 0, el.size - 2)
    slope = (idx[seg + 1] - idx[seg]) / (e[seg + 1] - e[seg])
    return idx[seg] + slope * (phi - e[seg]), slope


@dataclass(frozen=True, eq=False)
class BiasLUT:
    """Horizontal pixel bias of a scan.

    ``bias[i, c]`` is the bias of cell ``(i, c)`` (invalid cells interpolated
    along the ring).  ``slots[i, s]`` re-indexes the same values by the
    uncorrected projected column so a point can be looked up before its
    cell is known.
    """

    bias: np.ndarray   # (H, W) per cell
    slots: np.ndarray  # (H, W) per projected column

    def lookup(self, u, row):
        """Bias at fractional projected column ``u`` of integer ``row`` (linear, wrapping)."""
        H, W = self.slots.shape
        u = np.asarray(u, dtype=float)
        row = np.clip(np.asarray(row, dtype=np.int64), 0, H - 1)
        u0 = np.floor(u)
        f = u - u0
        i0 = np.mod(u0.astype(np.int64), W)
        i1 = np.mod(i0 + 1, W)
        return (1 - f) * self.slots[row, i0] + f * self.slots[row, i1]

    @classmethod
    def zeros(cls, K: BeamIntrinsics):
        return cls(np.zeros(K.shape), np.zeros(K.shape))


def _wrap_half(x, W):
    return (x + W / 2) % W - W / 2


def analytic_bias(rng, K: BeamIntrinsics, rows=None, col=0):
    """``b_u = c - u_proj`` for a point of range ``rng`` reconstructed at column ``col``."""
    rows = np.arange(K.rows) if rows is None else np.asarray(rows)
    rng = np.broadcast_to(np.asarray(rng, dtype=float), np.shape(rows))
    theta_e = np.pi - 2 * np.pi * col / K.cols
    phi, ta, n = K.elevation[rows], K.azimuth_offset[rows], K.origin_offset
    x = rng * np.cos(theta_e + ta) * np.cos(phi) + n * np.cos(theta_e)
    y = rng * np.sin(theta_e + ta) * np.cos(phi) + n * np.sin(theta_e)
    u, _ = project(np.stack([x, y, rng * np.sin(phi)], axis=-1), K)
    return _wrap_half(col - u, K.cols)


def build_bias_lut(scan: LidarScan, fill_range=10.0) -> BiasLUT:
    """Per-scan bias table making projected points land on their recorded columns.

    Every valid cell contributes ``b = c - u_proj``.  Gaps along a ring are
    filled by periodic linear interpolation between the nearest valid cells;
    rings without valid cells use the analytic bias at ``fill_range``.
    """
    K = scan.intrinsics
    H, W = K.shape
    pts = scan.points()
    valid = scan.valid
    cell = np.zeros((H, W))
    slots = np.zeros((H, W))
    cols = np.arange(W, dtype=float)
    for i in range(H):
        js = np.flatnonzero(valid[i])
        if js.size == 0:
            cell[i] = slots[i] = analytic_bias(fill_range, K, rows=[i])[0]
            continue
        u, _ = project(pts[i, js], K)
        b = _wrap_half(js - u, W)
        cell[i] = np.interp(cols, js, b, period=W)
        order = np.argsort(u, kind="stable")
        slots[i] = np.interp(cols, u[order], b[order], period=W)
    return BiasLUT(cell, slots)


def project_n(p, K: BeamIntrinsics, lut: BiasLUT | None = None):
    """Corrected projection: biased column and elevation-interpolated ring coordinate."""
    p = np.asarray(p, dtype=float)
    u, _ = project(p, K)
    v, _ = ring_coordinate(elevation_of(p, K), K)
    if lut is not None:
        row = np.clip(np.rint(v), 0, K.rows - 1).astype(np.int64)
        u = np.mod(u + lut.lookup(u, row), K.cols)
    return u, v


def projection_jacobian(p, K: BeamIntrinsics):
    """``(N, 2, 3)`` derivative of ``(u, v_ring)`` wrt the point (bias held fixed)."""
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    x, y, z = p.T
    fx, _, _, _ = _focal(K)
    rho2 = x * x + y * y
    rho = np.sqrt(rho2)
    L = rho - K.origin_offset
    R2 = L * L + z * z
    _, dv_dphi = ring_coordinate(elevation_of(p, K), K)
    J = np.zeros((len(p), 2, 3))
    J[:, 0, 0] = -fx * y / rho2
    J[:, 0, 1] = fx * x / rho2
    J[:, 1, 0] = -dv_dphi * z * x / (R2 * rho)
    J[:, 1, 1] = -dv_dphi * z * y / (R2 * rho)
    J[:, 1, 2] = dv_dphi * L / R2
    return J


# -- NCC --------------------------------------------------------------------

def normalize_ncc(values, eps=1e-6, jacobian=True):
    """Zero-mean, unit-norm normalization and its Jacobian."""
    x = np.asarray(values, dtype=float)
    M = x.size
    c = x - x.mean()
    s = np.linalg.norm(c)
    if s <= eps:
        raise DegeneratePatchError(f"patch intensity spread {s:.3g} <= {eps}")
    psi = c / s
    if not jacobian:
        return psi
    J = (np.eye(M) - np.outer(psi, psi)) / s @ (np.eye(M) - np.full((M, M), 1.0 / M))
    return psi, J


def ncc_score(S, T, eps=1e-6):
    return float(normalize_ncc(S, eps, False) @ normalize_ncc(T, eps, False))


def znssd(S, T, eps=1e-6):
    d = normalize_ncc(S, eps, False) - normalize_ncc(T, eps, False)
    return float(d @ d)


# -- features ---------------------------------------------------------------

_ids = itertools.count()


@dataclass(eq=False)
class PatchFeature:
    points_W: np.ndarray   # (M, 3)
    ref_psi: np.ndarray    # (M,)
    ref_depth: np.ndarray  # (M,)
    ref_image: int
    center: tuple = (0, 0)
    id: int = field(default_factory=lambda: next(_ids))
    alive: bool = True
    status: str = "ok"

    @property
    def size(self):
        return len(self.ref_psi)


def patch_offsets(size):
    h = size // 2
    dr, dc = np.meshgrid(np.arange(-h, h + 1), np.arange(-h, h + 1), indexing="ij")
    return dr.ravel(), dc.ravel()


_SCHARR = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]) / 32.0


def _correlate3(I, k, row_mode):
    # 3x3 correlation, columns wrap around the revolution
    P = np.pad(I, ((1, 1), (0, 0)), mode=row_mode)
    P = np.pad(P, ((0, 0), (1, 1)), mode="wrap")
    return ndimage.correlate(P, k, mode="constant")[1:-1, 1:-1]


def image_gradient(img: IntensityImage):
    I = img.intensity
    gu = _correlate3(I, _SCHARR, "edge")
    gv = _correlate3(I, _SCHARR.T, "edge")
    m = img.mask.astype(float)
    full = _correlate3(m, np.ones((3, 3)), "constant") > 8.5
    gu[~full] = 0.0
    gv[~full] = 0.0
    return gu, gv


def lidar_to_imu_rotations(table, T_IL: Pose):
    """``R_{L_t I_e}`` for every column of a deskew table."""
    return np.einsum("wji,kj->wik", table.rotations, T_IL.rotation)


def extract_candidates(img: IntensityImage, count, localizability, points_I, pose: Pose,
                       table, T_IL: Pose, ref_image=0, patch_size=5, nms_radius=7,
                       min_gradient=0.05, max_depth_spread=0.5, eps=1e-6, exclude=None):
    """Select high-gradient patches that best constrain degenerate directions.

    ``points_I`` are the deskewed cell points in the IMU frame at the scan end
    and ``pose`` is ``T_WI_e``.  A candidate's score along direction ``d`` is
    the summed magnitude of its translation Jacobian projected onto ``d``.
    """
    dirs = localizability.degenerate_directions if localizability is not None else np.zeros((0, 3))
    if count <= 0 or len(dirs) == 0:
        return []
    K = img.intrinsics
    H, W = img.shape
    gu, gv = image_gradient(img)
    mag = np.hypot(gu, gv)
    mean = img.intensity[img.mask].mean() if img.mask.any() else 0.0
    thresh = min_gradient * abs(mean)
    if thresh <= 0:
        return []
    size = 2 * nms_radius + 1
    peak = (mag == ndimage.maximum_filter(mag, size=size, mode=("nearest", "wrap"))) & (mag > thresh)
    if exclude is not None:
        peak &= ~exclude
    h = patch_size // 2
    peak[:h] = False
    peak[H - h:] = False
    rows, cols = np.nonzero(peak)
    if rows.size == 0:
        return []
    dr, dc = patch_offsets(patch_size)
    R_rows = rows[:, None] + dr[None]
    C_cols = np.mod(cols[:, None] + dc[None], W)
    ok = np.all(img.mask[R_rows, C_cols], axis=1)
    depth = img.range[R_rows, C_cols]
    ok &= (depth.max(axis=1) - depth.min(axis=1)) < max_depth_spread
    ok &= np.all(np.isfinite(points_I[R_rows, C_cols]), axis=(1, 2))
    rows, cols, R_rows, C_cols, depth = rows[ok], cols[ok], R_rows[ok], C_cols[ok], depth[ok]
    if rows.size == 0:
        return []
    # translation Jacobian of each cell's intensity, expressed in I_e
    p_L = beam_points(img.range[R_rows, C_cols], K, cols=C_cols, rows=R_rows)
    R_LtIe = lidar_to_imu_rotations(table, T_IL)[C_cols]          # (N, M, 3, 3)
    Jp = projection_jacobian(p_L.reshape(-1, 3), K).reshape(*C_cols.shape, 2, 3)
    grad = np.stack([gu[R_rows, C_cols], gv[R_rows, C_cols]], axis=-1)  # (N, M, 2)
    g_t = -np.einsum("nmi,nmij,nmjk->nmk", grad, Jp, R_LtIe)
    scores = np.abs(np.einsum("nmk,dk->ndm", g_t, dirs)).sum(axis=2)  # (N, D)
    chosen = []
    taken = np.zeros(len(rows), dtype=bool)
    for d in range(len(dirs)):
        order = np.argsort(-scores[:, d], kind="stable")
        n = 0
        for k in order:
            if n >= count or scores[k, d] <= 0:
                break
            if taken[k]:
                continue
            taken[k] = True
            chosen.append(k)
            n += 1
    feats = []
    for k in chosen:
        vals = img.intensity[R_rows[k], C_cols[k]]
        try:
            psi = normalize_ncc(vals, eps, jacobian=False)
        except DegeneratePatchError:
            continue
        pW = pose.apply(points_I[R_rows[k], C_cols[k]])
        feats.append(PatchFeature(pW, psi, depth[k].astype(float), ref_image,
                                  (int(rows[k]), int(cols[k]))))
    return feats


# -- photometric factor -----------------------------------------------------

@dataclass
class FrameData:
    """Everything of scan ``j`` the photometric residual needs."""

    image: IntensityImage
    lut: BiasLUT
    table: object  # DeskewTable
    T_IL: Pose
    shutter_iters: int = 1


def project_features(points_W, pose: Pose, frame: FrameData):
    """Project ``(N, 3)`` world points into frame ``j`` with rolling-shutter lookup.

    Returns ``u, v, p_Lt, p_Ie, col``.
    """
    K = frame.image.intrinsics
    p_Ie = pose.inverse().apply(points_W)
    p_Le = frame.T_IL.inverse().apply(p_Ie)
    p_Lt = p_Le
    u, v = project_n(p_Lt, K, frame.lut)
    col = np.mod(np.rint(u).astype(np.int64), K.cols)
    tab = frame.table
    for _ in range(frame.shutter_iters):
        Rt = tab.rotations[col]
        tt = tab.translations[col]
        p_Lt = np.einsum("nji,nj->ni", Rt, p_Le - tt)  # T_LeLt^-1 p_Le
        u, v = project_n(p_Lt, K, frame.lut)
        col = np.mod(np.rint(u).astype(np.int64), K.cols)
    return u, v, p_Lt, p_Ie, col


def feature_residuals(features, pose: Pose, frame: FrameData, eps=1e-6, jacobians=True,
                      occlusion=0.3):
    """Per-feature NCC residuals.

    Returns a list of dicts with ``e`` (M,), ``J`` (M, 6) or ``None``, ``ncc``
    and ``status`` (``"ok"``, ``"outside"``, ``"occluded"`` or ``"degenerate"``).
    """
    if not features:
        return []
    img = frame.image
    K = img.intrinsics
    M = np.array([f.size for f in features])
    P = np.concatenate([f.points_W for f in features])
    u, v, p_Lt, p_Ie, col = project_features(P, pose, frame)
    val, du, dv, ok = bilinear_sample(img.intensity, img.mask, u, v)
    rr = np.clip(np.rint(v).astype(np.int64), 0, K.rows - 1)
    depth_img = img.range[rr, col]
    L = np.hypot(p_Lt[:, 0], p_Lt[:, 1]) - K.origin_offset
    depth = np.hypot(L, p_Lt[:, 2])
    occluded = np.abs(depth_img - depth) > occlusion
    if jacobians:
        Jp = projection_jacobian(p_Lt, K)                              # (N, 2, 3)
        R_LtIe = lidar_to_imu_rotations(frame.table, frame.T_IL)[col]  # (N, 3, 3)
        JG = np.empty((len(P), 3, 6))
        JG[:, :, :3] = np.einsum("nij,njk->nik", R_LtIe, _skew_batch(p_Ie))
        JG[:, :, 3:] = -R_LtIe
        JI = np.stack([du, dv], axis=1)                                 # (N, 2)
        Jpt = np.einsum("ni,nij,njk->nk", JI, Jp, JG)                   # (N, 6)
    out = []
    start = 0
    for f, m in zip(features, M):
        sl = slice(start, start + m)
        start += m
        rec = {"feature": f, "e": None, "J": None, "ncc": -1.0}
        if not np.all(ok[sl]):
            rec["status"] = "outside"
        elif np.any(occluded[sl]):
            rec["status"] = "occluded"
        else:
            try:
                if jacobians:
                    psi, Jpsi = normalize_ncc(val[sl], eps)
                else:
                    psi = normalize_ncc(val[sl], eps, jacobian=False)
            except DegeneratePatchError:
                rec["status"] = "degenerate"
            else:
                rec["status"] = "ok"
                rec["e"] = psi - f.ref_psi
                rec["ncc"] = float(psi @ f.ref_psi)
                if jacobians:
                    rec["J"] = Jpsi @ Jpt[sl]
        out.append(rec)
    return out


def _skew_batch(p):
    S = np.zeros((len(p), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -p[:, 2], p[:, 1]
    S[:, 1, 0], S[:, 1, 2] = p[:, 2], -p[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -p[:, 1], p[:, 0]
    return S


class PhotometricFactor:
    """Dense NCC factor of the features tracked in one scan, on that scan's pose."""

    kind = "photometric"

    def __init__(self, key, features, frame: FrameData, sigma=0.1, huber=0.5, ncc_min=0.5,
                 occlusion=0.3, eps=1e-6):
        self.keys = (key,)
        self.frame = frame
        self.features = list(features)
        self.sigma, self.huber = sigma, huber
        self.ncc_min, self.occlusion, self.eps = ncc_min, occlusion, eps
        self.active = True

    @classmethod
    def from_config(cls, key, features, frame, cfg):
        return cls(key, features, frame, cfg["photo.sigma"], cfg["photo.huber"],
                   cfg["photo.ncc_min"], cfg["photo.occlusion_m"], cfg["photo.min_sigma"])

    def screen(self, pose: Pose):
        """Split features into inliers (kept) and outliers (returned) at ``pose``."""
        recs = feature_residuals(self.features, pose, self.frame, self.eps, False, self.occlusion)
        keep, bad = [], []
        for r in recs:
            f = r["feature"]
            if r["status"] == "ok" and r["ncc"] >= self.ncc_min:
                keep.append(f)
            else:
                f.status = r["status"] if r["status"] != "ok" else "low-ncc"
                bad.append(f)
        self.features = keep
        return bad

    def freeze(self):
        self.active = False

    @property
    def count(self):
        return len(self.features)

    def relinearize(self, values):
        pass

    def _robust(self, e):
        s = np.linalg.norm(e) / self.sigma
        if s <= self.huber:
            return 1.0, 0.5 * s * s
        return self.huber / s, self.huber * (s - 0.5 * self.huber)

    def cost(self, values):
        pose = values[self.keys[0]].pose
        total = 0.0
        for r in feature_residuals(self.features, pose, self.frame, self.eps, False, self.occlusion):
            e = r["e"] if r["e"] is not None else 2.0 * r["feature"].ref_psi
            total += self._robust(e)[1]
        return total

    def linearize(self, values):
        pose = values[self.keys[0]].pose
        H = np.zeros((15, 15))
        g = np.zeros(15)
        total = 0.0
        for r in feature_residuals(self.features, pose, self.frame, self.eps, True, self.occlusion):
            if r["e"] is None:  # lost track mid-optimization: constant penalty, no gradient
                total += self._robust(2.0 * r["feature"].ref_psi)[1]
                continue
            w, rho = self._robust(r["e"])
            total += rho
            J = r["J"]
            H[:6, :6] += (w / self.sigma**2) * (J.T @ J)
            g[:6] += (w / self.sigma**2) * (J.T @ r["e"])
        return total, g, H


__all__ = ["IntensityImage", "BiasLUT", "PatchFeature", "FrameData", "PhotometricFactor",
           "build_image", "filter_image", "project", "project_n", "build_bias_lut",
           "analytic_bias", "projection_jacobian", "normalize_ncc", "ncc_score", "znssd",
           "extract_candidates", "feature_residuals", "skew"]
