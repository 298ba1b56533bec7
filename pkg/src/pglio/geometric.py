"""Deskewing, voxel subsampling, the point-to-plane factor and degeneracy analysis."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, skew
from .kernels import admit_points

log = logging.getLogger(__name__)

KNN = 5
# re-association is skipped while the pose stays this close to the last association pose
REASSOCIATE_M = 1e-3
REASSOCIATE_RAD = 1e-3


class DegenerateScanError(RuntimeError):
    """Too few point-to-plane correspondences to form a geometric factor."""


@dataclass(frozen=True, eq=False)
class DeskewTable:
    """Per-column ``T_{L_e L_t}`` as rotation/translation stacks."""

    times: np.ndarray         # (W,)
    rotations: np.ndarray     # (W, 3, 3)
    translations: np.ndarray  # (W, 3)
    end_time: float

    def pose(self, col):
        return Pose(self.rotations[col], self.translations[col])


def relative_lidar_poses(pose_e: Pose, poses_t, T_IL: Pose):
    """Stacks of ``T_{L_e L_t} = T_IL^-1 T_WIe^-1 T_WIt T_IL`` for each pose in ``poses_t``."""
    A = T_IL.inverse() @ pose_e.inverse()
    Rs = np.empty((len(poses_t), 3, 3))
    ts = np.empty((len(poses_t), 3))
    for k, Pt in enumerate(poses_t):
        T = A @ Pt @ T_IL
        Rs[k] = T.rotation
        ts[k] = T.translation
    return Rs, ts


def deskew(scan, column_poses, end_pose: Pose, T_IL: Pose):
    """Motion-compensate every cell into the IMU frame at the scan end.

    ``column_poses`` holds ``T_WI`` at each column firing time.  Returns the
    ``(H, W, 3)`` points in ``I_e`` (NaN where invalid) and the deskew table.
    """
    H, W = scan.shape
    if len(column_poses) != W:
        raise ValueError(f"deskew needs a state for each of the {W} columns, got {len(column_poses)}")
    Rs, ts = relative_lidar_poses(end_pose, column_poses, T_IL)
    table = DeskewTable(scan.column_times.copy(), Rs, ts, scan.end_time)
    p_L = scan.points()
    p_Le = np.einsum("wij,hwj->hwi", Rs, p_L) + ts[None, :, :]
    p_I = T_IL.apply(p_Le.reshape(-1, 3)).reshape(H, W, 3)
    p_I[~scan.valid] = np.nan
    return p_I, table


def voxel_keys(points, voxel_size):
    return np.floor(np.asarray(points) / voxel_size).astype(np.int64)


@dataclass
class VoxelGeoMap:
    voxel_size: float = 0.5
    max_points: int = 20
    min_dist: float = 0.1
    voxels: dict = field(default_factory=dict)
    insertion_poses: list = field(default_factory=list)
    _tree: cKDTree | None = field(default=None, repr=False)
    _cloud: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["geo.voxel_size"], cfg["geo.voxel_max_points"], cfg["geo.min_point_dist"])

    def __len__(self):
        return sum(len(v) for v in self.voxels.values())

    def insert(self, points_W):
        """Admit points under the voxel rule; returns the admitted mask."""
        pts = np.ascontiguousarray(np.asarray(points_W, dtype=float).reshape(-1, 3))
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        if len(pts) == 0:
            return np.zeros(0, dtype=bool)
        keys = voxel_keys(pts, self.voxel_size)
        uniq, vid = np.unique(keys, axis=0, return_inverse=True)
        vid = np.ascontiguousarray(vid.reshape(-1), dtype=np.int64)
        key_tuples = [tuple(k) for k in uniq.tolist()]
        slots = np.zeros((len(uniq), self.max_points, 3))
        counts = np.zeros(len(uniq), dtype=np.int64)
        for i, k in enumerate(key_tuples):
            old = self.voxels.get(k)
            if old is not None:
                slots[i, :len(old)] = old
                counts[i] = len(old)
        before = counts.copy()
        admitted = admit_points(pts, vid, slots, counts, self.min_dist**2)
        for i in np.flatnonzero(counts > before):
            self.voxels[key_tuples[i]] = slots[i, :counts[i]].copy()
        if admitted.any():
            self._tree = None
            self._cloud = None
        return admitted

    def cloud(self):
        if self._cloud is None:
            self._cloud = (np.concatenate(list(self.voxels.values()))
                           if self.voxels else np.zeros((0, 3)))
        return self._cloud

    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.cloud())
        return self._tree

    def knn(self, queries, k=KNN, max_dist=np.inf):
        """Exact k nearest map points (KD-tree); missing neighbours have inf distance."""
        if len(self) < k:
            q = np.atleast_2d(queries)
            return np.full((len(q), k), np.inf), np.zeros((len(q), k), dtype=int)
        d, idx = self.tree().query(np.atleast_2d(queries), k=k, distance_upper_bound=max_dist)
        return d, np.minimum(idx, len(self.cloud()) - 1)

    def neighbourhood_knn(self, p, k=KNN, max_dist=1.0):
        """k nearest points by voxel-neighbourhood search out to ``max_dist``."""
        p = np.asarray(p, dtype=float)
        reach = int(np.ceil(max_dist / self.voxel_size))
        c = voxel_keys(p, self.voxel_size)
        cands = []
        rng = range(-reach, reach + 1)
        for dx in rng:
            for dy in rng:
                for dz in rng:
                    v = self.voxels.get((c[0] + dx, c[1] + dy, c[2] + dz))
                    if v is not None:
                        cands.append(v)
        if not cands:
            return np.zeros((0, 3)), np.zeros(0)
        cands = np.concatenate(cands)
        d = np.linalg.norm(cands - p, axis=1)
        order = np.argsort(d, kind="stable")[:k]
        order = order[d[order] <= max_dist]
        return cands[order], d[order]


def subsample(points, voxel_size=0.5, max_points=20, min_dist=0.1, stride=4):
    """Stride decimation followed by voxel admission in a fresh grid.

    Returns the kept points and their indices into ``points``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    idx = np.arange(0, len(pts), stride)
    idx = idx[np.all(np.isfinite(pts[idx]), axis=1)]
    grid = VoxelGeoMap(voxel_size, max_points, min_dist)
    keep = grid.insert(pts[idx])
    return pts[idx[keep]], idx[keep]


def fit_planes(nbrs):
    """Batch plane fit of ``(N, k, 3)`` neighbour sets.

    Returns centroid, unit normal, scatter eigenvalues (ascending) and the
    out-of-plane distances of each neighbour.
    """
    mu = nbrs.mean(axis=1)
    c = nbrs - mu[:, None, :]
    S = np.einsum("nki,nkj->nij", c, c) / nbrs.shape[1]
    lam, vec = np.linalg.eigh(S)
    normal = vec[:, :, 0]
    dist = np.abs(np.einsum("nkj,nj->nk", c, normal))
    return mu, normal, lam, dist


def plane_accept(lam, dist, d2):
    return (lam[:, 2] < 3.0 * lam[:, 1]) & np.all(dist <= d2, axis=1)


@dataclass(frozen=True)
class PlaneCorrespondence:
    point_I: np.ndarray
    normal_W: np.ndarray
    plane_point_W: np.ndarray
    weight: float = 1.0


def find_correspondence(p_W, gmap: VoxelGeoMap, d1=1.0, d2=0.1, point_I=None):
    """Plane correspondence for one world point, or ``None``."""
    nbrs, dist = gmap.neighbourhood_knn(p_W, KNN, d1)
    if len(nbrs) < KNN:
        return None
    mu, normal, lam, pd = fit_planes(nbrs[None])
    if not plane_accept(lam, pd, d2)[0]:
        return None
    p_I = p_W if point_I is None else point_I
    return PlaneCorrespondence(np.asarray(p_I, dtype=float), normal[0], mu[0])


def associate(points_I, pose: Pose, gmap: VoxelGeoMap, d1=1.0, d2=0.1):
    """Vectorized correspondence search; returns ``(mask, normals_W, plane_points_W)``."""
    p_W = pose.apply(points_I)
    d, idx = gmap.knn(p_W, KNN, d1)
    ok = np.all(np.isfinite(d) & (d <= d1), axis=1)
    normals = np.zeros_like(p_W)
    planes = np.zeros_like(p_W)
    if ok.any():
        nbrs = gmap.cloud()[idx[ok]]
        mu, n, lam, pd = fit_planes(nbrs)
        good = plane_accept(lam, pd, d2)
        sel = np.flatnonzero(ok)
        ok[sel[~good]] = False
        normals[sel[good]] = n[good]
        planes[sel[good]] = mu[good]
    return ok, normals[ok], planes[ok]


def huber_weights(abs_r, delta):
    """IRLS weight and robust cost of each absolute residual."""
    w = np.where(abs_r <= delta, 1.0, delta / np.maximum(abs_r, 1e-300))
    rho = np.where(abs_r <= delta, 0.5 * abs_r**2, delta * (abs_r - 0.5 * delta))
    return w, rho


def point_to_plane(points_I, normals_W, planes_W, pose: Pose):
    """Residuals ``n.(T p - q)`` and their ``(N, 6)`` Jacobian wrt ``(dtheta, dp)``."""
    R = pose.rotation
    e = np.einsum("ni,ni->n", normals_W, pose.apply(points_I) - planes_W)
    n_I = normals_W @ R
    J = np.empty((len(e), 6))
    J[:, :3] = np.cross(points_I, n_I)
    J[:, 3:] = n_I
    return e, J


@dataclass(frozen=True)
class Localizability:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns, IMU frame
    degenerate: np.ndarray    # bool per eigen-direction

    @property
    def degenerate_directions(self):
        return self.eigenvectors[:, self.degenerate].T


def analyze_localizability(J, sigma=0.05, threshold=10.0):
    """Eigen-analysis of the translation block of ``J^T J``.

    ``J`` holds unweighted rows ``[(p x n)^T, n^T]``; rows are whitened by
    ``sigma`` and the information is averaged over the correspondences so
    the threshold does not scale with point count.
    """
    J = np.asarray(J, dtype=float).reshape(-1, 6)
    n = max(len(J), 1)
    Jt = J[:, 3:] / sigma
    A = Jt.T @ Jt / n
    lam, vec = np.linalg.eigh(A)
    lam = np.clip(lam[::-1], 0.0, None)
    vec = vec[:, ::-1]
    return Localizability(lam, vec, lam < threshold)


class GeometricFactor:
    """Dense point-to-plane factor on one state's pose.

    When ``active`` the correspondences are re-associated at every
    linearization against ``gmap``; otherwise they stay frozen.
    """

    kind = "geometric"

    def __init__(self, key, points_I, gmap, T_IL=None, sigma=0.05, huber=0.1, d1=1.0, d2=0.1,
                 min_correspondences=10):
        self.keys = (key,)
        self.points_I = np.asarray(points_I, dtype=float)
        self.gmap = gmap
        self.sigma = sigma
        self.huber = huber
        self.d1, self.d2 = d1, d2
        self.min_correspondences = min_correspondences
        self.active = True
        self.p = self.n = self.q = None
        self._assoc_pose = None

    @classmethod
    def from_config(cls, key, points_I, gmap, cfg):
        return cls(key, points_I, gmap, sigma=cfg["geo.sigma"], huber=cfg["geo.huber"],
                   d1=cfg["geo.d1"], d2=cfg["geo.d2"],
                   min_correspondences=cfg["geo.min_correspondences"])

    def associate(self, pose):
        ok, n, q = associate(self.points_I, pose, self.gmap, self.d1, self.d2)
        if ok.sum() < self.min_correspondences:
            raise DegenerateScanError(f"only {int(ok.sum())} plane correspondences")
        self.p, self.n, self.q = self.points_I[ok], n, q
        self._assoc_pose = pose
        return int(ok.sum())

    def freeze(self):
        self.active = False
        self.gmap = None

    @property
    def count(self):
        return 0 if self.p is None else len(self.p)

    def relinearize(self, values):
        if not self.active:
            return
        pose = values[self.keys[0]].pose
        if self._assoc_pose is not None:
            d = self._assoc_pose.inverse() @ pose
            ang = np.arccos(np.clip((np.trace(d.rotation) - 1) / 2, -1.0, 1.0))
            if np.linalg.norm(d.translation) < REASSOCIATE_M and ang < REASSOCIATE_RAD:
                return
        try:
            self.associate(pose)
        except DegenerateScanError as exc:
            # keep the last good association rather than abort the solve
            log.warning("re-association failed (%s); keeping previous correspondences", exc)

    def residual(self, pose):
        return point_to_plane(self.p, self.n, self.q, pose)

    def cost(self, values):
        e, _ = self.residual(values[self.keys[0]].pose)
        _, rho = huber_weights(np.abs(e), self.huber)
        return float(rho.sum()) / self.sigma**2

    def linearize(self, values):
        e, J6 = self.residual(values[self.keys[0]].pose)
        w, rho = huber_weights(np.abs(e), self.huber)
        Jw = J6 * (w / self.sigma**2)[:, None]
        H = np.zeros((15, 15))
        g = np.zeros(15)
        H[:6, :6] = J6.T @ Jw
        g[:6] = Jw.T @ e
        return float(rho.sum()) / self.sigma**2, g, H

    def jacobian(self, pose):
        return self.residual(pose)[1]


def roll_pitch(R):
    """Roll and pitch of a rotation (ZYX convention)."""
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    return roll, pitch


def _angle_diff(a, b):
    return abs((a - b + np.pi) % (2 * np.pi) - np.pi)


def needs_map_update(gmap: VoxelGeoMap, pose: Pose, dist=2.0, angle_deg=30.0):
    if not gmap.insertion_poses:
        return True
    P = np.array([p.translation for p in gmap.insertion_poses])
    d = np.linalg.norm(P - pose.translation, axis=1)
    if d.min() > dist:
        return True
    nearest = gmap.insertion_poses[int(np.argmin(d))]
    r0, p0 = roll_pitch(nearest.rotation)
    r1, p1 = roll_pitch(pose.rotation)
    lim = np.deg2rad(angle_deg)
    return _angle_diff(r0, r1) > lim or _angle_diff(p0, p1) > lim


def maybe_update_map(gmap: VoxelGeoMap, pose: Pose, cloud_I, dist=2.0, angle_deg=30.0):
    """Insert ``cloud_I`` (IMU frame at the scan end) when the pose is novel."""
    if not needs_map_update(gmap, pose, dist, angle_deg):
        return False
    gmap.insert(pose.apply(np.asarray(cloud_I).reshape(-1, 3)))
    gmap.insertion_poses.append(pose)
    return True


def dump_map_xyz(path, gmap: VoxelGeoMap):
    np.savetxt(path, gmap.cloud(), fmt="%.4f")


__all__ = ["DeskewTable", "VoxelGeoMap", "PlaneCorrespondence", "Localizability",
           "GeometricFactor", "DegenerateScanError", "deskew", "subsample", "find_correspondence",
           "associate", "point_to_plane", "analyze_localizability", "maybe_update_map",
           "needs_map_update", "huber_weights", "skew"]
