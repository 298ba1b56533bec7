"""Trajectory metrics: absolute trajectory error and relative error per distance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose

ASSOCIATION_TOL = 0.01  # s
RE_DELTA = 10.0         # m


class AssociationError(ValueError):
    """Estimated stamps without a reference pose close enough in time."""


@dataclass(frozen=True)
class Metrics:
    ate_rmse: float     # m
    re_percent: float   # RMSE of segment translation error / delta, in percent
    matched: int
    segments: int

    def as_dict(self):
        re = self.re_percent if np.isfinite(self.re_percent) else None
        return dict(ate_rmse_m=self.ate_rmse, re_percent=re, matched=self.matched,
                    re_segments=self.segments, re_delta_m=RE_DELTA)


def associate(est, ref, tol=ASSOCIATION_TOL):
    """Pair each estimated ``(stamp, Pose)`` with the nearest reference pose."""
    if not est or not ref:
        raise AssociationError("empty trajectory")
    t_ref = np.array([s for s, _ in ref])
    order = np.argsort(t_ref, kind="stable")
    t_sorted = t_ref[order]
    pairs = []
    for stamp, pose in est:
        i = int(np.searchsorted(t_sorted, stamp))
        cand = [j for j in (i - 1, i) if 0 <= j < len(t_sorted)]
        j = min(cand, key=lambda j: abs(t_sorted[j] - stamp))
        if abs(t_sorted[j] - stamp) > tol:
            raise AssociationError(f"no reference pose within {tol * 1e3:.0f} ms of {stamp:.6f}")
        pairs.append((pose, ref[order[j]][1]))
    return pairs


def umeyama(src, dst):
    """Rigid ``(R, t)`` minimizing ``sum |R src + t - dst|^2`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(C)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U) * np.linalg.det(Vt)) or 1.0
    R = U @ D @ Vt
    return R, mu_d - R @ mu_s


def ate_rmse(pairs):
    p_e = np.array([e.translation for e, _ in pairs])
    p_r = np.array([r.translation for _, r in pairs])
    if len(pairs) < 3:
        R, t = np.eye(3), p_r.mean(axis=0) - p_e.mean(axis=0)
    else:
        R, t = umeyama(p_e, p_r)
    d = p_e @ R.T + t - p_r
    return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))


def segment_pairs(positions, delta=RE_DELTA):
    """Consecutive index pairs spanning at least ``delta`` of travelled path."""
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    dist = np.r_[0.0, np.cumsum(steps)]
    out = []
    i = 0
    while True:
        j = int(np.searchsorted(dist, dist[i] + delta))
        if j >= len(dist):
            return out
        out.append((i, j))
        i = j


def relative_error(pairs, delta=RE_DELTA):
    """RMSE of relative-pose translation error over ``delta`` segments, in percent."""
    ref = [r for _, r in pairs]
    est = [e for e, _ in pairs]
    segs = segment_pairs(np.array([r.translation for r in ref]), delta)
    if not segs:
        return float("nan"), 0
    err = []
    for i, j in segs:
        d_ref = ref[i].inverse() @ ref[j]
        d_est = est[i].inverse() @ est[j]
        err.append(np.linalg.norm((d_ref.inverse() @ d_est).translation) / delta)
    return float(100.0 * np.sqrt(np.mean(np.square(err)))), len(segs)


def evaluate(est, ref, tol=ASSOCIATION_TOL, delta=RE_DELTA) -> Metrics:
    pairs = associate(est, ref, tol)
    re, n = relative_error(pairs, delta)
    return Metrics(ate_rmse(pairs), re, len(pairs), n)


def along_axis_error(est: Pose, ref: Pose, axis=(1.0, 0.0, 0.0)):
    """Signed position error projected on ``axis``."""
    return float(np.dot(est.translation - ref.translation, axis))


__all__ = ["Metrics", "AssociationError", "associate", "umeyama", "ate_rmse", "relative_error",
           "evaluate", "segment_pairs", "along_axis_error", "ASSOCIATION_TOL", "RE_DELTA"]
