"""Static initialization, IMU propagation and gravity-aware preintegration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (BA, BG, GRAVITY, POS, ROT, VEL, GravityDir, NavState, Pose,
                       exp_so3, log_so3, right_jacobian, right_jacobian_inv, skew,
                       tangent_basis)

STAMP_TOL = 1e-9


class NotStaticError(RuntimeError):
    pass


class ExtrapolationError(ValueError):
    pass


@dataclass(frozen=True)
class ImuNoise:
    gyro_noise: float = 1.7e-4   # rad/s/sqrt(Hz)
    accel_noise: float = 2e-3    # m/s^2/sqrt(Hz)
    gyro_walk: float = 1e-5
    accel_walk: float = 1e-4

    def __post_init__(self):
        for k in ("gyro_noise", "accel_noise", "gyro_walk", "accel_walk"):
            if not getattr(self, k) > 0:
                raise ValueError(f"ImuNoise.{k} must be strictly positive")

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["imu.gyro_noise"], cfg["imu.accel_noise"],
                   cfg["imu.gyro_walk"], cfg["imu.accel_walk"])


def initialize_static(stamps, gyro, accel, duration=0.5, gravity=GRAVITY, max_gyro_std=0.05):
    """Initial state (identity pose, at rest) and gravity direction from a static window.

    The accelerometer measures specific force, so at rest it reads ``-g * g_hat``
    and the gravity direction is the negated mean accelerometer direction.
    """
    stamps = np.asarray(stamps, dtype=float)
    gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
    accel = np.asarray(accel, dtype=float).reshape(-1, 3)
    if stamps.size < 2 or stamps[-1] - stamps[0] < duration - 1e-9:
        span = stamps[-1] - stamps[0] if stamps.size else 0.0
        raise ValueError(f"static initialization needs {duration} s of samples, got {span:.3f} s")
    sel = stamps <= stamps[0] + duration + 1e-9
    w, a = gyro[sel], accel[sel]
    std = w.std(axis=0).max()
    if std > max_gyro_std:
        raise NotStaticError(f"gyro std {std:.4f} rad/s exceeds {max_gyro_std} (sensor moving)")
    b_g = w.mean(axis=0)
    mu_a = a.mean(axis=0)
    g_hat = -mu_a / np.linalg.norm(mu_a)
    b_a = mu_a + gravity * g_hat
    x0 = NavState(Pose(), np.zeros(3), b_a, b_g, float(stamps[sel][-1]))
    return x0, GravityDir(g_hat)


def propagate(x: NavState, g: GravityDir, gyro, accel, dt, gravity=GRAVITY):
    """One zero-order-hold step of the mean IMU kinematics."""
    if not dt > 0:
        raise ValueError("propagate needs dt > 0")
    R = x.R
    acc_w = R @ (np.asarray(accel, dtype=float) - x.accel_bias)
    gv = gravity * g.vec
    R_new = R @ exp_so3((np.asarray(gyro, dtype=float) - x.gyro_bias) * dt)
    v_new = x.velocity + gv * dt + acc_w * dt
    p_new = x.p + x.velocity * dt + 0.5 * gv * dt * dt + 0.5 * acc_w * dt * dt
    return x.replace(pose=Pose(R_new, p_new), velocity=v_new, stamp=x.stamp + dt)


def _locate(stamps, t):
    """Index of the sample whose hold interval contains ``t``."""
    k = int(np.searchsorted(stamps, t + STAMP_TOL, side="right")) - 1
    return k


def propagate_sequence(x0: NavState, g: GravityDir, stamps, gyro, accel, query_times,
                       gravity=GRAVITY):
    """States at ``query_times`` (sorted ascending, >= x0.stamp).

    Sample states are chained with full steps; each query takes a partial step
    from the start of the hold interval it falls in.
    """
    stamps = np.asarray(stamps, dtype=float)
    q = np.asarray(query_times, dtype=float)
    if q.size == 0:
        return []
    if np.any(np.diff(q) < 0):
        raise ValueError("query times must be sorted")
    if q[0] < x0.stamp - STAMP_TOL or q[-1] > stamps[-1] + STAMP_TOL:
        raise ExtrapolationError(
            f"query [{q[0]:.6f}, {q[-1]:.6f}] outside propagation span "
            f"[{x0.stamp:.6f}, {stamps[-1]:.6f}]")
    k = _locate(stamps, x0.stamp)
    if k < 0:
        raise ExtrapolationError(f"no IMU sample at or before {x0.stamp:.6f}")
    out = []
    x = x0  # state at time x.stamp inside hold interval k
    qi = 0
    while qi < q.size:
        t_next = stamps[k + 1] if k + 1 < stamps.size else np.inf
        # queries in the current hold interval [x.stamp, t_next)
        while qi < q.size and (q[qi] < t_next - STAMP_TOL or k + 1 >= stamps.size):
            dt = q[qi] - x.stamp
            out.append(x if dt <= STAMP_TOL else
                       propagate(x, g, gyro[k], accel[k], dt, gravity).replace(stamp=q[qi]))
            qi += 1
        if qi >= q.size:
            break
        dt = t_next - x.stamp
        x = (x if dt <= STAMP_TOL else propagate(x, g, gyro[k], accel[k], dt, gravity)).replace(
            stamp=t_next)
        k += 1
    return out


def imu_segments(stamps, gyro, accel, t0, t1):
    """Zero-order-hold pieces ``(gyro, accel, dt)`` covering ``[t0, t1]``."""
    stamps = np.asarray(stamps, dtype=float)
    if t0 < stamps[0] - STAMP_TOL or t1 > stamps[-1] + STAMP_TOL:
        raise ExtrapolationError(f"interval [{t0}, {t1}] outside IMU span")
    k = _locate(stamps, t0)
    segs = []
    t = t0
    while t < t1 - STAMP_TOL:
        t_next = min(stamps[k + 1] if k + 1 < stamps.size else np.inf, t1)
        if t_next - t > STAMP_TOL:
            segs.append((gyro[k], accel[k], t_next - t))
        t = t_next
        k += 1
    return segs


@dataclass(frozen=True, eq=False)
class Preintegrated:
    dt: float
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    bias_a: np.ndarray
    bias_g: np.ndarray
    dR_dbg: np.ndarray
    dv_dba: np.ndarray
    dv_dbg: np.ndarray
    dp_dba: np.ndarray
    dp_dbg: np.ndarray
    cov: np.ndarray  # order (dtheta, dv, dp)

    def corrected(self, b_a, b_g):
        """Measurements re-expressed at new biases to first order."""
        dba = np.asarray(b_a) - self.bias_a
        dbg = np.asarray(b_g) - self.bias_g
        dR = self.dR @ exp_so3(self.dR_dbg @ dbg)
        dv = self.dv + self.dv_dba @ dba + self.dv_dbg @ dbg
        dp = self.dp + self.dp_dba @ dba + self.dp_dbg @ dbg
        return dR, dv, dp


def preintegrate(segments, bias_a, bias_g, noise: ImuNoise = ImuNoise()) -> Preintegrated:
    """On-manifold preintegration of ``(gyro, accel, dt)`` pieces; gravity excluded."""
    if len(segments) == 0:
        raise ValueError("preintegrate needs at least one sample")
    bias_a = np.asarray(bias_a, dtype=float)
    bias_g = np.asarray(bias_g, dtype=float)
    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    dR_dbg = np.zeros((3, 3))
    dv_dba = np.zeros((3, 3))
    dv_dbg = np.zeros((3, 3))
    dp_dba = np.zeros((3, 3))
    dp_dbg = np.zeros((3, 3))
    cov = np.zeros((9, 9))
    total = 0.0
    A = np.eye(9)
    B = np.zeros((9, 6))
    for w, a, dt in segments:
        wc = np.asarray(w, dtype=float) - bias_g
        ac = np.asarray(a, dtype=float) - bias_a
        dR_inc = exp_so3(wc * dt)
        Jr = right_jacobian(wc * dt)
        a_hat = skew(ac)
        # covariance, (theta, v, p) ordering; discrete noise covariance = density^2 / dt
        A[0:3, 0:3] = dR_inc.T
        A[3:6, 0:3] = -dR @ a_hat * dt
        A[6:9, 0:3] = -0.5 * dR @ a_hat * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = dR * dt
        B[6:9, 3:6] = 0.5 * dR * dt * dt
        Qd = np.diag(np.r_[np.full(3, noise.gyro_noise**2 / dt), np.full(3, noise.accel_noise**2 / dt)])
        cov = A @ cov @ A.T + B @ Qd @ B.T
        # bias jacobians (use the pre-update rotation)
        dp_dba = dp_dba + dv_dba * dt - 0.5 * dR * dt * dt
        dp_dbg = dp_dbg + dv_dbg * dt - 0.5 * dR @ a_hat @ dR_dbg * dt * dt
        dv_dba = dv_dba - dR * dt
        dv_dbg = dv_dbg - dR @ a_hat @ dR_dbg * dt
        dR_dbg = dR_inc.T @ dR_dbg - Jr * dt
        # measurements
        dp = dp + dv * dt + 0.5 * (dR @ ac) * dt * dt
        dv = dv + (dR @ ac) * dt
        dR = dR @ dR_inc
        total += dt
    cov = 0.5 * (cov + cov.T)
    return Preintegrated(total, dR, dv, dp, bias_a.copy(), bias_g.copy(), dR_dbg,
                         dv_dba, dv_dbg, dp_dba, dp_dbg, cov)


def preintegration_residual(xi: NavState, xj: NavState, g: GravityDir, pim: Preintegrated,
                            gravity=GRAVITY):
    """Unwhitened 9-residual ``(r_R, r_v, r_p)`` and Jacobians wrt x_i, x_j (15) and g (2)."""
    Ri, Rj = xi.R, xj.R
    dt = pim.dt
    gv = gravity * g.vec
    dba = xi.accel_bias - pim.bias_a
    dbg = xi.gyro_bias - pim.bias_g
    corr = pim.dR_dbg @ dbg
    dR_c = pim.dR @ exp_so3(corr)
    dv_c = pim.dv + pim.dv_dba @ dba + pim.dv_dbg @ dbg
    dp_c = pim.dp + pim.dp_dba @ dba + pim.dp_dbg @ dbg

    E = dR_c.T @ Ri.T @ Rj
    r_R = log_so3(E)
    dv_w = xj.velocity - xi.velocity - gv * dt
    dp_w = xj.p - xi.p - xi.velocity * dt - 0.5 * gv * dt * dt
    v_i = Ri.T @ dv_w
    p_i = Ri.T @ dp_w
    r = np.r_[r_R, v_i - dv_c, p_i - dp_c]

    Jinv = right_jacobian_inv(r_R)
    Ji = np.zeros((9, 15))
    Jj = np.zeros((9, 15))
    Ji[0:3, ROT] = -Jinv @ Rj.T @ Ri
    Ji[0:3, BG] = -Jinv @ E.T @ right_jacobian(corr) @ pim.dR_dbg
    Jj[0:3, ROT] = Jinv
    Ji[3:6, ROT] = skew(v_i)
    Ji[3:6, VEL] = -Ri.T
    Jj[3:6, VEL] = Ri.T
    Ji[3:6, BA] = -pim.dv_dba
    Ji[3:6, BG] = -pim.dv_dbg
    Ji[6:9, ROT] = skew(p_i)
    Ji[6:9, POS] = -np.eye(3)
    Jj[6:9, POS] = Ri.T @ Rj
    Ji[6:9, VEL] = -Ri.T * dt
    Ji[6:9, BA] = -pim.dp_dba
    Ji[6:9, BG] = -pim.dp_dbg
    B = tangent_basis(g.vec)
    Jg = np.zeros((9, 2))
    Jg[3:6] = -gravity * dt * (Ri.T @ B)
    Jg[6:9] = -0.5 * gravity * dt * dt * (Ri.T @ B)
    return r, Ji, Jj, Jg


def bias_walk_residual(xi: NavState, xj: NavState):
    """``(b_a, b_g)_j - (b_a, b_g)_i`` with Jacobians."""
    r = np.r_[xj.accel_bias - xi.accel_bias, xj.gyro_bias - xi.gyro_bias]
    Jj = np.zeros((6, 15))
    Jj[0:3, BA] = np.eye(3)
    Jj[3:6, BG] = np.eye(3)
    return r, -Jj, Jj


def bias_walk_cov(noise: ImuNoise, dt):
    return np.diag(np.r_[np.full(3, noise.accel_walk**2 * dt), np.full(3, noise.gyro_walk**2 * dt)])
