"""Lie-group primitives and the navigation-state manifold.

Conventions used everywhere in the package:

* ``T_AB`` maps points from frame B into frame A: ``p_A = R_AB p_B + t_AB``.
* A :class:`NavState` is perturbed on the right: ``R <- R Exp(dtheta)``,
  ``p <- p + R dp``, ``v <- v + dv`` and the biases additively.  The 15-dim
  tangent is ordered ``(dtheta, dp, dv, dba, dbg)``.
* The gravity direction lives on S^2 with a 2-dim tangent expressed in the
  Householder basis returned by :func:`tangent_basis`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81
SMALL_ANGLE = 1e-8
NEAR_PI = 1e-6

STATE_DIM = 15
GRAVITY_DIM = 2
ROT, POS, VEL, BA, BG = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(omega):
    omega = np.asarray(omega, dtype=float)
    theta2 = float(omega @ omega)
    K = skew(omega)
    if theta2 < SMALL_ANGLE**2:
        return np.eye(3) + K + 0.5 * (K @ K)
    theta = np.sqrt(theta2)
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta2) * (K @ K)


def log_so3(R):
    """Rotation vector of ``R``; stable at 0 and at pi.

    Close to pi the axis is read off the symmetric part of ``R`` since the
    skew part vanishes there; the sign is recovered from the skew part.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    w = vee(R - R.T)  # 2 sin(theta) * axis
    sin_theta = 0.5 * np.linalg.norm(w)
    # atan2 keeps theta and sin(theta) consistent where arccos loses digits
    theta = np.arctan2(sin_theta, cos_theta)
    if theta < SMALL_ANGLE:
        return 0.5 * w
    if np.pi - theta < NEAR_PI:
        # symmetric part is cos I + (1 - cos) a a^T
        S = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / np.sqrt(S[k, k])
        axis /= np.linalg.norm(axis)
        if axis @ w < 0.0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * sin_theta)) * w


def right_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    return (np.eye(3) - ((1.0 - np.cos(theta)) / theta2) * K
            + ((theta - np.sin(theta)) / (theta2 * theta)) * (K @ K))


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    theta = np.sqrt(theta2)
    c = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def rot_x(a):
    return exp_so3([a, 0.0, 0.0])


def rot_y(a):
    return exp_so3([0.0, a, 0.0])


def rot_z(a):
    return exp_so3([0.0, 0.0, a])


def quat_from_rot(R):
    """Unit quaternion ``(x, y, z, w)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[i] = 0.25 * s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
        q[3] = (R[k, j] - R[j, k]) / s
    q /= np.linalg.norm(q)
    return -q if q[3] < 0.0 else q


def rot_from_quat(q):
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return Pose(self.rotation @ other.rotation,
                        self.rotation @ other.translation + self.translation)
        return self.apply(other)

    def apply(self, points):
        """Transform a 3-vector or an ``(N, 3)`` array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class GravityDir:
    """Unit gravity direction in W; the magnitude is a separate constant."""

    vec: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=float).reshape(3)
        object.__setattr__(self, "vec", v / np.linalg.norm(v))


@dataclass(frozen=True)
class NavState:
    pose: Pose
    velocity: np.ndarray
    accel_bias: np.ndarray
    gyro_bias: np.ndarray
    stamp: float = 0.0

    def __post_init__(self):
        for name in ("velocity", "accel_bias", "gyro_bias"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if not np.isfinite(self.stamp):
            raise ValueError("NavState stamp must be finite")

    @classmethod
    def at_rest(cls, stamp=0.0, pose=None):
        return cls(pose or Pose(), np.zeros(3), np.zeros(3), np.zeros(3), stamp)

    @property
    def R(self):
        return self.pose.rotation

    @property
    def p(self):
        return self.pose.translation

    def replace(self, **kw):
        fields = dict(pose=self.pose, velocity=self.velocity, accel_bias=self.accel_bias,
                      gyro_bias=self.gyro_bias, stamp=self.stamp)
        fields.update(kw)
        return NavState(**fields)

    def biases_sane(self, max_accel=1.0, max_gyro=0.2):
        return (np.linalg.norm(self.accel_bias) < max_accel
                and np.linalg.norm(self.gyro_bias) < max_gyro)


def retract_state(x: NavState, delta) -> NavState:
    delta = np.asarray(delta, dtype=float)
    R = x.R
    pose = Pose(R @ exp_so3(delta[ROT]), x.p + R @ delta[POS])
    return NavState(pose, x.velocity + delta[VEL], x.accel_bias + delta[BA],
                    x.gyro_bias + delta[BG], x.stamp)


def local_state(x0: NavState, x: NavState):
    """Inverse of :func:`retract_state`: ``retract_state(x0, local_state(x0, x)) == x``."""
    d = np.empty(STATE_DIM)
    d[ROT] = log_so3(x0.R.T @ x.R)
    d[POS] = x0.R.T @ (x.p - x0.p)
    d[VEL] = x.velocity - x0.velocity
    d[BA] = x.accel_bias - x0.accel_bias
    d[BG] = x.gyro_bias - x0.gyro_bias
    return d


def local_state_jacobian(x0: NavState, x: NavState):
    """d local_state(x0, retract_state(x, e)) / de at e = 0."""
    D = np.eye(STATE_DIM)
    D[ROT, ROT] = right_jacobian_inv(log_so3(x0.R.T @ x.R))
    D[POS, POS] = x0.R.T @ x.R
    return D


def tangent_basis(g):
    """Orthonormal 3x2 basis of the plane orthogonal to unit ``g``.

    Built from the Householder reflection sending ``g`` to ``-/+e_z``; the
    remaining two reflected axes span the tangent plane.
    """
    g = np.asarray(g, dtype=float)
    s = 1.0 if g[2] >= 0.0 else -1.0
    v = g + s * np.array([0.0, 0.0, 1.0])
    H = np.eye(3) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, :2]


def retract_gravity(g: GravityDir, delta) -> GravityDir:
    """Geodesic step on S^2; ``B @ delta`` is the first-order displacement of ``g``."""
    delta = np.asarray(delta, dtype=float)
    if not delta.any():
        return g
    gv = g.vec
    a = tangent_basis(gv) @ delta
    out = exp_so3(np.cross(gv, a)) @ gv
    return GravityDir(out / np.linalg.norm(out))


def local_gravity(g0: GravityDir, g: GravityDir):
    a, b = g0.vec, g.vec
    c = float(np.clip(a @ b, -1.0, 1.0))
    s = np.linalg.norm(np.cross(a, b))
    theta = np.arctan2(s, c)
    scale = 1.0 if s < 1e-15 else theta / s
    return scale * (tangent_basis(a).T @ (b - c * a))


def local_gravity_jacobian(g0: GravityDir, g: GravityDir, eps=1e-7):
    J = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        J[:, k] = (local_gravity(g0, retract_gravity(g, e))
                   - local_gravity(g0, retract_gravity(g, -e))) / (2 * eps)
    return J
