"""Sliding-window smoother: variables, factors, Levenberg-Marquardt and Schur marginalization.

Variables live in a dict keyed by hashable ids.  Three kinds are supported:
``NavState`` (15-dim tangent), ``GravityDir`` (2-dim) and plain numpy vectors
(Euclidean, mostly for linear-Gaussian checks).  A factor exposes ``keys``,
``cost(values)`` and ``linearize(values) -> (cost, g, H)`` where ``g`` and
``H`` are the gradient and Gauss-Newton Hessian over the concatenated tangents
of its keys.  Costs are the usual half squared whitened norms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (GRAVITY_DIM, STATE_DIM, GravityDir, NavState, local_gravity,
                       local_gravity_jacobian, local_state, local_state_jacobian,
                       retract_gravity, retract_state)
from .inertial import (ImuNoise, Preintegrated, bias_walk_cov, bias_walk_residual,
                       preintegration_residual)

log = logging.getLogger(__name__)

GRAVITY_KEY = "gravity"


class OptimizationError(RuntimeError):
    pass


# -- manifold dispatch ------------------------------------------------------

def tangent_dim(x):
    if isinstance(x, NavState):
        return STATE_DIM
    if isinstance(x, GravityDir):
        return GRAVITY_DIM
    return np.size(x)


def retract(x, d):
    if isinstance(x, NavState):
        return retract_state(x, d)
    if isinstance(x, GravityDir):
        return retract_gravity(x, d)
    return np.asarray(x, dtype=float) + d


def local(x0, x):
    if isinstance(x0, NavState):
        return local_state(x0, x)
    if isinstance(x0, GravityDir):
        return local_gravity(x0, x)
    return np.asarray(x, dtype=float) - x0


def local_jacobian(x0, x):
    """d local(x0, retract(x, e)) / de at e = 0."""
    if isinstance(x0, NavState):
        return local_state_jacobian(x0, x)
    if isinstance(x0, GravityDir):
        return local_gravity_jacobian(x0, x)
    return np.eye(np.size(x0))


# -- factors ----------------------------------------------------------------

def _gaussian(r, J, info):
    Jt_info = J.T @ info
    return 0.5 * float(r @ info @ r), Jt_info @ r, Jt_info @ J


def _info(cov):
    cov = np.asarray(cov, dtype=float)
    return np.linalg.inv(0.5 * (cov + cov.T))


class PriorFactor:
    """Gaussian prior ``local(mean, x) ~ N(0, cov)`` on a single variable."""

    kind = "prior"

    def __init__(self, key, mean, cov=None, info=None):
        self.keys = (key,)
        self.mean = mean
        self.info = _info(cov) if info is None else np.asarray(info, dtype=float)

    def cost(self, values):
        r = local(self.mean, values[self.keys[0]])
        return 0.5 * float(r @ self.info @ r)

    def linearize(self, values):
        x = values[self.keys[0]]
        return _gaussian(local(self.mean, x), local_jacobian(self.mean, x), self.info)


class LinearFactor:
    """``sum_k A_k x_k - z ~ N(0, cov)`` over Euclidean variables."""

    kind = "linear"

    def __init__(self, keys, blocks, z, cov):
        self.keys = tuple(keys)
        self.A = np.hstack([np.atleast_2d(b) for b in blocks])
        self.z = np.asarray(z, dtype=float)
        self.info = _info(cov)

    def _r(self, values):
        x = np.concatenate([np.atleast_1d(values[k]) for k in self.keys])
        return self.A @ x - self.z

    def cost(self, values):
        r = self._r(values)
        return 0.5 * float(r @ self.info @ r)

    def linearize(self, values):
        return _gaussian(self._r(values), self.A, self.info)


class ImuFactor:
    """Preintegrated IMU factor between two states and the gravity direction."""

    kind = "imu"

    def __init__(self, key_i, key_j, pim: Preintegrated, gravity=9.81, key_g=GRAVITY_KEY):
        self.keys = (key_i, key_j, key_g)
        self.pim = pim
        self.gravity = gravity
        self.info = _info(pim.cov)

    def residual(self, values):
        xi, xj, g = (values[k] for k in self.keys)
        return preintegration_residual(xi, xj, g, self.pim, self.gravity)

    def cost(self, values):
        r = self.residual(values)[0]
        return 0.5 * float(r @ self.info @ r)

    def linearize(self, values):
        r, Ji, Jj, Jg = self.residual(values)
        return _gaussian(r, np.hstack([Ji, Jj, Jg]), self.info)


class BiasWalkFactor:
    kind = "bias"

    def __init__(self, key_i, key_j, noise: ImuNoise, dt):
        self.keys = (key_i, key_j)
        self.info = _info(bias_walk_cov(noise, dt))

    def cost(self, values):
        r = bias_walk_residual(values[self.keys[0]], values[self.keys[1]])[0]
        return 0.5 * float(r @ self.info @ r)

    def linearize(self, values):
        r, Ji, Jj = bias_walk_residual(values[self.keys[0]], values[self.keys[1]])
        return _gaussian(r, np.hstack([Ji, Jj]), self.info)


@dataclass(eq=False)
class MarginalPrior:
    """Quadratic ``c + b.d + 0.5 d.H.d`` in the tangent ``d`` at a fixed linearization point."""

    keys: tuple
    lin: dict
    H: np.ndarray
    b: np.ndarray
    c: float = 0.0
    kind = "marginal"

    def _delta(self, values):
        return np.concatenate([local(self.lin[k], values[k]) for k in self.keys])

    def cost(self, values):
        d = self._delta(values)
        return float(self.c + self.b @ d + 0.5 * d @ self.H @ d)

    def linearize(self, values):
        d = self._delta(values)
        blocks = [local_jacobian(self.lin[k], values[k]) for k in self.keys]
        n = sum(b.shape[0] for b in blocks)
        D = np.zeros((n, n))
        o = 0
        for b in blocks:
            D[o:o + len(b), o:o + len(b)] = b
            o += len(b)
        grad = self.b + self.H @ d
        return (float(self.c + self.b @ d + 0.5 * d @ self.H @ d), D.T @ grad, D.T @ self.H @ D)


# -- least squares ----------------------------------------------------------

@dataclass
class OptimizeReport:
    initial_cost: float
    final_cost: float
    iterations: int
    accepted: int
    reason: str
    costs: list


def _sort_key(f):
    return (f.kind, tuple(str(k) for k in f.keys))


def _layout(values, keys):
    offsets, o = {}, 0
    for k in keys:
        n = tangent_dim(values[k])
        offsets[k] = (o, n)
        o += n
    return offsets, o


def total_cost(values, factors):
    c = 0.0
    for f in factors:
        c += f.cost(values)
    return c


def build_system(values, factors, keys):
    offsets, n = _layout(values, keys)
    H = np.zeros((n, n))
    g = np.zeros(n)
    cost = 0.0
    for f in factors:
        c, gf, Hf = f.linearize(values)
        cost += c
        idx = np.concatenate([np.arange(offsets[k][0], offsets[k][0] + offsets[k][1])
                              for k in f.keys])
        g[idx] += gf
        H[np.ix_(idx, idx)] += Hf
    return cost, g, H


def apply_step(values, keys, step):
    offsets, _ = _layout(values, keys)
    out = dict(values)
    for k in keys:
        o, n = offsets[k]
        out[k] = retract(values[k], step[o:o + n])
    return out


def levenberg_marquardt(values, factors, keys=None, max_iters=8, min_step=1e-6,
                        min_rel_decrease=1e-9, lambda_init=1e-4):
    """Damped Gauss-Newton over ``keys`` (all keys touched by factors by default).

    Factors with a ``relinearize`` hook refresh their data association at the
    start of every iteration.  Returns the new values and a report.
    """
    factors = sorted(factors, key=_sort_key)
    if keys is None:
        keys = sorted({k for f in factors for k in f.keys}, key=str)
    values = dict(values)
    if not factors:
        return values, OptimizeReport(0.0, 0.0, 0, 0, "no factors", [0.0])
    lam = lambda_init
    first = None
    costs = []
    accepted = 0
    reason = "max iterations"
    it = 0
    while it < max_iters:
        for f in factors:
            hook = getattr(f, "relinearize", None)
            if hook is not None:
                hook(values)
        cost, g, H = build_system(values, factors, keys)
        if not np.isfinite(cost):
            raise OptimizationError(f"non-finite cost {cost} at iteration {it}")
        if first is None:
            first = cost
            costs.append(cost)
        improved = False
        while it < max_iters:
            it += 1
            A = H + lam * np.eye(len(g))
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(A, g, rcond=None)[0]
            cand = apply_step(values, keys, step)
            new = total_cost(cand, factors)
            log.debug("lm iter %d cost %.9g -> %.9g lambda %.1e |step| %.3g",
                      it, cost, new, lam, np.linalg.norm(step))
            if np.isfinite(new) and new <= cost:
                values = cand
                accepted += 1
                lam = max(lam * 0.5, 1e-12)
                costs.append(new)
                improved = True
                break
            lam *= 10.0
        if not improved:
            reason = "max iterations"
            break
        if np.linalg.norm(step) < min_step:
            reason = "small step"
            break
        if cost - new <= min_rel_decrease * max(cost, 1e-300):
            reason = "small decrease"
            break
    return values, OptimizeReport(first, costs[-1], it, accepted, reason, costs)


def schur_marginalize(values, factors, drop):
    """Eliminate the keys in ``drop`` from the factors that touch them.

    Returns the ``MarginalPrior`` over the remaining keys those factors touch,
    or ``None`` if nothing remains.
    """
    drop = set(drop)
    keys_all = sorted({k for f in factors for k in f.keys}, key=str)
    keep = [k for k in keys_all if k not in drop]
    gone = [k for k in keys_all if k in drop]
    order = gone + keep
    cost, g, H = build_system(values, sorted(factors, key=_sort_key), order)
    offsets, n = _layout(values, order)
    m = sum(offsets[k][1] for k in gone)
    if not keep:
        return None
    Hmm, Hmr, Hrr = H[:m, :m], H[:m, m:], H[m:, m:]
    gm, gr = g[:m], g[m:]
    Hmm_inv = np.linalg.pinv(0.5 * (Hmm + Hmm.T), rcond=1e-12, hermitian=True)
    Hp = Hrr - Hmr.T @ Hmm_inv @ Hmr
    bp = gr - Hmr.T @ Hmm_inv @ gm
    cp = cost - 0.5 * gm @ Hmm_inv @ gm
    Hp = 0.5 * (Hp + Hp.T)
    w, V = np.linalg.eigh(Hp)
    if w.min() < -1e-9 * max(1.0, abs(w).max()):
        log.warning("marginal information not PSD (min eigenvalue %.3g); clamped", w.min())
    if w.min() < 0:
        Hp = (V * np.clip(w, 0.0, None)) @ V.T
    return MarginalPrior(tuple(keep), {k: values[k] for k in keep}, Hp, bp, float(cp))


# -- window -----------------------------------------------------------------

class WindowError(ValueError):
    pass


class FactorWindow:
    """Time-ordered states plus one gravity variable and the factors between them."""

    def __init__(self, length=2.0, noise: ImuNoise | None = None, gravity=9.81,
                 max_iters=8, min_step=1e-6, min_rel_decrease=1e-9, lambda_init=1e-4):
        self.length = length
        self.noise = noise or ImuNoise()
        self.gravity = gravity
        self.opt = dict(max_iters=max_iters, min_step=min_step,
                        min_rel_decrease=min_rel_decrease, lambda_init=lambda_init)
        self.values = {}
        self.order = []
        self.factors = []
        self._next = 0

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["window.length_s"], ImuNoise.from_config(cfg), cfg["imu.gravity"],
                   cfg["opt.max_iters"], cfg["opt.min_step"], cfg["opt.min_rel_decrease"],
                   cfg["opt.lambda_init"])

    # bookkeeping
    @property
    def newest(self):
        return self.order[-1]

    @property
    def oldest(self):
        return self.order[0]

    @property
    def next_key(self):
        return self._next

    def state(self, key=None):
        return self.values[self.newest if key is None else key]

    @property
    def gravity_dir(self) -> GravityDir:
        return self.values[GRAVITY_KEY]

    def __len__(self):
        return len(self.order)

    def states(self):
        return [self.values[k] for k in self.order]

    def initialize(self, x0: NavState, g0: GravityDir, sigmas=None):
        """Start the window with ``x0`` and ``g0`` under diagonal Gaussian priors.

        ``sigmas`` maps ``rot, pos, vel, accel_bias, gyro_bias, gravity`` to standard deviations.
        """
        s = dict(rot=1e-6, pos=1e-6, vel=0.01, accel_bias=0.1, gyro_bias=1e-3, gravity=0.1)
        s.update(sigmas or {})
        key = self._new_key()
        self.values = {key: x0, GRAVITY_KEY: g0}
        self.order = [key]
        sd = np.repeat([s["rot"], s["pos"], s["vel"], s["accel_bias"], s["gyro_bias"]], 3)
        self.factors = [PriorFactor(key, x0, np.diag(sd**2)),
                        PriorFactor(GRAVITY_KEY, g0, np.eye(2) * s["gravity"] ** 2)]
        return key

    def _new_key(self):
        k = self._next
        self._next += 1
        return k

    def add_scan(self, state: NavState, pim: Preintegrated | None, factors=()):
        """Append ``state``; link it to the previous one with IMU and bias-walk factors."""
        if not self.order:
            raise WindowError("window not initialized")
        prev = self.values[self.newest]
        if not state.stamp > prev.stamp:
            raise WindowError(f"state stamp {state.stamp} not after {prev.stamp}")
        key = self._new_key()
        for f in factors:
            if any(k != key and k not in self.values for k in f.keys):
                raise WindowError(f"{f.kind} factor references unknown variable")
        self.values[key] = state
        if pim is not None:
            self.factors.append(ImuFactor(self.newest, key, pim, self.gravity))
            self.factors.append(BiasWalkFactor(self.newest, key, self.noise, pim.dt))
        self.order.append(key)
        self.factors.extend(factors)
        return key

    def add_factor(self, f):
        if any(k not in self.values for k in f.keys):
            raise WindowError(f"{f.kind} factor references unknown variable")
        self.factors.append(f)

    def remove_factor(self, f):
        self.factors = [x for x in self.factors if x is not f]

    def cost(self):
        return total_cost(self.values, self.factors)

    def optimize(self):
        keys = list(self.order) + [GRAVITY_KEY]
        values, report = levenberg_marquardt(self.values, self.factors, keys, **self.opt)
        self.values = values
        return report

    def marginalize(self, horizon=None):
        """Drop states older than ``horizon`` (default newest stamp minus window length)."""
        if horizon is None:
            horizon = self.values[self.newest].stamp - self.length
        drop = [k for k in self.order[:-1] if self.values[k].stamp < horizon - 1e-9]
        if not drop:
            return []
        dset = set(drop)
        touching = [f for f in self.factors if dset.intersection(f.keys)]
        rest = [f for f in self.factors if not dset.intersection(f.keys)]
        prior = schur_marginalize(self.values, touching, dset)
        if prior is not None:
            rest.append(prior)
        self.factors = rest
        for k in drop:
            del self.values[k]
        self.order = [k for k in self.order if k not in dset]
        return drop


def process_scan(odometry, scan, imu_samples=()):
    """Feed ``imu_samples`` then run the full per-scan pipeline of ``odometry``.

    Returns ``(NavState | None, diagnostics)``; see ``pipeline.Odometry``.
    """
    odometry.add_imu(imu_samples)
    return odometry.process_scan(scan)


__all__ = ["FactorWindow", "process_scan", "PriorFactor", "LinearFactor", "ImuFactor", "BiasWalkFactor",
           "MarginalPrior", "OptimizeReport", "levenberg_marquardt", "schur_marginalize",
           "GRAVITY_KEY", "OptimizationError", "WindowError", "retract", "local", "tangent_dim"]
