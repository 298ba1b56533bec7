"""Reference implementations of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def admit_points(points, vid, slots, counts, min_dist2):
    """Sequential voxel admission.

    ``points`` (N, 3) are visited in order; point ``i`` joins voxel ``vid[i]``
    when the voxel holds fewer than ``slots.shape[1]`` points and every stored
    point is farther than ``sqrt(min_dist2)``.  ``slots`` (V, K, 3) and
    ``counts`` (V,) are updated in place.  Returns the admitted mask.
    """
    n = points.shape[0]
    cap = slots.shape[1]
    admitted = np.zeros(n, dtype=bool)
    for i in range(n):
        v = vid[i]
        c = counts[v]
        if c >= cap:
            continue
        p = points[i]
        ok = True
        for j in range(c):
            d = slots[v, j] - p
            if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= min_dist2:
                ok = False
                break
        if ok:
            slots[v, c] = p
            counts[v] = c + 1
            admitted[i] = True
    return admitted


ROW_TOL = 1e-9


def bilinear_sample(img, mask, u, v):
    """Bilinear value and gradient at fractional ``(u, v)``; columns wrap.

    ``v`` indexes rows, ``u`` columns.  A sample is valid when it lies within
    the first and last row and its 4 support cells are unmasked.  Samples off
    the rows return zeros.
    """
    H, W = img.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = np.isfinite(u) & (v >= -ROW_TOL) & (v <= H - 1 + ROW_TOL)
    # samples on the last row interpolate from the pair above it
    v = np.clip(np.where(np.isfinite(v), v, 0.0), 0.0, H - 1)
    u0f = np.floor(np.where(np.isfinite(u), u, 0.0))
    v0 = np.minimum(np.floor(v), H - 2).astype(np.int64)
    fu = u - u0f
    fv = v - v0
    u0 = np.mod(u0f.astype(np.int64), W)
    u1 = np.mod(u0 + 1, W)
    v0c = v0
    v1c = v0 + 1
    a, b = img[v0c, u0], img[v0c, u1]
    c, d = img[v1c, u0], img[v1c, u1]
    ok = inside & mask[v0c, u0] & mask[v0c, u1] & mask[v1c, u0] & mask[v1c, u1]
    val = (1 - fv) * ((1 - fu) * a + fu * b) + fv * ((1 - fu) * c + fu * d)
    du = (1 - fv) * (b - a) + fv * (d - c)
    dv = (1 - fu) * (c - a) + fu * (d - b)
    val, du, dv = (np.where(inside, x, 0.0) for x in (val, du, dv))
    return val, du, dv, ok
