"""Shared finite-difference and brute-force oracles for the tests."""
import numpy as np


def central_diff(f, n, step=1e-6):
    """Jacobian of ``f(e)`` at ``e = 0`` by central differences over ``n`` coordinates."""
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        cols.append((np.asarray(f(e)) - np.asarray(f(-e))) / (2 * step))
    return np.stack(cols, axis=-1)


def rel_error(J, Jn):
    """Max abs deviation relative to the Jacobian scale (floor 1)."""
    return float(np.abs(J - Jn).max() / max(np.abs(Jn).max(), 1.0))
