"""Pure-Python theta-scheme march, used when the compiled kernel is unavailable."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def theta_march(lower, diag, upper, potential, dts, theta, u0, store):
    """Same contract as the compiled ``theta_march``."""
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    potential = np.atleast_2d(np.asarray(potential, dtype=float))
    dts = np.asarray(dts, dtype=float)
    store = np.asarray(store, dtype=bool)
    u = np.array(u0, dtype=float, copy=True)
    n = diag.size
    out = np.empty((int(store.sum()), n, u.shape[1]))
    slot = 0
    if store[0]:
        out[slot] = u
        slot += 1
    ab = np.zeros((3, n))
    for step, dt in enumerate(dts):
        a = potential[step if potential.shape[0] > 1 else 0]
        ex, im = (1.0 - theta) * dt, theta * dt
        lu = (diag - a)[:, None] * u
        lu[1:] += lower[:, None] * u[:-1]
        lu[:-1] += upper[:, None] * u[1:]
        rhs = u + ex * lu
        ab[0, 1:] = -im * upper
        ab[1] = 1.0 - im * (diag - a)
        ab[2, :-1] = -im * lower
        u = solve_banded((1, 1), ab, rhs, check_finite=False)
        if store[step + 1]:
            out[slot] = u
            slot += 1
    return out
