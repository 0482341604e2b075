# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled theta-scheme march for the 1D Neumann heat equation."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def theta_march(double[::1] lower, double[::1] diag, double[::1] upper,
                double[:, ::1] potential, double[::1] dts, double theta,
                double[:, ::1] u0, cnp.uint8_t[::1] store):
    """Advance ``u' = L u - a u`` with a tridiagonal ``L`` by the theta method.

    ``lower[k]`` couples row ``k+1`` to ``k``; ``upper[k]`` couples row ``k``
    to ``k+1``.  ``potential`` has one row per step or a single row reused
    for all steps.  ``u0`` holds one initial state per column.  Returns the
    states at the step indices flagged in ``store`` (index 0 is the initial
    state), shape ``(n_stored, n, k)``.
    """
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t ncol = u0.shape[1]
    cdef Py_ssize_t nsteps = dts.shape[0]
    cdef Py_ssize_t nstore = 0
    cdef Py_ssize_t i, j, step, row, slot
    for i in range(store.shape[0]):
        if store[i]:
            nstore += 1
    out_arr = np.empty((nstore, n, ncol), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    u_arr = np.array(u0, dtype=np.float64, copy=True)
    cdef double[:, ::1] u = u_arr
    cdef double[:, ::1] rhs = np.empty((n, ncol), dtype=np.float64)
    cdef double[::1] cp = np.empty(n, dtype=np.float64)
    cdef double[::1] bb = np.empty(n, dtype=np.float64)
    cdef double dt, ex, im, denom, a
    cdef bint varying = potential.shape[0] > 1

    slot = 0
    if store[0]:
        out[slot, :, :] = u
        slot += 1

    for step in range(nsteps):
        dt = dts[step]
        ex = (1.0 - theta) * dt
        im = theta * dt
        row = step if varying else 0
        # explicit part
        for j in range(ncol):
            for i in range(n):
                a = diag[i] * u[i, j] - potential[row, i] * u[i, j]
                if i > 0:
                    a += lower[i - 1] * u[i - 1, j]
                if i < n - 1:
                    a += upper[i] * u[i + 1, j]
                rhs[i, j] = u[i, j] + ex * a
        # implicit matrix I - im*(L - a), forward sweep
        for i in range(n):
            bb[i] = 1.0 - im * (diag[i] - potential[row, i])
        cp[0] = (-im * upper[0]) / bb[0]
        for j in range(ncol):
            rhs[0, j] = rhs[0, j] / bb[0]
        for i in range(1, n):
            denom = bb[i] - (-im * lower[i - 1]) * cp[i - 1]
            if i < n - 1:
                cp[i] = (-im * upper[i]) / denom
            for j in range(ncol):
                rhs[i, j] = (rhs[i, j] - (-im * lower[i - 1]) * rhs[i - 1, j]) / denom
        for j in range(ncol):
            u[n - 1, j] = rhs[n - 1, j]
            for i in range(n - 2, -1, -1):
                u[i, j] = rhs[i, j] - cp[i] * u[i + 1, j]
        if store[step + 1]:
            out[slot, :, :] = u
            slot += 1
    return out_arr
