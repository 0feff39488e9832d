# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Metropolis update of one tree level of multiscale coordinates."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def update_level(double[::1] u, double[:, ::1] z, double weight, Py_ssize_t block,
                 double a4, double a2, double[:, ::1] steps, double[:, ::1] log_uniform):
    """Sweep coordinate c = 0..N-1 of every node at one depth; returns accepted count.

    ``u`` holds the cell values in flat tree order, the node ``n`` owning cells
    ``[n N block, (n + 1) N block)``; each child ``c`` of it owns ``block``
    consecutive cells.  ``u`` is shifted in place to match the accepted moves.
    """
    cdef Py_ssize_t n_nodes = z.shape[0]
    cdef Py_ssize_t N = z.shape[1]
    cdef Py_ssize_t n, c, k, i, base
    cdef double inv_n = 1.0 / N
    cdef double B = <double>block
    cdef double dz, zc, znew, d, d2, dv, log_acc, x, x2
    cdef long accepted = 0
    cdef double[::1] S1 = np.empty(N)
    cdef double[::1] S2 = np.empty(N)
    cdef double[::1] S3 = np.empty(N)
    cdef double[::1] shift = np.empty(N)

    for n in range(n_nodes):
        base = n * N * block
        for k in range(N):
            S1[k] = 0.0
            S2[k] = 0.0
            S3[k] = 0.0
            shift[k] = 0.0
            for i in range(base + k * block, base + (k + 1) * block):
                x = u[i]
                x2 = x * x
                S1[k] += x
                S2[k] += x2
                S3[k] += x2 * x
        for c in range(N):
            dz = steps[n, c]
            zc = z[n, c]
            znew = zc + dz
            dv = 0.0
            for k in range(N):
                d = weight * dz * ((1.0 if k == c else 0.0) - inv_n)
                d2 = d * d
                dv += a4 * (4.0 * d * S3[k] + 6.0 * d2 * S2[k] + 4.0 * d2 * d * S1[k] + B * d2 * d2)
                dv += a2 * (2.0 * d * S1[k] + B * d2)
            log_acc = -0.5 * (znew * znew - zc * zc) - dv
            if log_uniform[n, c] < log_acc:
                accepted += 1
                z[n, c] = znew
                for k in range(N):
                    d = weight * dz * ((1.0 if k == c else 0.0) - inv_n)
                    d2 = d * d
                    S3[k] += 3.0 * d * S2[k] + 3.0 * d2 * S1[k] + B * d2 * d
                    S2[k] += 2.0 * d * S1[k] + B * d2
                    S1[k] += B * d
                    shift[k] += d
        for k in range(N):
            if shift[k] != 0.0:
                for i in range(base + k * block, base + (k + 1) * block):
                    u[i] += shift[k]
    return accepted
