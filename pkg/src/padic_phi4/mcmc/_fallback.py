"""Pure numpy twin of ``_kernels.update_level``.

Nodes at one depth own disjoint cells and independent prior coordinates, so
coordinate ``c`` of all nodes is updated at once; the loop over ``c`` stays
sequential, matching the compiled kernel move for move.
"""

import numpy as np


def update_level(u, z, weight, block, a4, a2, steps, log_uniform):
    n_nodes, N = z.shape
    B = float(block)
    cells = u.reshape(n_nodes, N, block)
    S1 = cells.sum(axis=2)
    S2 = (cells * cells).sum(axis=2)
    S3 = (cells * cells * cells).sum(axis=2)
    shift = np.zeros((n_nodes, N))
    onehot = np.eye(N) - 1.0 / N
    accepted = 0
    for c in range(N):
        dz = steps[:, c]
        zc = z[:, c]
        znew = zc + dz
        d = weight * dz[:, None] * onehot[c][None, :]
        d2 = d * d
        dv = (a4 * (4.0 * d * S3 + 6.0 * d2 * S2 + 4.0 * d2 * d * S1 + B * d2 * d2)
              + a2 * (2.0 * d * S1 + B * d2)).sum(axis=1)
        log_acc = -0.5 * (znew * znew - zc * zc) - dv
        acc = log_uniform[:, c] < log_acc
        accepted += int(acc.sum())
        z[acc, c] = znew[acc]
        d = np.where(acc[:, None], d, 0.0)
        d2 = d * d
        S3 += 3.0 * d * S2 + 3.0 * d2 * S1 + B * d2 * d
        S2 += 2.0 * d * S1 + B * d2
        S1 += B * d
        shift += d
    cells += shift[:, :, None]
    return accepted
