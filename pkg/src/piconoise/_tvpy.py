"""Pure numpy implementation of the TV dual projection loops.

Mirrors ``_tvcore.pyx`` operation for operation so both backends agree
bitwise. Arrays are real views: images ``(B, rows, cols, 2)``, duals
``(B, 2, rows, cols, 2)``.
"""

import numpy as np


def _neg_div(z, q):
    # z - D^T q, grouped as ((q_r[i-1] - q_r[i]) + q_c[j-1]) - q_c[j]
    qr, qc = q[:, 0], q[:, 1]
    dtq = ((np.roll(qr, 1, axis=1) - qr) + np.roll(qc, 1, axis=2)) - qc
    return z - dtq


def _grad(w):
    return np.roll(w, -1, axis=1) - w, np.roll(w, -1, axis=2) - w


def prox_forward(z, q, thresh, n_inner, tau, masks=None):
    lo, hi = -thresh, thresh
    for it in range(n_inner):
        w = _neg_div(z, q)
        for d, g in enumerate(_grad(w)):
            v = q[:, d] + tau * g
            if masks is not None:
                masks[:, it, d] = (v > lo) & (v < hi)
            q[:, d] = np.clip(v, lo, hi)
    return _neg_div(z, q)


def prox_tangent(dz, dq, masks, tau):
    for it in range(masks.shape[0]):
        w = _neg_div(dz, dq)
        for d, g in enumerate(_grad(w)):
            dq[:, d] = np.where(masks[it, d], dq[:, d] + tau * g, 0.0)
    return _neg_div(dz, dq)
