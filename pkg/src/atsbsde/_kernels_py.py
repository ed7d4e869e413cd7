"""Pure numpy implementations of the quantized-step kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; selected
by :mod:`atsbsde.kernels` when the extension is unavailable.
"""

import numpy as np
from scipy.special import ndtr


def gauss_cell_probs(mean, std, edges):
    """Gaussian mass of each projection cell.

    ``edges`` are the ``L - 1`` ascending interior cell boundaries; the first
    and last cells extend to infinity.  Returns a ``(K, L)`` array.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    edges = np.asarray(edges, dtype=float)
    K = mean.shape[0]
    cdf = np.empty((K, edges.shape[0] + 2))
    cdf[:, 0] = 0.0
    cdf[:, -1] = 1.0
    cdf[:, 1:-1] = ndtr((edges[None, :] - mean[:, None]) / std[:, None])
    return np.diff(cdf, axis=1)


def clamped_weights(shift, scale, targets, radius, h):
    """``clip((targets - shift) / scale, -radius, radius) / h`` as a ``(K, L)`` array."""
    shift = np.asarray(shift, dtype=float)
    scale = np.asarray(scale, dtype=float)
    targets = np.asarray(targets, dtype=float)
    u = (targets[None, :] - shift[:, None]) / scale[:, None]
    return np.clip(u, -radius, radius) / h


def weighted_sums(P, v, w, H):
    """Row reductions ``sum_l P v`` and ``sum_l P w H`` for scalar tables."""
    P = np.asarray(P, dtype=float)
    return P @ np.asarray(v, dtype=float), (P * H) @ np.asarray(w, dtype=float)
