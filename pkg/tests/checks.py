"""Shared numeric helpers: finite differences and kink-safe sample draws.

Central differences are only trustworthy away from relu kinks and pool
ties, so the draw helpers redraw until every pre-activation and pool
margin clears MARGIN. Perturbations of size FD_STEP then cannot flip any
piecewise-linear branch.
"""

import numpy as np

FD_STEP = 1e-5
MARGIN = 1e-3


def norm_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def fd_wrt(f, arr, h=FD_STEP):
    """Central-difference gradient of the scalar f() wrt `arr`, in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def dual_margins(model, x, coords):
    """Smallest relu pre-activation magnitude / pool margin for one input.

    Pool windows whose entries are both firmly negative pre-relu count as
    safe: the pooled value is pinned at zero regardless of the tie.
    """
    cfg = model.config
    win = np.lib.stride_tricks.sliding_window_view(x, cfg.kernel_len)
    z_conv = (win @ model.conv.weights.T + model.conv.bias).T
    worst = float(np.abs(z_conv).min())

    act = np.maximum(z_conv, 0.0)
    usable = cfg.pooled_len * cfg.pool_stride
    pairs = act[:, :usable].reshape(cfg.conv_filters, cfg.pooled_len, -1)
    zpairs = z_conv[:, :usable].reshape(cfg.conv_filters, cfg.pooled_len, -1)
    diff = np.abs(pairs.max(axis=-1) - np.sort(pairs, axis=-1)[..., -2])
    both_dead = (zpairs < -MARGIN).all(axis=-1)
    worst = min(worst, float(np.where(both_dead, np.inf, diff).min()))

    flat = pairs.max(axis=-1).reshape(-1)
    z_fc = flat @ model.fc.weights + model.fc.bias
    worst = min(worst, float(np.abs(z_fc).min()))

    if not cfg.baseline:
        z_c1 = coords @ model.coord1.weights + model.coord1.bias
        worst = min(worst, float(np.abs(z_c1).min()))
        z_c2 = np.maximum(z_c1, 0.0) @ model.coord2.weights + model.coord2.bias
        worst = min(worst, float(np.abs(z_c2).min()))
    return worst
