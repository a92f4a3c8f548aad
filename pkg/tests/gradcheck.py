"""Central finite-difference oracle for ParamSet gradients."""

import numpy as np

from discrete_sac.approximator import backward

H = 1e-5
# gradients smaller than this on both sides count as zero
ZERO = 1e-8


def analytic_grads(loss_fn, params):
    with params.record():
        loss = loss_fn()
        backward(loss, params)
    return {k: g.copy() for k, g in params.grads.items()}


def numeric_grad(loss_fn, params, name, idx, h=H):
    v = params.values[name]
    old = v[idx]
    v[idx] = old + h
    up = float(loss_fn().value)
    v[idx] = old - h
    down = float(loss_fn().value)
    v[idx] = old
    return (up - down) / (2 * h)


def rel_error(a, n):
    scale = max(abs(a), abs(n))
    return 0.0 if scale < ZERO else abs(a - n) / scale


def check(loss_fn, params, rng, num_coords=None):
    """Worst relative error over ``num_coords`` random coordinates (all if None)."""
    grads = analytic_grads(loss_fn, params)
    coords = [(k, idx) for k, v in params.values.items() for idx in np.ndindex(v.shape)]
    if num_coords is not None and num_coords < len(coords):
        pick = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[i] for i in pick]
    worst = 0.0
    for k, idx in coords:
        worst = max(worst, rel_error(grads[k][idx], numeric_grad(loss_fn, params, k, idx)))
    return worst
