"""Central finite-difference gradient checking for layers and loss heads."""

from __future__ import annotations

import numpy as np


def relative_errors(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(loss_fn, arrays: dict, analytic: dict, eps=1e-4, rng=None,
               max_checks=64) -> float:
    """Max relative error between ``analytic`` grads and central differences.

    ``loss_fn()`` re-evaluates the scalar loss from the (mutated) arrays. Large
    tensors are spot-checked at ``max_checks`` random positions. Use float64
    arrays; float32 round-off swamps the 1e-3 tolerance this supports.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_checks else rng.choice(n, size=max_checks, replace=False)
        ana = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            loss_plus = loss_fn()
            flat[i] = orig - eps
            loss_minus = loss_fn()
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            worst = max(worst, float(relative_errors(ana[i], numeric)))
    return worst


def layer_grad_check(layer, x, eps=1e-4, rng=None, max_checks=64, train=True,
                     target=None) -> float:
    """Gradient-check one layer end to end through an MSE-style scalar loss."""
    from .layers import mse_loss

    rng = rng or np.random.default_rng(0)
    if target is None:
        target = rng.standard_normal(layer.forward(x, train=train).shape)

    def loss_fn():
        return mse_loss(layer.forward(x, train=train), target)[0]

    layer.zero_grad()
    _, gy = mse_loss(layer.forward(x, train=train), target)
    gx = layer.backward(gy)
    arrays = {"__input__": x, **dict(layer.named_params())}
    analytic = {"__input__": gx, **dict(layer.named_grads())}
    return grad_check(loss_fn, arrays, analytic, eps=eps, rng=rng, max_checks=max_checks)
