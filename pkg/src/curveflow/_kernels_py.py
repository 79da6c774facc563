"""Pure-numpy MLP kernels.

Reference implementation of the fused dense+activation forward and backward
passes. The compiled extension in ``_kernels.pyx`` exposes the same two
functions with the same signatures; :mod:`curveflow.kernels` picks one.

Activation codes: 0 = SiLU, 1 = ReLU, 2 = Tanh. The output layer is linear.
"""

import numpy as np


def _act(z, code):
    if code == 0:
        return z / (1.0 + np.exp(-z))
    if code == 1:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, code):
    if code == 0:
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    if code == 1:
        return (z > 0.0).astype(np.float64)
    th = np.tanh(z)
    return 1.0 - th * th


def mlp_forward(x, weights, biases, act_code):
    """Run the MLP on a batch.

    Args:
        x: (B, in) float64 C-contiguous input.
        weights: list of (out_k, in_k) matrices.
        biases: list of (out_k,) vectors.
        act_code: hidden activation code.

    Returns:
        ``(out, cache)`` where ``cache`` is a list of ``(layer_input, preact)``
        pairs for hidden layers plus the final layer input, consumed by
        :func:`mlp_backward`.
    """
    h = x
    cache = []
    n = len(weights)
    for k in range(n - 1):
        z = h @ weights[k].T + biases[k]
        cache.append((h, z))
        h = _act(z, act_code)
    out = h @ weights[-1].T + biases[-1]
    cache.append((h, None))
    return out, cache


def mlp_backward(grad_out, weights, cache, act_code, need_input_grad=True):
    """Backpropagate ``grad_out`` (dL/d out) through the cached forward pass.

    Returns:
        ``(dweights, dbiases, dx)``; ``dx`` is ``None`` unless requested.
    """
    n = len(weights)
    dws = [None] * n
    dbs = [None] * n
    g = grad_out
    for k in range(n - 1, -1, -1):
        h, _ = cache[k]
        dws[k] = g.T @ h
        dbs[k] = g.sum(axis=0)
        if k == 0 and not need_input_grad:
            return dws, dbs, None
        g = g @ weights[k]
        if k > 0:
            g = g * _act_grad(cache[k - 1][1], act_code)
    return dws, dbs, g
